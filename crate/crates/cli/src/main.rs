//! `chartfc` command-line entry point.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on bad input (usage,
//! config, seed files, checkpoints, annotations).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use chartfc::data::{DataError, Split};
use chartfc::encoder::{self, corpus_tokens};
use chartfc::experiment::{self, evaluate_checkpoint, load_train_data, train_prepared, ExperimentError, RunConfig};
use chartfc::linker::SubTable;
use chartfc::nn::{load_checkpoint, save_checkpoint, NnError};
use chartfc::pipeline::{
    chart_sequence, generate_dataset, read_chart, ChartReader, Dataset, GenerateConfig, PipelineError, SeqMode,
};
use chartfc::reader::HttpAdapter;
use chartfc::render::{render, style_for, ChartSpec};
use chartfc::train::{self, format_reasoning, Annotations, ModelKind, TrainError, BATCH_SIZES, CURVE_PERCENTS, LEARNING_RATES};

#[derive(Parser)]
#[command(name = "chartfc", version, about = "Chart fact-checking toolkit")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for splits, initialization and batching.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Chart sequence: concat, tmp1, tmp2 or tmp3.
    #[arg(long, global = true)]
    template: Option<SeqMode>,
    /// Chart reader: ground-truth sidecars or an OCR service.
    #[arg(long, global = true, value_parser = ["oracle", "ocr"])]
    reader: Option<String>,
    /// chartbert, vl or claim-only.
    #[arg(long, global = true)]
    model: Option<ModelKind>,
    /// Base URL of an OCR service (used with `--reader ocr`).
    #[arg(long, global = true)]
    ocr_endpoint: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Link seed claims to sub-tables, render charts and write a dataset.
    Generate {
        /// Directory holding tables.jsonl and claims.jsonl.
        #[arg(long)]
        seeds: PathBuf,
        /// Dataset directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one sub-table (JSON) to `<out>.png` and `<out>.json`.
    Render {
        /// JSON file holding one sub-table.
        #[arg(long)]
        subtable: PathBuf,
        /// Output path without extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the text regions read from each chart as JSON lines.
    Read(SplitArgs),
    /// Print the chart sequence of each sample as JSON lines.
    Seqgen(SplitArgs),
    /// Print model inputs of each sample as JSON lines (vocabulary from train).
    Encode(SplitArgs),
    /// Train on the train split with early stopping on valid.
    Train {
        /// Dataset directory written by `generate`.
        #[arg(long)]
        data: PathBuf,
        /// Where the best checkpoint is written.
        #[arg(long)]
        out: PathBuf,
        /// Train once per batch-size and learning-rate pair and keep the best.
        #[arg(long)]
        grid: bool,
        /// Batch sizes of the grid (default: the standard grid).
        #[arg(long, value_delimiter = ',')]
        batch_sizes: Vec<usize>,
        /// Learning rates of the grid (default: the standard grid).
        #[arg(long, value_delimiter = ',')]
        learning_rates: Vec<f64>,
    },
    /// Score a checkpoint on a split and print a metrics record.
    Eval(CheckpointArgs),
    /// Per-reasoning-type accuracy of a checkpoint.
    Report {
        #[command(flatten)]
        run: CheckpointArgs,
        /// Lines of `<sample id><TAB><type>,...`; defaults to the types in
        /// the manifest.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Test accuracy after training on growing stratified subsets.
    Curve {
        /// Dataset directory written by `generate`.
        #[arg(long)]
        data: PathBuf,
        /// Training-set percentages (default: 1,25,50,75,100).
        #[arg(long, value_delimiter = ',')]
        percents: Vec<f64>,
    },
}

#[derive(Args)]
struct SplitArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// Restrict to one split.
    #[arg(long)]
    split: Option<Split>,
}

#[derive(Args)]
struct CheckpointArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
}

/// Contents of the `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    seed: Option<u64>,
    reader: Option<String>,
    ocr_endpoint: Option<String>,
    generate: GenerateConfig,
    run: RunConfig,
}

/// Bad input, reported with exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct InputError(String);

fn input(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

fn is_input_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<InputError>()
            || e.is::<DataError>()
            || matches!(e.downcast_ref::<NnError>(), Some(NnError::BadMagic(_) | NnError::ShapeMismatch(_)))
            || matches!(
                e.downcast_ref::<TrainError>(),
                Some(
                    TrainError::BadAnnotation { .. }
                        | TrainError::UnknownSampleId(_)
                        | TrainError::InvalidConfig(_)
                        | TrainError::SingleClassDataset
                        | TrainError::EmptySplit(_)
                )
            )
            || matches!(e.downcast_ref::<ExperimentError>(), Some(ExperimentError::BadCheckpoint(_)))
            || matches!(e.downcast_ref::<PipelineError>(), Some(PipelineError::Data(_)))
    })
}

struct RunContext {
    file: FileConfig,
    reader: String,
    ocr: Option<HttpAdapter>,
}

impl RunContext {
    fn new(cli: &Cli) -> Result<Self> {
        let mut file = match &cli.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
                toml::from_str::<FileConfig>(&text).map_err(|e| input(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        if let Some(seed) = cli.seed.or(file.seed) {
            file.generate.seed = seed;
            file.run.train.seed = seed;
            file.run.chartbert.seed = seed;
            file.run.vl.seed = seed;
        }
        if let Some(t) = cli.template {
            file.run.template = t;
        }
        if let Some(m) = cli.model {
            file.run.model = m;
        }
        let reader = cli.reader.clone().or(file.reader.clone()).unwrap_or_else(|| "oracle".into());
        let endpoint = cli.ocr_endpoint.clone().or(file.ocr_endpoint.clone());
        let ocr = match (reader.as_str(), endpoint) {
            ("ocr", Some(url)) => Some(HttpAdapter::new(url)),
            ("ocr", None) => return Err(input("--reader ocr needs --ocr-endpoint")),
            ("oracle", _) => None,
            (other, _) => return Err(input(format!("unknown reader {other:?} (expected oracle or ocr)"))),
        };
        Ok(RunContext { file, reader, ocr })
    }

    fn reader(&self) -> ChartReader<'_> {
        match &self.ocr {
            Some(a) => ChartReader::Ocr(a),
            None => ChartReader::Oracle,
        }
    }

    fn echo_seeds(&self) {
        let g = &self.file.generate;
        let r = &self.file.run;
        eprintln!(
            "seeds: split={} style={} train={} init={} reader={}",
            g.seed, g.style_seed, r.train.seed, r.chartbert.seed, self.reader
        );
    }
}

fn open_dataset(path: &Path) -> Result<Dataset> {
    if !path.join(chartfc::pipeline::MANIFEST_FILE).is_file() {
        return Err(input(format!("{} holds no dataset manifest", path.display())));
    }
    Dataset::open(path).with_context(|| format!("opening dataset {}", path.display()))
}

fn selected<'a>(ds: &'a Dataset, split: Option<Split>) -> Vec<&'a chartfc::data::Sample> {
    match split {
        Some(s) => ds.split(s),
        None => ds.samples.iter().collect(),
    }
}

fn print_json_line<T: Serialize>(out: &mut impl Write, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_generate(ctx: &RunContext, seeds: &Path, out: &Path) -> Result<()> {
    ctx.echo_seeds();
    let report = generate_dataset(seeds, out, &ctx.file.generate)?;
    println!("{} samples, {} rejected", report.samples, report.rejections.len());
    for r in &report.rejections {
        println!("rejected {}: {} ({})", r.claim_id, r.code, r.detail);
    }
    Ok(())
}

fn cmd_render(ctx: &RunContext, subtable: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(subtable).map_err(|e| input(format!("cannot read {}: {e}", subtable.display())))?;
    let sub: SubTable = serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", subtable.display())))?;
    let g = &ctx.file.generate;
    let id = out.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let spec = ChartSpec::from_subtable(&sub, style_for(&id, g.style_seed), g.canvas, g.style_seed);
    let art = render(&spec)?;
    let png = out.with_extension("png");
    fs::write(&png, &art.image).with_context(|| format!("writing {}", png.display()))?;
    art.sidecar.expect("renderer emits a sidecar").write(&out.with_extension("json"))?;
    println!("{}", png.display());
    Ok(())
}

fn cmd_read(ctx: &RunContext, args: &SplitArgs) -> Result<()> {
    let ds = open_dataset(&args.data)?;
    let mut out = std::io::stdout().lock();
    for s in selected(&ds, args.split) {
        let read = read_chart(&ds.artifact(s)?, ctx.reader()).with_context(|| format!("reading {}", s.id()))?;
        print_json_line(&mut out, &serde_json::json!({ "id": s.id(), "regions": read.regions }))?;
    }
    Ok(())
}

fn cmd_seqgen(ctx: &RunContext, args: &SplitArgs) -> Result<()> {
    let ds = open_dataset(&args.data)?;
    let mode = ctx.file.run.template;
    let mut out = std::io::stdout().lock();
    for s in selected(&ds, args.split) {
        let read = read_chart(&ds.artifact(s)?, ctx.reader()).with_context(|| format!("reading {}", s.id()))?;
        let seq = chart_sequence(&read, mode).with_context(|| format!("sequencing {}", s.id()))?;
        print_json_line(&mut out, &serde_json::json!({ "id": s.id(), "template": mode, "text": seq.text() }))?;
    }
    Ok(())
}

fn cmd_encode(ctx: &RunContext, args: &SplitArgs) -> Result<()> {
    let ds = open_dataset(&args.data)?;
    let cfg = &ctx.file.run;
    let train_items = experiment::prepare_samples(&ds, &ds.split(Split::Train), ctx.reader(), cfg)?;
    let vocab = encoder::build_vocab(
        train_items.iter().map(|p| corpus_tokens(&p.claim.text, &p.seq)),
        cfg.min_count,
    );
    let samples = selected(&ds, args.split);
    let items = experiment::prepare_samples(&ds, &samples, ctx.reader(), cfg)?;
    let mut out = std::io::stdout().lock();
    match experiment::inputs(&items, &vocab, cfg)? {
        experiment::Inputs::Text(v) => {
            for (s, e) in samples.iter().zip(v) {
                print_json_line(&mut out, &serde_json::json!({ "id": s.id(), "input": e }))?;
            }
        }
        experiment::Inputs::Vl(v) => {
            for (s, e) in samples.iter().zip(v) {
                print_json_line(&mut out, &serde_json::json!({ "id": s.id(), "token_ids": e.token_ids }))?;
            }
        }
    }
    Ok(())
}

fn cmd_train(
    ctx: &RunContext,
    data: &Path,
    out: &Path,
    grid: bool,
    batch_sizes: &[usize],
    learning_rates: &[f64],
) -> Result<()> {
    ctx.echo_seeds();
    let ds = open_dataset(data)?;
    let cfg = &ctx.file.run;
    let prepared = load_train_data(&ds, ctx.reader(), cfg)?;
    let points: Vec<train::TrainConfig> = if grid {
        let bs = if batch_sizes.is_empty() { BATCH_SIZES.to_vec() } else { batch_sizes.to_vec() };
        let lrs = if learning_rates.is_empty() { LEARNING_RATES.to_vec() } else { learning_rates.to_vec() };
        bs.iter()
            .flat_map(|&batch_size| {
                lrs.iter().map(move |&lr| train::TrainConfig {
                    batch_size,
                    lr,
                    ..cfg.train.clone()
                })
            })
            .collect()
    } else {
        if !batch_sizes.is_empty() || !learning_rates.is_empty() {
            return Err(input("--batch-sizes and --learning-rates need --grid"));
        }
        vec![cfg.train.clone()]
    };
    for p in &points {
        p.validate()?;
    }
    let mut best: Option<(f64, experiment::Run)> = None;
    let mut summary = Vec::new();
    for p in &points {
        let run = train_prepared(&prepared, p)?;
        let h = &run.history;
        if !grid {
            for e in &h.epochs {
                println!("{}", serde_json::to_string(e)?);
            }
        }
        summary.push((p.batch_size, p.lr, h.best_epoch, h.best_valid_accuracy));
        if best.as_ref().is_none_or(|(acc, _)| h.best_valid_accuracy > *acc) {
            best = Some((h.best_valid_accuracy, run));
        }
    }
    if grid {
        println!("{:>6}{:>10}{:>12}{:>12}", "batch", "lr", "best_epoch", "valid_acc");
        for (b, lr, e, acc) in &summary {
            println!("{b:>6}{lr:>10.0e}{e:>12}{acc:>12.4}");
        }
    }
    let (acc, run) = best.ok_or_else(|| anyhow!("empty grid"))?;
    save_checkpoint(&run.checkpoint, out)?;
    println!("best valid accuracy {acc:.4}; checkpoint {}", out.display());
    Ok(())
}

fn load_scored(ctx: &RunContext, args: &CheckpointArgs) -> Result<experiment::Scored> {
    let ds = open_dataset(&args.data)?;
    let ck = load_checkpoint(&args.checkpoint).map_err(|e| match e {
        NnError::IoFailure { .. } => input(e.to_string()),
        other => other.into(),
    })?;
    Ok(evaluate_checkpoint(&ds, ctx.reader(), &ck, args.split)?)
}

fn cmd_eval(ctx: &RunContext, args: &CheckpointArgs) -> Result<()> {
    let scored = load_scored(ctx, args)?;
    println!("{}", serde_json::to_string(&scored.metrics)?);
    Ok(())
}

fn cmd_report(ctx: &RunContext, args: &CheckpointArgs, annotations: Option<&Path>) -> Result<()> {
    let scored = load_scored(ctx, args)?;
    let ann: Annotations = match annotations {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
            train::parse_annotations(&text)?
        }
        None => open_dataset(&args.data)?
            .split(args.split)
            .into_iter()
            .filter_map(|s| s.reasoning_types.clone().map(|t| (s.id().to_string(), t)))
            .collect(),
    };
    let rows = train::reasoning_report(&scored.ids, &scored.gold, &scored.pred, &ann)?;
    print!("{}", format_reasoning(&rows));
    Ok(())
}

fn cmd_curve(ctx: &RunContext, data: &Path, percents: &[f64]) -> Result<()> {
    ctx.echo_seeds();
    let ds = open_dataset(data)?;
    let percents = if percents.is_empty() { CURVE_PERCENTS.to_vec() } else { percents.to_vec() };
    if let Some(p) = percents.iter().find(|p| !(**p > 0.0 && **p <= 100.0)) {
        bail!(input(format!("fraction {p}% outside (0, 100]")));
    }
    let points = experiment::curve_run(&ds, ctx.reader(), &ctx.file.run, &percents)?;
    println!("{:>8}{:>8}{:>10}{:>10}", "percent", "train", "accuracy", "macro_f1");
    for p in points {
        println!("{:>8}{:>8}{:>10.4}{:>10.4}", p.percent, p.train_size, p.test_accuracy, p.test_macro_f1);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let ctx = RunContext::new(&cli)?;
    match &cli.command {
        Command::Generate { seeds, out } => cmd_generate(&ctx, seeds, out),
        Command::Render { subtable, out } => cmd_render(&ctx, subtable, out),
        Command::Read(a) => cmd_read(&ctx, a),
        Command::Seqgen(a) => cmd_seqgen(&ctx, a),
        Command::Encode(a) => cmd_encode(&ctx, a),
        Command::Train {
            data,
            out,
            grid,
            batch_sizes,
            learning_rates,
        } => cmd_train(&ctx, data, out, *grid, batch_sizes, learning_rates),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Report { run, annotations } => cmd_report(&ctx, run, annotations.as_deref()),
        Command::Curve { data, percents } => cmd_curve(&ctx, data, percents),
    }
}

/// The error chain joined by ": ", skipping causes the library already
/// folded into the message above them.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::from(if is_input_error(&err) { 2 } else { 1 })
        }
    }
}
