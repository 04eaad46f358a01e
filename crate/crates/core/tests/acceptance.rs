//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Set `ACCEPTANCE_ONLY=1,4,7` to run a subset.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chartfc::chartbert::{self, ModelConfig};
use chartfc::data::{write_seed, Label};
use chartfc::encoder::{encode, EncodedInput};
use chartfc::fusion::{self, count_sketch, mcb_fuse, Fusion, SketchSpec, TextEncoder, VlConfig, VlInput};
use chartfc::linker::levenshtein;
use chartfc::nn::checkpoint::to_bytes;
use chartfc::nn::gradcheck::{self, GradCheck};
use chartfc::nn::graph::AttnShape;
use chartfc::nn::layers::{gru_cell, gru_specs, lstm_encode, lstm_encoder_specs, transformer_layer, transformer_specs};
use chartfc::nn::{Checkpoint, Graph, Init, ParamSpec, Params};
use chartfc::pipeline::{encode_all, generate_dataset, prepare_mini, vocab_for, Dataset, GenerateConfig, SeqMode};
use chartfc::reader::{classify_roles, read_oracle};
use chartfc::render::{render, Style};
use chartfc::seqgen::{pair_records, seq_concat, seq_template, Template};
use chartfc::synth::{sprint_spec, mini_dataset, seed_corpus, MiniTask};
use chartfc::train::{evaluate, metrics, subset_curve, train, TrainConfig, CURVE_PERCENTS};

// Pinned tolerances.
const MAJORITY_ACCURACY: f64 = 55.63;
const MAJORITY_ACCURACY_TOL: f64 = 0.01;
const MAJORITY_MACRO_F1: f64 = 35.75;
const MAJORITY_MACRO_F1_TOL: f64 = 0.1;
const GRAD_TOL: f64 = gradcheck::TOLERANCE;
const GRAD_BUDGET_S: f64 = 120.0;
const MCB_TOL: f64 = 1e-6;
const SKETCH_REL_TOL: f64 = 0.05;
const LEARN_TARGET: f64 = 0.95;
const LEARN_BUDGET_S: f64 = 600.0;
const CURVE_SLACK: f64 = 0.02;
const ROUND_TRIP_BUDGET_S: f64 = 300.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Oracle charts of a generated corpus, shared by criteria 1 and 2.
struct Corpus {
    dir: tempfile::TempDir,
    ds: Dataset,
    styles: BTreeSet<Style>,
    seconds: f64,
}

fn corpus() -> Corpus {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    write_seed(&seed_corpus(200, 3, 17), &dir.path().join("seeds")).unwrap();
    let out = dir.path().join("data");
    generate_dataset(&dir.path().join("seeds"), &out, &GenerateConfig::default()).unwrap();
    let ds = Dataset::open(&out).unwrap();
    let styles = ds
        .samples
        .iter()
        .map(|s| ds.artifact(s).unwrap().spec().unwrap().style())
        .collect();
    Corpus {
        dir,
        ds,
        styles,
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn c1_round_trip(c: &Corpus) -> Outcome {
    let t = Instant::now();
    let subtables = c.ds.subtables().unwrap();
    let mut cells = 0;
    let mut bad = Vec::new();
    for s in &c.ds.samples {
        let sub = &subtables[&s.subtable_ref];
        let read = read_oracle(&c.ds.artifact(s).unwrap()).unwrap();
        let pairs = pair_records(&read).unwrap();
        let got: Vec<(&str, &str)> = pairs.iter().map(|p| (p.text_x.as_str(), p.text_y.as_str())).collect();
        let want: Vec<(&str, &str)> = sub.rows.iter().map(|r| (r.category.as_str(), r.value.text.as_str())).collect();
        let text = seq_template(&read, Template::Tmp1).unwrap().text();
        let all_in_text = want.iter().all(|(cat, val)| {
            text.contains(&format!("{} is {cat} ; ", sub.category_header))
                && text.contains(&format!("{} is {val}", sub.value_header))
        });
        cells += 2 * want.len();
        if got != want || !all_in_text {
            bad.push(s.id().to_string());
        }
    }
    let secs = c.seconds + t.elapsed().as_secs_f64();
    let n = c.ds.samples.len();
    outcome(
        n >= 500 && c.styles.len() == 24 && bad.is_empty() && secs < ROUND_TRIP_BUDGET_S,
        format!(
            "{n} samples, {} styles, {cells} cells, {} mismatches {:?}, {secs:.1}s",
            c.styles.len(),
            bad.len(),
            &bad[..bad.len().min(3)]
        ),
    )
}

fn c2_roles(c: &Corpus) -> Outcome {
    let mut total = 0;
    let mut right = 0;
    for s in &c.ds.samples {
        let oracle = read_oracle(&c.ds.artifact(s).unwrap()).unwrap();
        let got = classify_roles(&oracle.without_roles()).unwrap();
        total += 1;
        right += usize::from(got.regions.iter().zip(&oracle.regions).all(|(a, b)| a.role == b.role));
    }
    outcome(right == total && total >= 500, format!("{right}/{total} charts with every role recovered"))
}

fn c3_majority() -> Outcome {
    let mut gold = vec![Label::Supports; 885];
    gold.extend(vec![Label::Refutes; 706]);
    let pred = vec![Label::Supports; gold.len()];
    let m = metrics(&gold, &pred).unwrap();
    let (acc, f1) = (100.0 * m.accuracy, 100.0 * m.macro_f1);
    outcome(
        (acc - MAJORITY_ACCURACY).abs() <= MAJORITY_ACCURACY_TOL && (f1 - MAJORITY_MACRO_F1).abs() <= MAJORITY_MACRO_F1_TOL,
        format!("accuracy {acc:.3}, macro-F1 {f1:.3}"),
    )
}

fn c4_templates() -> Outcome {
    let read = read_oracle(&render(&sprint_spec()).unwrap()).unwrap();
    let checks = [
        (seq_template(&read, Template::Tmp1).unwrap().text(), "entry one: athlete is usain bolt ; rank is 1"),
        (seq_template(&read, Template::Tmp2).unwrap().text(), "row 0: athlete is usain bolt ; rank is 1"),
        (seq_template(&read, Template::Tmp3).unwrap().text(), "athlete is usain bolt when rank is 1"),
        (seq_concat(&read).unwrap().text(), "usain bolt ; 1 ; andy stanfield ; 2"),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(t, want)| !t.starts_with(want)).map(|c| c.1).collect();
    outcome(failed.is_empty(), format!("{} of 4 strings byte-exact {failed:?}", 4 - failed.len()))
}

fn scaled(specs: &[ParamSpec], seed: u64, k: f64) -> Params<f64> {
    let mut p: Params<f64> = Params::init(specs, seed);
    for (name, a) in p.tensors.iter_mut() {
        if !name.ends_with(".gamma") && !p.frozen.contains(name) {
            a.mapv_inplace(|x| x * k);
        }
    }
    p
}

fn weighted(g: &mut Graph<'_, f64>, v: chartfc::nn::Var) -> chartfc::nn::Var {
    let (r, c) = g.shape(v);
    g.weighted_sum(v, ndarray::Array2::from_shape_fn((r, c), |(i, j)| ((i * 7 + j * 3) as f64 * 0.37).sin()))
}

fn fig1_inputs(cfg: &ModelConfig) -> Vec<EncodedInput> {
    let read = read_oracle(&render(&sprint_spec()).unwrap()).unwrap();
    let seq = seq_template(&read, Template::Tmp3).unwrap();
    let claim = "bolt was ranked first";
    let vocab = chartfc::encoder::build_vocab([chartfc::encoder::corpus_tokens(claim, &seq)], 1);
    [Label::Supports, Label::Refutes]
        .into_iter()
        .enumerate()
        .map(|(i, l)| encode(&claim[i * 5..], l, &seq, &read, &vocab, cfg.max_len, cfg.buckets).unwrap())
        .collect()
}

fn c5_gradients() -> Outcome {
    let t = Instant::now();
    let mut results: Vec<(String, GradCheck)> = Vec::new();

    let mut specs = transformer_specs("t", 8, 12);
    specs.push(ParamSpec::new("x", 6, 8, Init::TruncNormal));
    let p = scaled(&specs, 6, 25.0);
    let shape = AttnShape {
        batch: 2,
        seq: 3,
        heads: 2,
        key_mask: vec![true, true, true, true, true, false],
    };
    results.push((
        "transformer layer".into(),
        gradcheck::check(&p, |g| {
            let x = g.param("x");
            let y = transformer_layer(g, x, "t", &shape, 0.0, None);
            weighted(g, y)
        }),
    ));

    let mut specs = gru_specs("gru", 8, 8);
    specs.push(ParamSpec::new("x", 2, 8, Init::TruncNormal));
    specs.push(ParamSpec::new("h", 2, 8, Init::TruncNormal));
    let p = scaled(&specs, 7, 25.0);
    results.push((
        "gru cell".into(),
        gradcheck::check(&p, |g| {
            let (x, h) = (g.param("x"), g.param("h"));
            let y = gru_cell(g, x, h, "gru");
            weighted(g, y)
        }),
    ));

    let p = scaled(&lstm_encoder_specs("enc", 6, 4, 5), 8, 25.0);
    results.push((
        "lstm encoder".into(),
        gradcheck::check(&p, |g| {
            let states = lstm_encode(g, &[vec![1, 2, 3], vec![5, 1]], "enc", 5);
            let all = g.concat_cols(&states);
            weighted(g, all)
        }),
    ));

    let image = |k: f32| (0..fusion::IMAGE_DIM).map(|i| ((i as f32 * 0.37 + k).sin() + 1.0) / 2.0).collect();
    let batch = [
        VlInput {
            token_ids: vec![2, 5, 3],
            image: image(0.3),
            gold: Label::Supports,
        },
        VlInput {
            token_ids: vec![2, 7],
            image: image(0.8),
            gold: Label::Refutes,
        },
    ];
    let refs: Vec<&VlInput> = batch.iter().collect();
    for (fusion, text) in [
        (Fusion::Concat, TextEncoder::Lstm),
        (Fusion::Mult, TextEncoder::Embedder),
        (Fusion::ConcatGru, TextEncoder::Embedder),
        (Fusion::Mcb, TextEncoder::Embedder),
        (Fusion::Transformer, TextEncoder::Embedder),
    ] {
        let c = VlConfig {
            text,
            fusion,
            hidden: 8,
            vocab: 10,
            max_len: 6,
            lstm_embedding: 4,
            conv_channels: 3,
            sketch_dim: 16,
            fusion_layers: 2,
            heads: 2,
            ffn: 12,
            head_hidden: 6,
            ..VlConfig::default()
        };
        let mut p: Params<f64> = Params::init(&c.specs(), 6);
        let k = match fusion {
            Fusion::ConcatGru => 15.0,
            Fusion::Mcb => 2.0,
            _ => 4.0,
        };
        for (name, a) in p.tensors.iter_mut() {
            if !p.frozen.contains(name) {
                a.mapv_inplace(|x| x * k);
            }
        }
        p.frozen.insert("vision.w".into());
        results.push((
            format!("vl {fusion} + head"),
            gradcheck::check(&p, |g| {
                let pr = fusion::forward_vl(g, &p, &c, &refs).unwrap();
                g.bce(pr, &[1.0, 0.0])
            }),
        ));
    }

    let cfg = ModelConfig {
        layers: 2,
        hidden: 16,
        heads: 2,
        ffn: 24,
        max_len: 20,
        vocab: 40,
        buckets: 8,
        ..ModelConfig::default()
    };
    let inputs = fig1_inputs(&cfg);
    let mut p: Params<f64> = Params::init(&cfg.specs(), 4);
    for a in p.tensors.values_mut() {
        a.mapv_inplace(|x| x * 4.0);
    }
    results.push((
        "chartbert + head".into(),
        gradcheck::check(&p, |g| {
            let pr = chartbert::forward(g, &cfg, &[&inputs[0], &inputs[1]], None).unwrap();
            g.bce(pr, &[1.0, 0.0])
        }),
    ));

    let secs = t.elapsed().as_secs_f64();
    let (worst_name, worst) = results
        .iter()
        .map(|(n, r)| (n.as_str(), r.worst()))
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let failed: Vec<&str> = results.iter().filter(|(_, r)| !r.passed()).map(|(n, _)| n.as_str()).collect();
    outcome(
        failed.is_empty() && worst < GRAD_TOL && secs < GRAD_BUDGET_S,
        format!("{} blocks, worst rel. error {worst:.2e} ({worst_name}), {secs:.1}s {failed:?}", results.len()),
    )
}

fn c6_mcb() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut vector = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let d = 64;
    let (a, b) = (vector(96), vector(80));
    let (sa, sb) = (SketchSpec::draw(96, d, 3), SketchSpec::draw(80, d, 4));
    let fused = mcb_fuse(&a, &b, &sa, &sb).unwrap();
    let (ca, cb) = (count_sketch(&a, &sa), count_sketch(&b, &sb));
    let mut conv = vec![0.0; d];
    for i in 0..d {
        for j in 0..d {
            conv[(i + j) % d] += ca[i] * cb[j];
        }
    }
    let mcb_err = fused.iter().zip(&conv).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);

    let x = vector(64);
    let y: Vec<f64> = x.iter().zip(vector(64)).map(|(a, n)| a + 0.3 * n).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let exact = dot(&x, &y);
    let mean = (0..1000)
        .map(|s| {
            let spec = SketchSpec::draw(64, 256, 10_000 + s);
            dot(&count_sketch(&x, &spec), &count_sketch(&y, &spec))
        })
        .sum::<f64>()
        / 1000.0;
    let rel = (mean - exact).abs() / exact.abs();
    outcome(
        mcb_err < MCB_TOL && rel < SKETCH_REL_TOL,
        format!("MCB max error {mcb_err:.1e} (d'=64); sketch inner product rel. error {:.2}% over 1000 draws", 100.0 * rel),
    )
}

fn dp_oracle(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() || b.is_empty() {
        return a.len().max(b.len());
    }
    if let Some(&d) = memo.get(&(a.len(), b.len())) {
        return d;
    }
    let (ha, ta) = a.split_last().unwrap();
    let (hb, tb) = b.split_last().unwrap();
    let d = if ha == hb {
        dp_oracle(ta, tb, memo)
    } else {
        1 + dp_oracle(ta, tb, memo).min(dp_oracle(ta, b, memo)).min(dp_oracle(a, tb, memo))
    };
    memo.insert((a.len(), b.len()), d);
    d
}

fn c7_levenshtein() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let alphabet: Vec<char> = "abcdeé ".chars().collect();
    let word = |rng: &mut ChaCha8Rng| -> String {
        let n = rng.random_range(0..=10);
        (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
    };
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (a, b) = (word(&mut rng), word(&mut rng));
        let (ca, cb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
        mismatches += usize::from(levenshtein(&a, &b) != dp_oracle(&ca, &cb, &mut HashMap::new()));
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches over 1000 pairs"))
}

/// Mini-dataset inputs with the vocabulary sized into `cfg`.
fn mini_inputs(task: MiniTask, mode: SeqMode, cfg: &mut ModelConfig, seed: u64) -> Vec<EncodedInput> {
    let samples = mini_dataset(task, 2000, 4, 6, seed);
    let prepared = prepare_mini(&samples, mode, false).unwrap();
    let vocab = vocab_for(&prepared, 1);
    cfg.vocab = vocab.len();
    encode_all(&prepared, &vocab, cfg.max_len, cfg.buckets).unwrap()
}

fn learn_config(max_epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        lr: 3e-4,
        max_epochs,
        patience: 5,
        seed: 1,
        off_grid: true,
    }
}

fn c8_learnability() -> Outcome {
    let mut cfg = ModelConfig {
        max_len: 128,
        ..ModelConfig::default()
    };
    let data = mini_inputs(MiniTask::Ranked, SeqMode::Concat, &mut cfg, 7);
    let (tr, va) = data.split_at(1800);
    let t = Instant::now();
    let ranked = train(&cfg, &learn_config(40), tr, va).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let acc = ranked.history.best_valid_accuracy;
    let first = ranked.history.epochs.iter().find(|e| e.valid_accuracy >= LEARN_TARGET).map_or(0, |e| e.epoch);

    let axis = |structural: bool| {
        let mut cfg = ModelConfig {
            max_len: 128,
            structural,
            ..ModelConfig::default()
        };
        let data = mini_inputs(MiniTask::AxisLocation, SeqMode::Tmp1, &mut cfg, 7);
        let (tr, va) = data.split_at(1800);
        let trained = train(&cfg, &learn_config(12), tr, va).unwrap();
        evaluate(&cfg, &trained.params, va).unwrap().0.accuracy
    };
    let (with, without) = (axis(true), axis(false));
    outcome(
        acc >= LEARN_TARGET && secs < LEARN_BUDGET_S && without < with,
        format!(
            "ranked valid acc {acc:.3} (epoch {}, first >= {LEARN_TARGET} at epoch {first}), {secs:.0}s for the whole run; axis task {with:.3} with structural embeddings, {without:.3} without",
            ranked.history.best_epoch
        ),
    )
}

fn c9_curve() -> Outcome {
    let mut curves = Vec::new();
    for seed in [1u64, 2, 3] {
        let mut cfg = ModelConfig {
            hidden: 64,
            heads: 4,
            ffn: 128,
            max_len: 128,
            seed,
            ..ModelConfig::default()
        };
        let data = mini_inputs(MiniTask::Ranked, SeqMode::Concat, &mut cfg, 7);
        let (tr, rest) = data.split_at(1600);
        let (va, te) = rest.split_at(200);
        let tc = TrainConfig {
            seed,
            ..learn_config(30)
        };
        let points = subset_curve(&cfg, &tc, tr, va, te, &CURVE_PERCENTS).unwrap();
        curves.push(points.iter().map(|p| p.test_accuracy).collect::<Vec<_>>());
    }
    let mean: Vec<f64> = (0..CURVE_PERCENTS.len())
        .map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / curves.len() as f64)
        .collect();
    let monotone = mean.windows(2).all(|w| w[1] >= w[0] - CURVE_SLACK);
    let fmt = |v: &[f64]| v.iter().map(|a| format!("{:.3}", a)).collect::<Vec<_>>().join(" ");
    outcome(
        monotone,
        format!(
            "mean test acc over {{1,25,50,75,100}}%: {}; per seed: [{}]",
            fmt(&mean),
            curves.iter().map(|c| fmt(c)).collect::<Vec<_>>().join("] [")
        ),
    )
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c10_determinism(c: &Corpus) -> Outcome {
    let again = c.dir.path().join("again");
    generate_dataset(&c.dir.path().join("seeds"), &again, &GenerateConfig::default()).unwrap();
    let same_data = tree(&c.ds.root) == tree(&again);

    let mut cfg = ModelConfig {
        hidden: 32,
        heads: 2,
        ffn: 64,
        max_len: 128,
        dropout: 0.1,
        ..ModelConfig::default()
    };
    let data = mini_inputs(MiniTask::Ranked, SeqMode::Concat, &mut cfg, 3);
    let (tr, va) = (&data[..300], &data[300..400]);
    let run = || {
        let t = train(&cfg, &learn_config(2), tr, va).unwrap();
        to_bytes(&Checkpoint {
            config: serde_json::to_value(&cfg).unwrap(),
            params: t.params,
            meta: serde_json::to_value(&t.history).unwrap(),
        })
    };
    let (a, b) = (run(), run());
    outcome(
        same_data && a == b,
        format!(
            "generate: {} files identical={same_data}; train: {} checkpoint bytes identical={}",
            tree(&again).len(),
            a.len(),
            a == b
        ),
    )
}

fn main() -> ExitCode {
    let only: Option<BTreeSet<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|s| s.contains(&n));
    let needs_corpus = [1, 2, 10].into_iter().any(wanted);
    let shared = needs_corpus.then(corpus);

    let criteria: Vec<(u32, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "oracle round-trip", Box::new(|| c1_round_trip(shared.as_ref().unwrap()))),
        (2, "role classification", Box::new(|| c2_roles(shared.as_ref().unwrap()))),
        (3, "majority-class closed form", Box::new(c3_majority)),
        (4, "template fidelity", Box::new(c4_templates)),
        (5, "gradient verification", Box::new(c5_gradients)),
        (6, "MCB and count sketch", Box::new(c6_mcb)),
        (7, "Levenshtein oracle", Box::new(c7_levenshtein)),
        (8, "learnability smoke test", Box::new(c8_learnability)),
        (9, "subset-curve shape", Box::new(c9_curve)),
        (10, "determinism", Box::new(|| c10_determinism(shared.as_ref().unwrap()))),
    ];
    let mut failed = 0;
    for (n, name, f) in &criteria {
        if !wanted(*n) {
            continue;
        }
        let o = f();
        failed += usize::from(!o.pass);
        println!("{} [{n}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
