//! End-to-end glue: dataset generation from seed files, and turning charts
//! plus claims into model inputs.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, assign_splits, Claim, DataError, Sample, SplitRatio};
use crate::encoder::{build_vocab, corpus_tokens, encode, EncodeError, EncodedInput, Vocab, CLS, SEP};
use crate::fusion::{image_features, FusionError, VlInput};
use crate::linker::{build_subtable, SubTable};
use crate::reader::{classify_roles, estimate_values, read_ocr, read_oracle, OcrAdapter, ReadError, ReadOutput};
use crate::render::{render, style_for, Canvas, ChartArtifact, ChartSpec, RenderError};
use crate::seqgen::{seq_template, SeqError, SequenceResult, Template};
use crate::synth::MiniSample;
use crate::text::tokenize;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Read(#[from] ReadError),
    #[error("sample {id}: {source}")]
    Seq {
        id: String,
        #[source]
        source: SeqError,
    },
    #[error("sample {id}: {source}")]
    Encode {
        id: String,
        #[source]
        source: EncodeError,
    },
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// How the chart part of a model input is produced; `None` leaves it empty
/// (claim-only inputs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeqMode {
    None,
    Concat,
    Tmp1,
    Tmp2,
    Tmp3,
}

impl SeqMode {
    pub fn template(self) -> Option<Template> {
        match self {
            SeqMode::None => None,
            SeqMode::Concat => Some(Template::Concat),
            SeqMode::Tmp1 => Some(Template::Tmp1),
            SeqMode::Tmp2 => Some(Template::Tmp2),
            SeqMode::Tmp3 => Some(Template::Tmp3),
        }
    }
}

impl fmt::Display for SeqMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.template() {
            None => f.write_str("none"),
            Some(t) => t.fmt(f),
        }
    }
}

impl FromStr for SeqMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("none") {
            return Ok(SeqMode::None);
        }
        Ok(match s.parse::<Template>()? {
            Template::Concat => SeqMode::Concat,
            Template::Tmp1 => SeqMode::Tmp1,
            Template::Tmp2 => SeqMode::Tmp2,
            Template::Tmp3 => SeqMode::Tmp3,
        })
    }
}

/// A claim with the text read from its chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub claim: Claim,
    pub read: ReadOutput,
    pub seq: SequenceResult,
    /// Downsampled image, kept only when requested.
    pub image: Option<Vec<f32>>,
}

pub fn chart_sequence(read: &ReadOutput, mode: SeqMode) -> Result<SequenceResult, SeqError> {
    match mode.template() {
        None => Ok(SequenceResult::default()),
        Some(t) => seq_template(read, t),
    }
}

/// Reading backend.
#[derive(Clone, Copy)]
pub enum ChartReader<'a> {
    /// Ground-truth regions and roles from the layout sidecar.
    Oracle,
    /// Regions from an OCR engine; roles are inferred from geometry and
    /// missing bar values are measured from the raster.
    Ocr(&'a dyn OcrAdapter),
}

pub fn read_chart(artifact: &ChartArtifact, reader: ChartReader<'_>) -> Result<ReadOutput, ReadError> {
    match reader {
        ChartReader::Oracle => read_oracle(artifact),
        ChartReader::Ocr(adapter) => {
            let raw = read_ocr(&artifact.image, adapter)?;
            let roles = classify_roles(&raw)?;
            estimate_values(&artifact.image, &roles)
        }
    }
}

/// Reads a rendered chart and builds its sequence.
pub fn prepare_artifact(
    claim: &Claim,
    artifact: &ChartArtifact,
    reader: ChartReader<'_>,
    mode: SeqMode,
    keep_image: bool,
) -> Result<Prepared, PipelineError> {
    let read = read_chart(artifact, reader)?;
    let seq = chart_sequence(&read, mode).map_err(|source| PipelineError::Seq {
        id: claim.id.clone(),
        source,
    })?;
    let image = if keep_image {
        Some(image_features(&artifact.image)?)
    } else {
        None
    };
    Ok(Prepared {
        claim: claim.clone(),
        read,
        seq,
        image,
    })
}

/// Renders and reads every constructed sample.
pub fn prepare_mini(samples: &[MiniSample], mode: SeqMode, keep_image: bool) -> Result<Vec<Prepared>, PipelineError> {
    samples
        .iter()
        .map(|s| {
            let spec = ChartSpec::from_subtable(&s.subtable, s.style, Canvas::default(), 0);
            let art = render(&spec)?;
            prepare_artifact(&s.claim, &art, ChartReader::Oracle, mode, keep_image)
        })
        .collect()
}

pub fn vocab_for(items: &[Prepared], min_count: usize) -> Vocab {
    build_vocab(items.iter().map(|p| corpus_tokens(&p.claim.text, &p.seq)), min_count)
}

pub fn encode_all(items: &[Prepared], vocab: &Vocab, max_len: usize, buckets: u32) -> Result<Vec<EncodedInput>, PipelineError> {
    items
        .iter()
        .map(|p| {
            encode(&p.claim.text, p.claim.label, &p.seq, &p.read, vocab, max_len, buckets).map_err(|source| {
                PipelineError::Encode {
                    id: p.claim.id.clone(),
                    source,
                }
            })
        })
        .collect()
}

/// Token ids `[CLS] claim [SEP] (chart tokens [SEP])` for the vision-language
/// baselines, truncated to `max_len`. Items must carry image features.
pub fn vl_inputs(items: &[Prepared], vocab: &Vocab, max_len: usize) -> Vec<VlInput> {
    items
        .iter()
        .map(|p| {
            let mut ids = vec![CLS];
            ids.extend(tokenize(&p.claim.text).iter().map(|t| vocab.id(t)));
            ids.push(SEP);
            if !p.seq.is_empty() {
                ids.extend(p.seq.tokens.iter().flat_map(|t| tokenize(t)).map(|t| vocab.id(&t)));
                ids.push(SEP);
            }
            ids.truncate(max_len);
            VlInput {
                token_ids: ids,
                image: p.image.clone().expect("image features were not kept"),
                gold: p.claim.label,
            }
        })
        .collect()
}

/// Options of dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub seed: u64,
    /// Keys the style drawn for each sample.
    pub style_seed: u64,
    pub canvas: Canvas,
    /// Train/valid/test proportions.
    pub split: [u32; 3],
    pub stratified: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            seed: 0,
            style_seed: 0,
            canvas: Canvas::default(),
            split: [8, 1, 1],
            stratified: true,
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const REJECTIONS_FILE: &str = "rejections.jsonl";
pub const SUBTABLES_FILE: &str = "subtables.jsonl";
pub const IMAGES_DIR: &str = "images";
pub const SIDECARS_DIR: &str = "sidecars";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub claim_id: String,
    pub code: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerateReport {
    pub samples: usize,
    pub rejections: Vec<Rejection>,
}

#[derive(Serialize, Deserialize)]
struct SubTableRecord {
    id: String,
    #[serde(flatten)]
    subtable: SubTable,
}

/// File-name-safe form of a sample id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Links every seed claim to a two-column sub-table, renders its chart and
/// writes images, sidecars, sub-tables, the manifest and a rejection log
/// under `out`. Output is a pure function of the seed files and `cfg`. On
/// failure, files written so far are removed.
pub fn generate_dataset(seed_dir: &Path, out: &Path, cfg: &GenerateConfig) -> Result<GenerateReport, PipelineError> {
    let seed = data::load_seed(seed_dir)?;
    let created = !out.exists();
    let result = write_dataset(&seed, out, cfg);
    if result.is_err() {
        for name in [MANIFEST_FILE, REJECTIONS_FILE, SUBTABLES_FILE] {
            let _ = fs::remove_file(out.join(name));
        }
        for dir in [IMAGES_DIR, SIDECARS_DIR] {
            let _ = fs::remove_dir_all(out.join(dir));
        }
        if created {
            let _ = fs::remove_dir(out);
        }
    }
    result
}

fn write_dataset(seed: &data::Seed, out: &Path, cfg: &GenerateConfig) -> Result<GenerateReport, PipelineError> {
    let images = out.join(IMAGES_DIR);
    let sidecars = out.join(SIDECARS_DIR);
    for d in [&images, &sidecars] {
        if d.exists() {
            fs::remove_dir_all(d).map_err(io_err(d))?;
        }
        fs::create_dir_all(d).map_err(io_err(d))?;
    }
    let mut samples = Vec::new();
    let mut rejections = Vec::new();
    let mut subtables = Vec::new();
    let mut stems = BTreeSet::new();
    for sc in &seed.claims {
        let table = seed.table(&sc.table_id).expect("load_seed checks table references");
        let sub = match build_subtable(&sc.claim.text, table) {
            Ok((sub, _)) => sub,
            Err(e) => {
                rejections.push(Rejection {
                    claim_id: sc.claim.id.clone(),
                    code: e.code().to_string(),
                    detail: e.to_string(),
                });
                continue;
            }
        };
        let style = style_for(&sc.claim.id, cfg.style_seed);
        let spec = ChartSpec::from_subtable(&sub, style, cfg.canvas, cfg.style_seed);
        let art = match render(&spec) {
            Ok(a) => a,
            Err(e) => {
                rejections.push(Rejection {
                    claim_id: sc.claim.id.clone(),
                    code: "render".into(),
                    detail: e.to_string(),
                });
                continue;
            }
        };
        let mut stem = file_stem(&sc.claim.id);
        while !stems.insert(stem.clone()) {
            stem.push('_');
        }
        let image_rel = format!("{IMAGES_DIR}/{stem}.png");
        let sidecar_rel = format!("{SIDECARS_DIR}/{stem}.json");
        let image_path = out.join(&image_rel);
        fs::write(&image_path, &art.image).map_err(io_err(&image_path))?;
        art.sidecar
            .as_ref()
            .expect("renderer emits a sidecar")
            .write(&out.join(&sidecar_rel))?;
        subtables.push(SubTableRecord {
            id: stem.clone(),
            subtable: sub,
        });
        samples.push(Sample {
            claim: sc.claim.clone(),
            subtable_ref: stem,
            image_path: image_rel,
            sidecar_path: sidecar_rel,
            split: data::Split::Train,
            reasoning_types: sc.reasoning_types.clone(),
        });
    }
    let [a, b, c] = cfg.split;
    let samples = assign_splits(samples, SplitRatio(a, b, c), cfg.seed, cfg.stratified);
    data::write_manifest(&samples, &out.join(MANIFEST_FILE))?;
    write_jsonl(&out.join(REJECTIONS_FILE), &rejections)?;
    write_jsonl(&out.join(SUBTABLES_FILE), &subtables)?;
    Ok(GenerateReport {
        samples: samples.len(),
        rejections,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it).expect("records serialize");
        buf.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(io_err(path))
}

/// A generated dataset on disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, PipelineError> {
        Ok(Dataset {
            root: root.to_path_buf(),
            samples: data::read_manifest(&root.join(MANIFEST_FILE))?,
        })
    }

    pub fn artifact(&self, s: &Sample) -> Result<ChartArtifact, PipelineError> {
        Ok(ChartArtifact::load(&self.root.join(&s.image_path), &self.root.join(&s.sidecar_path))?)
    }

    pub fn split(&self, split: data::Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    /// Sub-tables keyed by `subtable_ref`.
    pub fn subtables(&self) -> Result<std::collections::BTreeMap<String, SubTable>, PipelineError> {
        let path = self.root.join(SUBTABLES_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut out = std::collections::BTreeMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: SubTableRecord = serde_json::from_str(line).map_err(|e| {
                PipelineError::Data(DataError::MalformedSeed {
                    file: path.display().to_string(),
                    line: i + 1,
                    reason: e.to_string(),
                })
            })?;
            out.insert(rec.id, rec.subtable);
        }
        Ok(out)
    }
}
