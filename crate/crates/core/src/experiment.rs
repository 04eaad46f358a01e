//! Runs over a generated dataset: building model inputs for a model kind,
//! training to a checkpoint, and scoring a checkpoint on a split.

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::chartbert::ModelConfig;
use crate::data::{Label, Sample, Split};
use crate::encoder::{EncodedInput, Vocab};
use crate::fusion::{VlConfig, VlInput};
use crate::nn::{Checkpoint, NnError, Params};
use crate::pipeline::{encode_all, prepare_artifact, vl_inputs, vocab_for, ChartReader, Dataset, PipelineError, Prepared, SeqMode};
use crate::train::{self, CurvePoint, History, Metrics, ModelKind, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("checkpoint does not describe a run: {0}")]
    BadCheckpoint(String),
}

/// Everything that decides a training run besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelKind,
    /// Chart sequence for text models. Claim-only runs ignore it.
    pub template: SeqMode,
    /// Tokens seen fewer times in the training split map to `[UNK]`.
    pub min_count: usize,
    pub chartbert: ModelConfig,
    pub vl: VlConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::Chartbert,
            template: SeqMode::Tmp1,
            min_count: 1,
            chartbert: ModelConfig::default(),
            vl: VlConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn seq_mode(&self) -> SeqMode {
        match self.model {
            ModelKind::ClaimOnly => SeqMode::None,
            _ => self.template,
        }
    }

    fn max_len(&self) -> usize {
        match self.model {
            ModelKind::Vl => self.vl.max_len,
            _ => self.chartbert.max_len,
        }
    }

    /// Copy with the vocabulary size filled into the model sections.
    fn sized(&self, vocab: &Vocab) -> RunConfig {
        let mut out = self.clone();
        out.chartbert.vocab = vocab.len();
        out.vl.vocab = vocab.len();
        out
    }
}

/// Model inputs of one split.
pub enum Inputs {
    Text(Vec<EncodedInput>),
    Vl(Vec<VlInput>),
}

impl Inputs {
    pub fn len(&self) -> usize {
        match self {
            Inputs::Text(v) => v.len(),
            Inputs::Vl(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reads and sequences the charts of `samples`.
pub fn prepare_samples(
    ds: &Dataset,
    samples: &[&Sample],
    reader: ChartReader<'_>,
    cfg: &RunConfig,
) -> Result<Vec<Prepared>, PipelineError> {
    let keep_image = cfg.model == ModelKind::Vl;
    samples
        .iter()
        .map(|s| {
            let art = ds.artifact(s)?;
            prepare_artifact(&s.claim, &art, reader, cfg.seq_mode(), keep_image)
        })
        .collect()
}

pub fn inputs(items: &[Prepared], vocab: &Vocab, cfg: &RunConfig) -> Result<Inputs, PipelineError> {
    Ok(match cfg.model {
        ModelKind::Vl => Inputs::Vl(vl_inputs(items, vocab, cfg.max_len())),
        _ => Inputs::Text(encode_all(items, vocab, cfg.max_len(), cfg.chartbert.buckets)?),
    })
}

fn mismatch() -> ExperimentError {
    ExperimentError::BadCheckpoint("input kind does not match the model".into())
}

pub fn train_inputs(cfg: &RunConfig, train_set: &Inputs, valid: &Inputs) -> Result<train::Trained, ExperimentError> {
    Ok(match (train_set, valid) {
        (Inputs::Text(t), Inputs::Text(v)) => train::train(&cfg.chartbert, &cfg.train, t, v)?,
        (Inputs::Vl(t), Inputs::Vl(v)) => train::train(&cfg.vl, &cfg.train, t, v)?,
        _ => return Err(mismatch()),
    })
}

pub fn evaluate_inputs(
    cfg: &RunConfig,
    params: &Params<f32>,
    split: &Inputs,
) -> Result<(Metrics, Vec<Label>), ExperimentError> {
    Ok(match split {
        Inputs::Text(s) => train::evaluate(&cfg.chartbert, params, s)?,
        Inputs::Vl(s) => train::evaluate(&cfg.vl, params, s)?,
    })
}

/// Encoded train and valid splits with the vocabulary built from train.
pub struct TrainData {
    /// The run config with vocabulary sizes filled in.
    pub cfg: RunConfig,
    pub vocab: Vocab,
    pub train: Inputs,
    pub valid: Inputs,
}

pub fn load_train_data(ds: &Dataset, reader: ChartReader<'_>, cfg: &RunConfig) -> Result<TrainData, ExperimentError> {
    let train_items = prepare_samples(ds, &ds.split(Split::Train), reader, cfg)?;
    let valid_items = prepare_samples(ds, &ds.split(Split::Valid), reader, cfg)?;
    let vocab = vocab_for(&train_items, cfg.min_count);
    let cfg = cfg.sized(&vocab);
    Ok(TrainData {
        train: inputs(&train_items, &vocab, &cfg)?,
        valid: inputs(&valid_items, &vocab, &cfg)?,
        cfg,
        vocab,
    })
}

pub struct Run {
    pub checkpoint: Checkpoint,
    pub history: History,
}

/// Trains with `train_cfg` in place of the data's own training options and
/// packs the best parameters with the resolved config and vocabulary.
pub fn train_prepared(data: &TrainData, train_cfg: &TrainConfig) -> Result<Run, ExperimentError> {
    let mut cfg = data.cfg.clone();
    cfg.train = train_cfg.clone();
    let trained = train_inputs(&cfg, &data.train, &data.valid)?;
    let checkpoint = Checkpoint {
        config: serde_json::to_value(&cfg).expect("config serializes"),
        params: trained.params,
        meta: json!({ "vocab": data.vocab, "history": trained.history }),
    };
    Ok(Run {
        checkpoint,
        history: trained.history,
    })
}

pub fn train_run(ds: &Dataset, reader: ChartReader<'_>, cfg: &RunConfig) -> Result<Run, ExperimentError> {
    let data = load_train_data(ds, reader, cfg)?;
    train_prepared(&data, &cfg.train)
}

/// Config and vocabulary stored in a checkpoint.
pub fn restore(ck: &Checkpoint) -> Result<(RunConfig, Vocab), ExperimentError> {
    let cfg: RunConfig =
        serde_json::from_value(ck.config.clone()).map_err(|e| ExperimentError::BadCheckpoint(e.to_string()))?;
    let vocab: Vocab = serde_json::from_value(ck.meta.get("vocab").cloned().unwrap_or_default())
        .map_err(|e| ExperimentError::BadCheckpoint(format!("vocab: {e}")))?;
    let specs = match cfg.model {
        ModelKind::Vl => cfg.vl.specs(),
        _ => cfg.chartbert.specs(),
    };
    ck.params.check(&specs)?;
    Ok((cfg, vocab))
}

/// Predictions of a checkpoint on one split.
pub struct Scored {
    pub ids: Vec<String>,
    pub gold: Vec<Label>,
    pub pred: Vec<Label>,
    pub metrics: Metrics,
}

pub fn evaluate_checkpoint(
    ds: &Dataset,
    reader: ChartReader<'_>,
    ck: &Checkpoint,
    split: Split,
) -> Result<Scored, ExperimentError> {
    let (cfg, vocab) = restore(ck)?;
    let samples = ds.split(split);
    let items = prepare_samples(ds, &samples, reader, &cfg)?;
    let (metrics, pred) = evaluate_inputs(&cfg, &ck.params, &inputs(&items, &vocab, &cfg)?)?;
    Ok(Scored {
        ids: samples.iter().map(|s| s.id().to_string()).collect(),
        gold: samples.iter().map(|s| s.label()).collect(),
        pred,
        metrics,
    })
}

/// Subset-size curve on the dataset's train, valid and test splits.
pub fn curve_run(
    ds: &Dataset,
    reader: ChartReader<'_>,
    cfg: &RunConfig,
    percents: &[f64],
) -> Result<Vec<CurvePoint>, ExperimentError> {
    let prep = |split| prepare_samples(ds, &ds.split(split), reader, cfg);
    let (tr, va, te) = (prep(Split::Train)?, prep(Split::Valid)?, prep(Split::Test)?);
    let vocab = vocab_for(&tr, cfg.min_count);
    let cfg = cfg.sized(&vocab);
    let (tr, va, te) = (inputs(&tr, &vocab, &cfg)?, inputs(&va, &vocab, &cfg)?, inputs(&te, &vocab, &cfg)?);
    Ok(match (tr, va, te) {
        (Inputs::Text(a), Inputs::Text(b), Inputs::Text(c)) => {
            train::subset_curve(&cfg.chartbert, &cfg.train, &a, &b, &c, percents)?
        }
        (Inputs::Vl(a), Inputs::Vl(b), Inputs::Vl(c)) => train::subset_curve(&cfg.vl, &cfg.train, &a, &b, &c, percents)?,
        _ => return Err(mismatch()),
    })
}
