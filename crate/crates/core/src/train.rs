//! Training loop with stratified batches and early stopping, evaluation
//! metrics, per-reasoning-type reports and training-set-size curves.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chartbert::{self, ModelConfig};
use crate::data::{Label, ReasoningType};
use crate::encoder::EncodedInput;
use crate::fusion::{self, VlConfig, VlInput};
use crate::nn::{Adam, AdamState, Graph, NnError, ParamSpec, Params, Scalar, Var};

pub const BATCH_SIZES: [usize; 3] = [8, 16, 32];
pub const LEARNING_RATES: [f64; 5] = [1e-3, 7e-4, 5e-5, 5e-6, 5e-7];
pub const MAX_EPOCHS: usize = 50;
pub const THRESHOLD: f64 = 0.5;
const EVAL_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training data holds a single class")]
    SingleClassDataset,
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("annotation references unknown sample {0:?}")]
    UnknownSampleId(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("bad annotation line {line}: {reason}")]
    BadAnnotation { line: usize, reason: String },
    #[error("non-finite parameters after epoch {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Chartbert,
    Vl,
    ClaimOnly,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Chartbert => "chartbert",
            ModelKind::Vl => "vl",
            ModelKind::ClaimOnly => "claim-only",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [ModelKind::Chartbert, ModelKind::Vl, ModelKind::ClaimOnly]
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown model {s:?} (expected chartbert, vl or claim-only)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Allows values outside the standard batch-size and learning-rate grids.
    pub off_grid: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            lr: 1e-3,
            max_epochs: 20,
            patience: 5,
            seed: 0,
            off_grid: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size == 0 || self.max_epochs == 0 || !(self.lr > 0.0) {
            return bad("batch_size, max_epochs and lr must be positive".into());
        }
        if self.off_grid {
            return Ok(());
        }
        if !BATCH_SIZES.contains(&self.batch_size) {
            return bad(format!("batch_size {} not in {BATCH_SIZES:?}", self.batch_size));
        }
        if !LEARNING_RATES.iter().any(|&l| (l - self.lr).abs() <= l * 1e-9) {
            return bad(format!("lr {} not in {LEARNING_RATES:?}", self.lr));
        }
        if self.max_epochs > MAX_EPOCHS {
            return bad(format!("max_epochs {} above {MAX_EPOCHS}", self.max_epochs));
        }
        Ok(())
    }
}

/// A trainable classifier over some input type.
pub trait Model {
    type Input;

    fn specs(&self) -> Vec<ParamSpec>;
    fn init_seed(&self) -> u64;
    fn gold(input: &Self::Input) -> Label;
    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        params: &Params<T>,
        batch: &[&Self::Input],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, NnError>;
}

impl Model for ModelConfig {
    type Input = EncodedInput;

    fn specs(&self) -> Vec<ParamSpec> {
        ModelConfig::specs(self)
    }

    fn init_seed(&self) -> u64 {
        self.seed
    }

    fn gold(input: &EncodedInput) -> Label {
        input.gold
    }

    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        _params: &Params<T>,
        batch: &[&EncodedInput],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, NnError> {
        chartbert::forward(g, self, batch, rng)
    }
}

impl Model for VlConfig {
    type Input = VlInput;

    fn specs(&self) -> Vec<ParamSpec> {
        VlConfig::specs(self)
    }

    fn init_seed(&self) -> u64 {
        self.seed
    }

    fn gold(input: &VlInput) -> Label {
        input.gold
    }

    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        params: &Params<T>,
        batch: &[&VlInput],
        _rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, NnError> {
        fusion::forward_vl(g, params, self, batch)
    }
}

pub fn label_of(p: f64) -> Label {
    Label::from_target(p >= THRESHOLD)
}

/// Splits an epoch into batches whose class mix tracks the global ratio.
///
/// Each class is shuffled, then the two are interleaved so that after `i`
/// draws the Supports count is `round(i · share)`; cutting that sequence
/// into chunks keeps every batch within one sample of the ideal mix.
pub fn stratified_batches(labels: &[Label], batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>, TrainError> {
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Label::Supports).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Label::Refutes).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(TrainError::SingleClassDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let n = labels.len();
    let share = pos.len() as f64 / n as f64;
    let (mut pi, mut ni) = (0, 0);
    let mut order = Vec::with_capacity(n);
    for i in 0..n {
        let due = ((i + 1) as f64 * share).round() as usize;
        if (pi < due && pi < pos.len()) || ni == neg.len() {
            order.push(pos[pi]);
            pi += 1;
        } else {
            order.push(neg[ni]);
            ni += 1;
        }
    }
    Ok(order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Validation accuracy of the initial parameters.
    pub initial_valid_accuracy: f64,
    pub epochs: Vec<EpochRecord>,
    /// 0 when no epoch beat the initial parameters.
    pub best_epoch: usize,
    pub best_valid_accuracy: f64,
    pub stopped_early: bool,
}

pub struct Trained {
    pub params: Params<f32>,
    pub history: History,
}

/// Probabilities for every input, in order.
pub fn predict_all<M: Model>(model: &M, params: &Params<f32>, inputs: &[M::Input]) -> Result<Vec<f64>, NnError> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_BATCH) {
        let refs: Vec<&M::Input> = chunk.iter().collect();
        let mut g = Graph::new(params);
        let p = model.forward(&mut g, params, &refs, None)?;
        out.extend(g.value(p).column(0).iter().map(|&x| x as f64));
    }
    Ok(out)
}

fn accuracy<M: Model>(model: &M, params: &Params<f32>, inputs: &[M::Input]) -> Result<f64, NnError> {
    let p = predict_all(model, params, inputs)?;
    let correct = p
        .iter()
        .zip(inputs)
        .filter(|(&p, x)| label_of(p) == M::gold(x))
        .count();
    Ok(correct as f64 / inputs.len() as f64)
}

/// Trains with binary cross-entropy and Adam, keeping the parameters with
/// the best validation accuracy. Training stops once `patience` epochs in a
/// row fail to beat the best accuracy so far (the initial parameters count
/// as the starting point).
pub fn train<M: Model>(model: &M, cfg: &TrainConfig, train: &[M::Input], valid: &[M::Input]) -> Result<Trained, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if valid.is_empty() {
        return Err(TrainError::EmptySplit("valid"));
    }
    let labels: Vec<Label> = train.iter().map(M::gold).collect();
    let mut params: Params<f32> = Params::init(&model.specs(), model.init_seed());
    let adam = Adam::new(cfg.lr);
    let mut state = AdamState::default();
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));

    let initial = accuracy(model, &params, valid)?;
    let mut history = History {
        initial_valid_accuracy: initial,
        epochs: Vec::new(),
        best_epoch: 0,
        best_valid_accuracy: initial,
        stopped_early: false,
    };
    let mut best = params.clone();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let batches = stratified_batches(&labels, cfg.batch_size, cfg.seed, epoch as u64)?;
        let mut loss_sum = 0.0;
        for idx in &batches {
            let batch: Vec<&M::Input> = idx.iter().map(|&i| &train[i]).collect();
            let targets: Vec<f64> = idx.iter().map(|&i| labels[i].target()).collect();
            let grads = {
                let mut g = Graph::new(&params);
                let p = model.forward(&mut g, &params, &batch, Some(&mut dropout_rng))?;
                let loss = g.bce(p, &targets);
                loss_sum += g.value(loss)[(0, 0)] as f64 * idx.len() as f64;
                g.backward(loss)
            };
            adam.step(&mut params, &grads, &mut state);
        }
        if !params.all_finite() {
            return Err(TrainError::NonFinite(epoch));
        }
        let acc = accuracy(model, &params, valid)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            valid_accuracy: acc,
        });
        if acc > history.best_valid_accuracy {
            history.best_valid_accuracy = acc;
            history.best_epoch = epoch;
            best = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                history.stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    Ok(Trained { params: best, history })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold samples of the class.
    pub support: usize,
}

/// Counts with Supports as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub supports: ClassStats,
    pub refutes: ClassStats,
    pub confusion: Confusion,
}

fn class_stats(tp: usize, fp: usize, fn_: usize) -> ClassStats {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassStats {
        precision,
        recall,
        f1,
        support: tp + fn_,
    }
}

/// Accuracy and macro-F1 of predicted against gold labels. A class that is
/// never predicted has precision and F1 zero.
pub fn metrics(gold: &[Label], pred: &[Label]) -> Result<Metrics, TrainError> {
    assert_eq!(gold.len(), pred.len(), "gold and predictions differ in length");
    if gold.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let mut c = Confusion::default();
    for (g, p) in gold.iter().zip(pred) {
        match (g, p) {
            (Label::Supports, Label::Supports) => c.tp += 1,
            (Label::Refutes, Label::Supports) => c.fp += 1,
            (Label::Refutes, Label::Refutes) => c.tn += 1,
            (Label::Supports, Label::Refutes) => c.fn_ += 1,
        }
    }
    let supports = class_stats(c.tp, c.fp, c.fn_);
    let refutes = class_stats(c.tn, c.fn_, c.fp);
    Ok(Metrics {
        n: gold.len(),
        accuracy: (c.tp + c.tn) as f64 / gold.len() as f64,
        macro_f1: (supports.f1 + refutes.f1) / 2.0,
        supports,
        refutes,
        confusion: c,
    })
}

/// Runs the model over a split and scores it at the 0.5 threshold.
pub fn evaluate<M: Model>(model: &M, params: &Params<f32>, split: &[M::Input]) -> Result<(Metrics, Vec<Label>), TrainError> {
    if split.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let pred: Vec<Label> = predict_all(model, params, split)?.into_iter().map(label_of).collect();
    let gold: Vec<Label> = split.iter().map(M::gold).collect();
    Ok((metrics(&gold, &pred)?, pred))
}

pub type Annotations = BTreeMap<String, BTreeSet<ReasoningType>>;

/// Reads lines of `<sample id>\t<type>,<type>,...`; blank lines and lines
/// starting with `#` are skipped.
pub fn parse_annotations(text: &str) -> Result<Annotations, TrainError> {
    let mut out = Annotations::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| TrainError::BadAnnotation { line: i + 1, reason };
        let (id, types) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected <id><TAB><types>".into()))?;
        let set = types
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.parse::<ReasoningType>().map_err(&bad))
            .collect::<Result<BTreeSet<_>, _>>()?;
        out.entry(id.trim().to_string()).or_default().extend(set);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningRow {
    pub reasoning_type: ReasoningType,
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Per-type counts of annotated samples and correct predictions. A sample
/// with several types counts once in each of their rows.
pub fn reasoning_report(
    ids: &[String],
    gold: &[Label],
    pred: &[Label],
    annotations: &Annotations,
) -> Result<Vec<ReasoningRow>, TrainError> {
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut rows: BTreeMap<ReasoningType, (usize, usize)> = BTreeMap::new();
    for (id, types) in annotations {
        let &i = index
            .get(id.as_str())
            .ok_or_else(|| TrainError::UnknownSampleId(id.clone()))?;
        for &t in types {
            let e = rows.entry(t).or_default();
            e.0 += 1;
            e.1 += (gold[i] == pred[i]) as usize;
        }
    }
    Ok(ReasoningType::ALL
        .iter()
        .filter_map(|t| rows.get(t).map(|&(count, correct)| (t, count, correct)))
        .map(|(&reasoning_type, count, correct)| ReasoningRow {
            reasoning_type,
            count,
            correct,
            accuracy: correct as f64 / count as f64,
        })
        .collect())
}

/// Stratified random subset of `round(fraction · n)` indices, at least one
/// per class, sorted.
pub fn stratified_subset(labels: &[Label], percent: f64, seed: u64) -> Result<Vec<usize>, TrainError> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(TrainError::InvalidConfig(format!("fraction {percent}% outside (0, 100]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = ((percent / 100.0) * labels.len() as f64).round() as usize;
    let mut out = Vec::new();
    let classes = [Label::Supports, Label::Refutes];
    let pos_share = labels.iter().filter(|&&l| l == Label::Supports).count() as f64 / labels.len().max(1) as f64;
    let pos_take = (total as f64 * pos_share).round() as usize;
    for (c, take) in classes.into_iter().zip([pos_take, total.saturating_sub(pos_take)]) {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.is_empty() {
            return Err(TrainError::SingleClassDataset);
        }
        idx.shuffle(&mut rng);
        out.extend_from_slice(&idx[..take.clamp(1, idx.len())]);
    }
    out.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub percent: f64,
    pub train_size: usize,
    pub test_accuracy: f64,
    pub test_macro_f1: f64,
}

pub const CURVE_PERCENTS: [f64; 5] = [1.0, 25.0, 50.0, 75.0, 100.0];

/// Trains on stratified subsets of the training split and scores each run
/// on the full test split.
pub fn subset_curve<M: Model>(
    model: &M,
    cfg: &TrainConfig,
    train_set: &[M::Input],
    valid: &[M::Input],
    test: &[M::Input],
    percents: &[f64],
) -> Result<Vec<CurvePoint>, TrainError>
where
    M::Input: Clone,
{
    let labels: Vec<Label> = train_set.iter().map(M::gold).collect();
    let mut out = Vec::new();
    for &percent in percents {
        let idx = stratified_subset(&labels, percent, cfg.seed)?;
        let subset: Vec<M::Input> = idx.iter().map(|&i| train_set[i].clone()).collect();
        let trained = train(model, cfg, &subset, valid)?;
        let (m, _) = evaluate(model, &trained.params, test)?;
        out.push(CurvePoint {
            percent,
            train_size: subset.len(),
            test_accuracy: m.accuracy,
            test_macro_f1: m.macro_f1,
        });
    }
    Ok(out)
}

/// Fixed-width text rendering of a reasoning report.
pub fn format_reasoning(rows: &[ReasoningRow]) -> String {
    let mut s = format!("{:<24}{:>7}{:>9}{:>10}\n", "type", "count", "correct", "accuracy");
    for r in rows {
        s += &format!(
            "{:<24}{:>7}{:>9}{:>10.3}\n",
            r.reasoning_type.name(),
            r.count,
            r.correct,
            r.accuracy
        );
    }
    s
}
