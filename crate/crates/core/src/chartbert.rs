//! Transformer classifier over `[CLS] claim [SEP] chart [SEP]` inputs whose
//! embeddings add chart-position buckets and axis-title labels to the usual
//! token, segment and position embeddings.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncodedInput, DEFAULT_BUCKETS, DEFAULT_MAX_LEN};
use crate::nn::graph::AttnShape;
use crate::nn::layers::{layer_norm, layer_norm_specs, linear, linear_specs, transformer_layer, transformer_specs};
use crate::nn::{Graph, Init, NnError, ParamSpec, Scalar, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub vocab: usize,
    pub buckets: u32,
    pub dropout: f64,
    pub seed: u64,
    /// When false the x/y bucket and label embeddings are left out.
    pub structural: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            hidden: 128,
            heads: 4,
            ffn: 256,
            max_len: DEFAULT_MAX_LEN,
            vocab: 1000,
            buckets: DEFAULT_BUCKETS,
            dropout: 0.0,
            seed: 0,
            structural: true,
        }
    }
}

/// Segment ids, label ids.
pub const SEGMENTS: usize = 2;
pub const LABELS: usize = 3;

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::ShapeMismatch(m));
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 || self.ffn == 0 {
            return bad("layers, hidden, heads and ffn must be at least 1".into());
        }
        if self.max_len == 0 || self.vocab == 0 || self.buckets == 0 {
            return bad("max_len, vocab and buckets must be at least 1".into());
        }
        if self.hidden % self.heads != 0 {
            return bad(format!("hidden {} not divisible by {} heads", self.hidden, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let d = self.hidden;
        let b = self.buckets as usize + 1;
        let mut v = vec![
            ParamSpec::new("emb.token", self.vocab, d, Init::TruncNormal),
            ParamSpec::new("emb.segment", SEGMENTS, d, Init::TruncNormal),
            ParamSpec::new("emb.position", self.max_len, d, Init::TruncNormal),
            ParamSpec::new("emb.x", b, d, Init::TruncNormalZeroRow),
            ParamSpec::new("emb.y", b, d, Init::TruncNormalZeroRow),
            ParamSpec::new("emb.label", LABELS, d, Init::TruncNormalZeroRow),
        ];
        v.extend(layer_norm_specs("emb.ln", d));
        for l in 0..self.layers {
            v.extend(transformer_specs(&format!("layer{l}"), d, self.ffn));
        }
        v.extend(linear_specs("head", d, 1));
        v
    }
}

/// Checks every id against its table size and the sequence against
/// `max_len`; returns the longest unpadded length in the batch.
pub fn check_batch(cfg: &ModelConfig, batch: &[&EncodedInput]) -> Result<usize, NnError> {
    let err = |m: String| NnError::ShapeMismatch(m);
    if batch.is_empty() {
        return Err(err("empty batch".into()));
    }
    let mut longest = 1;
    for e in batch {
        let n = e.token_ids.len();
        if n > cfg.max_len {
            return Err(err(format!("sequence of {n} exceeds max_len {}", cfg.max_len)));
        }
        let fields = [
            (&e.segment_ids, SEGMENTS, "segment"),
            (&e.position_ids, cfg.max_len, "position"),
            (&e.x_bucket_ids, cfg.buckets as usize + 1, "x bucket"),
            (&e.y_bucket_ids, cfg.buckets as usize + 1, "y bucket"),
            (&e.label_ids, LABELS, "label"),
            (&e.token_ids, cfg.vocab, "token"),
        ];
        for (ids, limit, what) in fields {
            if ids.len() != n {
                return Err(err(format!("{what} ids have length {}, tokens {n}", ids.len())));
            }
            if let Some(&id) = ids.iter().find(|&&i| i as usize >= limit) {
                return Err(err(format!("{what} id {id} outside table of {limit}")));
            }
        }
        if e.attention_mask.len() != n {
            return Err(err("attention mask length differs from tokens".into()));
        }
        let used = e.attention_mask.iter().rposition(|&m| m == 1).map_or(0, |p| p + 1);
        longest = longest.max(used);
    }
    Ok(longest)
}

/// Forward pass; returns the `B × 1` probabilities.
///
/// Padding past the longest sequence in the batch is trimmed, which leaves
/// the output unchanged because padded keys are masked.
pub fn forward<T: Scalar>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    batch: &[&EncodedInput],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var, NnError> {
    let seq = check_batch(cfg, batch)?;
    let gather = |f: fn(&EncodedInput) -> &Vec<u32>| -> Vec<usize> {
        batch
            .iter()
            .flat_map(|e| f(e)[..seq].iter().map(|&i| i as usize))
            .collect()
    };
    let mut tables: Vec<(&str, Vec<usize>)> = vec![
        ("emb.token", gather(|e| &e.token_ids)),
        ("emb.segment", gather(|e| &e.segment_ids)),
        ("emb.position", gather(|e| &e.position_ids)),
    ];
    if cfg.structural {
        tables.push(("emb.x", gather(|e| &e.x_bucket_ids)));
        tables.push(("emb.y", gather(|e| &e.y_bucket_ids)));
        tables.push(("emb.label", gather(|e| &e.label_ids)));
    }
    let mut x: Option<Var> = None;
    for (name, idx) in tables {
        let t = g.param(name);
        let e = g.select_rows(t, idx);
        x = Some(match x {
            None => e,
            Some(acc) => g.add(acc, e),
        });
    }
    let x = layer_norm(g, x.expect("token embeddings"), "emb.ln");
    let mut h = crate::nn::layers::dropout(g, x, cfg.dropout, rng.as_deref_mut());

    let shape = AttnShape {
        batch: batch.len(),
        seq,
        heads: cfg.heads,
        key_mask: batch
            .iter()
            .flat_map(|e| e.attention_mask[..seq].iter().map(|&m| m == 1))
            .collect(),
    };
    for l in 0..cfg.layers {
        h = transformer_layer(g, h, &format!("layer{l}"), &shape, cfg.dropout, rng.as_deref_mut());
    }
    let cls = g.select_rows(h, (0..batch.len()).map(|b| b * seq).collect());
    let logit = linear(g, cls, "head");
    Ok(g.sigmoid(logit))
}

/// Probabilities for a batch without keeping anything for training.
pub fn predict<T: Scalar>(
    params: &crate::nn::Params<T>,
    cfg: &ModelConfig,
    batch: &[&EncodedInput],
) -> Result<Vec<f64>, NnError> {
    let mut g = Graph::new(params);
    let p = forward(&mut g, cfg, batch, None)?;
    Ok(column(g.value(p)))
}

pub(crate) fn column<T: Scalar>(a: &Array2<T>) -> Vec<f64> {
    a.column(0).iter().map(|x| x.f()).collect()
}
