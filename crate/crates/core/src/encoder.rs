//! Model inputs: token, segment and position ids plus per-token x/y bucket
//! and axis-title label ids taken from the text region each token came from.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Label;
use crate::reader::ReadOutput;
use crate::render::Role;
use crate::seqgen::{Origin, SequenceResult};
use crate::text::tokenize;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const SEMI: u32 = 4;
pub const RESERVED: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", ";"];
pub const DEFAULT_BUCKETS: u32 = 32;
pub const DEFAULT_MAX_LEN: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("claim has {tokens} tokens, more than max_len - 3 = {limit}")]
    ClaimTooLong { tokens: usize, limit: usize },
    #[error("alignment refers to region {0}, which does not exist")]
    BadAlignment(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Reserved symbols first, then every token seen at least `min_count`
/// times, by descending count and then lexicographically.
pub fn build_vocab<I, S>(corpus: I, min_count: usize) -> Vocab
where
    I: IntoIterator,
    I::Item: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for seq in corpus {
        for t in seq {
            *counts.entry(t.as_ref().to_string()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count && !RESERVED.contains(&t.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(ranked.into_iter().map(|(t, _)| t));
    Vocab::from_tokens(tokens)
}

/// Bucket of a pixel coordinate: `1 + floor(clamp(p / extent, 0, 1-ε) · B)`.
/// Id 0 is reserved for tokens that do not come from the chart.
pub fn quantize_coord(pixel: f64, extent: f64, buckets: u32) -> u32 {
    assert!(extent > 0.0 && buckets >= 1);
    let r = (pixel / extent).clamp(0.0, 1.0);
    let b = ((r * buckets as f64).floor() as u32).min(buckets - 1);
    b + 1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedInput {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u32>,
    pub position_ids: Vec<u32>,
    pub x_bucket_ids: Vec<u32>,
    pub y_bucket_ids: Vec<u32>,
    pub label_ids: Vec<u32>,
    pub attention_mask: Vec<u32>,
    pub gold: Label,
}

impl EncodedInput {
    /// Number of non-padding positions.
    pub fn len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Structural features carried by one chart token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct Structure {
    x: u32,
    y: u32,
    label: u32,
}

/// Model-level tokens of a chart sequence with their structural ids.
fn chart_tokens(
    seq: &SequenceResult,
    read: &ReadOutput,
    buckets: u32,
) -> Result<Vec<(String, Structure)>, EncodeError> {
    let mut out = Vec::with_capacity(seq.len());
    for (tok, origin) in seq.tokens.iter().zip(&seq.alignment) {
        let st = match *origin {
            Origin::Region(i) => {
                let r = read.regions.get(i).ok_or(EncodeError::BadAlignment(i))?;
                Structure {
                    x: quantize_coord(r.bbox.cx(), read.canvas.width as f64, buckets),
                    y: quantize_coord(r.bbox.cy(), read.canvas.height as f64, buckets),
                    label: match r.role {
                        Some(Role::AxisTitleX) => 1,
                        Some(Role::AxisTitleY) => 2,
                        _ => 0,
                    },
                }
            }
            Origin::Scaffold | Origin::Separator => Structure::default(),
        };
        out.extend(tokenize(tok).into_iter().map(|t| (t, st)));
    }
    Ok(out)
}

/// All model-level tokens of a (claim, chart sequence) pair, for vocabulary
/// building.
pub fn corpus_tokens(claim: &str, seq: &SequenceResult) -> Vec<String> {
    let mut out = tokenize(claim);
    for t in &seq.tokens {
        out.extend(tokenize(t));
    }
    out
}

/// Lays out `[CLS] claim [SEP] chart [SEP]` and pads to `max_len`; the chart
/// sequence is truncated from its tail when the whole does not fit.
pub fn encode(
    claim: &str,
    gold: Label,
    seq: &SequenceResult,
    read: &ReadOutput,
    vocab: &Vocab,
    max_len: usize,
    buckets: u32,
) -> Result<EncodedInput, EncodeError> {
    let claim_tokens = tokenize(claim);
    let limit = max_len.saturating_sub(3);
    if claim_tokens.len() > limit {
        return Err(EncodeError::ClaimTooLong {
            tokens: claim_tokens.len(),
            limit,
        });
    }
    let mut chart = chart_tokens(seq, read, buckets)?;
    chart.truncate(limit - claim_tokens.len());

    let mut e = EncodedInput {
        token_ids: Vec::with_capacity(max_len),
        segment_ids: Vec::with_capacity(max_len),
        position_ids: (0..max_len as u32).collect(),
        x_bucket_ids: Vec::with_capacity(max_len),
        y_bucket_ids: Vec::with_capacity(max_len),
        label_ids: Vec::with_capacity(max_len),
        attention_mask: Vec::with_capacity(max_len),
        gold,
    };
    let mut push = |id: u32, segment: u32, st: Structure| {
        e.token_ids.push(id);
        e.segment_ids.push(segment);
        e.x_bucket_ids.push(st.x);
        e.y_bucket_ids.push(st.y);
        e.label_ids.push(st.label);
        e.attention_mask.push(1);
    };
    push(CLS, 0, Structure::default());
    for t in &claim_tokens {
        push(vocab.id(t), 0, Structure::default());
    }
    push(SEP, 0, Structure::default());
    for (t, st) in &chart {
        push(vocab.id(t), 1, *st);
    }
    push(SEP, 1, Structure::default());
    while e.token_ids.len() < max_len {
        e.token_ids.push(PAD);
        e.segment_ids.push(0);
        e.x_bucket_ids.push(0);
        e.y_bucket_ids.push(0);
        e.label_ids.push(0);
        e.attention_mask.push(0);
    }
    Ok(e)
}
