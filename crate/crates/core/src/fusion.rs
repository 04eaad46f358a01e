//! Vision-language baselines: a fully connected image encoder, embedding or
//! LSTM text encoders, five ways of fusing the two feature vectors, and a
//! two-layer classification head.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chartbert::column;
use crate::data::Label;
use crate::nn::graph::AttnShape;
use crate::nn::layers::{
    gru_cell, gru_specs, layer_norm, layer_norm_specs, linear, linear_specs, lstm_encode, lstm_encoder_specs,
    transformer_layer, transformer_specs,
};
use crate::nn::{Graph, Init, NnError, ParamSpec, Params, Scalar, Var};

/// Downsampled image size fed to the vision encoder.
pub const IMAGE_W: usize = 64;
pub const IMAGE_H: usize = 48;
pub const IMAGE_DIM: usize = IMAGE_W * IMAGE_H;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("cannot decode chart image: {0}")]
    DecodeFailure(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Grayscale box-downsample of a chart image to 64×48, as ink density in
/// `[0, 1]` (white is 0).
pub fn image_features(png: &[u8]) -> Result<Vec<f32>, FusionError> {
    let img = image::load_from_memory(png)
        .map_err(|e| FusionError::DecodeFailure(e.to_string()))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(FusionError::DecodeFailure("empty image".into()));
    }
    let mut out = Vec::with_capacity(IMAGE_DIM);
    for oy in 0..IMAGE_H {
        let (y0, y1) = (oy * h / IMAGE_H, ((oy + 1) * h / IMAGE_H).max(oy * h / IMAGE_H + 1));
        for ox in 0..IMAGE_W {
            let (x0, x1) = (ox * w / IMAGE_W, ((ox + 1) * w / IMAGE_W).max(ox * w / IMAGE_W + 1));
            let mut sum = 0u64;
            for y in y0..y1.min(h) {
                for x in x0..x1.min(w) {
                    sum += img.get_pixel(x as u32, y as u32)[0] as u64;
                }
            }
            let n = ((y1.min(h) - y0) * (x1.min(w) - x0)) as f64;
            out.push((1.0 - sum as f64 / (255.0 * n)) as f32);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextEncoder {
    /// Word plus position embeddings, layer-normalized.
    Embedder,
    /// Two stacked LSTMs over 32-dimensional word embeddings.
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fusion {
    Concat,
    Mult,
    ConcatGru,
    Mcb,
    Transformer,
}

impl Fusion {
    pub const ALL: [Fusion; 5] = [Fusion::Concat, Fusion::Mult, Fusion::ConcatGru, Fusion::Mcb, Fusion::Transformer];

    pub fn name(self) -> &'static str {
        match self {
            Fusion::Concat => "concat",
            Fusion::Mult => "mult",
            Fusion::ConcatGru => "concat-gru",
            Fusion::Mcb => "mcb",
            Fusion::Transformer => "transformer",
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Fusion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Fusion::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown fusion {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VlConfig {
    pub text: TextEncoder,
    pub fusion: Fusion,
    pub hidden: usize,
    pub vocab: usize,
    pub max_len: usize,
    /// Word embedding size of the LSTM encoder.
    pub lstm_embedding: usize,
    /// Channels of the point-wise convolutions before the GRUs.
    pub conv_channels: usize,
    pub sketch_dim: usize,
    /// Signed square root and L2 normalization after MCB.
    pub mcb_postprocess: bool,
    pub fusion_layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub head_hidden: usize,
    pub seed: u64,
}

impl Default for VlConfig {
    fn default() -> Self {
        VlConfig {
            text: TextEncoder::Embedder,
            fusion: Fusion::Concat,
            hidden: 128,
            vocab: 1000,
            max_len: 256,
            lstm_embedding: 32,
            conv_channels: 8,
            sketch_dim: 256,
            mcb_postprocess: false,
            fusion_layers: 3,
            heads: 4,
            ffn: 256,
            head_hidden: 128,
            seed: 0,
        }
    }
}

/// Index and sign hashes of one count sketch.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchSpec {
    pub out_dim: usize,
    pub hash: Vec<usize>,
    pub sign: Vec<f64>,
}

impl SketchSpec {
    /// Uniform hashes over `[0, out_dim)` and `{-1, +1}`.
    pub fn draw(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SketchSpec {
            out_dim,
            hash: (0..in_dim).map(|_| rng.random_range(0..out_dim)).collect(),
            sign: (0..in_dim).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect(),
        }
    }

    fn to_params(&self, prefix: &str) -> [ParamSpec; 2] {
        let n = self.hash.len();
        [
            ParamSpec::new(format!("{prefix}.hash"), 1, n, Init::Fixed(self.hash.iter().map(|&h| h as f64).collect())),
            ParamSpec::new(format!("{prefix}.sign"), 1, n, Init::Fixed(self.sign.clone())),
        ]
    }

    fn from_params<T: Scalar>(params: &Params<T>, prefix: &str, out_dim: usize) -> Self {
        SketchSpec {
            out_dim,
            hash: params.get(&format!("{prefix}.hash")).iter().map(|h| h.f().round() as usize).collect(),
            sign: params.get(&format!("{prefix}.sign")).iter().map(|s| s.f()).collect(),
        }
    }
}

/// `out[h(i)] += s(i) · x[i]`.
pub fn count_sketch(x: &[f64], spec: &SketchSpec) -> Vec<f64> {
    assert_eq!(x.len(), spec.hash.len(), "sketch domain");
    let mut out = vec![0.0; spec.out_dim];
    for ((&v, &h), &s) in x.iter().zip(&spec.hash).zip(&spec.sign) {
        out[h] += s * v;
    }
    out
}

/// Compact bilinear pooling of two vectors: the circular convolution of
/// their count sketches, computed through the FFT.
pub fn mcb_fuse(a: &[f64], b: &[f64], spec_a: &SketchSpec, spec_b: &SketchSpec) -> Result<Vec<f64>, NnError> {
    if spec_a.out_dim != spec_b.out_dim {
        return Err(NnError::ShapeMismatch(format!(
            "sketch dims {} and {} differ",
            spec_a.out_dim, spec_b.out_dim
        )));
    }
    if a.len() != spec_a.hash.len() || b.len() != spec_b.hash.len() {
        return Err(NnError::ShapeMismatch("input length differs from sketch domain".into()));
    }
    let p: Params<f64> = Params::default();
    let mut g = Graph::new(&p);
    let va = g.constant(Array2::from_shape_vec((1, a.len()), a.to_vec()).unwrap());
    let vb = g.constant(Array2::from_shape_vec((1, b.len()), b.to_vec()).unwrap());
    let out = mcb_graph(&mut g, va, vb, spec_a, spec_b, false);
    Ok(g.value(out).row(0).to_vec())
}

fn mcb_graph<T: Scalar>(
    g: &mut Graph<'_, T>,
    a: Var,
    b: Var,
    spec_a: &SketchSpec,
    spec_b: &SketchSpec,
    postprocess: bool,
) -> Var {
    let sa = g.count_sketch(a, spec_a.hash.clone(), spec_a.sign.clone(), spec_a.out_dim);
    let sb = g.count_sketch(b, spec_b.hash.clone(), spec_b.sign.clone(), spec_b.out_dim);
    let c = g.circ_conv(sa, sb);
    if postprocess {
        let c = g.signed_sqrt(c);
        g.l2_normalize(c)
    } else {
        c
    }
}

/// Affine map of flattened images (`B × 3072`) to `B × d`.
pub fn fc_vision_encode<T: Scalar>(g: &mut Graph<'_, T>, images: Var) -> Var {
    linear(g, images, "vision")
}

/// Per-token word plus position embeddings followed by layer normalization.
/// `ids` are padded to a common length; returns `(B·L) × d`.
pub fn embedder_text_encode<T: Scalar>(g: &mut Graph<'_, T>, ids: &[Vec<u32>], len: usize) -> Var {
    let words: Vec<usize> = ids
        .iter()
        .flat_map(|s| (0..len).map(move |t| s.get(t).copied().unwrap_or(0) as usize))
        .collect();
    let positions: Vec<usize> = ids.iter().flat_map(|_| 0..len).collect();
    let w = g.param("text.word");
    let p = g.param("text.position");
    let we = g.select_rows(w, words);
    let pe = g.select_rows(p, positions);
    let x = g.add(we, pe);
    layer_norm(g, x, "text.ln")
}

pub fn fuse_concat<T: Scalar>(g: &mut Graph<'_, T>, a: Var, b: Var) -> Var {
    g.concat_cols(&[a, b])
}

/// Element-wise product after learned projections to the hidden size.
pub fn fuse_mult<T: Scalar>(g: &mut Graph<'_, T>, a: Var, b: Var) -> Var {
    let pa = linear(g, a, "fuse.proj_a");
    let pb = linear(g, b, "fuse.proj_b");
    g.mul(pa, pb)
}

/// Concatenates `a` and `b`, runs two point-wise convolutions over the
/// resulting feature axis, and reads it with a forward and a backward GRU.
/// Returns both final states side by side (`B × 2·hidden`).
pub fn fuse_concat_gru<T: Scalar>(g: &mut Graph<'_, T>, a: Var, b: Var, hidden: usize) -> Var {
    let v = g.concat_cols(&[a, b]);
    let (batch, steps) = g.shape(v);
    let col = g.reshape(v, batch * steps, 1);
    let c = linear(g, col, "fuse.conv1");
    let c = g.gelu(c);
    let c = linear(g, c, "fuse.conv2");
    let c = g.gelu(c);
    let zero = g.constant(Array2::zeros((batch, hidden)));
    let mut fwd = zero;
    let mut bwd = zero;
    let at = |t: usize| (0..batch).map(|r| r * steps + t).collect::<Vec<usize>>();
    for t in 0..steps {
        let xf = g.select_rows(c, at(t));
        fwd = gru_cell(g, xf, fwd, "fuse.gru_fwd");
        let xb = g.select_rows(c, at(steps - 1 - t));
        bwd = gru_cell(g, xb, bwd, "fuse.gru_bwd");
    }
    g.concat_cols(&[fwd, bwd])
}

/// Joint transformer over text tokens followed by one image token, with a
/// modality embedding; returns the first position's final state.
pub fn fuse_transformer<T: Scalar>(
    g: &mut Graph<'_, T>,
    text: Var,
    image: Var,
    text_len: usize,
    text_mask: &[bool],
    cfg: &VlConfig,
) -> Var {
    let batch = g.shape(image).0;
    let seq = text_len + 1;
    let stacked = g.concat_rows(&[text, image]);
    let order: Vec<usize> = (0..batch)
        .flat_map(|b| (0..text_len).map(move |t| b * text_len + t).chain(std::iter::once(batch * text_len + b)))
        .collect();
    let tokens = g.select_rows(stacked, order);
    let modality = g.param("fuse.modality");
    let m = g.select_rows(modality, (0..batch).flat_map(|_| (0..seq).map(|t| (t == text_len) as usize)).collect());
    let x = g.add(tokens, m);
    let mut h = layer_norm(g, x, "fuse.ln");
    let shape = AttnShape {
        batch,
        seq,
        heads: cfg.heads,
        key_mask: (0..batch)
            .flat_map(|b| (0..seq).map(move |t| t == text_len || text_mask[b * text_len + t]))
            .collect(),
    };
    for l in 0..cfg.fusion_layers {
        h = transformer_layer(g, h, &format!("fuse.layer{l}"), &shape, 0.0, None);
    }
    g.select_rows(h, (0..batch).map(|b| b * seq).collect())
}

/// `sigmoid(FC2(GELU(FC1(h))))`.
pub fn classify_joint<T: Scalar>(g: &mut Graph<'_, T>, joint: Var) -> Var {
    let h = linear(g, joint, "head.fc1");
    let h = g.gelu(h);
    let z = linear(g, h, "head.fc2");
    g.sigmoid(z)
}

impl VlConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let sizes = [
            self.hidden,
            self.vocab,
            self.max_len,
            self.lstm_embedding,
            self.conv_channels,
            self.sketch_dim,
            self.heads,
            self.ffn,
            self.head_hidden,
        ];
        if sizes.contains(&0) {
            return Err(NnError::ShapeMismatch("all VL sizes must be at least 1".into()));
        }
        if self.fusion == Fusion::Transformer && (self.hidden % self.heads != 0 || self.fusion_layers == 0) {
            return Err(NnError::ShapeMismatch(format!(
                "fusion transformer needs hidden {} divisible by heads {} and at least one layer",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    pub fn joint_dim(&self) -> usize {
        match self.fusion {
            Fusion::Concat | Fusion::ConcatGru => 2 * self.hidden,
            Fusion::Mult | Fusion::Transformer => self.hidden,
            Fusion::Mcb => self.sketch_dim,
        }
    }

    fn sketches(&self) -> (SketchSpec, SketchSpec) {
        (
            SketchSpec::draw(self.hidden, self.sketch_dim, self.seed.wrapping_mul(2).wrapping_add(1)),
            SketchSpec::draw(self.hidden, self.sketch_dim, self.seed.wrapping_mul(2).wrapping_add(2)),
        )
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let d = self.hidden;
        let mut v = linear_specs("vision", IMAGE_DIM, d);
        match self.text {
            TextEncoder::Embedder => {
                v.push(ParamSpec::new("text.word", self.vocab, d, Init::TruncNormal));
                v.push(ParamSpec::new("text.position", self.max_len, d, Init::TruncNormal));
                v.extend(layer_norm_specs("text.ln", d));
            }
            TextEncoder::Lstm => v.extend(lstm_encoder_specs("text", self.vocab, self.lstm_embedding, d)),
        }
        match self.fusion {
            Fusion::Concat => {}
            Fusion::Mult => {
                v.extend(linear_specs("fuse.proj_a", d, d));
                v.extend(linear_specs("fuse.proj_b", d, d));
            }
            Fusion::ConcatGru => {
                let c = self.conv_channels;
                v.extend(linear_specs("fuse.conv1", 1, c));
                v.extend(linear_specs("fuse.conv2", c, c));
                v.extend(gru_specs("fuse.gru_fwd", c, d));
                v.extend(gru_specs("fuse.gru_bwd", c, d));
            }
            Fusion::Mcb => {
                let (a, b) = self.sketches();
                v.extend(a.to_params("fuse.sketch_a"));
                v.extend(b.to_params("fuse.sketch_b"));
            }
            Fusion::Transformer => {
                v.push(ParamSpec::new("fuse.modality", 2, d, Init::TruncNormal));
                v.extend(layer_norm_specs("fuse.ln", d));
                for l in 0..self.fusion_layers {
                    v.extend(transformer_specs(&format!("fuse.layer{l}"), d, self.ffn));
                }
            }
        }
        v.extend(linear_specs("head.fc1", self.joint_dim(), self.head_hidden));
        v.extend(linear_specs("head.fc2", self.head_hidden, 1));
        v
    }
}

/// One vision-language example: text token ids (unpadded) and the image
/// features from [`image_features`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlInput {
    pub token_ids: Vec<u32>,
    pub image: Vec<f32>,
    pub gold: Label,
}

/// Forward pass of the full baseline; returns `B × 1` probabilities.
pub fn forward_vl<T: Scalar>(
    g: &mut Graph<'_, T>,
    params: &Params<T>,
    cfg: &VlConfig,
    batch: &[&VlInput],
) -> Result<Var, NnError> {
    if batch.is_empty() {
        return Err(NnError::ShapeMismatch("empty batch".into()));
    }
    let len = batch.iter().map(|s| s.token_ids.len()).max().unwrap_or(0).max(1);
    if len > cfg.max_len {
        return Err(NnError::ShapeMismatch(format!("text of {len} tokens exceeds max_len {}", cfg.max_len)));
    }
    for s in batch {
        if s.image.len() != IMAGE_DIM {
            return Err(NnError::ShapeMismatch(format!("image has {} features, expected {IMAGE_DIM}", s.image.len())));
        }
        if let Some(&id) = s.token_ids.iter().find(|&&i| i as usize >= cfg.vocab) {
            return Err(NnError::ShapeMismatch(format!("token id {id} outside vocabulary of {}", cfg.vocab)));
        }
    }
    let pixels = Array2::from_shape_fn((batch.len(), IMAGE_DIM), |(b, i)| T::c(batch[b].image[i] as f64));
    let pixels = g.constant(pixels);
    let image = fc_vision_encode(g, pixels);

    let ids: Vec<Vec<u32>> = batch.iter().map(|s| s.token_ids.clone()).collect();
    let mask: Vec<bool> = ids.iter().flat_map(|s| (0..len).map(move |t| t < s.len())).collect();
    let (tokens, pooled) = match cfg.text {
        TextEncoder::Embedder => {
            let t = embedder_text_encode(g, &ids, len);
            let pooled = g.masked_mean(t, len, &mask);
            (t, pooled)
        }
        TextEncoder::Lstm => {
            let states = lstm_encode(g, &ids, "text", cfg.hidden);
            let last = *states.last().expect("at least one step");
            let stacked = g.concat_cols(&states);
            let t = g.reshape(stacked, batch.len() * states.len(), cfg.hidden);
            (t, last)
        }
    };
    let joint = match cfg.fusion {
        Fusion::Concat => fuse_concat(g, image, pooled),
        Fusion::Mult => fuse_mult(g, image, pooled),
        Fusion::ConcatGru => fuse_concat_gru(g, image, pooled, cfg.hidden),
        Fusion::Mcb => {
            let sa = SketchSpec::from_params(params, "fuse.sketch_a", cfg.sketch_dim);
            let sb = SketchSpec::from_params(params, "fuse.sketch_b", cfg.sketch_dim);
            mcb_graph(g, image, pooled, &sa, &sb, cfg.mcb_postprocess)
        }
        Fusion::Transformer => fuse_transformer(g, tokens, image, len, &mask, cfg),
    };
    Ok(classify_joint(g, joint))
}

pub fn predict_vl<T: Scalar>(params: &Params<T>, cfg: &VlConfig, batch: &[&VlInput]) -> Result<Vec<f64>, NnError> {
    let mut g = Graph::new(params);
    let p = forward_vl(&mut g, params, cfg, batch)?;
    Ok(column(g.value(p)))
}
