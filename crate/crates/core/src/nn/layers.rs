//! Layer building blocks on top of [`Graph`]. Each block reads its tensors
//! from the parameter store under a name prefix and has a matching `*_specs`
//! function listing those tensors.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{AttnShape, Graph, Var};
use super::{Init, ParamSpec, Scalar};

pub fn linear_specs(prefix: &str, input: usize, output: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{prefix}.w"), input, output, Init::TruncNormal),
        ParamSpec::new(format!("{prefix}.b"), 1, output, Init::Zeros),
    ]
}

/// `x W + b`.
pub fn linear<T: Scalar>(g: &mut Graph<'_, T>, x: Var, prefix: &str) -> Var {
    let w = g.param(&format!("{prefix}.w"));
    let b = g.param(&format!("{prefix}.b"));
    let xw = g.matmul(x, w);
    g.add_row(xw, b)
}

pub fn layer_norm_specs(prefix: &str, dim: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{prefix}.gamma"), 1, dim, Init::Ones),
        ParamSpec::new(format!("{prefix}.beta"), 1, dim, Init::Zeros),
    ]
}

pub fn layer_norm<T: Scalar>(g: &mut Graph<'_, T>, x: Var, prefix: &str) -> Var {
    let gamma = g.param(&format!("{prefix}.gamma"));
    let beta = g.param(&format!("{prefix}.beta"));
    g.layer_norm(x, gamma, beta)
}

/// Inverted dropout. A rate of zero or a missing RNG is the identity.
pub fn dropout<T: Scalar>(g: &mut Graph<'_, T>, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Var {
    let Some(rng) = rng else { return x };
    if rate <= 0.0 {
        return x;
    }
    let keep = T::c(1.0 / (1.0 - rate));
    let mask = Array2::from_shape_simple_fn(g.shape(x), || {
        if rng.random::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    });
    g.mul_const(x, mask)
}

pub fn transformer_specs(prefix: &str, dim: usize, ffn: usize) -> Vec<ParamSpec> {
    let mut v = Vec::new();
    for n in ["q", "k", "v", "o"] {
        v.extend(linear_specs(&format!("{prefix}.{n}"), dim, dim));
    }
    v.extend(layer_norm_specs(&format!("{prefix}.ln1"), dim));
    v.extend(linear_specs(&format!("{prefix}.ffn1"), dim, ffn));
    v.extend(linear_specs(&format!("{prefix}.ffn2"), ffn, dim));
    v.extend(layer_norm_specs(&format!("{prefix}.ln2"), dim));
    v
}

/// Post-norm encoder layer: self-attention and a GELU feed-forward block,
/// each followed by a residual connection and layer normalization.
pub fn transformer_layer<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    prefix: &str,
    shape: &AttnShape,
    rate: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Var {
    let q = linear(g, x, &format!("{prefix}.q"));
    let k = linear(g, x, &format!("{prefix}.k"));
    let v = linear(g, x, &format!("{prefix}.v"));
    let a = g.attention(q, k, v, shape.clone());
    let a = linear(g, a, &format!("{prefix}.o"));
    let a = dropout(g, a, rate, rng.as_deref_mut());
    let r = g.add(x, a);
    let h = layer_norm(g, r, &format!("{prefix}.ln1"));
    let f = linear(g, h, &format!("{prefix}.ffn1"));
    let f = g.gelu(f);
    let f = linear(g, f, &format!("{prefix}.ffn2"));
    let f = dropout(g, f, rate, rng);
    let r = g.add(h, f);
    layer_norm(g, r, &format!("{prefix}.ln2"))
}

pub fn gru_specs(prefix: &str, input: usize, hidden: usize) -> Vec<ParamSpec> {
    let mut v = linear_specs(&format!("{prefix}.x"), input, 3 * hidden);
    v.extend(linear_specs(&format!("{prefix}.h"), hidden, 3 * hidden));
    v
}

/// One GRU step on a batch: rows of `x` are inputs, rows of `h` states.
///
/// Gates are laid out as reset, update, candidate:
/// `r = σ(x Wr + h Ur)`, `z = σ(x Wz + h Uz)`, `n = tanh(x Wn + r ⊙ (h Un))`,
/// `h' = (1 − z) ⊙ h + z ⊙ n` (biases omitted).
pub fn gru_cell<T: Scalar>(g: &mut Graph<'_, T>, x: Var, h: Var, prefix: &str) -> Var {
    let hidden = g.shape(h).1;
    let gx = linear(g, x, &format!("{prefix}.x"));
    let gh = linear(g, h, &format!("{prefix}.h"));
    let (xr, xz, xn) = (
        g.slice_cols(gx, 0, hidden),
        g.slice_cols(gx, hidden, hidden),
        g.slice_cols(gx, 2 * hidden, hidden),
    );
    let (hr, hz, hn) = (
        g.slice_cols(gh, 0, hidden),
        g.slice_cols(gh, hidden, hidden),
        g.slice_cols(gh, 2 * hidden, hidden),
    );
    let r = g.add(xr, hr);
    let r = g.sigmoid(r);
    let z = g.add(xz, hz);
    let z = g.sigmoid(z);
    let rh = g.mul(r, hn);
    let n = g.add(xn, rh);
    let n = g.tanh(n);
    gru_blend(g, h, z, n)
}

/// `(1 − z) ⊙ h + z ⊙ n`, written as `h + z ⊙ (n − h)`.
pub fn gru_blend<T: Scalar>(g: &mut Graph<'_, T>, h: Var, z: Var, n: Var) -> Var {
    let d = g.sub(n, h);
    let zd = g.mul(z, d);
    g.add(h, zd)
}

pub fn lstm_specs(prefix: &str, input: usize, hidden: usize) -> Vec<ParamSpec> {
    let mut v = linear_specs(&format!("{prefix}.x"), input, 4 * hidden);
    v.extend(linear_specs(&format!("{prefix}.h"), hidden, 4 * hidden));
    v
}

/// One LSTM step; returns `(h', c')`. Gates are input, forget, cell, output.
pub fn lstm_cell<T: Scalar>(g: &mut Graph<'_, T>, x: Var, h: Var, c: Var, prefix: &str) -> (Var, Var) {
    let hidden = g.shape(h).1;
    let gx = linear(g, x, &format!("{prefix}.x"));
    let gh = linear(g, h, &format!("{prefix}.h"));
    let pre = g.add(gx, gh);
    let gate = |g: &mut Graph<'_, T>, k: usize| g.slice_cols(pre, k * hidden, hidden);
    let i = gate(g, 0);
    let i = g.sigmoid(i);
    let f = gate(g, 1);
    let f = g.sigmoid(f);
    let u = gate(g, 2);
    let u = g.tanh(u);
    let o = gate(g, 3);
    let o = g.sigmoid(o);
    let fc = g.mul(f, c);
    let iu = g.mul(i, u);
    let c2 = g.add(fc, iu);
    let tc = g.tanh(c2);
    let h2 = g.mul(o, tc);
    (h2, c2)
}

pub fn lstm_encoder_specs(prefix: &str, vocab: usize, emb: usize, hidden: usize) -> Vec<ParamSpec> {
    let mut v = vec![ParamSpec::new(format!("{prefix}.emb"), vocab, emb, Init::TruncNormal)];
    v.extend(lstm_specs(&format!("{prefix}.l1"), emb, hidden));
    v.extend(lstm_specs(&format!("{prefix}.l2"), hidden, hidden));
    v
}

/// Two stacked LSTMs over a batch of token id sequences. Returns the second
/// layer's hidden state at every step (`B × hidden` each). Past a sequence's
/// length its state is carried forward unchanged, so the last entry holds
/// each sequence's final state.
pub fn lstm_encode<T: Scalar>(g: &mut Graph<'_, T>, ids: &[Vec<u32>], prefix: &str, hidden: usize) -> Vec<Var> {
    let batch = ids.len();
    let steps = ids.iter().map(Vec::len).max().unwrap_or(0);
    let emb = g.param(&format!("{prefix}.emb"));
    let zero = g.constant(Array2::zeros((batch, hidden)));
    let (mut h1, mut c1, mut h2, mut c2) = (zero, zero, zero, zero);
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let rows: Vec<usize> = ids.iter().map(|s| s.get(t).copied().unwrap_or(0) as usize).collect();
        let live: Vec<bool> = ids.iter().map(|s| t < s.len()).collect();
        let x = g.select_rows(emb, rows);
        let (nh1, nc1) = lstm_cell(g, x, h1, c1, &format!("{prefix}.l1"));
        let (nh2, nc2) = lstm_cell(g, nh1, h2, c2, &format!("{prefix}.l2"));
        if live.iter().all(|&l| l) {
            (h1, c1, h2, c2) = (nh1, nc1, nh2, nc2);
        } else {
            h1 = carry(g, h1, nh1, &live);
            c1 = carry(g, c1, nc1, &live);
            h2 = carry(g, h2, nh2, &live);
            c2 = carry(g, c2, nc2, &live);
        }
        out.push(h2);
    }
    out
}

/// Row-wise select: `new` where `live`, else `old`.
fn carry<T: Scalar>(g: &mut Graph<'_, T>, old: Var, new: Var, live: &[bool]) -> Var {
    let (rows, cols) = g.shape(old);
    let m = Array2::from_shape_fn((rows, cols), |(r, _)| if live[r] { T::one() } else { T::zero() });
    let inv = m.mapv(|v| T::one() - v);
    let a = g.mul_const(new, m);
    let b = g.mul_const(old, inv);
    g.add(a, b)
}
