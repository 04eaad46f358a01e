//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation applied during a forward pass.
//! Parameter leaves borrow their tensors from a [`Params`] store; calling
//! [`Graph::backward`] on a scalar node yields one gradient per parameter.

use std::borrow::Cow;
use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{Grads, Params, Scalar};

/// Handle to a node of the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Multi-head attention geometry: `batch` sequences of `seq` rows each,
/// stacked in row-major order.
#[derive(Debug, Clone)]
pub struct AttnShape {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    /// `batch * seq` flags; false marks a padding key.
    pub key_mask: Vec<bool>,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulConst(Var, Array2<T>),
    Affine(Var, f64),
    Gelu(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<T>,
        rstd: Vec<f64>,
    },
    SelectRows(Var, Vec<usize>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttnShape,
        probs: Vec<Array2<T>>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    Reshape(Var),
    MaskedMean {
        x: Var,
        seq: usize,
        weights: Vec<f64>,
    },
    Bce(Var, Vec<f64>),
    WeightedSum(Var, Array2<T>),
    CountSketch {
        x: Var,
        hash: Vec<usize>,
        sign: Vec<f64>,
    },
    CircConv(Var, Var),
    SignedSqrt(Var),
    L2Normalize(Var, Vec<f64>),
}

struct Node<'p, T: Clone> {
    value: Cow<'p, Array2<T>>,
    op: Op<T>,
    needs_grad: bool,
    param: Option<&'p str>,
}

pub struct Graph<'p, T: Scalar> {
    params: &'p Params<T>,
    nodes: Vec<Node<'p, T>>,
    param_vars: HashMap<&'p str, Var>,
}

pub const LN_EPS: f64 = 1e-12;
pub const BCE_CLAMP: f64 = 1e-7;

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x);
    (y, dy)
}

fn fft_pair(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    let mut planner = FftPlanner::new();
    (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
}

fn to_complex<T: Scalar>(row: ndarray::ArrayView1<T>) -> Vec<Complex<f64>> {
    row.iter().map(|&x| Complex::new(x.f(), 0.0)).collect()
}

/// Row-wise circular convolution (`conj_b = false`) or correlation
/// (`conj_b = true`) of `a` with `b` via FFT.
fn circular<T: Scalar>(a: ArrayView2<T>, b: ArrayView2<T>, conj_b: bool) -> Array2<T> {
    let (n, d) = a.dim();
    let (fwd, inv) = fft_pair(d);
    let mut out = Array2::zeros((n, d));
    for r in 0..n {
        let mut fa = to_complex(a.row(r));
        let mut fb = to_complex(b.row(r));
        fwd.process(&mut fa);
        fwd.process(&mut fb);
        for (x, y) in fa.iter_mut().zip(&fb) {
            *x *= if conj_b { y.conj() } else { *y };
        }
        inv.process(&mut fa);
        for (o, x) in out.row_mut(r).iter_mut().zip(&fa) {
            *o = T::c(x.re / d as f64);
        }
    }
    out
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p Params<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a named parameter; repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> Var {
        if let Some(&v) = self.param_vars.get(name) {
            return v;
        }
        let (key, value) = self
            .params
            .tensors
            .get_key_value(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"));
        let trainable = !self.params.frozen.contains(name);
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            needs_grad: trainable,
            param: Some(key.as_str()),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(key.as_str(), v);
        v
    }

    /// Leaf holding input data; receives no gradient.
    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            needs_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.ncols(), y.nrows(), "matmul {:?} x {:?}", x.dim(), y.dim());
        let out = x.dot(y);
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{what} shape mismatch");
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((1, x.ncols()), r.dim(), "add_row shape mismatch");
        let out = x + r;
        self.push(out, Op::AddRow(a, row), &[a, row])
    }

    /// Element-wise product with a constant tensor (masks, dropout).
    pub fn mul_const(&mut self, a: Var, m: Array2<T>) -> Var {
        assert_eq!(self.shape(a), m.dim(), "mul_const shape mismatch");
        let out = self.value(a) * &m;
        self.push(out, Op::MulConst(a, m), &[a])
    }

    /// `alpha * a + beta`.
    pub fn affine(&mut self, a: Var, alpha: f64, beta: f64) -> Var {
        let (al, be) = (T::c(alpha), T::c(beta));
        let out = self.value(a).mapv(|x| al * x + be);
        self.push(out, Op::Affine(a, alpha), &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| T::c(gelu_parts(x.f()).0));
        self.push(out, Op::Gelu(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(T::zero()));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.tanh());
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| T::c(1.0 / (1.0 + (-x.f()).exp())));
        self.push(out, Op::Sigmoid(a), &[a])
    }

    /// Row-wise layer normalization with learned `1 × d` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.dim();
        assert_eq!(self.shape(gamma), (1, d));
        assert_eq!(self.shape(beta), (1, d));
        let mut xhat = Array2::zeros((n, d));
        let mut rstd = Vec::with_capacity(n);
        for (row, mut out) in xv.rows().into_iter().zip(xhat.rows_mut()) {
            let mean = row.iter().map(|v| v.f()).sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v.f() - mean).powi(2)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            for (o, v) in out.iter_mut().zip(row) {
                *o = T::c((v.f() - mean) * r);
            }
            rstd.push(r);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// Gathers rows of `a`; with an embedding table this is a lookup.
    pub fn select_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let av = self.value(a);
        let mut out = Array2::zeros((idx.len(), av.ncols()));
        for (mut o, &i) in out.rows_mut().into_iter().zip(&idx) {
            o.assign(&av.row(i));
        }
        self.push(out, Op::SelectRows(a, idx), &[a])
    }

    /// Scaled dot-product multi-head attention with a key padding mask.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, shape: AttnShape) -> Var {
        let (n, d) = self.shape(q);
        assert_eq!(n, shape.batch * shape.seq, "attention rows");
        assert_eq!(shape.key_mask.len(), n, "attention mask");
        assert_eq!(d % shape.heads, 0, "hidden not divisible by heads");
        self.same_shape(q, k, "attention k");
        self.same_shape(q, v, "attention v");
        let dh = d / shape.heads;
        let scale = T::c(1.0 / (dh as f64).sqrt());
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = Array2::zeros((n, d));
        let mut probs = Vec::with_capacity(shape.batch * shape.heads);
        let l = shape.seq;
        for b in 0..shape.batch {
            let rows = b * l..(b + 1) * l;
            let mask = &shape.key_mask[rows.clone()];
            for h in 0..shape.heads {
                let cols = h * dh..(h + 1) * dh;
                let qs = qv.slice(s![rows.clone(), cols.clone()]);
                let ks = kv.slice(s![rows.clone(), cols.clone()]);
                let vs = vv.slice(s![rows.clone(), cols.clone()]);
                let mut p = qs.dot(&ks.t());
                for mut row in p.rows_mut() {
                    let mut max = f64::NEG_INFINITY;
                    for (j, x) in row.iter().enumerate() {
                        if mask[j] {
                            max = max.max((*x * scale).f());
                        }
                    }
                    let mut sum = 0.0;
                    let mut e = vec![0.0; l];
                    for j in 0..l {
                        if mask[j] {
                            e[j] = ((row[j] * scale).f() - max).exp();
                            sum += e[j];
                        }
                    }
                    for j in 0..l {
                        row[j] = if sum > 0.0 { T::c(e[j] / sum) } else { T::zero() };
                    }
                }
                out.slice_mut(s![rows.clone(), cols]).assign(&p.dot(&vs));
                probs.push(p);
            }
        }
        self.push(out, Op::Attention { q, k, v, shape, probs }, &[q, k, v])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<T>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<T>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols(a, start), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(out, Op::SliceRows(a, start), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a), &[a])
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.len(), rows * cols, "reshape size");
        let flat: Vec<T> = av.iter().copied().collect();
        let out = Array2::from_shape_vec((rows, cols), flat).unwrap();
        self.push(out, Op::Reshape(a), &[a])
    }

    /// Mean over the unmasked rows of each of the `len / seq` sequences.
    pub fn masked_mean(&mut self, x: Var, seq: usize, mask: &[bool]) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.dim();
        assert_eq!(n % seq, 0);
        assert_eq!(mask.len(), n);
        let batch = n / seq;
        let mut out = Array2::zeros((batch, d));
        let mut weights = vec![0.0; n];
        for b in 0..batch {
            let count = mask[b * seq..(b + 1) * seq].iter().filter(|&&m| m).count();
            if count == 0 {
                continue;
            }
            let w = 1.0 / count as f64;
            for t in 0..seq {
                if mask[b * seq + t] {
                    weights[b * seq + t] = w;
                    let row = xv.row(b * seq + t);
                    out.row_mut(b).zip_mut_with(&row, |o, &v| *o += T::c(w) * v);
                }
            }
        }
        self.push(out, Op::MaskedMean { x, seq, weights }, &[x])
    }

    /// Mean binary cross-entropy of probabilities `p` (`n × 1`) against 0/1
    /// targets, with probabilities clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, p: Var, targets: &[f64]) -> Var {
        let pv = self.value(p);
        assert_eq!(pv.dim(), (targets.len(), 1), "bce shape");
        let n = targets.len() as f64;
        let loss: f64 = pv
            .iter()
            .zip(targets)
            .map(|(&p, &y)| {
                let p = p.f().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / n;
        let out = Array2::from_elem((1, 1), T::c(loss));
        self.push(out, Op::Bce(p, targets.to_vec()), &[p])
    }

    /// `sum(a ⊙ w)` for a constant `w`; used to reduce outputs to a scalar.
    pub fn weighted_sum(&mut self, a: Var, w: Array2<T>) -> Var {
        assert_eq!(self.shape(a), w.dim());
        let total: f64 = self.value(a).iter().zip(&w).map(|(x, y)| x.f() * y.f()).sum();
        self.push(Array2::from_elem((1, 1), T::c(total)), Op::WeightedSum(a, w), &[a])
    }

    /// Row-wise count sketch: `out[:, hash[i]] += sign[i] * x[:, i]`.
    pub fn count_sketch(&mut self, x: Var, hash: Vec<usize>, sign: Vec<f64>, out_dim: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.ncols(), hash.len());
        assert_eq!(hash.len(), sign.len());
        let mut out = Array2::zeros((xv.nrows(), out_dim));
        for (i, (&h, &s)) in hash.iter().zip(&sign).enumerate() {
            let s = T::c(s);
            Zip::from(out.column_mut(h))
                .and(xv.column(i))
                .for_each(|o, &v| *o += s * v);
        }
        self.push(out, Op::CountSketch { x, hash, sign }, &[x])
    }

    /// Row-wise circular convolution computed through the FFT.
    pub fn circ_conv(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "circ_conv");
        let out = circular(self.value(a).view(), self.value(b).view(), false);
        self.push(out, Op::CircConv(a, b), &[a, b])
    }

    /// `sign(x) * sqrt(|x|)`.
    pub fn signed_sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| T::c(x.f().signum() * x.f().abs().sqrt()));
        self.push(out, Op::SignedSqrt(a), &[a])
    }

    /// Scales each row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let norms: Vec<f64> = av
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|x| x.f() * x.f()).sum::<f64>().sqrt().max(1e-12))
            .collect();
        let mut out = av.clone();
        for (mut r, &n) in out.rows_mut().into_iter().zip(&norms) {
            r.mapv_inplace(|x| T::c(x.f() / n));
        }
        self.push(out, Op::L2Normalize(a, norms), &[a])
    }

    /// Gradients of the `1 × 1` node `loss` with respect to every parameter
    /// in the store; parameters the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if node.param.is_some() {
                grads[i] = Some(g);
                continue;
            }
            self.backprop(i, &g, &mut grads);
        }

        let mut out = self.params.zeros_like();
        for (name, &v) in &self.param_vars {
            if let Some(g) = grads[v.0].take() {
                *out.get_mut(*name).expect("param grads") += &g;
            }
        }
        out
    }

    fn backprop(&self, i: usize, g: &Array2<T>, grads: &mut [Option<Array2<T>>]) {
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, delta: Array2<T>| {
            if !needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot => *slot = Some(delta),
            }
        };
        let val = |v: Var| -> &Array2<T> { &self.nodes[v.0].value };
        let out = val(Var(i));
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    acc(*a, g.dot(&val(*b).t()));
                }
                if needs(*b) {
                    acc(*b, val(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.mapv(|x| -x));
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    acc(*a, g * val(*b));
                }
                if needs(*b) {
                    acc(*b, g * val(*a));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if needs(*row) {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulConst(a, m) => acc(*a, g * m),
            Op::Affine(a, alpha) => {
                let al = T::c(*alpha);
                acc(*a, g.mapv(|x| x * al));
            }
            Op::Gelu(a) => {
                let mut d = val(*a).mapv(|x| T::c(gelu_parts(x.f()).1));
                d *= g;
                acc(*a, d);
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                    if x <= T::zero() {
                        *d = T::zero();
                    }
                });
                acc(*a, d);
            }
            Op::Tanh(a) => {
                let mut d = out.mapv(|y| T::one() - y * y);
                d *= g;
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = out.mapv(|y| y * (T::one() - y));
                d *= g;
                acc(*a, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                if needs(*gamma) {
                    acc(*gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if needs(*beta) {
                    acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if needs(*x) {
                    let gam = val(*gamma);
                    let d = xhat.ncols() as f64;
                    let mut dx = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let gh: Vec<f64> = g.row(r).iter().zip(gam.row(0)).map(|(a, b)| a.f() * b.f()).collect();
                        let xh = xhat.row(r);
                        let sum_g: f64 = gh.iter().sum();
                        let sum_gx: f64 = gh.iter().zip(xh).map(|(a, b)| a * b.f()).sum();
                        let k = rstd[r] / d;
                        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = T::c(k * (d * gh[j] - sum_g - xh[j].f() * sum_gx));
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::SelectRows(a, idx) => {
                if needs(*a) {
                    let mut d = Array2::zeros(val(*a).dim());
                    for (r, &j) in idx.iter().enumerate() {
                        let mut row = d.row_mut(j);
                        row += &g.row(r);
                    }
                    acc(*a, d);
                }
            }
            Op::Attention { q, k, v, shape, probs } => {
                let (n, dm) = val(*q).dim();
                let dh = dm / shape.heads;
                let scale = T::c(1.0 / (dh as f64).sqrt());
                let (qv, kv, vv) = (val(*q), val(*k), val(*v));
                let mut dq = Array2::zeros((n, dm));
                let mut dk = Array2::zeros((n, dm));
                let mut dv = Array2::zeros((n, dm));
                let l = shape.seq;
                for b in 0..shape.batch {
                    let rows = b * l..(b + 1) * l;
                    for h in 0..shape.heads {
                        let cols = h * dh..(h + 1) * dh;
                        let p = &probs[b * shape.heads + h];
                        let go = g.slice(s![rows.clone(), cols.clone()]);
                        let vs = vv.slice(s![rows.clone(), cols.clone()]);
                        dv.slice_mut(s![rows.clone(), cols.clone()]).assign(&p.t().dot(&go));
                        let dp = go.dot(&vs.t());
                        let mut ds = Array2::<T>::zeros((l, l));
                        for r in 0..l {
                            let dot: f64 = (0..l).map(|j| dp[(r, j)].f() * p[(r, j)].f()).sum();
                            for j in 0..l {
                                ds[(r, j)] = T::c(p[(r, j)].f() * (dp[(r, j)].f() - dot)) * scale;
                            }
                        }
                        let qs = qv.slice(s![rows.clone(), cols.clone()]);
                        let ks = kv.slice(s![rows.clone(), cols.clone()]);
                        dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&ks));
                        dk.slice_mut(s![rows.clone(), cols]).assign(&ds.t().dot(&qs));
                    }
                }
                acc(*q, dq);
                acc(*k, dk);
                acc(*v, dv);
            }
            Op::ConcatCols(parts) => {
                let mut c = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    if needs(p) {
                        acc(p, g.slice(s![.., c..c + w]).to_owned());
                    }
                    c += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut r = 0;
                for &p in parts {
                    let h = val(p).nrows();
                    if needs(p) {
                        acc(p, g.slice(s![r..r + h, ..]).to_owned());
                    }
                    r += h;
                }
            }
            Op::SliceCols(a, start) => {
                let mut d = Array2::zeros(val(*a).dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                acc(*a, d);
            }
            Op::SliceRows(a, start) => {
                let mut d = Array2::zeros(val(*a).dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                acc(*a, d);
            }
            Op::Transpose(a) => acc(*a, g.t().to_owned()),
            Op::Reshape(a) => {
                let flat: Vec<T> = g.iter().copied().collect();
                acc(*a, Array2::from_shape_vec(val(*a).dim(), flat).unwrap());
            }
            Op::MaskedMean { x, seq, weights } => {
                let mut d = Array2::zeros(val(*x).dim());
                for (r, mut row) in d.rows_mut().into_iter().enumerate() {
                    let w = weights[r];
                    if w != 0.0 {
                        let w = T::c(w);
                        row.zip_mut_with(&g.row(r / seq), |o, &gv| *o = w * gv);
                    }
                }
                acc(*x, d);
            }
            Op::Bce(p, targets) => {
                let n = targets.len() as f64;
                let g0 = g[(0, 0)].f();
                let d = Array2::from_shape_fn((targets.len(), 1), |(r, _)| {
                    let pr = val(*p)[(r, 0)].f();
                    if pr <= BCE_CLAMP || pr >= 1.0 - BCE_CLAMP {
                        T::zero()
                    } else {
                        T::c(g0 * (pr - targets[r]) / (pr * (1.0 - pr)) / n)
                    }
                });
                acc(*p, d);
            }
            Op::WeightedSum(a, w) => {
                let g0 = g[(0, 0)];
                acc(*a, w.mapv(|x| x * g0));
            }
            Op::CountSketch { x, hash, sign } => {
                let mut d = Array2::zeros(val(*x).dim());
                for (i, (&h, &s)) in hash.iter().zip(sign).enumerate() {
                    let s = T::c(s);
                    Zip::from(d.column_mut(i)).and(g.column(h)).for_each(|o, &gv| *o = s * gv);
                }
                acc(*x, d);
            }
            Op::CircConv(a, b) => {
                if needs(*a) {
                    acc(*a, circular(g.view(), val(*b).view(), true));
                }
                if needs(*b) {
                    acc(*b, circular(g.view(), val(*a).view(), true));
                }
            }
            Op::SignedSqrt(a) => {
                let mut d = val(*a).mapv(|x| T::c(0.5 / x.f().abs().max(1e-12).sqrt()));
                d *= g;
                acc(*a, d);
            }
            Op::L2Normalize(a, norms) => {
                let mut d = Array2::zeros(out.dim());
                for r in 0..out.nrows() {
                    let y = out.row(r);
                    let dot: f64 = y.iter().zip(g.row(r)).map(|(a, b)| a.f() * b.f()).sum();
                    for (j, o) in d.row_mut(r).iter_mut().enumerate() {
                        *o = T::c((g[(r, j)].f() - y[j].f() * dot) / norms[r]);
                    }
                }
                acc(*a, d);
            }
        }
    }
}
