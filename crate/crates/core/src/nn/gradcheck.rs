//! Central finite-difference gradient checking in `f64`.

use super::graph::{Graph, Var};
use super::Params;

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor, so tensors whose true gradient is zero (such as a
/// key bias under softmax shift invariance) are compared absolutely.
pub const NORM_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Per trainable tensor:
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, NORM_FLOOR)`.
    pub tensors: Vec<(String, f64)>,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.tensors.iter().map(|t| t.1).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() < TOLERANCE
    }
}

/// Compares the tape gradient of the scalar built by `f` with central
/// differences for every trainable element.
pub fn check<F>(params: &Params<f64>, f: F) -> GradCheck
where
    F: Fn(&mut Graph<'_, f64>) -> Var,
{
    let analytic = {
        let mut g = Graph::new(params);
        let loss = f(&mut g);
        g.backward(loss)
    };
    let eval = |p: &Params<f64>| {
        let mut g = Graph::new(p);
        let loss = f(&mut g);
        g.value(loss)[(0, 0)]
    };
    let mut probe = params.clone();
    let mut tensors = Vec::new();
    for (name, grad) in &analytic {
        if params.frozen.contains(name) {
            continue;
        }
        let mut num = ndarray::Array2::<f64>::zeros(grad.dim());
        for idx in 0..grad.len() {
            let (r, c) = (idx / grad.ncols(), idx % grad.ncols());
            let orig = params.get(name)[(r, c)];
            probe.get_mut(name)[(r, c)] = orig + STEP;
            let up = eval(&probe);
            probe.get_mut(name)[(r, c)] = orig - STEP;
            let down = eval(&probe);
            probe.get_mut(name)[(r, c)] = orig;
            num[(r, c)] = (up - down) / (2.0 * STEP);
        }
        let diff = (grad - &num).mapv(|x| x * x).sum().sqrt();
        let na = grad.mapv(|x| x * x).sum().sqrt();
        let nn = num.mapv(|x| x * x).sum().sqrt();
        let rel = diff / na.max(nn).max(NORM_FLOOR);
        tensors.push((name.clone(), rel));
    }
    GradCheck { tensors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::AttnShape;
    use crate::nn::layers::*;
    use crate::nn::{Init, ParamSpec};
    use ndarray::Array2;

    fn weights(rows: usize, cols: usize, k: f64) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |(r, c)| ((r * 7 + c * 3) as f64 * k).sin())
    }

    /// Params with values of order one so that every op is well exercised.
    fn big(specs: &[ParamSpec], seed: u64) -> Params<f64> {
        let mut p: Params<f64> = Params::init(specs, seed);
        for (k, a) in p.tensors.iter_mut() {
            if !k.ends_with(".gamma") {
                a.mapv_inplace(|x| x * 25.0);
            }
        }
        p
    }

    fn reduce(g: &mut Graph<'_, f64>, v: Var) -> Var {
        let (r, c) = g.shape(v);
        g.weighted_sum(v, weights(r, c, 0.37))
    }

    fn assert_ok(name: &str, res: GradCheck) {
        assert!(res.passed(), "{name}: {:?}", res.tensors);
        assert!(!res.tensors.is_empty());
    }

    #[test]
    fn elementwise_ops() {
        let specs = [ParamSpec::new("a", 3, 4, Init::TruncNormal), ParamSpec::new("b", 3, 4, Init::TruncNormal)];
        let p = big(&specs, 1);
        type Op = fn(&mut Graph<'_, f64>, Var, Var) -> Var;
        let ops: [(&str, Op); 12] = [
            ("add", |g, a, b| g.add(a, b)),
            ("sub", |g, a, b| g.sub(a, b)),
            ("mul", |g, a, b| g.mul(a, b)),
            ("gelu", |g, a, _| g.gelu(a)),
            ("relu", |g, a, b| {
                let s = g.add(a, b);
                g.relu(s)
            }),
            ("tanh", |g, a, _| g.tanh(a)),
            ("sigmoid", |g, a, _| g.sigmoid(a)),
            ("affine", |g, a, _| g.affine(a, -1.5, 0.25)),
            ("mul_const", |g, a, _| g.mul_const(a, weights(3, 4, 1.1))),
            ("matmul", |g, a, b| {
                let t = g.transpose(b);
                g.matmul(a, t)
            }),
            ("reshape_slices", |g, a, b| {
                let r = g.reshape(a, 6, 2);
                let s = g.slice_rows(r, 1, 4);
                let c = g.slice_cols(b, 1, 2);
                let cc = g.concat_rows(&[s, c]);
                g.concat_cols(&[cc, cc])
            }),
            ("select_rows", |g, a, _| g.select_rows(a, vec![2, 0, 2, 1])),
        ];
        for (name, op) in ops {
            assert_ok(name, check(&p, |g| {
                let (a, b) = (g.param("a"), g.param("b"));
                let out = op(g, a, b);
                reduce(g, out)
            }));
        }
    }

    #[test]
    fn normalization_and_pooling() {
        let mut specs = layer_norm_specs("ln", 5);
        specs.push(ParamSpec::new("x", 4, 5, Init::TruncNormal));
        specs.push(ParamSpec::new("row", 1, 5, Init::TruncNormal));
        let mut p = big(&specs, 2);
        p.get_mut("ln.gamma").mapv_inplace(|x| x + 0.3);
        assert_ok("layer_norm", check(&p, |g| {
            let x = g.param("x");
            let r = g.param("row");
            let x = g.add_row(x, r);
            let y = layer_norm(g, x, "ln");
            reduce(g, y)
        }));
        assert_ok("masked_mean", check(&p, |g| {
            let x = g.param("x");
            let y = g.masked_mean(x, 2, &[true, false, true, true]);
            reduce(g, y)
        }));
        assert_ok("l2_signed_sqrt", check(&p, |g| {
            let x = g.param("x");
            let y = g.signed_sqrt(x);
            let y = g.l2_normalize(y);
            reduce(g, y)
        }));
    }

    #[test]
    fn bce_loss() {
        let specs = [ParamSpec::new("z", 4, 1, Init::TruncNormal)];
        let p = big(&specs, 3);
        assert_ok("bce", check(&p, |g| {
            let z = g.param("z");
            let pr = g.sigmoid(z);
            g.bce(pr, &[1.0, 0.0, 0.0, 1.0])
        }));
    }

    #[test]
    fn attention_op() {
        let specs = [
            ParamSpec::new("q", 6, 4, Init::TruncNormal),
            ParamSpec::new("k", 6, 4, Init::TruncNormal),
            ParamSpec::new("v", 6, 4, Init::TruncNormal),
        ];
        let p = big(&specs, 4);
        let shape = AttnShape {
            batch: 2,
            seq: 3,
            heads: 2,
            key_mask: vec![true, true, false, true, true, true],
        };
        assert_ok("attention", check(&p, |g| {
            let (q, k, v) = (g.param("q"), g.param("k"), g.param("v"));
            let o = g.attention(q, k, v, shape.clone());
            reduce(g, o)
        }));
    }

    #[test]
    fn sketch_and_convolution() {
        let specs = [ParamSpec::new("a", 2, 6, Init::TruncNormal), ParamSpec::new("b", 2, 6, Init::TruncNormal)];
        let p = big(&specs, 5);
        assert_ok("count_sketch_conv", check(&p, |g| {
            let (a, b) = (g.param("a"), g.param("b"));
            let sa = g.count_sketch(a, vec![0, 3, 1, 4, 0, 2], vec![1.0, -1.0, 1.0, 1.0, -1.0, 1.0], 5);
            let sb = g.count_sketch(b, vec![4, 4, 2, 1, 0, 3], vec![-1.0, 1.0, 1.0, -1.0, 1.0, 1.0], 5);
            let c = g.circ_conv(sa, sb);
            reduce(g, c)
        }));
    }

    #[test]
    fn transformer_layer_block() {
        let mut specs = transformer_specs("t", 8, 12);
        specs.push(ParamSpec::new("x", 6, 8, Init::TruncNormal));
        let p = big(&specs, 6);
        let shape = AttnShape {
            batch: 2,
            seq: 3,
            heads: 2,
            key_mask: vec![true, true, true, true, true, false],
        };
        assert_ok("transformer", check(&p, |g| {
            let x = g.param("x");
            let y = transformer_layer(g, x, "t", &shape, 0.0, None);
            reduce(g, y)
        }));
    }

    #[test]
    fn recurrent_cells() {
        let mut specs = gru_specs("gru", 8, 8);
        specs.push(ParamSpec::new("x", 2, 8, Init::TruncNormal));
        specs.push(ParamSpec::new("h", 2, 8, Init::TruncNormal));
        let p = big(&specs, 7);
        assert_ok("gru", check(&p, |g| {
            let (x, h) = (g.param("x"), g.param("h"));
            let y = gru_cell(g, x, h, "gru");
            reduce(g, y)
        }));

        let specs = lstm_encoder_specs("enc", 6, 4, 5);
        let p = big(&specs, 8);
        assert_ok("lstm", check(&p, |g| {
            let states = lstm_encode(g, &[vec![1, 2, 3], vec![5, 1]], "enc", 5);
            let all = g.concat_cols(&states);
            reduce(g, all)
        }));
    }
}
