//! Adam with bias correction. Moment estimates are kept in `f64`.

use std::collections::BTreeMap;

use ndarray::{Array2, Zip};

use super::{Grads, Params, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Array2<f64>>,
    pub v: BTreeMap<String, Array2<f64>>,
}

impl Adam {
    /// One update of every trainable tensor that has a gradient.
    pub fn step<T: Scalar>(&self, params: &mut Params<T>, grads: &Grads<T>, state: &mut AdamState) {
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.tensors.iter_mut() {
            if params.frozen.contains(name) {
                continue;
            }
            let Some(g) = grads.get(name) else { continue };
            assert_eq!(g.dim(), p.dim(), "gradient shape for {name}");
            let m = state.m.entry(name.clone()).or_insert_with(|| Array2::zeros(p.dim()));
            let v = state.v.entry(name.clone()).or_insert_with(|| Array2::zeros(p.dim()));
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                let g = g.f();
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                *p = T::c(p.f() - update);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Init, ParamSpec};

    fn setup() -> Params<f64> {
        Params::init(
            &[
                ParamSpec::new("w", 3, 2, Init::TruncNormal),
                ParamSpec::new("fixed", 1, 2, Init::Fixed(vec![1.0, 2.0])),
            ],
            4,
        )
    }

    #[test]
    fn zero_gradient_is_a_fixpoint() {
        let mut p = setup();
        let before = p.clone();
        let grads = p.zeros_like();
        let mut st = AdamState::default();
        for _ in 0..3 {
            Adam::new(1e-3).step(&mut p, &grads, &mut st);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = setup();
        let before = p.clone();
        let mut grads = p.zeros_like();
        grads.get_mut("w").unwrap().fill(0.37);
        grads.get_mut("fixed").unwrap().fill(5.0);
        let mut st = AdamState::default();
        let lr = 7e-4;
        Adam::new(lr).step(&mut p, &grads, &mut st);
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + ε).
        let want = lr * 0.37 / (0.37 + 1e-8);
        for (a, b) in p.get("w").iter().zip(before.get("w")) {
            assert!(((b - a) - want).abs() < 1e-15);
        }
        assert_eq!(p.get("fixed"), before.get("fixed"));
    }

    #[test]
    fn deterministic_trajectory() {
        let run = || {
            let mut p = setup();
            let mut st = AdamState::default();
            for k in 0..5 {
                let mut grads = p.zeros_like();
                grads.get_mut("w").unwrap().mapv_inplace(|_| k as f64 - 2.0);
                Adam::new(1e-2).step(&mut p, &grads, &mut st);
            }
            p
        };
        assert_eq!(run(), run());
    }
}
