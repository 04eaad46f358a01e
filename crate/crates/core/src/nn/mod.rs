//! Reverse-mode differentiation over 2-D tensors, layer building blocks,
//! Adam, checkpoint I/O and finite-difference gradient checking.
//!
//! Everything is generic over the element type so the same model code runs
//! in `f32` for training and in `f64` for gradient checks.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use adam::{Adam, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use graph::{Graph, Var};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file: {0}")]
    BadMagic(String),
}

/// Floating-point element type of tensors.
pub trait Scalar:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Debug
    + Default
    + Send
    + Sync
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    fn c(x: f64) -> Self;
    fn f(self) -> f64;
}

impl Scalar for f32 {
    fn c(x: f64) -> Self {
        x as f32
    }

    fn f(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn c(x: f64) -> Self {
        x
    }

    fn f(self) -> f64 {
        self
    }
}

/// How a tensor is initialized.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Normal with σ = 0.02, resampled outside ±2σ.
    TruncNormal,
    /// Truncated normal with row 0 zeroed (embedding tables whose id 0
    /// means "none").
    TruncNormalZeroRow,
    Zeros,
    Ones,
    /// Fixed values, not trained.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: (usize, usize),
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, init: Init) -> Self {
        ParamSpec {
            name: name.into(),
            shape: (rows, cols),
            init,
        }
    }
}

pub const INIT_STD: f64 = 0.02;

/// Named parameter tensors. Tensors in `frozen` are model constants (such
/// as sketch hashes) that the optimizer leaves alone.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params<T> {
    pub tensors: BTreeMap<String, Array2<T>>,
    pub frozen: BTreeSet<String>,
}

pub type Grads<T> = BTreeMap<String, Array2<T>>;

fn name_seed(seed: u64, name: &str) -> u64 {
    let mut key = seed.to_le_bytes().to_vec();
    key.extend_from_slice(name.as_bytes());
    crate::render::fnv1a(&key)
}

impl<T: Scalar> Params<T> {
    /// Initializes every spec. Each tensor draws from its own stream keyed by
    /// (seed, name), so adding a tensor never changes the others.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        let mut out = Params::default();
        for s in specs {
            let (r, c) = s.shape;
            let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, &s.name));
            let mut draw = || loop {
                let v: f64 = normal.sample(&mut rng);
                if v.abs() <= 2.0 * INIT_STD {
                    break T::c(v);
                }
            };
            let a = match &s.init {
                Init::TruncNormal => Array2::from_shape_simple_fn((r, c), &mut draw),
                Init::TruncNormalZeroRow => {
                    let mut a = Array2::from_shape_simple_fn((r, c), &mut draw);
                    a.row_mut(0).fill(T::zero());
                    a
                }
                Init::Zeros => Array2::zeros((r, c)),
                Init::Ones => Array2::ones((r, c)),
                Init::Fixed(v) => {
                    assert_eq!(v.len(), r * c, "fixed init for {} has wrong length", s.name);
                    out.frozen.insert(s.name.clone());
                    Array2::from_shape_vec((r, c), v.iter().map(|&x| T::c(x)).collect()).unwrap()
                }
            };
            out.tensors.insert(s.name.clone(), a);
        }
        out
    }

    pub fn get(&self, name: &str) -> &Array2<T> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<T> {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(|a| a.len()).sum()
    }

    /// Same tensors in another element type.
    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|(k, a)| (k.clone(), a.mapv(|x| U::c(x.f()))))
                .collect(),
            frozen: self.frozen.clone(),
        }
    }

    /// Checks that names and shapes agree with `specs`.
    pub fn check(&self, specs: &[ParamSpec]) -> Result<(), NnError> {
        if specs.len() != self.tensors.len() {
            return Err(NnError::ShapeMismatch(format!(
                "expected {} tensors, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for s in specs {
            match self.tensors.get(&s.name) {
                None => return Err(NnError::ShapeMismatch(format!("missing tensor {}", s.name))),
                Some(a) if a.dim() != s.shape => {
                    return Err(NnError::ShapeMismatch(format!(
                        "{} has shape {:?}, expected {:?}",
                        s.name,
                        a.dim(),
                        s.shape
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Grads<T> {
        self.tensors
            .iter()
            .map(|(k, a)| (k.clone(), Array2::zeros(a.dim())))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|a| a.iter().all(|x| x.is_finite()))
    }

    /// Sets every trainable tensor to zero.
    pub fn zero_trainable(&mut self) {
        for (k, a) in self.tensors.iter_mut() {
            if !self.frozen.contains(k) {
                a.fill(T::zero());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_rules() {
        let specs = [
            ParamSpec::new("emb", 5, 4, Init::TruncNormalZeroRow),
            ParamSpec::new("w", 30, 30, Init::TruncNormal),
            ParamSpec::new("b", 1, 4, Init::Zeros),
            ParamSpec::new("g", 1, 4, Init::Ones),
            ParamSpec::new("h", 1, 2, Init::Fixed(vec![3.0, 1.0])),
        ];
        let p: Params<f32> = Params::init(&specs, 1);
        assert!(p.get("emb").row(0).iter().all(|&x| x == 0.0));
        assert!(p.get("emb").row(1).iter().any(|&x| x != 0.0));
        assert!(p.get("w").iter().all(|&x| x.abs() <= 0.04));
        let std = (p.get("w").iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / 900.0).sqrt();
        assert!((0.012..0.02).contains(&std), "{std}");
        assert!(p.get("b").iter().all(|&x| x == 0.0) && p.get("g").iter().all(|&x| x == 1.0));
        assert!(p.frozen.contains("h"));
        assert_eq!(Params::<f32>::init(&specs, 1), p);
        let sub: Params<f32> = Params::init(&specs[1..2], 1);
        assert_eq!(sub.get("w"), p.get("w"));
        assert!(p.check(&specs).is_ok());
        assert!(p.check(&specs[..2]).is_err());
    }
}
