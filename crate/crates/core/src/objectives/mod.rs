//! Differentiable objectives with per-sample structure.
//!
//! Every objective is an average `f(x) = (1/N) Σ_i f_i(x)` over training
//! samples, and exposes the per-sample gradients `∇f_i` from which the
//! mini-batch gradients and the gradient-noise covariance are assembled.

mod logistic;
mod mlp;
pub mod mnist;
mod quadratic;

pub use logistic::LogisticRegression;
pub use mlp::{Dataset, Mlp, SparseImage, MODEL1_HIDDEN, MODEL1_INPUT, MODEL1_OUTPUT};
pub use mnist::{load_mnist_subset, MnistSubset};
pub use quadratic::QuadraticEnsemble;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub trait Objective<T: Scalar>: Sync {
    /// Number of parameters `n`.
    fn dim(&self) -> usize;

    /// Number of training samples `N`.
    fn sample_count(&self) -> usize;

    fn sample_loss(&self, i: usize, x: &[T]) -> T;

    /// Adds `scale * ∇f_i(x)` into `out` and returns `f_i(x)`.
    fn accumulate_sample_grad(&self, i: usize, x: &[T], scale: T, out: &mut [T]) -> T;

    fn sample_grad(&self, i: usize, x: &[T]) -> Vec<T> {
        let mut g = vec![T::zero(); self.dim()];
        self.accumulate_sample_grad(i, x, T::one(), &mut g);
        g
    }

    /// Writes `(1/C) Σ_{j ∈ batch} ∇f_j(x)` into `out`; returns the batch loss.
    fn minibatch_grad(&self, x: &[T], batch: &[usize], out: &mut [T]) -> Result<T> {
        if batch.is_empty() {
            return Err(Error::Misuse("empty mini-batch".into()));
        }
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), out.len())?;
        let n = self.sample_count();
        if let Some(&bad) = batch.iter().find(|&&i| i >= n) {
            return Err(Error::OutOfBounds {
                requested: bad + 1,
                available: n,
            });
        }
        out.iter_mut().for_each(|g| *g = T::zero());
        let scale = T::one() / T::from_count(batch.len());
        let mut loss = T::zero();
        for &j in batch {
            loss += self.accumulate_sample_grad(j, x, scale, out);
        }
        Ok(loss * scale)
    }

    fn full_loss(&self, x: &[T]) -> T {
        let n = self.sample_count();
        (0..n).map(|i| self.sample_loss(i, x)).sum::<T>() / T::from_count(n)
    }

    fn full_grad(&self, x: &[T], out: &mut [T]) -> T {
        let n = self.sample_count();
        out.iter_mut().for_each(|g| *g = T::zero());
        let scale = T::one() / T::from_count(n);
        let mut loss = T::zero();
        for i in 0..n {
            loss += self.accumulate_sample_grad(i, x, scale, out);
        }
        loss * scale
    }

    /// Hessian-vector product `∇²f(x) v`; central differences of the full
    /// gradient unless an objective knows better.
    fn hessian_vector_product(&self, x: &[T], v: &[T], out: &mut [T]) {
        let vnorm = crate::linalg::norm(v);
        if vnorm == T::zero() {
            out.iter_mut().for_each(|o| *o = T::zero());
            return;
        }
        let h = T::epsilon().cbrt() / vnorm;
        let plus: Vec<T> = x.iter().zip(v).map(|(&a, &b)| a + h * b).collect();
        let minus: Vec<T> = x.iter().zip(v).map(|(&a, &b)| a - h * b).collect();
        let mut gp = vec![T::zero(); x.len()];
        let mut gm = vec![T::zero(); x.len()];
        self.full_grad(&plus, &mut gp);
        self.full_grad(&minus, &mut gm);
        let inv = T::one() / (T::lit(2.0) * h);
        for ((o, a), b) in out.iter_mut().zip(&gp).zip(&gm) {
            *o = (*a - *b) * inv;
        }
    }

    /// Classification accuracy on the training samples, if the objective is a classifier.
    fn train_accuracy(&self, _x: &[T]) -> Option<T> {
        None
    }

    fn test_accuracy(&self, _x: &[T]) -> Option<T> {
        None
    }

    /// Default starting point for training.
    fn initial_point(&self, _rng: &mut dyn RngCore) -> Vec<T> {
        vec![T::zero(); self.dim()]
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        Err(Error::DimensionMismatch { expected, actual })
    } else {
        Ok(())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
