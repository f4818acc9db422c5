use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_dim, Objective};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// `f_i(x) = ½ (x - c_i)ᵀ A (x - c_i)` with a shared SPD curvature `A`.
///
/// The full loss is minimized at the centroid of the centers, and the
/// gradient noise is available in closed form, which makes this the analytic
/// test bed for the diffusion and Langevin modules.
#[derive(Debug, Clone)]
pub struct QuadraticEnsemble<T> {
    curvature: Matrix<T>,
    centers: Vec<Vec<T>>,
}

impl<T: Scalar> QuadraticEnsemble<T> {
    pub fn new(curvature: Matrix<T>, centers: Vec<Vec<T>>) -> Result<Self> {
        let n = curvature.rows();
        if !curvature.is_square() || n == 0 {
            return Err(Error::Misuse("curvature must be a non-empty square matrix".into()));
        }
        if !curvature.is_symmetric(T::lit(1e-12)) {
            return Err(Error::Misuse("curvature must be symmetric".into()));
        }
        let (eigs, _) = curvature.symmetric_eigen()?;
        if eigs[0] <= T::zero() {
            return Err(Error::Misuse("curvature must be positive definite".into()));
        }
        if centers.is_empty() {
            return Err(Error::Misuse("ensemble needs at least one center".into()));
        }
        for c in &centers {
            check_dim(n, c.len())?;
        }
        Ok(Self { curvature, centers })
    }

    /// Centers drawn i.i.d. from `N(0, spread² I)`.
    pub fn random<R: Rng + ?Sized>(curvature: Matrix<T>, samples: usize, spread: T, rng: &mut R) -> Result<Self> {
        let n = curvature.rows();
        let centers = (0..samples)
            .map(|_| {
                (0..n)
                    .map(|_| spread * T::lit(rng.sample::<f64, _>(StandardNormal)))
                    .collect()
            })
            .collect();
        Self::new(curvature, centers)
    }

    pub fn curvature(&self) -> &Matrix<T> {
        &self.curvature
    }

    pub fn centers(&self) -> &[Vec<T>] {
        &self.centers
    }

    /// Minimizer of the full loss: the centroid of the centers.
    pub fn minimizer(&self) -> Vec<T> {
        let n = self.dim();
        let mut mean = vec![T::zero(); n];
        for c in &self.centers {
            for (m, &ci) in mean.iter_mut().zip(c) {
                *m += ci;
            }
        }
        let inv = T::one() / T::from_count(self.centers.len());
        mean.iter_mut().for_each(|m| *m *= inv);
        mean
    }

    /// Full loss at its minimizer, `½ tr(A Cov(c))`.
    pub fn minimum_value(&self) -> T {
        self.full_loss(&self.minimizer())
    }
}

impl<T: Scalar> Objective<T> for QuadraticEnsemble<T> {
    fn dim(&self) -> usize {
        self.curvature.rows()
    }

    fn sample_count(&self) -> usize {
        self.centers.len()
    }

    fn sample_loss(&self, i: usize, x: &[T]) -> T {
        let d: Vec<T> = x.iter().zip(&self.centers[i]).map(|(&a, &c)| a - c).collect();
        let ad = self.curvature.matvec(&d);
        T::lit(0.5) * crate::linalg::dot(&d, &ad)
    }

    fn accumulate_sample_grad(&self, i: usize, x: &[T], scale: T, out: &mut [T]) -> T {
        let d: Vec<T> = x.iter().zip(&self.centers[i]).map(|(&a, &c)| a - c).collect();
        let ad = self.curvature.matvec(&d);
        for (o, &g) in out.iter_mut().zip(&ad) {
            *o += scale * g;
        }
        T::lit(0.5) * crate::linalg::dot(&d, &ad)
    }

    fn hessian_vector_product(&self, _x: &[T], v: &[T], out: &mut [T]) {
        out.copy_from_slice(&self.curvature.matvec(v));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ensemble() -> QuadraticEnsemble<f64> {
        let a = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        QuadraticEnsemble::new(a, vec![vec![1.0, 0.0], vec![-1.0, 2.0], vec![3.0, 1.0]]).unwrap()
    }

    #[test]
    fn single_sample_grad_is_closed_form() {
        let q = ensemble();
        let x = [0.5, -0.5];
        let g = q.sample_grad(1, &x);
        // A (x - c_1) = A (1.5, -2.5)
        assert!((g[0] - (2.0 * 1.5 + 0.5 * -2.5)).abs() < 1e-15);
        assert!((g[1] - (0.5 * 1.5 + 1.0 * -2.5)).abs() < 1e-15);
        let mut b = vec![0.0; 2];
        q.minibatch_grad(&x, &[1], &mut b).unwrap();
        assert_eq!(b, g);
    }

    #[test]
    fn gradient_vanishes_at_centroid() {
        let q = ensemble();
        let m = q.minimizer();
        let mut g = vec![0.0; 2];
        q.full_grad(&m, &mut g);
        assert!(g.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn rejects_indefinite_curvature() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(QuadraticEnsemble::new(a, vec![vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn empty_batch_is_misuse() {
        let q = ensemble();
        let mut g = vec![0.0; 2];
        assert!(matches!(
            q.minibatch_grad(&[0.0, 0.0], &[], &mut g),
            Err(Error::Misuse(_))
        ));
        assert!(q.minibatch_grad(&[0.0, 0.0], &[7], &mut g).is_err());
    }
}
