//! Effective temperature and the stationary Gibbs law.
//!
//! At equilibrium the phase-space density of the Langevin system is
//! `P ∝ exp(-H/T)` with `H(V, X) = ½ V·V + f(X)/l` and
//! `T = l D / (2 C (1 - μ))`.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Matrix};
use crate::scalar::{Field, Scalar};
use crate::sde::{PhaseSamples, Quadratic, SdeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermoParams<T> {
    pub temperature: T,
    /// `1/T`; `None` in the noiseless limit `T = 0`.
    pub beta: Option<T>,
    pub rate: T,
    pub diffusion: T,
    pub batch_size: usize,
    pub momentum: T,
}

fn count<T: Field>(c: usize) -> Result<T> {
    T::from_usize(c).ok_or_else(|| invalid("batch_size", "not representable"))
}

/// `T = l D / (2 C (1 - μ))`, exact in any ordered field.
pub fn effective_temperature<T: Field>(
    rate: T,
    diffusion: T,
    batch_size: usize,
    momentum: T,
) -> Result<ThermoParams<T>> {
    if !(rate > T::zero()) {
        return Err(invalid("rate", "must be positive"));
    }
    if diffusion < T::zero() {
        return Err(invalid("diffusion", "must be non-negative"));
    }
    if batch_size == 0 {
        return Err(invalid("batch_size", "must be positive"));
    }
    if momentum < T::zero() {
        return Err(invalid("momentum", "must be non-negative"));
    }
    if momentum >= T::one() {
        return Err(invalid(
            "momentum",
            "μ = 1 leaves no friction; the temperature diverges",
        ));
    }
    let two = T::one() + T::one();
    let denom = two * count::<T>(batch_size)? * (T::one() - momentum.clone());
    let temperature = rate.clone() * diffusion.clone() / denom;
    let beta = if temperature == T::zero() {
        None
    } else {
        Some(T::one() / temperature.clone())
    };
    Ok(ThermoParams {
        temperature,
        beta,
        rate,
        diffusion,
        batch_size,
        momentum,
    })
}

/// The `(l, C, μ)` part of the temperature; `D` is shared by construction
/// when comparing trainings of the same objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureKey<T> {
    pub rate: T,
    pub batch_size: usize,
    pub momentum: T,
}

impl<T: Field> TemperatureKey<T> {
    pub fn new(rate: T, batch_size: usize, momentum: T) -> Self {
        Self {
            rate,
            batch_size,
            momentum,
        }
    }

    /// `l / (C (1 - μ))`, proportional to `T` at fixed `D`.
    pub fn ratio(&self) -> Result<T> {
        let denom = count::<T>(self.batch_size)? * (T::one() - self.momentum.clone());
        if denom == T::zero() {
            return Err(invalid("momentum", "μ = 1 leaves no friction"));
        }
        Ok(self.rate.clone() / denom)
    }
}

/// Whether two configurations share the effective temperature, up to a
/// relative tolerance on `l / (C (1 - μ))`. Invalid keys never match.
pub fn same_temperature<T: Field>(a: &TemperatureKey<T>, b: &TemperatureKey<T>, rel_tol: T) -> bool {
    let (Ok(ra), Ok(rb)) = (a.ratio(), b.ratio()) else {
        return false;
    };
    let scale = if ra.abs() > rb.abs() { ra.abs() } else { rb.abs() };
    (ra - rb).abs() <= rel_tol * scale
}

/// Unnormalized Gibbs density `exp(-H/T)` for a quadratic loss.
#[derive(Debug, Clone)]
pub struct GibbsDensity<T> {
    pub potential: Quadratic<T>,
    pub rate: T,
    pub temperature: T,
}

impl<T: Scalar> GibbsDensity<T> {
    pub fn new(potential: Quadratic<T>, rate: T, temperature: T) -> Result<Self> {
        if !(rate > T::zero()) || !(temperature > T::zero()) {
            return Err(invalid("temperature", "rate and temperature must be positive"));
        }
        Ok(Self {
            potential,
            rate,
            temperature,
        })
    }

    pub fn from_params(potential: Quadratic<T>, p: &SdeParams<T>) -> Result<Self> {
        Self::new(potential, p.rate, p.temperature())
    }

    /// Same density at a different temperature (used for negative controls).
    pub fn with_temperature(&self, temperature: T) -> Self {
        Self {
            temperature,
            ..self.clone()
        }
    }

    /// `H = ½ V·V + f(X)/l`.
    pub fn hamiltonian(&self, x: &[T], v: &[T]) -> T {
        T::lit(0.5) * linalg::dot(v, v) + self.potential.value(x) / self.rate
    }

    pub fn log_density_unnormalized(&self, x: &[T], v: &[T]) -> T {
        -self.hamiltonian(x, v) / self.temperature
    }

    /// `Cov X = l T A⁻¹`.
    pub fn position_covariance(&self) -> Result<Matrix<T>> {
        Ok(self
            .potential
            .curvature
            .spd_inverse()?
            .scale(self.rate * self.temperature))
    }

    /// `Cov V = T I`.
    pub fn velocity_covariance(&self) -> Matrix<T> {
        Matrix::identity(self.potential.dim()).scale(self.temperature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsTolerances {
    /// Allowed `|Var_emp / Var_analytic - 1|` per marginal.
    pub variance: f64,
    /// Allowed mean offset in analytic standard deviations.
    pub mean: f64,
    /// Allowed Kolmogorov–Smirnov distance per marginal.
    pub ks: f64,
    /// Allowed `|corr(X_i, V_j)|`.
    pub cross_correlation: f64,
}

impl Default for GibbsTolerances {
    fn default() -> Self {
        Self {
            variance: 0.05,
            mean: 0.05,
            ks: 0.02,
            cross_correlation: 0.05,
        }
    }
}

impl GibbsTolerances {
    /// Fewest samples for which four standard errors of a Gaussian variance
    /// estimate, `4 √(2/M)`, fit inside the variance tolerance.
    pub fn min_samples(&self) -> usize {
        (32.0 / (self.variance * self.variance)).ceil() as usize
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginalCheck {
    /// `"x"` or `"v"`.
    pub variable: String,
    pub index: usize,
    pub mean_empirical: f64,
    pub mean_analytic: f64,
    pub var_empirical: f64,
    pub var_analytic: f64,
    pub var_ratio: f64,
    pub ks_distance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GibbsComparison {
    pub samples: usize,
    pub temperature: f64,
    pub marginals: Vec<MarginalCheck>,
    pub cov_x_empirical: Matrix<f64>,
    pub cov_x_analytic: Matrix<f64>,
    pub cov_v_empirical: Matrix<f64>,
    pub cov_v_analytic: Matrix<f64>,
    pub max_cross_correlation: f64,
    pub tolerances: GibbsTolerances,
    pub pass: bool,
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Kolmogorov–Smirnov distance between `data` and `N(mean, var)`.
pub fn ks_distance_normal(mut data: Vec<f64>, mean: f64, var: f64) -> f64 {
    data.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let m = data.len() as f64;
    let sd = var.sqrt();
    data.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf((x - mean) / sd);
            (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
        })
        .fold(0.0, f64::max)
}

fn moments(data: &[f64]) -> (f64, f64) {
    let m = data.len() as f64;
    let mean = data.iter().sum::<f64>() / m;
    let var = data.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    (mean, var)
}

fn covariance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Matrix<f64> {
    let mut out = Matrix::zeros(a.len(), b.len());
    for (i, ai) in a.iter().enumerate() {
        let (ma, _) = moments(ai);
        for (j, bj) in b.iter().enumerate() {
            let (mb, _) = moments(bj);
            let m = ai.len() as f64;
            out[(i, j)] = ai.iter().zip(bj).map(|(&x, &y)| (x - ma) * (y - mb)).sum::<f64>() / (m - 1.0);
        }
    }
    out
}

fn to_f64<T: Scalar>(m: &Matrix<T>) -> Matrix<f64> {
    let rows: Vec<Vec<f64>> = (0..m.rows())
        .map(|i| m.row(i).iter().map(|v| v.as_f64()).collect())
        .collect();
    Matrix::from_rows(&rows).expect("rectangular")
}

/// Compares stationary samples with the analytic Gibbs marginals of a
/// quadratic loss: `X ~ N(c, l T A⁻¹)`, `V ~ N(0, T I)`, `X ⟂ V`.
pub fn compare_to_gibbs<T: Scalar>(
    samples: &PhaseSamples<T>,
    analytic: &GibbsDensity<T>,
    tolerances: &GibbsTolerances,
) -> Result<GibbsComparison> {
    let n = analytic.potential.dim();
    if samples.dim != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: samples.dim,
        });
    }
    let m = samples.len();
    let needed = tolerances.min_samples();
    if m < needed {
        return Err(Error::Capacity(format!(
            "{m} samples cannot resolve a variance tolerance of {}; need at least {needed}",
            tolerances.variance
        )));
    }
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|k| samples.x_component(k).map(Scalar::as_f64).collect())
        .collect();
    let vs: Vec<Vec<f64>> = (0..n)
        .map(|k| samples.v_component(k).map(Scalar::as_f64).collect())
        .collect();
    let cov_x_an = to_f64(&analytic.position_covariance()?);
    let cov_v_an = to_f64(&analytic.velocity_covariance());

    let mut marginals = Vec::with_capacity(2 * n);
    for (variable, data, cov_an) in [("x", &xs, &cov_x_an), ("v", &vs, &cov_v_an)] {
        for (k, series) in data.iter().enumerate() {
            let (mean, var) = moments(series);
            let mean_an = if variable == "x" {
                analytic.potential.center[k].as_f64()
            } else {
                0.0
            };
            let var_an = cov_an[(k, k)];
            let ratio = var / var_an;
            let ks = ks_distance_normal(series.clone(), mean_an, var_an);
            let pass = (ratio - 1.0).abs() <= tolerances.variance
                && (mean - mean_an).abs() <= tolerances.mean * var_an.sqrt()
                && ks <= tolerances.ks;
            marginals.push(MarginalCheck {
                variable: variable.to_string(),
                index: k,
                mean_empirical: mean,
                mean_analytic: mean_an,
                var_empirical: var,
                var_analytic: var_an,
                var_ratio: ratio,
                ks_distance: ks,
                pass,
            });
        }
    }
    let cov_x = covariance(&xs, &xs);
    let cov_v = covariance(&vs, &vs);
    let cross = covariance(&xs, &vs);
    let mut max_corr: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let corr = cross[(i, j)] / (cov_x[(i, i)] * cov_v[(j, j)]).sqrt();
            max_corr = max_corr.max(corr.abs());
        }
    }
    let pass = marginals.iter().all(|c| c.pass) && max_corr <= tolerances.cross_correlation;
    Ok(GibbsComparison {
        samples: m,
        temperature: analytic.temperature.as_f64(),
        marginals,
        cov_x_empirical: cov_x,
        cov_x_analytic: cov_x_an,
        cov_v_empirical: cov_v,
        cov_v_analytic: cov_v_an,
        max_cross_correlation: max_corr,
        tolerances: *tolerances,
        pass,
    })
}
