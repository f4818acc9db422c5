//! Gradient-noise covariance.
//!
//! The noise vector is `ξ = ∇f(x) - α ∇f_Γ(x)`, zero-mean because `E[α] = 1`
//! and `E_Γ[∇f_Γ] = ∇f`. Its covariance splits along the sample index pairs
//! `(j, k)` of the mini-batch into a diagonal part `(1/C) D̂` and an
//! off-diagonal remainder `d_Δ`:
//!
//! ```text
//! Σ   = m₂ E_Γ[g_Γ g_Γᵀ] - g gᵀ
//! D̂   = (1/C) E_Γ[Σ_{j∈Γ} (m₂ g_j g_jᵀ - g gᵀ)]
//! d_Δ = (1/C²) E_Γ[Σ_{j≠k∈Γ} (m₂ g_j g_kᵀ - g gᵀ)]
//! ```
//!
//! with `m₂ = E[α²]`. The isotropic reduction is `D = tr(D̂)/n`.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::objectives::Objective;
use crate::scalar::Scalar;

/// Limit on `N · n` for materializing all per-sample gradients.
pub const MAX_GRADIENT_ENTRIES: usize = 50_000_000;
/// Limit on `n` for full `n × n` covariance matrices.
pub const MAX_FULL_DIM: usize = 2_000;
/// Limit on the number of enumerated mini-batches.
pub const MAX_ENUMERATED_BATCHES: u128 = 5_000_000;

/// Second moment of `α` used by the analytic covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentMode {
    /// `E[α²] = 1 + Δ²/3`.
    #[default]
    Exact,
    /// `1 + Δ/3`: the diagonal piece carries `(3+Δ)/3` in place of
    /// `(3+Δ²)/3`. Coincides with `Exact` at `Δ ∈ {0, 1}`.
    PaperCompat,
}

/// How a mini-batch is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchScheme {
    /// One block of the fixed partition `{0..C}, {C..2C}, …` chosen uniformly.
    /// Requires `C | N`.
    FixedPartition,
    /// A uniformly random `C`-subset (sampling without replacement).
    #[default]
    SubsetEnumeration,
    /// `C` i.i.d. uniform indices.
    WithReplacement,
}

pub fn alpha_second_moment<T: Scalar>(half_width: T, mode: MomentMode) -> T {
    match mode {
        MomentMode::Exact => T::one() + half_width * half_width / T::lit(3.0),
        MomentMode::PaperCompat => T::one() + half_width / T::lit(3.0),
    }
}

fn check_noise_params<T: Scalar>(half_width: T, batch_size: usize, samples: usize, scheme: BatchScheme) -> Result<()> {
    if !(half_width >= T::zero() && half_width <= T::one()) {
        return Err(invalid("delta", "half width must lie in [0, 1]"));
    }
    if batch_size == 0 {
        return Err(invalid("batch_size", "must be positive"));
    }
    if scheme != BatchScheme::WithReplacement && batch_size > samples {
        return Err(invalid(
            "batch_size",
            format!("{batch_size} exceeds the {samples} available samples"),
        ));
    }
    if scheme == BatchScheme::FixedPartition && !samples.is_multiple_of(batch_size) {
        return Err(invalid(
            "batch_size",
            format!("fixed partition needs C | N, got N = {samples}, C = {batch_size}"),
        ));
    }
    Ok(())
}

fn draw_batch<R: Rng + ?Sized>(rng: &mut R, samples: usize, c: usize, scheme: BatchScheme) -> Vec<usize> {
    match scheme {
        BatchScheme::FixedPartition => {
            let block = rng.random_range(0..samples / c);
            (block * c..(block + 1) * c).collect()
        }
        BatchScheme::SubsetEnumeration => index::sample(rng, samples, c).into_vec(),
        BatchScheme::WithReplacement => (0..c).map(|_| rng.random_range(0..samples)).collect(),
    }
}

/// One draw of `ξ = ∇f(x) - α ∇f_Γ(x)` given the full gradient.
#[allow(clippy::too_many_arguments)]
fn noise_with_full_grad<T, O, R>(
    obj: &O,
    x: &[T],
    full: &[T],
    half_width: T,
    batch_size: usize,
    scheme: BatchScheme,
    rng: &mut R,
    buf: &mut [T],
) -> Result<()>
where
    T: Scalar,
    O: Objective<T> + ?Sized,
    R: Rng + ?Sized,
{
    let alpha = if half_width == T::zero() {
        T::one()
    } else {
        T::one() - half_width + T::lit(2.0) * half_width * T::lit(rng.random::<f64>())
    };
    let batch = draw_batch(rng, obj.sample_count(), batch_size, scheme);
    obj.minibatch_grad(x, &batch, buf)?;
    for (b, &g) in buf.iter_mut().zip(full) {
        *b = g - alpha * *b;
    }
    Ok(())
}

/// Draws one noise vector `ξ(x)`.
pub fn noise_sample<T, O, R>(
    obj: &O,
    x: &[T],
    half_width: T,
    batch_size: usize,
    scheme: BatchScheme,
    rng: &mut R,
) -> Result<Vec<T>>
where
    T: Scalar,
    O: Objective<T> + ?Sized,
    R: Rng + ?Sized,
{
    check_noise_params(half_width, batch_size, obj.sample_count(), scheme)?;
    let mut full = vec![T::zero(); obj.dim()];
    obj.full_grad(x, &mut full);
    let mut out = vec![T::zero(); obj.dim()];
    noise_with_full_grad(obj, x, &full, half_width, batch_size, scheme, rng, &mut out)?;
    Ok(out)
}

/// Empirical covariance and mean of `draws` noise vectors.
#[derive(Debug, Clone)]
pub struct EmpiricalNoise<T> {
    pub draws: usize,
    pub mean: Vec<T>,
    /// Second moment about the analytic mean (zero).
    pub covariance: Matrix<T>,
}

/// Monte Carlo estimate of `Cov[ξ]`.
///
/// The draws are split across `workers` substreams of a ChaCha generator
/// seeded with `seed`; worker `w` owns stream `w`, and the partial sums are
/// reduced in worker order, so the result depends only on
/// `(seed, draws, workers)`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_covariance<T, O>(
    obj: &O,
    x: &[T],
    half_width: T,
    batch_size: usize,
    scheme: BatchScheme,
    draws: usize,
    seed: u64,
    workers: usize,
) -> Result<EmpiricalNoise<T>>
where
    T: Scalar,
    O: Objective<T> + ?Sized,
{
    check_noise_params(half_width, batch_size, obj.sample_count(), scheme)?;
    let n = obj.dim();
    if n > MAX_FULL_DIM {
        return Err(Error::Capacity(format!(
            "full {n}x{n} covariance exceeds the {MAX_FULL_DIM}-dimension limit"
        )));
    }
    if draws == 0 {
        return Err(invalid("draws", "must be positive"));
    }
    let workers = workers.clamp(1, draws);
    let mut full = vec![T::zero(); n];
    obj.full_grad(x, &mut full);

    let partials: Vec<Result<(Vec<T>, Matrix<T>)>> = (0..workers)
        .into_par_iter()
        .map(|w| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(w as u64);
            let share = draws / workers + usize::from(w < draws % workers);
            let mut sum = vec![T::zero(); n];
            let mut second = Matrix::zeros(n, n);
            let mut xi = vec![T::zero(); n];
            for _ in 0..share {
                noise_with_full_grad(obj, x, &full, half_width, batch_size, scheme, &mut rng, &mut xi)?;
                for (s, &v) in sum.iter_mut().zip(&xi) {
                    *s += v;
                }
                second.add_outer(T::one(), &xi, &xi);
            }
            Ok((sum, second))
        })
        .collect();

    let mut sum = vec![T::zero(); n];
    let mut second = Matrix::zeros(n, n);
    for part in partials {
        let (s, m) = part?;
        for (a, b) in sum.iter_mut().zip(&s) {
            *a += *b;
        }
        second = second.add(&m);
    }
    let inv = T::one() / T::from_count(draws);
    Ok(EmpiricalNoise {
        draws,
        mean: sum.into_iter().map(|s| s * inv).collect(),
        covariance: second.scale(inv),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffusionReport<T> {
    /// Full covariance `Σ(x)`.
    pub sigma: Matrix<T>,
    /// Diagonal-in-sample-index part `D̂(x)`.
    pub dhat: Matrix<T>,
    /// Off-diagonal remainder `d_Δ(x)`.
    pub d_offdiag: Matrix<T>,
    /// Isotropic reduction `tr(D̂)/n`.
    pub d_scalar: T,
    pub moment_mode: MomentMode,
    pub scheme: BatchScheme,
    pub half_width: T,
    pub batch_size: usize,
    /// Number of mini-batches averaged over (exact enumeration) or zero for
    /// closed-form schemes.
    pub batches: u64,
}

impl<T: Scalar> DiffusionReport<T> {
    /// `‖Σ - (D̂/C + d_Δ)‖_F / ‖Σ‖_F`.
    pub fn split_residual(&self) -> T {
        let c = T::from_count(self.batch_size);
        let recombined = self.dhat.scale(T::one() / c).add(&self.d_offdiag);
        crate::linalg::relative_frobenius_error(&recombined, &self.sigma)
    }

    pub fn isotropic_scalar(&self) -> T {
        isotropic_scalar(self)
    }
}

/// `D = tr(D̂)/n`, the Frobenius-closest multiple of the identity.
pub fn isotropic_scalar<T: Scalar>(report: &DiffusionReport<T>) -> T {
    isotropic_scalar_of(&report.dhat)
}

pub(crate) fn isotropic_scalar_of<T: Scalar>(dhat: &Matrix<T>) -> T {
    let n = dhat.rows().max(1);
    dhat.trace() / T::from_count(n)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u128::MAX / (n as u128 + 1) {
            return u128::MAX;
        }
    }
    acc
}

/// Advances `idx` to the next `k`-combination of `0..n` in lexicographic order.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Per-sample gradient table `G[i] = ∇f_i(x)`.
pub fn per_sample_gradients<T, O>(obj: &O, x: &[T]) -> Result<Vec<Vec<T>>>
where
    T: Scalar,
    O: Objective<T> + ?Sized,
{
    let (n, samples) = (obj.dim(), obj.sample_count());
    if n.saturating_mul(samples) > MAX_GRADIENT_ENTRIES {
        return Err(Error::Capacity(format!(
            "{samples} per-sample gradients of dimension {n} exceed the enumeration limit"
        )));
    }
    Ok((0..samples).map(|i| obj.sample_grad(i, x)).collect())
}

/// Exact covariance of `ξ(x)` for the chosen batch scheme.
///
/// `SubsetEnumeration` and `FixedPartition` enumerate every admissible
/// mini-batch; `WithReplacement` uses its closed-form pair statistics.
pub fn analytic_covariance<T, O>(
    obj: &O,
    x: &[T],
    half_width: T,
    batch_size: usize,
    scheme: BatchScheme,
    mode: MomentMode,
) -> Result<DiffusionReport<T>>
where
    T: Scalar,
    O: Objective<T> + ?Sized,
{
    let samples = obj.sample_count();
    check_noise_params(half_width, batch_size, samples, scheme)?;
    let n = obj.dim();
    if n > MAX_FULL_DIM {
        return Err(Error::Capacity(format!(
            "full {n}x{n} covariance exceeds the {MAX_FULL_DIM}-dimension limit"
        )));
    }
    let c = batch_size;
    let batch_count = match scheme {
        BatchScheme::SubsetEnumeration => binomial(samples, c),
        BatchScheme::FixedPartition => (samples / c) as u128,
        BatchScheme::WithReplacement => 0,
    };
    if batch_count > MAX_ENUMERATED_BATCHES {
        return Err(Error::Capacity(format!(
            "enumerating {batch_count} mini-batches exceeds the limit of {MAX_ENUMERATED_BATCHES}"
        )));
    }
    let grads = per_sample_gradients(obj, x)?;
    let inv_n = T::one() / T::from_count(samples);
    let mut g = vec![T::zero(); n];
    for gi in &grads {
        for (a, &b) in g.iter_mut().zip(gi) {
            *a += b * inv_n;
        }
    }

    // Batch averages of Σ_{j,k∈Γ} g_j g_kᵀ (`all`) and Σ_{j∈Γ} g_j g_jᵀ (`diag`).
    let (all, diag) = match scheme {
        BatchScheme::WithReplacement => {
            let mut second = Matrix::zeros(n, n);
            for gi in &grads {
                second.add_outer(inv_n, gi, gi);
            }
            let cc = T::from_count(c);
            let diag = second.scale(cc);
            let mut all = diag.clone();
            all.add_outer(cc * (cc - T::one()), &g, &g);
            (all, diag)
        }
        _ => {
            let mut all = Matrix::zeros(n, n);
            let mut diag = Matrix::zeros(n, n);
            let mut batch_sum = vec![T::zero(); n];
            let mut visit = |batch: &[usize]| {
                batch_sum.iter_mut().for_each(|s| *s = T::zero());
                for &j in batch {
                    for (s, &v) in batch_sum.iter_mut().zip(&grads[j]) {
                        *s += v;
                    }
                    diag.add_outer(T::one(), &grads[j], &grads[j]);
                }
                all.add_outer(T::one(), &batch_sum, &batch_sum);
            };
            if scheme == BatchScheme::FixedPartition {
                for block in 0..samples / c {
                    let batch: Vec<usize> = (block * c..(block + 1) * c).collect();
                    visit(&batch);
                }
            } else {
                let mut idx: Vec<usize> = (0..c).collect();
                loop {
                    visit(&idx);
                    if !next_combination(&mut idx, samples) {
                        break;
                    }
                }
            }
            let inv_b = T::one() / T::lit(batch_count as f64);
            (all.scale(inv_b), diag.scale(inv_b))
        }
    };

    let m2 = alpha_second_moment(half_width, mode);
    let cc = T::from_count(c);
    let inv_c = T::one() / cc;
    let inv_c2 = inv_c * inv_c;

    let mut sigma = all.scale(m2 * inv_c2);
    sigma.add_outer(-T::one(), &g, &g);

    let mut dhat = diag.scale(m2 * inv_c);
    dhat.add_outer(-T::one(), &g, &g);

    let mut d_offdiag = all.sub(&diag).scale(m2 * inv_c2);
    d_offdiag.add_outer(-(cc - T::one()) * inv_c, &g, &g);

    let d_scalar = isotropic_scalar_of(&dhat);
    Ok(DiffusionReport {
        sigma,
        dhat,
        d_offdiag,
        d_scalar,
        moment_mode: mode,
        scheme,
        half_width,
        batch_size: c,
        batches: batch_count as u64,
    })
}

/// Diagonal of `D̂` and its trace average, for models too large for `n × n`
/// matrices. Under the uniform batch schemes every sample appears equally
/// often, so `D̂_ii = m₂ (1/N) Σ_j (∂_i f_j)² - (∂_i f)²`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagonalDiffusion<T> {
    pub dhat_diag: Vec<T>,
    pub d_scalar: T,
    pub gradient_norm: T,
}

pub fn diagonal_diffusion<T, O>(obj: &O, x: &[T], half_width: T, mode: MomentMode) -> Result<DiagonalDiffusion<T>>
where
    T: Scalar,
    O: Objective<T> + ?Sized,
{
    if !(half_width >= T::zero() && half_width <= T::one()) {
        return Err(invalid("delta", "half width must lie in [0, 1]"));
    }
    let (n, samples) = (obj.dim(), obj.sample_count());
    let inv_n = T::one() / T::from_count(samples);
    let mut mean = vec![T::zero(); n];
    let mut sq = vec![T::zero(); n];
    let mut gi = vec![T::zero(); n];
    for i in 0..samples {
        gi.iter_mut().for_each(|v| *v = T::zero());
        obj.accumulate_sample_grad(i, x, T::one(), &mut gi);
        for ((m, s), &v) in mean.iter_mut().zip(sq.iter_mut()).zip(&gi) {
            *m += v * inv_n;
            *s += v * v * inv_n;
        }
    }
    let m2 = alpha_second_moment(half_width, mode);
    let dhat_diag: Vec<T> = sq.iter().zip(&mean).map(|(&s, &m)| m2 * s - m * m).collect();
    let d_scalar = dhat_diag.iter().copied().sum::<T>() / T::from_count(n);
    Ok(DiagonalDiffusion {
        dhat_diag,
        d_scalar,
        gradient_norm: crate::linalg::norm(&mean),
    })
}
