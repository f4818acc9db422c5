//! Continuous Langevin approximation of momentum SGD:
//!
//! ```text
//! dV = [-γ V - (1/l) ∇f(X)] dt + √(D/C) dW,     γ = (1 - μ)/l
//! dX = V dt
//! ```
//!
//! integrated either by Euler–Maruyama on any objective, or exactly for
//! quadratic potentials, where every eigenmode of the curvature is an
//! independent two-dimensional Ornstein–Uhlenbeck process.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Matrix};
use crate::objectives::{Objective, QuadraticEnsemble};
use crate::scalar::Scalar;

/// Velocity norm beyond which a trajectory counts as diverged.
pub const DIVERGENCE_VELOCITY: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct SdeState<T> {
    pub x: Vec<T>,
    pub v: Vec<T>,
    pub t: T,
}

impl<T: Scalar> SdeState<T> {
    pub fn at_rest(x: Vec<T>) -> Self {
        let v = vec![T::zero(); x.len()];
        Self { x, v, t: T::zero() }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdeParams<T> {
    /// Mean learning rate `l`.
    pub rate: T,
    pub momentum: T,
    /// Isotropic diffusion scalar `D`.
    pub diffusion: T,
    pub batch_size: usize,
    pub dt: T,
    /// Replace `f` by `f + (l/4) ‖∇f‖²` in the drift.
    pub correction: bool,
}

impl<T: Scalar> SdeParams<T> {
    /// Parameters with the default step `dt = l/10`.
    pub fn new(rate: T, momentum: T, diffusion: T, batch_size: usize) -> Result<Self> {
        let p = Self {
            rate,
            momentum,
            diffusion,
            batch_size,
            dt: rate / T::lit(10.0),
            correction: false,
        };
        p.validate_physics()?;
        Ok(p)
    }

    pub fn with_dt(mut self, dt: T) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_correction(mut self, on: bool) -> Self {
        self.correction = on;
        self
    }

    fn validate_physics(&self) -> Result<()> {
        if !(self.rate > T::zero()) {
            return Err(invalid("rate", "must be positive"));
        }
        if !(self.momentum >= T::zero() && self.momentum < T::one()) {
            return Err(invalid("momentum", "must lie in [0, 1)"));
        }
        if !(self.diffusion >= T::zero()) {
            return Err(invalid("diffusion", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        Ok(())
    }

    /// Checks `dt > 0` and the explicit-friction bound `γ dt < 2`.
    pub fn validate_em(&self) -> Result<()> {
        self.validate_physics()?;
        if !(self.dt > T::zero()) {
            return Err(invalid("dt", "must be positive"));
        }
        if !(self.friction() * self.dt < T::lit(2.0)) {
            return Err(invalid(
                "dt",
                format!("friction {} times dt {} violates γ·dt < 2", self.friction(), self.dt),
            ));
        }
        Ok(())
    }

    /// `γ = (1 - μ)/l`.
    pub fn friction(&self) -> T {
        (T::one() - self.momentum) / self.rate
    }

    /// `√(D/C)`.
    pub fn noise_amplitude(&self) -> T {
        (self.diffusion / T::from_count(self.batch_size)).sqrt()
    }

    /// `T = l D / (2 C (1 - μ))`.
    pub fn temperature(&self) -> T {
        self.rate * self.diffusion / (T::lit(2.0) * T::from_count(self.batch_size) * (T::one() - self.momentum))
    }

    /// Ten friction times, `10 l / (1 - μ)`.
    pub fn burn_in_time(&self) -> T {
        T::lit(10.0) / self.friction()
    }
}

fn standard_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    T::lit(rng.sample::<f64, _>(StandardNormal))
}

fn check_finite<T: Scalar>(state: &SdeState<T>, step: u64) -> Result<()> {
    let finite = state.x.iter().chain(&state.v).all(|v| v.is_finite());
    if !finite || !(linalg::norm(&state.v) <= T::lit(DIVERGENCE_VELOCITY)) {
        return Err(Error::Diverged { step });
    }
    Ok(())
}

/// One Euler–Maruyama step. The velocity is updated first and the position
/// moves with the new velocity, so with `D = 0` and `dt = l` the step is
/// exactly the full-batch momentum SGD update.
pub fn em_step<T, O, R>(state: &mut SdeState<T>, obj: &O, p: &SdeParams<T>, rng: &mut R) -> Result<()>
where
    T: Scalar,
    O: Objective<T> + ?Sized,
    R: Rng + ?Sized,
{
    p.validate_em()?;
    let n = state.dim();
    if obj.dim() != n || state.v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: obj.dim(),
            actual: n,
        });
    }
    let mut grad = vec![T::zero(); n];
    obj.full_grad(&state.x, &mut grad);
    if p.correction {
        // ∇[f + (l/4)‖∇f‖²] = ∇f + (l/2) ∇²f ∇f
        let mut hg = vec![T::zero(); n];
        obj.hessian_vector_product(&state.x, &grad, &mut hg);
        let half_l = p.rate * T::lit(0.5);
        for (g, h) in grad.iter_mut().zip(&hg) {
            *g += half_l * *h;
        }
    }
    let gamma = p.friction();
    let inv_l = T::one() / p.rate;
    let kick = p.noise_amplitude() * p.dt.sqrt();
    for ((x, v), &g) in state.x.iter_mut().zip(state.v.iter_mut()).zip(&grad) {
        let noise = if kick > T::zero() {
            kick * standard_normal::<T, _>(rng)
        } else {
            T::zero()
        };
        *v += p.dt * (-gamma * *v - inv_l * g) + noise;
        *x += p.dt * *v;
    }
    state.t += p.dt;
    check_finite(state, 0)
}

/// Quadratic potential `f(X) = ½ (X - c)ᵀ A (X - c)` (up to a constant).
#[derive(Debug, Clone)]
pub struct Quadratic<T> {
    pub curvature: Matrix<T>,
    pub center: Vec<T>,
}

impl<T: Scalar> Quadratic<T> {
    pub fn new(curvature: Matrix<T>, center: Vec<T>) -> Result<Self> {
        if !curvature.is_square() || curvature.rows() != center.len() {
            return Err(Error::DimensionMismatch {
                expected: curvature.rows(),
                actual: center.len(),
            });
        }
        Ok(Self { curvature, center })
    }

    /// One-dimensional `f = ½ k x²`.
    pub fn scalar(stiffness: T) -> Self {
        Self {
            curvature: Matrix::from_diagonal(&[stiffness]),
            center: vec![T::zero()],
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn value(&self, x: &[T]) -> T {
        let d: Vec<T> = x.iter().zip(&self.center).map(|(&a, &c)| a - c).collect();
        T::lit(0.5) * linalg::dot(&d, &self.curvature.matvec(&d))
    }

    /// Eigen-decomposition, rejecting curvatures that are not positive definite.
    fn modes(&self) -> Result<(Vec<T>, Matrix<T>)> {
        if !self.curvature.is_symmetric(T::lit(1e-10)) {
            return Err(Error::Misuse("curvature must be symmetric".into()));
        }
        let (vals, vecs) = self.curvature.symmetric_eigen()?;
        if vals.iter().any(|&l| !(l > T::zero())) {
            return Err(Error::Misuse("curvature must be positive definite".into()));
        }
        Ok((vals, vecs))
    }
}

impl<T: Scalar> From<&QuadraticEnsemble<T>> for Quadratic<T> {
    fn from(q: &QuadraticEnsemble<T>) -> Self {
        Self {
            curvature: q.curvature().clone(),
            center: q.minimizer(),
        }
    }
}

type Mat2<T> = [[T; 2]; 2];

/// `exp(M t)` for the mode drift `M = [[0, 1], [-λ/l, -γ]]`.
fn mode_propagator<T: Scalar>(stiffness: T, rate: T, gamma: T, t: T) -> Mat2<T> {
    let a = -gamma * T::lit(0.5);
    let det = stiffness / rate;
    let disc = a * a - det;
    // exp(M t) = c(t) I + s(t) (M - a I), times e^{a t} folded into c, s
    let (c, s) = if disc > T::zero() {
        let r = disc.sqrt();
        let ep = ((a + r) * t).exp();
        let em = ((a - r) * t).exp();
        ((ep + em) * T::lit(0.5), (ep - em) / (T::lit(2.0) * r))
    } else if disc < T::zero() {
        let w = (-disc).sqrt();
        let e = (a * t).exp();
        (e * (w * t).cos(), e * (w * t).sin() / w)
    } else {
        let e = (a * t).exp();
        (e, e * t)
    };
    [[c - s * a, s], [-s * det, c + s * (-gamma - a)]]
}

fn mat2_mul<T: Scalar>(a: &Mat2<T>, b: &Mat2<T>) -> Mat2<T> {
    let mut out = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn mat2_transpose<T: Scalar>(a: &Mat2<T>) -> Mat2<T> {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

/// Exact one-step transition of a single eigenmode.
#[derive(Debug, Clone, Copy)]
struct ModeTransition<T> {
    propagator: Mat2<T>,
    /// Lower Cholesky factor of the transition covariance.
    chol: Mat2<T>,
}

impl<T: Scalar> ModeTransition<T> {
    fn new(stiffness: T, p: &SdeParams<T>, dt: T) -> Self {
        let gamma = p.friction();
        let e = mode_propagator(stiffness, p.rate, gamma, dt);
        let temp = p.temperature();
        // stationary covariance diag(l T / λ, T); transition covariance Σ∞ - E Σ∞ Eᵀ
        let stat = [[p.rate * temp / stiffness, T::zero()], [T::zero(), temp]];
        let evolved = mat2_mul(&mat2_mul(&e, &stat), &mat2_transpose(&e));
        let q = [
            [stat[0][0] - evolved[0][0], stat[0][1] - evolved[0][1]],
            [stat[1][0] - evolved[1][0], stat[1][1] - evolved[1][1]],
        ];
        let l11 = q[0][0].max(T::zero()).sqrt();
        let l21 = if l11 > T::zero() { q[1][0] / l11 } else { T::zero() };
        let l22 = (q[1][1] - l21 * l21).max(T::zero()).sqrt();
        Self {
            propagator: e,
            chol: [[l11, T::zero()], [l21, l22]],
        }
    }
}

/// Exact transition kernel of the linear SDE over a fixed `dt`, for a
/// quadratic potential with positive-definite curvature.
#[derive(Debug, Clone)]
pub struct OuKernel<T> {
    center: Vec<T>,
    basis: Matrix<T>,
    modes: Vec<ModeTransition<T>>,
    stiffness: Vec<T>,
    params: SdeParams<T>,
}

impl<T: Scalar> OuKernel<T> {
    pub fn new(potential: &Quadratic<T>, p: &SdeParams<T>) -> Result<Self> {
        p.validate_physics()?;
        if !(p.dt > T::zero()) {
            return Err(invalid("dt", "must be positive"));
        }
        let (vals, basis) = potential.modes()?;
        let modes = vals.iter().map(|&l| ModeTransition::new(l, p, p.dt)).collect();
        Ok(Self {
            center: potential.center.clone(),
            basis,
            modes,
            stiffness: vals,
            params: *p,
        })
    }

    pub fn params(&self) -> &SdeParams<T> {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Curvature eigenvalues in ascending order.
    pub fn stiffness(&self) -> &[T] {
        &self.stiffness
    }

    pub fn step<R: Rng + ?Sized>(&self, state: &mut SdeState<T>, rng: &mut R) -> Result<()> {
        let n = self.dim();
        if state.dim() != n || state.v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: state.dim(),
            });
        }
        // rotate into the eigenbasis
        let mut y = vec![T::zero(); n];
        let mut w = vec![T::zero(); n];
        for k in 0..n {
            for i in 0..n {
                let b = self.basis[(i, k)];
                y[k] += b * (state.x[i] - self.center[i]);
                w[k] += b * state.v[i];
            }
        }
        for (k, mode) in self.modes.iter().enumerate() {
            let e = &mode.propagator;
            let z0: T = standard_normal(rng);
            let z1: T = standard_normal(rng);
            let ny = e[0][0] * y[k] + e[0][1] * w[k] + mode.chol[0][0] * z0;
            let nw = e[1][0] * y[k] + e[1][1] * w[k] + mode.chol[1][0] * z0 + mode.chol[1][1] * z1;
            y[k] = ny;
            w[k] = nw;
        }
        for i in 0..n {
            let mut xi = self.center[i];
            let mut vi = T::zero();
            for k in 0..n {
                let b = self.basis[(i, k)];
                xi += b * y[k];
                vi += b * w[k];
            }
            state.x[i] = xi;
            state.v[i] = vi;
        }
        state.t += self.params.dt;
        check_finite(state, 0)
    }

    /// Covariances `(Cov X, Cov V) = (l T A⁻¹, T I)` of the stationary law.
    pub fn stationary_covariance(&self) -> (Matrix<T>, Matrix<T>) {
        stationary_covariance_of(&self.basis, &self.stiffness, &self.params)
    }
}

fn stationary_covariance_of<T: Scalar>(basis: &Matrix<T>, stiffness: &[T], p: &SdeParams<T>) -> (Matrix<T>, Matrix<T>) {
    let temp = p.temperature();
    let n = stiffness.len();
    let scaled: Vec<T> = stiffness.iter().map(|&l| p.rate * temp / l).collect();
    let cov_x = basis.matmul(&Matrix::from_diagonal(&scaled)).matmul(&basis.transpose());
    (cov_x, Matrix::identity(n).scale(temp))
}

/// Single exact step; builds the kernel on every call. Prefer [`OuKernel`]
/// for long runs.
pub fn exact_ou_step<T: Scalar, R: Rng + ?Sized>(
    state: &mut SdeState<T>,
    potential: &Quadratic<T>,
    p: &SdeParams<T>,
    rng: &mut R,
) -> Result<()> {
    OuKernel::new(potential, p)?.step(state, rng)
}

/// Phase-space samples stored row-major: sample `s` occupies
/// `x[s*dim..(s+1)*dim]` and likewise for `v`.
#[derive(Debug, Clone, Default)]
pub struct PhaseSamples<T> {
    pub dim: usize,
    pub x: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> PhaseSamples<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            x: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn push(&mut self, state: &SdeState<T>) {
        self.x.extend_from_slice(&state.x);
        self.v.extend_from_slice(&state.v);
    }

    pub fn extend(&mut self, other: PhaseSamples<T>) {
        self.x.extend(other.x);
        self.v.extend(other.v);
    }

    pub fn from_states(dim: usize, states: &[SdeState<T>]) -> Self {
        let mut s = Self::new(dim);
        for st in states {
            s.push(st);
        }
        s
    }

    /// Component `k` of the position, across samples.
    pub fn x_component(&self, k: usize) -> impl Iterator<Item = T> + '_ {
        self.x.iter().skip(k).step_by(self.dim).copied()
    }

    pub fn v_component(&self, k: usize) -> impl Iterator<Item = T> + '_ {
        self.v.iter().skip(k).step_by(self.dim).copied()
    }
}

/// Runs `chains` independent exact-OU chains from rest at the minimum, each
/// discarding the burn-in time and then recording `per_chain` consecutive
/// states. Chain `c` uses stream `c` of a ChaCha generator seeded with
/// `seed`; samples are concatenated in chain order.
pub fn sample_exact_ou<T: Scalar>(
    kernel: &OuKernel<T>,
    chains: usize,
    per_chain: usize,
    seed: u64,
) -> Result<PhaseSamples<T>> {
    if chains == 0 {
        return Err(invalid("chains", "must be positive"));
    }
    let p = kernel.params();
    let burn_steps = (p.burn_in_time() / p.dt).ceil().to_usize().unwrap_or(0);
    let parts: Vec<Result<PhaseSamples<T>>> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut state = SdeState::at_rest(kernel.center.clone());
            for _ in 0..burn_steps {
                kernel.step(&mut state, &mut rng)?;
            }
            let mut out = PhaseSamples::new(kernel.dim());
            out.x.reserve(per_chain * kernel.dim());
            out.v.reserve(per_chain * kernel.dim());
            for _ in 0..per_chain {
                kernel.step(&mut state, &mut rng)?;
                out.push(&state);
            }
            Ok(out)
        })
        .collect();
    let mut all = PhaseSamples::new(kernel.dim());
    for part in parts {
        all.extend(part?);
    }
    Ok(all)
}

/// Euler–Maruyama chain on an arbitrary objective, recording every `thin`-th
/// state after the burn-in.
pub fn sample_em<T, O, R>(
    obj: &O,
    p: &SdeParams<T>,
    start: SdeState<T>,
    samples: usize,
    thin: usize,
    rng: &mut R,
) -> Result<PhaseSamples<T>>
where
    T: Scalar,
    O: Objective<T> + ?Sized,
    R: Rng + ?Sized,
{
    p.validate_em()?;
    let thin = thin.max(1);
    let burn_steps = (p.burn_in_time() / p.dt).ceil().to_usize().unwrap_or(0);
    let mut state = start;
    for _ in 0..burn_steps {
        em_step(&mut state, obj, p, rng)?;
    }
    let mut out = PhaseSamples::new(state.dim());
    for _ in 0..samples {
        for _ in 0..thin {
            em_step(&mut state, obj, p, rng)?;
        }
        out.push(&state);
    }
    Ok(out)
}

/// Discrete mean recursion of momentum SGD on a quadratic (`E[α] = 1`):
/// `v ← μ v - A (x - c)`, `x ← x + l v`, for `steps` steps from rest.
pub fn sgd_mean_path<T: Scalar>(potential: &Quadratic<T>, rate: T, momentum: T, x0: &[T], steps: usize) -> Vec<Vec<T>> {
    let mut x = x0.to_vec();
    let mut v = vec![T::zero(); x.len()];
    let mut path = Vec::with_capacity(steps + 1);
    path.push(x.clone());
    for _ in 0..steps {
        let d: Vec<T> = x.iter().zip(&potential.center).map(|(&a, &c)| a - c).collect();
        let g = potential.curvature.matvec(&d);
        for ((xi, vi), gi) in x.iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = momentum * *vi - gi;
            *xi += rate * *vi;
        }
        path.push(x.clone());
    }
    path
}

/// Mean position `E[X(t)]` of the continuous system started at rest at `x0`.
pub fn sde_mean_position<T: Scalar>(potential: &Quadratic<T>, rate: T, momentum: T, x0: &[T], t: T) -> Result<Vec<T>> {
    let (vals, basis) = potential.modes()?;
    let gamma = (T::one() - momentum) / rate;
    let n = potential.dim();
    let mut out = potential.center.clone();
    for (k, &lam) in vals.iter().enumerate() {
        let y0: T = (0..n).map(|i| basis[(i, k)] * (x0[i] - potential.center[i])).sum();
        let e = mode_propagator(lam, rate, gamma, t);
        let y = e[0][0] * y0;
        for (i, o) in out.iter_mut().enumerate() {
            *o += basis[(i, k)] * y;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakErrorReport<T> {
    /// `(l, |E[x_K] - E[X(K l)]|)` pairs.
    pub points: Vec<(T, T)>,
    /// Least-squares slope of `log error` against `log l`.
    pub slope: T,
}

/// Compares the discrete SGD mean with the SDE mean at matched physical time
/// `K l ≈ horizon` for every rate in `rates`, using the exact linear mean
/// dynamics on both sides (no sampling).
pub fn weak_error_probe<T: Scalar>(
    potential: &Quadratic<T>,
    momentum: T,
    rates: &[T],
    horizon: T,
    x0: &[T],
) -> Result<WeakErrorReport<T>> {
    if rates.len() < 2 {
        return Err(invalid("rates", "need at least two rates to fit a slope"));
    }
    if !(momentum >= T::zero() && momentum < T::one()) {
        return Err(invalid("momentum", "must lie in [0, 1)"));
    }
    let mut points = Vec::with_capacity(rates.len());
    for &l in rates {
        if !(l > T::zero()) {
            return Err(invalid("rates", "must be positive"));
        }
        let steps = (horizon / l).round().to_usize().unwrap_or(0).max(1);
        let discrete = sgd_mean_path(potential, l, momentum, x0, steps)
            .pop()
            .unwrap_or_default();
        let t = l * T::from_count(steps);
        let continuous = sde_mean_position(potential, l, momentum, x0, t)?;
        let diff: Vec<T> = discrete.iter().zip(&continuous).map(|(&a, &b)| a - b).collect();
        points.push((l, linalg::norm(&diff)));
    }
    let slope = loglog_slope(&points);
    Ok(WeakErrorReport { points, slope })
}

pub(crate) fn loglog_slope<T: Scalar>(points: &[(T, T)]) -> T {
    let m = T::from_count(points.len());
    let xs: Vec<T> = points.iter().map(|(l, _)| l.ln()).collect();
    let ys: Vec<T> = points.iter().map(|(_, e)| e.ln()).collect();
    let mx = xs.iter().copied().sum::<T>() / m;
    let my = ys.iter().copied().sum::<T>() / m;
    let sxy: T = xs.iter().zip(&ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let sxx: T = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Largest pointwise gap `max_k |x_k - X(k l)|` between the noiseless SGD
/// recursion and the continuous mean path up to `horizon`.
pub fn trajectory_deviation<T: Scalar>(
    potential: &Quadratic<T>,
    rate: T,
    momentum: T,
    x0: &[T],
    horizon: T,
) -> Result<T> {
    let steps = (horizon / rate).round().to_usize().unwrap_or(0).max(1);
    let path = sgd_mean_path(potential, rate, momentum, x0, steps);
    let mut worst = T::zero();
    for (k, xk) in path.iter().enumerate() {
        let xc = sde_mean_position(potential, rate, momentum, x0, rate * T::from_count(k))?;
        let diff: Vec<T> = xk.iter().zip(&xc).map(|(&a, &b)| a - b).collect();
        worst = worst.max(linalg::norm(&diff));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn propagator_matches_series_expansion() {
        // compare against a truncated Taylor series of exp(M t) for each damping regime
        for &(lam, rate, gamma) in &[(1.0, 0.1, 1.0), (1.0, 0.01, 1.0), (25.0, 1.0, 10.0)] {
            let t = 0.3;
            let m = [[0.0, 1.0], [-lam / rate, -gamma]];
            let mut term = [[1.0, 0.0], [0.0, 1.0]];
            let mut sum = term;
            for k in 1..80 {
                term = mat2_mul(&term, &m);
                for row in term.iter_mut() {
                    for v in row.iter_mut() {
                        *v *= t / k as f64;
                    }
                }
                for i in 0..2 {
                    for j in 0..2 {
                        sum[i][j] += term[i][j];
                    }
                }
            }
            let e = mode_propagator(lam, rate, gamma, t);
            for i in 0..2 {
                for j in 0..2 {
                    assert!(
                        (e[i][j] - sum[i][j]).abs() < 1e-9 * (1.0 + sum[i][j].abs()),
                        "{lam} {rate} {gamma}"
                    );
                }
            }
        }
    }

    #[test]
    fn params_reject_unstable_dt() {
        let p = SdeParams::new(0.01, 0.0, 1.0, 1).unwrap();
        assert!(p.validate_em().is_ok());
        assert!(p.with_dt(0.02).validate_em().is_err());
        assert!(p.with_dt(0.0).validate_em().is_err());
    }

    #[test]
    fn temperature_of_reference_parameters() {
        let p = SdeParams::new(0.005f64, 0.9, 1.0, 256).unwrap();
        assert!((p.temperature() - 9.765625e-5).abs() < 1e-18);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025].iter().map(|&l| (l, 3.0 * l * l)).collect();
        assert!((loglog_slope(&pts) - 2.0).abs() < 1e-12);
    }
}
