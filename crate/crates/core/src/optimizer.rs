//! Momentum SGD with a random gradient multiplier.
//!
//! One step reads
//!
//! ```text
//! v_{k+1} = μ v_k - α g
//! x_{k+1} = x_k + l_τ v_{k+1}
//! ```
//!
//! with `g = ∇f_Γ(x_eval) + w x_eval`, where `x_eval` is `x_k`, or the
//! look-ahead point `x_k + l_τ μ v_k` under Nesterov acceleration.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::objectives::Objective;
use crate::protocols::ProtocolSpec;
use crate::scalar::Scalar;

/// Any parameter norm above this aborts training.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub x: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub epoch: u64,
}

impl<T: Scalar> OptimizerState<T> {
    /// Starts at `x` with zero velocity.
    pub fn new(x: Vec<T>) -> Self {
        let v = vec![T::zero(); x.len()];
        Self {
            x,
            v,
            step: 0,
            epoch: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams<T> {
    pub momentum: T,
    pub batch_size: usize,
    pub nesterov: bool,
    pub weight_decay: T,
    pub protocol: ProtocolSpec<T>,
}

impl<T: Scalar> HyperParams<T> {
    pub fn new(protocol: ProtocolSpec<T>, momentum: T, batch_size: usize) -> Result<Self> {
        let hp = Self {
            momentum,
            batch_size,
            nesterov: false,
            weight_decay: T::zero(),
            protocol,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn with_nesterov(mut self, on: bool) -> Self {
        self.nesterov = on;
        self
    }

    pub fn with_weight_decay(mut self, w: T) -> Self {
        self.weight_decay = w;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.protocol.validate()?;
        if !(self.momentum >= T::zero() && self.momentum < T::one()) {
            return Err(invalid(
                "momentum",
                format!("must lie in [0, 1), got {}", self.momentum),
            ));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        if !(self.weight_decay >= T::zero() && self.weight_decay.is_finite()) {
            return Err(invalid("weight_decay", "must be non-negative"));
        }
        Ok(())
    }

    /// `γ = (1 - μ) / l`.
    pub fn friction(&self) -> T {
        (T::one() - self.momentum) / self.protocol.base_rate()
    }
}

/// Point at which the mini-batch gradient is evaluated.
pub fn eval_point<T: Scalar>(state: &OptimizerState<T>, rate: T, hyper: &HyperParams<T>) -> Vec<T> {
    if hyper.nesterov {
        let c = rate * hyper.momentum;
        state.x.iter().zip(&state.v).map(|(&x, &v)| x + c * v).collect()
    } else {
        state.x.clone()
    }
}

/// Applies one update given `grad = ∇f_Γ` at [`eval_point`].
pub fn sgd_step<T: Scalar>(
    state: &mut OptimizerState<T>,
    grad: &[T],
    alpha: T,
    rate: T,
    hyper: &HyperParams<T>,
) -> Result<()> {
    if grad.len() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            actual: grad.len(),
        });
    }
    if !(alpha >= T::zero()) {
        return Err(invalid("alpha", format!("must be non-negative, got {alpha}")));
    }
    let mu = hyper.momentum;
    let w = hyper.weight_decay;
    let look = if hyper.nesterov { rate * mu } else { T::zero() };
    let mut norm2 = T::zero();
    let mut finite = true;
    for ((x, v), &g) in state.x.iter_mut().zip(state.v.iter_mut()).zip(grad) {
        let x_eval = *x + look * *v;
        let g = g + w * x_eval;
        *v = mu * *v - alpha * g;
        *x += rate * *v;
        finite &= x.is_finite() && v.is_finite();
        norm2 += *x * *x;
    }
    state.step += 1;
    if !finite || !(norm2.sqrt() <= T::lit(DIVERGENCE_NORM)) {
        return Err(Error::Diverged { step: state.step });
    }
    Ok(())
}

/// Per-epoch training metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord<T> {
    /// Completed epochs after this one (1-based).
    pub epoch: u64,
    /// Rate `l_τ` used during the epoch.
    pub lr: T,
    pub train_loss: T,
    pub train_acc: Option<T>,
    pub test_acc: Option<T>,
    pub steps: u64,
    pub alpha_mean: T,
    pub alpha_min: T,
    pub alpha_max: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummary<T> {
    pub count: u64,
    pub mean: T,
    pub variance: T,
    pub min: T,
    pub max: T,
}

#[derive(Debug, Clone)]
pub struct TrainingRecord<T> {
    pub initial_loss: T,
    pub epochs: Vec<EpochRecord<T>>,
    pub alpha: AlphaSummary<T>,
    pub final_state: OptimizerState<T>,
}

impl<T: Scalar> TrainingRecord<T> {
    pub fn best_test_acc(&self) -> Option<T> {
        self.epochs
            .iter()
            .filter_map(|e| e.test_acc)
            .fold(None, |best, a| Some(best.map_or(a, |b: T| b.max(a))))
    }

    pub fn final_test_acc(&self) -> Option<T> {
        self.epochs.last().and_then(|e| e.test_acc)
    }

    pub fn final_train_loss(&self) -> Option<T> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Hook invoked after every epoch.
pub trait EpochProbe<T> {
    fn on_epoch(&mut self, record: &EpochRecord<T>, state: &OptimizerState<T>);
}

impl<T, F> EpochProbe<T> for F
where
    F: FnMut(&EpochRecord<T>, &OptimizerState<T>),
{
    fn on_epoch(&mut self, record: &EpochRecord<T>, state: &OptimizerState<T>) {
        self(record, state)
    }
}

/// Running `α` statistics (Welford).
#[derive(Debug, Clone)]
struct AlphaStats {
    count: u64,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
}

impl AlphaStats {
    fn new() -> Self {
        Self {
            count: 0,
            mean: 0.0,
            m2: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }

    fn push(&mut self, a: f64) {
        self.count += 1;
        let d = a - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (a - self.mean);
        self.min = self.min.min(a);
        self.max = self.max.max(a);
    }

    fn summary<T: Scalar>(&self) -> AlphaSummary<T> {
        let var = if self.count > 1 {
            self.m2 / (self.count - 1) as f64
        } else {
            0.0
        };
        AlphaSummary {
            count: self.count,
            mean: T::lit(self.mean),
            variance: T::lit(var),
            min: T::lit(if self.count > 0 { self.min } else { 0.0 }),
            max: T::lit(if self.count > 0 { self.max } else { 0.0 }),
        }
    }
}

/// Trains from `x0` for `epochs` epochs.
///
/// Each epoch shuffles the sample indices and partitions them into
/// `⌊N/C⌋` mini-batches (a trailing short batch is dropped); `α` is drawn
/// once per step from `rng`, which also drives the shuffles. The result is a
/// pure function of the inputs and the state of `rng`.
pub fn train<T, O, R>(
    objective: &O,
    x0: Vec<T>,
    hyper: &HyperParams<T>,
    epochs: u64,
    rng: &mut R,
    probes: &mut [&mut dyn EpochProbe<T>],
) -> Result<TrainingRecord<T>>
where
    T: Scalar,
    O: Objective<T> + ?Sized,
    R: Rng + ?Sized,
{
    hyper.validate()?;
    if epochs == 0 {
        return Err(invalid("epochs", "must be at least one"));
    }
    let n = objective.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: x0.len(),
        });
    }
    let samples = objective.sample_count();
    let c = hyper.batch_size;
    if c > samples {
        return Err(invalid(
            "batch_size",
            format!("{c} exceeds the {samples} available samples"),
        ));
    }
    let batches = samples / c;

    let initial_loss = objective.full_loss(&x0);
    let mut state = OptimizerState::new(x0);
    let mut order: Vec<usize> = (0..samples).collect();
    let mut grad = vec![T::zero(); n];
    let mut all_alpha = AlphaStats::new();
    let mut records = Vec::with_capacity(epochs as usize);

    for tau in 0..epochs {
        let rate = hyper.protocol.rate_at_epoch(tau);
        let mut epoch_alpha = AlphaStats::new();
        order.shuffle(rng);
        for batch in order.chunks_exact(c).take(batches) {
            let alpha = hyper.protocol.step_multiplier(rng);
            let x_eval;
            let at: &[T] = if hyper.nesterov {
                x_eval = eval_point(&state, rate, hyper);
                &x_eval
            } else {
                &state.x
            };
            objective.minibatch_grad(at, batch, &mut grad)?;
            sgd_step(&mut state, &grad, alpha, rate, hyper)?;
            epoch_alpha.push(alpha.as_f64());
            all_alpha.push(alpha.as_f64());
        }
        state.epoch = tau + 1;
        let record = EpochRecord {
            epoch: tau + 1,
            lr: rate,
            train_loss: objective.full_loss(&state.x),
            train_acc: objective.train_accuracy(&state.x),
            test_acc: objective.test_accuracy(&state.x),
            steps: epoch_alpha.count,
            alpha_mean: T::lit(epoch_alpha.mean),
            alpha_min: T::lit(epoch_alpha.min),
            alpha_max: T::lit(epoch_alpha.max),
        };
        if !record.train_loss.is_finite() {
            return Err(Error::Diverged { step: state.step });
        }
        for probe in probes.iter_mut() {
            probe.on_epoch(&record, &state);
        }
        records.push(record);
    }

    Ok(TrainingRecord {
        initial_loss,
        epochs: records,
        alpha: all_alpha.summary(),
        final_state: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper(mu: f64) -> HyperParams<f64> {
        HyperParams::new(ProtocolSpec::constant(0.1).unwrap(), mu, 1).unwrap()
    }

    #[test]
    fn hand_evaluated_step() {
        let mut s = OptimizerState::new(vec![1.0]);
        sgd_step(&mut s, &[2.0], 1.0, 0.1, &hyper(0.9)).unwrap();
        assert_eq!(s.v, vec![-2.0]);
        assert!((s.x[0] - 0.8).abs() < 1e-15);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn momentum_free_step_is_plain_sgd() {
        let mut s = OptimizerState::new(vec![1.0, -2.0]);
        s.v = vec![5.0, 5.0];
        sgd_step(&mut s, &[0.5, -1.0], 1.0, 0.1, &hyper(0.0)).unwrap();
        assert!((s.x[0] - (1.0 - 0.1 * 0.5)).abs() < 1e-15);
        assert!((s.x[1] - (-2.0 + 0.1 * 1.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_alpha_is_pure_momentum_decay() {
        let mut s = OptimizerState::new(vec![0.0]);
        s.v = vec![1.0];
        sgd_step(&mut s, &[100.0], 0.0, 0.1, &hyper(0.5)).unwrap();
        assert_eq!(s.v, vec![0.5]);
    }

    #[test]
    fn weight_decay_is_scaled_by_alpha() {
        let hp = hyper(0.0).with_weight_decay(0.5);
        let mut s = OptimizerState::new(vec![2.0]);
        sgd_step(&mut s, &[0.0], 2.0, 0.1, &hp).unwrap();
        // v = -α w x = -2
        assert!((s.v[0] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn nesterov_decay_uses_lookahead() {
        let hp = hyper(0.5).with_nesterov(true).with_weight_decay(1.0);
        let mut s = OptimizerState::new(vec![1.0]);
        s.v = vec![2.0];
        let at = eval_point(&s, 0.1, &hp);
        assert!((at[0] - 1.1).abs() < 1e-15);
        sgd_step(&mut s, &[0.0], 1.0, 0.1, &hp).unwrap();
        assert!((s.v[0] - (1.0 - 1.1)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_update_diverges() {
        let mut s = OptimizerState::new(vec![1.0]);
        let err = sgd_step(&mut s, &[f64::NAN], 1.0, 0.1, &hyper(0.0)).unwrap_err();
        assert!(matches!(err, Error::Diverged { step: 1 }));
        let mut s = OptimizerState::new(vec![1.0]);
        let err = sgd_step(&mut s, &[-1e14], 1.0, 1.0, &hyper(0.0)).unwrap_err();
        assert!(matches!(err, Error::Diverged { step: 1 }));
    }

    #[test]
    fn rejects_momentum_of_one() {
        assert!(HyperParams::new(ProtocolSpec::constant(0.1).unwrap(), 1.0, 4).is_err());
        assert!(HyperParams::new(ProtocolSpec::constant(0.1).unwrap(), 0.5, 0).is_err());
    }
}
