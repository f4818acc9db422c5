//! Learning-rate protocols.
//!
//! A protocol splits the update magnitude into two factors: a per-epoch rate
//! `l_τ` that multiplies the displacement, and a per-step multiplier `α` that
//! multiplies the mini-batch gradient inside the velocity update. The random
//! protocol keeps `l_τ = l` and draws `α ~ U[1-Δ, 1+Δ]` at every step; the
//! cyclic protocol modulates `l_τ` and keeps `α = 1`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Constant,
    RandomUniform,
    CyclicCosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolSpec<T> {
    Constant {
        rate: T,
    },
    /// `α` uniform on `[1 - half_width, 1 + half_width]`.
    RandomUniform {
        rate: T,
        half_width: T,
    },
    /// `l_τ = l (1 + cos(π τ / period))`, `τ` in completed epochs.
    CyclicCosine {
        rate: T,
        period: u32,
    },
}

impl<T: Scalar> ProtocolSpec<T> {
    pub fn constant(rate: T) -> Result<Self> {
        let spec = Self::Constant { rate };
        spec.validate()?;
        Ok(spec)
    }

    pub fn random_uniform(rate: T, half_width: T) -> Result<Self> {
        let spec = Self::RandomUniform { rate, half_width };
        spec.validate()?;
        Ok(spec)
    }

    pub fn cyclic_cosine(rate: T, period: u32) -> Result<Self> {
        let spec = Self::CyclicCosine { rate, period };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let rate = self.base_rate();
        if !(rate > T::zero() && rate.is_finite()) {
            return Err(invalid("rate", format!("must be positive and finite, got {rate}")));
        }
        match *self {
            Self::RandomUniform { half_width, .. } => {
                if !(half_width >= T::zero() && half_width <= T::one()) {
                    return Err(invalid(
                        "delta",
                        format!("half width must lie in [0, 1], got {half_width}"),
                    ));
                }
            }
            Self::CyclicCosine { period, .. } => {
                if period == 0 {
                    return Err(invalid("period", "must be at least one epoch"));
                }
            }
            Self::Constant { .. } => {}
        }
        Ok(())
    }

    pub fn kind(&self) -> ProtocolKind {
        match self {
            Self::Constant { .. } => ProtocolKind::Constant,
            Self::RandomUniform { .. } => ProtocolKind::RandomUniform,
            Self::CyclicCosine { .. } => ProtocolKind::CyclicCosine,
        }
    }

    /// Mean learning rate `l`.
    pub fn base_rate(&self) -> T {
        match *self {
            Self::Constant { rate } | Self::RandomUniform { rate, .. } | Self::CyclicCosine { rate, .. } => rate,
        }
    }

    pub fn with_rate(self, rate: T) -> Self {
        match self {
            Self::Constant { .. } => Self::Constant { rate },
            Self::RandomUniform { half_width, .. } => Self::RandomUniform { rate, half_width },
            Self::CyclicCosine { period, .. } => Self::CyclicCosine { rate, period },
        }
    }

    /// `Δ`; zero for the deterministic protocols.
    pub fn half_width(&self) -> T {
        match *self {
            Self::RandomUniform { half_width, .. } => half_width,
            _ => T::zero(),
        }
    }

    /// Short label used in file names and tables, e.g. `random-d1`, `cyclic-p6`.
    pub fn label(&self) -> String {
        match *self {
            Self::Constant { .. } => "constant".to_string(),
            Self::RandomUniform { half_width, .. } => format!("random-d{half_width}"),
            Self::CyclicCosine { period, .. } => format!("cyclic-p{period}"),
        }
    }

    /// Draws the gradient multiplier `α`.
    ///
    /// The constant protocol, and the random protocol with `Δ = 0`, return
    /// exactly one without touching `rng`.
    pub fn sample_alpha<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<T> {
        match *self {
            Self::Constant { .. } => Ok(T::one()),
            Self::RandomUniform { half_width, .. } => {
                if half_width == T::zero() {
                    return Ok(T::one());
                }
                let u = T::lit(rng.random::<f64>());
                Ok(T::one() - half_width + T::lit(2.0) * half_width * u)
            }
            Self::CyclicCosine { .. } => Err(Error::Misuse(
                "sample_alpha called on a cyclic protocol; its modulation lives in the per-epoch rate".into(),
            )),
        }
    }

    /// Multiplier used by the optimizer at every step: `α` for the constant
    /// and random protocols, one for the cyclic protocol.
    pub fn step_multiplier<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        match self {
            Self::CyclicCosine { .. } => T::one(),
            _ => self
                .sample_alpha(rng)
                .expect("non-cyclic protocols always yield a multiplier"),
        }
    }

    /// Rate `l_τ` in force after `epoch` completed epochs.
    pub fn rate_at_epoch(&self, epoch: u64) -> T {
        match *self {
            Self::Constant { rate } | Self::RandomUniform { rate, .. } => rate,
            Self::CyclicCosine { rate, period } => {
                // reduce modulo the 2P period before converting to keep the phase exact
                let phase = epoch % (2 * u64::from(period));
                let angle = T::PI() * T::lit(phase as f64) / T::lit(f64::from(period));
                (rate * (T::one() + angle.cos())).max(T::zero())
            }
        }
    }

    /// `E[α]`, always one.
    pub fn alpha_mean(&self) -> T {
        T::one()
    }

    /// `Var[α] = Δ²/3`.
    pub fn alpha_variance(&self) -> T {
        let d = self.half_width();
        d * d / T::lit(3.0)
    }
}
