use rand::Rng;
use rand_distr::StandardNormal;

use super::Objective;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Binary logistic regression, parameters `(w, b)` with `n = features + 1`.
#[derive(Debug, Clone)]
pub struct LogisticRegression<T> {
    features: usize,
    train: Vec<(Vec<T>, bool)>,
    test: Vec<(Vec<T>, bool)>,
}

fn softplus<T: Scalar>(z: T) -> T {
    // log(1 + e^z) without overflow
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> LogisticRegression<T> {
    pub fn new(train: Vec<(Vec<T>, bool)>, test: Vec<(Vec<T>, bool)>) -> Result<Self> {
        let features = train.first().map(|(x, _)| x.len()).unwrap_or(0);
        if train.is_empty() || features == 0 {
            return Err(invalid("train", "need at least one non-empty sample"));
        }
        if train.iter().chain(&test).any(|(x, _)| x.len() != features) {
            return Err(invalid("train", "ragged feature vectors"));
        }
        Ok(Self { features, train, test })
    }

    /// Two Gaussian blobs at `±separation/2` along the first axis, unit
    /// variance, balanced labels.
    pub fn synthetic<R: Rng + ?Sized>(
        train_samples: usize,
        test_samples: usize,
        features: usize,
        separation: T,
        rng: &mut R,
    ) -> Result<Self> {
        if features == 0 {
            return Err(invalid("features", "must be positive"));
        }
        let mut draw = |count: usize| -> Vec<(Vec<T>, bool)> {
            (0..count)
                .map(|i| {
                    let label = i % 2 == 1;
                    let shift = if label { separation } else { -separation } * T::lit(0.5);
                    let x = (0..features)
                        .map(|k| {
                            let noise = T::lit(rng.sample::<f64, _>(StandardNormal));
                            if k == 0 {
                                noise + shift
                            } else {
                                noise
                            }
                        })
                        .collect();
                    (x, label)
                })
                .collect()
        };
        let train = draw(train_samples);
        let test = draw(test_samples);
        Self::new(train, test)
    }

    fn logit(&self, x: &[T], sample: &[T]) -> T {
        let (w, b) = x.split_at(self.features);
        crate::linalg::dot(w, sample) + b[0]
    }

    fn accuracy(&self, x: &[T], set: &[(Vec<T>, bool)]) -> Option<T> {
        if set.is_empty() {
            return None;
        }
        let hits = set.iter().filter(|(s, y)| (self.logit(x, s) > T::zero()) == *y).count();
        Some(T::from_count(hits) / T::from_count(set.len()))
    }
}

impl<T: Scalar> Objective<T> for LogisticRegression<T> {
    fn dim(&self) -> usize {
        self.features + 1
    }

    fn sample_count(&self) -> usize {
        self.train.len()
    }

    fn sample_loss(&self, i: usize, x: &[T]) -> T {
        let (s, y) = &self.train[i];
        let z = self.logit(x, s);
        if *y {
            softplus(-z)
        } else {
            softplus(z)
        }
    }

    fn accumulate_sample_grad(&self, i: usize, x: &[T], scale: T, out: &mut [T]) -> T {
        let (s, y) = &self.train[i];
        let z = self.logit(x, s);
        let target = if *y { T::one() } else { T::zero() };
        let residual = (sigmoid(z) - target) * scale;
        for (o, &f) in out.iter_mut().zip(s) {
            *o += residual * f;
        }
        out[self.features] += residual;
        if *y {
            softplus(-z)
        } else {
            softplus(z)
        }
    }

    fn train_accuracy(&self, x: &[T]) -> Option<T> {
        self.accuracy(x, &self.train)
    }

    fn test_accuracy(&self, x: &[T]) -> Option<T> {
        self.accuracy(x, &self.test)
    }
}
