use rand::{Rng, RngCore};

use super::{argmax, Objective};
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

pub const MODEL1_INPUT: usize = 28 * 28;
pub const MODEL1_HIDDEN: usize = 100;
pub const MODEL1_OUTPUT: usize = 10;

/// Input vector stored by its non-zero entries. MNIST digits are mostly
/// background, so both the first layer and its gradient only touch the
/// non-zero pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseImage<T> {
    pub indices: Vec<u32>,
    pub values: Vec<T>,
}

impl<T: Scalar> SparseImage<T> {
    pub fn from_dense(dense: &[T]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != T::zero())
            .map(|(i, &v)| (i as u32, v))
            .unzip();
        Self { indices, values }
    }

    pub fn to_dense(&self, len: usize) -> Vec<T> {
        let mut d = vec![T::zero(); len];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            d[i as usize] = v;
        }
        d
    }
}

#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub inputs: Vec<SparseImage<T>>,
    pub labels: Vec<u8>,
}

impl<T> Dataset<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Two-layer perceptron `input → hidden (ReLU) → classes` with softmax
/// cross-entropy loss. Model 1 is `784 → 100 → 10`, 79,510 parameters.
///
/// Parameter layout: `W1` (hidden × input, row-major), `b1`, `W2`
/// (classes × hidden), `b2`.
#[derive(Debug, Clone)]
pub struct Mlp<T> {
    input: usize,
    hidden: usize,
    classes: usize,
    train: Dataset<T>,
    test: Dataset<T>,
}

struct Forward<T> {
    pre: Vec<T>,
    hidden: Vec<T>,
    logits: Vec<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(input: usize, hidden: usize, classes: usize, train: Dataset<T>, test: Dataset<T>) -> Result<Self> {
        if input == 0 || hidden == 0 || classes < 2 {
            return Err(invalid("layers", "need input, hidden > 0 and at least two classes"));
        }
        if train.is_empty() {
            return Err(invalid("train", "empty training set"));
        }
        for set in [&train, &test] {
            if set.inputs.len() != set.labels.len() {
                return Err(invalid("dataset", "inputs and labels differ in length"));
            }
            if set.labels.iter().any(|&y| usize::from(y) >= classes) {
                return Err(invalid("dataset", "label outside class range"));
            }
            if set
                .inputs
                .iter()
                .any(|s| s.indices.iter().any(|&i| i as usize >= input))
            {
                return Err(invalid("dataset", "input index outside input dimension"));
            }
        }
        Ok(Self {
            input,
            hidden,
            classes,
            train,
            test,
        })
    }

    /// Model 1: `784 → 100 → 10`.
    pub fn model1(train: Dataset<T>, test: Dataset<T>) -> Result<Self> {
        Self::new(MODEL1_INPUT, MODEL1_HIDDEN, MODEL1_OUTPUT, train, test)
    }

    pub fn layer_sizes(&self) -> (usize, usize, usize) {
        (self.input, self.hidden, self.classes)
    }

    pub fn train_set(&self) -> &Dataset<T> {
        &self.train
    }

    pub fn test_set(&self) -> &Dataset<T> {
        &self.test
    }

    /// Start offsets of `b1`, `W2` and `b2`.
    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.hidden * self.input;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.classes * self.hidden;
        (w1, b1, w2)
    }

    fn forward(&self, x: &[T], image: &SparseImage<T>) -> Forward<T> {
        let (o_b1, o_w2, o_b2) = self.offsets();
        let mut pre = x[o_b1..o_b1 + self.hidden].to_vec();
        for (h, p) in pre.iter_mut().enumerate() {
            let row = &x[h * self.input..(h + 1) * self.input];
            let mut acc = T::zero();
            for (&i, &v) in image.indices.iter().zip(&image.values) {
                acc += row[i as usize] * v;
            }
            *p += acc;
        }
        let hidden: Vec<T> = pre.iter().map(|&p| p.max(T::zero())).collect();
        let mut logits = x[o_b2..o_b2 + self.classes].to_vec();
        for (c, l) in logits.iter_mut().enumerate() {
            let row = &x[o_w2 + c * self.hidden..o_w2 + (c + 1) * self.hidden];
            *l += crate::linalg::dot(row, &hidden);
        }
        Forward { pre, hidden, logits }
    }

    /// Cross-entropy loss and softmax probabilities.
    fn softmax_xent(logits: &[T], label: u8) -> (T, Vec<T>) {
        let max = logits.iter().cloned().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: T = exps.iter().cloned().sum();
        let loss = total.ln() + max - logits[usize::from(label)];
        (loss, exps.into_iter().map(|e| e / total).collect())
    }

    pub fn predict(&self, x: &[T], image: &SparseImage<T>) -> usize {
        argmax(&self.forward(x, image).logits)
    }

    fn accuracy(&self, x: &[T], set: &Dataset<T>) -> Option<T> {
        if set.is_empty() {
            return None;
        }
        let hits = set
            .inputs
            .iter()
            .zip(&set.labels)
            .filter(|(img, &y)| self.predict(x, img) == usize::from(y))
            .count();
        Some(T::from_count(hits) / T::from_count(set.len()))
    }
}

impl<T: Scalar> Objective<T> for Mlp<T> {
    fn dim(&self) -> usize {
        self.hidden * self.input + self.hidden + self.classes * self.hidden + self.classes
    }

    fn sample_count(&self) -> usize {
        self.train.len()
    }

    fn sample_loss(&self, i: usize, x: &[T]) -> T {
        let fwd = self.forward(x, &self.train.inputs[i]);
        Self::softmax_xent(&fwd.logits, self.train.labels[i]).0
    }

    fn accumulate_sample_grad(&self, i: usize, x: &[T], scale: T, out: &mut [T]) -> T {
        let image = &self.train.inputs[i];
        let label = usize::from(self.train.labels[i]);
        let (o_b1, o_w2, o_b2) = self.offsets();
        let fwd = self.forward(x, image);
        let (loss, mut delta) = Self::softmax_xent(&fwd.logits, self.train.labels[i]);
        delta[label] -= T::one();
        delta.iter_mut().for_each(|d| *d *= scale);

        let mut back = vec![T::zero(); self.hidden];
        for (c, &d) in delta.iter().enumerate() {
            out[o_b2 + c] += d;
            let w_row = &x[o_w2 + c * self.hidden..o_w2 + (c + 1) * self.hidden];
            let g_row = &mut out[o_w2 + c * self.hidden..o_w2 + (c + 1) * self.hidden];
            for ((g, &h), (b, &w)) in g_row.iter_mut().zip(&fwd.hidden).zip(back.iter_mut().zip(w_row)) {
                *g += d * h;
                *b += d * w;
            }
        }
        for (h, &b) in back.iter().enumerate() {
            if fwd.pre[h] <= T::zero() || b == T::zero() {
                continue;
            }
            out[o_b1 + h] += b;
            let g_row = &mut out[h * self.input..(h + 1) * self.input];
            for (&k, &v) in image.indices.iter().zip(&image.values) {
                g_row[k as usize] += b * v;
            }
        }
        loss
    }

    fn train_accuracy(&self, x: &[T]) -> Option<T> {
        self.accuracy(x, &self.train)
    }

    fn test_accuracy(&self, x: &[T]) -> Option<T> {
        self.accuracy(x, &self.test)
    }

    /// Uniform in `±1/√fan_in` per layer, weights and biases alike.
    fn initial_point(&self, rng: &mut dyn RngCore) -> Vec<T> {
        let (_, o_w2, _) = self.offsets();
        let dim = self.dim();
        let b1 = 1.0 / (self.input as f64).sqrt();
        let b2 = 1.0 / (self.hidden as f64).sqrt();
        (0..dim)
            .map(|k| {
                let bound = if k < o_w2 { b1 } else { b2 };
                T::lit(rng.random_range(-bound..bound))
            })
            .collect()
    }
}
