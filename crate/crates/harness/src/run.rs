//! Single training runs and their on-disk records.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rlr_core::objectives::load_mnist_subset;
use rlr_core::optimizer::{train, EpochProbe};
use rlr_core::{EpochRecord, HyperParams, LogisticRegression, Matrix, Objective, OptimizerState, QuadraticEnsemble};
use serde::{Deserialize, Serialize};

use crate::config::{resolve_mnist_dir, ObjectiveConfig};
use crate::error::{HarnessError, Result};

pub type DynObjective = Box<dyn Objective<f64> + Send>;

/// Instantiates the configured objective. Dataset construction uses its own
/// `data_seed`, so every run of a sweep sees the same data.
pub fn build_objective(cfg: &ObjectiveConfig) -> Result<DynObjective> {
    match cfg {
        ObjectiveConfig::Mnist {
            data_dir,
            train,
            test,
            data_seed,
        } => {
            let dir = resolve_mnist_dir(data_dir.as_deref());
            let model = load_mnist_subset::<f64>(&dir, *train, *test, *data_seed)
                .map_err(|e| HarnessError::config(format!("loading MNIST from {}: {e}", dir.display())))?;
            Ok(Box::new(model))
        }
        ObjectiveConfig::Logistic {
            train,
            test,
            features,
            separation,
            data_seed,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*data_seed);
            let obj = LogisticRegression::synthetic(*train, *test, *features, *separation, &mut rng)
                .map_err(HarnessError::from_core_config)?;
            Ok(Box::new(obj))
        }
        ObjectiveConfig::Quadratic {
            curvature,
            samples,
            spread,
            data_seed,
        } => Ok(Box::new(build_quadratic(curvature, *samples, *spread, *data_seed)?)),
    }
}

pub fn build_quadratic(
    curvature: &[Vec<f64>],
    samples: usize,
    spread: f64,
    seed: u64,
) -> Result<QuadraticEnsemble<f64>> {
    let a = Matrix::from_rows(curvature).map_err(HarnessError::from_core_config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    QuadraticEnsemble::random(a, samples, spread, &mut rng).map_err(HarnessError::from_core_config)
}

/// Seed streams: the initial point and the training noise come from
/// different streams of the same seed, so protocols sharing a seed start
/// from the same weights.
const INIT_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;

pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub label: String,
    pub seed: u64,
    pub status: RunStatus,
    pub diverged_at_step: Option<u64>,
    pub epochs: Vec<EpochRecord<f64>>,
    pub initial_loss: f64,
    pub alpha_mean: f64,
    pub alpha_variance: f64,
    pub wall_clock_seconds: f64,
}

struct Collector(Vec<EpochRecord<f64>>);

impl EpochProbe<f64> for Collector {
    fn on_epoch(&mut self, record: &EpochRecord<f64>, _state: &OptimizerState<f64>) {
        self.0.push(record.clone());
    }
}

/// Trains one run. Divergence is a result, not an error: the epochs
/// completed before it are kept.
pub fn run_training(
    obj: &(dyn Objective<f64> + Send),
    hyper: &HyperParams<f64>,
    epochs: u64,
    seed: u64,
    label: &str,
) -> Result<RunResult> {
    let start = Instant::now();
    let x0 = obj.initial_point(&mut seeded_stream(seed, INIT_STREAM));
    let initial_loss = obj.full_loss(&x0);
    let mut rng = seeded_stream(seed, TRAIN_STREAM);
    let mut collector = Collector(Vec::new());
    let outcome = train(obj, x0, hyper, epochs, &mut rng, &mut [&mut collector]);
    let (status, step, alpha_mean, alpha_variance) = match outcome {
        Ok(rec) => (RunStatus::Completed, None, rec.alpha.mean, rec.alpha.variance),
        Err(rlr_core::Error::Diverged { step }) => (RunStatus::Diverged, Some(step), f64::NAN, f64::NAN),
        Err(e) => return Err(HarnessError::from_core_config(e)),
    };
    Ok(RunResult {
        label: label.to_string(),
        seed,
        status,
        diverged_at_step: step,
        epochs: collector.0,
        initial_loss,
        alpha_mean,
        alpha_variance,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

/// One CSV row per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
}

impl From<&EpochRecord<f64>> for EpochRow {
    fn from(e: &EpochRecord<f64>) -> Self {
        Self {
            epoch: e.epoch,
            lr: e.lr,
            train_loss: e.train_loss,
            train_acc: e.train_acc,
            test_acc: e.test_acc,
        }
    }
}

pub fn write_epoch_csv(path: &Path, rows: &[EpochRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::format(path, e.to_string()))?;
    }
    if rows.is_empty() {
        w.write_record(["epoch", "lr", "train_loss", "train_acc", "test_acc"])
            .map_err(|e| HarnessError::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_epoch_csv(path: &Path) -> Result<Vec<EpochRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::format(path, e.to_string()))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<EpochRow>, _>>()
        .map_err(|e| HarnessError::format(path, e.to_string()))
}

/// Per-run summary written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverged_at_step: Option<u64>,
    pub epochs_completed: u64,
    pub initial_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_test_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_test_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_train_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_variance: Option<f64>,
    pub config_hash: String,
    pub wall_clock_seconds: f64,
}

impl RunSummary {
    pub fn new(run: &RunResult, config_hash: &str) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        Self {
            label: run.label.clone(),
            seed: run.seed,
            status: run.status,
            diverged_at_step: run.diverged_at_step,
            epochs_completed: run.epochs.len() as u64,
            initial_loss: run.initial_loss,
            best_test_acc: run
                .epochs
                .iter()
                .filter_map(|e| e.test_acc)
                .fold(None, |b: Option<f64>, a| Some(b.map_or(a, |b| b.max(a)))),
            final_test_acc: run.epochs.last().and_then(|e| e.test_acc),
            final_train_loss: run.epochs.last().map(|e| e.train_loss),
            alpha_mean: finite(run.alpha_mean),
            alpha_variance: finite(run.alpha_variance),
            config_hash: config_hash.to_string(),
            wall_clock_seconds: run.wall_clock_seconds,
        }
    }
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| HarnessError::format(path, e.to_string()))?;
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    toml::from_str(&text).map_err(|e| HarnessError::format(path, e.to_string()))
}
