//! TOML experiment configuration.
//!
//! Top-level keys hold the training hyperparameters; the `[protocol]` and
//! `[objective]` blocks select the learning-rate protocol and the loss; the
//! remaining sections configure individual subcommands. Every field has a
//! desk-scale default, so an empty file is a valid Model 1 configuration.

use std::path::{Path, PathBuf};

use rlr_core::diffusion::{BatchScheme, MomentMode};
use rlr_core::thermo::{same_temperature, GibbsTolerances};
use rlr_core::{HyperParams, Matrix, ProtocolSpec, TemperatureKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::HarnessError;

/// Environment variable overriding the MNIST directory.
pub const MNIST_DIR_ENV: &str = "RLR_MNIST_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolName {
    Constant,
    Random,
    Cyclic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolBlock {
    pub protocol: ProtocolName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<u32>,
}

impl ProtocolBlock {
    pub fn constant() -> Self {
        Self {
            protocol: ProtocolName::Constant,
            delta: None,
            period: None,
        }
    }

    pub fn random(delta: f64) -> Self {
        Self {
            protocol: ProtocolName::Random,
            delta: Some(delta),
            period: None,
        }
    }

    pub fn cyclic(period: u32) -> Self {
        Self {
            protocol: ProtocolName::Cyclic,
            delta: None,
            period: Some(period),
        }
    }

    pub fn resolve(&self, lr: f64) -> Result<ProtocolSpec<f64>, HarnessError> {
        let spec = match self.protocol {
            ProtocolName::Constant => {
                if self.delta.is_some() || self.period.is_some() {
                    return Err(HarnessError::config("constant protocol takes neither delta nor period"));
                }
                ProtocolSpec::constant(lr)
            }
            ProtocolName::Random => {
                if self.period.is_some() {
                    return Err(HarnessError::config("random protocol takes no period"));
                }
                ProtocolSpec::random_uniform(lr, self.delta.unwrap_or(1.0))
            }
            ProtocolName::Cyclic => {
                if self.delta.is_some() {
                    return Err(HarnessError::config("cyclic protocol takes no delta"));
                }
                let period = self
                    .period
                    .ok_or_else(|| HarnessError::config("cyclic protocol needs a period"))?;
                ProtocolSpec::cyclic_cosine(lr, period)
            }
        };
        spec.map_err(HarnessError::from_core_config)
    }
}

impl Default for ProtocolBlock {
    fn default() -> Self {
        Self::random(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ObjectiveConfig {
    /// Model 1 on a stratified MNIST subset.
    Mnist {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data_dir: Option<PathBuf>,
        #[serde(default = "default_train")]
        train: usize,
        #[serde(default = "default_test")]
        test: usize,
        #[serde(default)]
        data_seed: u64,
    },
    /// Binary logistic regression on two Gaussian blobs.
    Logistic {
        #[serde(default = "default_logistic_train")]
        train: usize,
        #[serde(default = "default_logistic_test")]
        test: usize,
        #[serde(default = "default_features")]
        features: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default)]
        data_seed: u64,
    },
    /// `f_i(x) = ½ (x - c_i)ᵀ A (x - c_i)` with `c_i ~ N(0, spread² I)`.
    Quadratic {
        #[serde(default = "default_curvature")]
        curvature: Vec<Vec<f64>>,
        #[serde(default = "default_quadratic_samples")]
        samples: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default)]
        data_seed: u64,
    },
}

fn default_train() -> usize {
    2000
}
fn default_test() -> usize {
    1000
}
fn default_logistic_train() -> usize {
    512
}
fn default_logistic_test() -> usize {
    256
}
fn default_features() -> usize {
    8
}
fn default_separation() -> f64 {
    2.0
}
fn default_curvature() -> Vec<Vec<f64>> {
    vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.5, 0.0], vec![0.0, 0.0, 2.0]]
}
fn default_quadratic_samples() -> usize {
    8
}
fn default_spread() -> f64 {
    1.0
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self::Mnist {
            data_dir: None,
            train: default_train(),
            test: default_test(),
            data_seed: 0,
        }
    }
}

impl ObjectiveConfig {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Mnist { .. } => "mnist",
            Self::Logistic { .. } => "logistic",
            Self::Quadratic { .. } => "quadratic",
        }
    }
}

/// Resolves the MNIST directory: explicit path, then `RLR_MNIST_DIR`, then
/// `data/mnist-sample` under the working directory, then the copy shipped
/// with the source tree.
pub fn resolve_mnist_dir(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(MNIST_DIR_ENV) {
        return PathBuf::from(p);
    }
    let local = PathBuf::from("data/mnist-sample");
    if local.is_dir() {
        return local;
    }
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-sample")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Explicit seeds; when empty, `replicas` consecutive seeds from `seed`.
    pub seeds: Vec<u64>,
    pub replicas: usize,
    pub protocols: Vec<ProtocolBlock>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            seeds: Vec::new(),
            replicas: 5,
            protocols: vec![
                ProtocolBlock::constant(),
                ProtocolBlock::random(1.0),
                ProtocolBlock::cyclic(6),
                ProtocolBlock::cyclic(18),
                ProtocolBlock::cyclic(30),
            ],
        }
    }
}

/// One `(l, C, μ)` tuple of an equal-temperature experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tuple {
    pub lr: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub momentum: f64,
}

impl Tuple {
    pub fn key(&self) -> TemperatureKey<f64> {
        TemperatureKey::new(self.lr, self.batch_size, self.momentum)
    }

    pub fn label(&self) -> String {
        format!("l{}-c{}-mu{}", self.lr, self.batch_size, self.momentum)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EqualTemperatureConfig {
    pub seeds: Vec<u64>,
    pub replicas: usize,
    pub group: Vec<Tuple>,
    pub control: Option<Tuple>,
    pub rel_tol: f64,
}

impl Default for EqualTemperatureConfig {
    fn default() -> Self {
        Self {
            seeds: Vec::new(),
            replicas: 5,
            group: vec![
                Tuple {
                    lr: 2e-4,
                    batch_size: 60,
                    momentum: 0.0,
                },
                Tuple {
                    lr: 1e-4,
                    batch_size: 30,
                    momentum: 0.0,
                },
            ],
            control: Some(Tuple {
                lr: 1e-4,
                batch_size: 60,
                momentum: 0.0,
            }),
            rel_tol: 1e-9,
        }
    }
}

/// Where the noise covariance is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalPoint {
    /// Minimizer of a quadratic ensemble, or the initial point otherwise.
    Optimum,
    Initial,
    At(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub delta: f64,
    /// Mini-batch size; defaults to the top-level `batch_size`.
    pub batch_size: Option<usize>,
    pub scheme: BatchScheme,
    pub moment_mode: MomentMode,
    /// Monte Carlo draws for the comparison table; zero skips it.
    pub draws: usize,
    pub workers: usize,
    pub point: EvalPoint,
    /// Allowed Frobenius relative error of the Monte Carlo estimate.
    pub tolerance: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            delta: 1.0,
            batch_size: None,
            scheme: BatchScheme::SubsetEnumeration,
            moment_mode: MomentMode::Exact,
            draws: 1_000_000,
            workers: 8,
            point: EvalPoint::Initial,
            tolerance: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    ExactOu,
    EulerMaruyama,
}

/// Langevin sampling on a quadratic potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeConfig {
    pub curvature: Vec<Vec<f64>>,
    pub center: Option<Vec<f64>>,
    pub diffusion: f64,
    pub integrator: Integrator,
    /// Time between recorded samples; defaults to `l/(1-μ)` for the exact
    /// kernel and `l/10` for Euler–Maruyama.
    pub dt: Option<f64>,
    pub chains: usize,
    pub samples_per_chain: usize,
    pub bins: usize,
    pub correction: bool,
    pub tolerances: GibbsTolerances,
}

impl Default for SdeConfig {
    fn default() -> Self {
        Self {
            curvature: vec![vec![1.0]],
            center: None,
            diffusion: 1.0,
            integrator: Integrator::ExactOu,
            dt: None,
            chains: 8,
            samples_per_chain: 125_000,
            bins: 41,
            correction: false,
            tolerances: GibbsTolerances::default(),
        }
    }
}

impl SdeConfig {
    pub fn curvature_matrix(&self) -> Result<Matrix<f64>, HarnessError> {
        Matrix::from_rows(&self.curvature).map_err(HarnessError::from_core_config)
    }

    pub fn center_vec(&self) -> Vec<f64> {
        self.center.clone().unwrap_or_else(|| vec![0.0; self.curvature.len()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeakErrorConfig {
    pub rates: Vec<f64>,
    pub horizon: f64,
    pub curvature: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    pub momentum: f64,
    /// Accepted range of the fitted slope.
    pub slope_range: [f64; 2],
}

impl Default for WeakErrorConfig {
    fn default() -> Self {
        Self {
            rates: vec![0.1, 0.05, 0.025, 0.0125],
            horizon: 1.0,
            curvature: vec![vec![1.0, 0.0], vec![0.0, 0.5]],
            x0: vec![1.0, -1.0],
            momentum: 0.0,
            slope_range: [0.8, 1.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub seed: u64,
    pub protocol: ProtocolBlock,
    pub objective: ObjectiveConfig,
    pub sweep: SweepConfig,
    pub equal_temperature: EqualTemperatureConfig,
    pub diffusion: DiffusionConfig,
    pub sde: SdeConfig,
    pub weak_error: WeakErrorConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            lr: 0.005,
            momentum: 0.9,
            nesterov: false,
            weight_decay: 0.0,
            batch_size: 256,
            epochs: 30,
            seed: 0,
            protocol: ProtocolBlock::default(),
            objective: ObjectiveConfig::default(),
            sweep: SweepConfig::default(),
            equal_temperature: EqualTemperatureConfig::default(),
            diffusion: DiffusionConfig::default(),
            sde: SdeConfig::default(),
            weak_error: WeakErrorConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::config(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn hyper(&self) -> Result<HyperParams<f64>, HarnessError> {
        self.hyper_with(&self.protocol, self.lr, self.batch_size, self.momentum)
    }

    pub fn hyper_with(
        &self,
        protocol: &ProtocolBlock,
        lr: f64,
        batch_size: usize,
        momentum: f64,
    ) -> Result<HyperParams<f64>, HarnessError> {
        let spec = protocol.resolve(lr)?;
        Ok(HyperParams::new(spec, momentum, batch_size)
            .map_err(HarnessError::from_core_config)?
            .with_nesterov(self.nesterov)
            .with_weight_decay(self.weight_decay))
    }

    pub fn validate_training(&self) -> Result<(), HarnessError> {
        if self.epochs == 0 {
            return Err(HarnessError::config("epochs must be at least one"));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(HarnessError::config("weight_decay must be non-negative"));
        }
        self.hyper().map(|_| ())
    }

    pub fn sweep_seeds(&self) -> Vec<u64> {
        seeds_or_replicas(&self.sweep.seeds, self.sweep.replicas, self.seed)
    }

    pub fn equal_temperature_seeds(&self) -> Vec<u64> {
        seeds_or_replicas(
            &self.equal_temperature.seeds,
            self.equal_temperature.replicas,
            self.seed,
        )
    }

    /// Rejects groups whose members disagree in temperature and controls that
    /// agree with the group.
    pub fn validate_equal_temperature(&self) -> Result<(), HarnessError> {
        let et = &self.equal_temperature;
        let Some(first) = et.group.first() else {
            return Err(HarnessError::config("equal_temperature.group is empty"));
        };
        for t in &et.group {
            if !same_temperature(&first.key(), &t.key(), et.rel_tol) {
                return Err(HarnessError::config(format!(
                    "group member {} does not share the temperature of {}",
                    t.label(),
                    first.label()
                )));
            }
            self.hyper_with(&self.protocol, t.lr, t.batch_size, t.momentum)?;
        }
        if let Some(c) = &et.control {
            if same_temperature(&first.key(), &c.key(), et.rel_tol) {
                return Err(HarnessError::config(format!(
                    "control {} shares the group temperature",
                    c.label()
                )));
            }
            self.hyper_with(&self.protocol, c.lr, c.batch_size, c.momentum)?;
        }
        Ok(())
    }

    /// Full MNIST (60000/10000) and 180 epochs.
    pub fn full_scale(&mut self) {
        self.epochs = 180;
        if let ObjectiveConfig::Mnist { train, test, .. } = &mut self.objective {
            *train = 60_000;
            *test = 10_000;
        }
    }
}

fn seeds_or_replicas(explicit: &[u64], replicas: usize, base: u64) -> Vec<u64> {
    if explicit.is_empty() {
        (0..replicas as u64).map(|i| base + i).collect()
    } else {
        explicit.to_vec()
    }
}
