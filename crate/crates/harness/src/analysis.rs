//! Analysis commands: gradient-noise covariance, stationary Langevin
//! sampling, Gibbs verification, weak error and temperature.

use std::path::Path;

use rlr_core::diffusion::{analytic_covariance, diagonal_diffusion, empirical_covariance, MAX_FULL_DIM};
use rlr_core::linalg::relative_frobenius_error;
use rlr_core::sde::{sample_em, sample_exact_ou, weak_error_probe};
use rlr_core::thermo::{compare_to_gibbs, effective_temperature, GibbsComparison};
use rlr_core::{
    GibbsDensity, Matrix, Objective, OuKernel, PhaseSamples, Quadratic, QuadraticEnsemble, SdeParams, SdeState,
};
use serde::{Deserialize, Serialize};

use crate::config::{Config, EvalPoint, Integrator, ObjectiveConfig};
use crate::error::{HarnessError, Result};
use crate::run::{build_objective, build_quadratic, seeded_stream, write_toml, DynObjective};

pub const DIFFUSION_FILE: &str = "diffusion.toml";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const MOMENTS_FILE: &str = "moments.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const STATIONARY_FILE: &str = "stationary.toml";
pub const GIBBS_FILE: &str = "gibbs.toml";
pub const WEAK_ERROR_FILE: &str = "weak_error.csv";

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn core_config(e: rlr_core::Error) -> HarnessError {
    HarnessError::from_core_config(e)
}

fn eval_point(config: &Config, obj: &dyn Objective<f64>, optimum: Option<Vec<f64>>) -> Result<Vec<f64>> {
    let x = match &config.diffusion.point {
        EvalPoint::At(x) => x.clone(),
        EvalPoint::Optimum if optimum.is_some() => optimum.unwrap_or_default(),
        EvalPoint::Optimum | EvalPoint::Initial => obj.initial_point(&mut seeded_stream(config.seed, 0)),
    };
    if x.len() != obj.dim() {
        return Err(HarnessError::config(format!(
            "diffusion.point has {} coordinates, the objective has {}",
            x.len(),
            obj.dim()
        )));
    }
    Ok(x)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffusionSummary {
    pub objective: String,
    pub dim: usize,
    pub samples: usize,
    pub batch_size: usize,
    pub delta: f64,
    /// `"full"` or `"diagonal"`.
    pub form: String,
    pub d_scalar: f64,
    pub gradient_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_residual: Option<f64>,
    /// `‖d_Δ‖_F / ‖Σ‖_F`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offdiag_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_relative_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_mean_norm: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CovarianceEntry {
    i: usize,
    j: usize,
    sigma: f64,
    dhat: f64,
    d_offdiag: f64,
    empirical: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DiagonalEntry {
    i: usize,
    dhat: f64,
}

/// Residual allowed on the identity `Σ = D̂/C + d_Δ`.
pub const SPLIT_TOLERANCE: f64 = 1e-12;

pub fn estimate_diffusion(config: &Config, out: &Path) -> Result<DiffusionSummary> {
    create_dir(out)?;
    let dc = &config.diffusion;
    let batch = dc.batch_size.unwrap_or(config.batch_size);
    let (obj, optimum): (DynObjective, Option<Vec<f64>>) = match &config.objective {
        ObjectiveConfig::Quadratic {
            curvature,
            samples,
            spread,
            data_seed,
        } => {
            let q = build_quadratic(curvature, *samples, *spread, *data_seed)?;
            let m = q.minimizer();
            (Box::new(q), Some(m))
        }
        other => (build_objective(other)?, None),
    };
    let x = eval_point(config, obj.as_ref(), optimum)?;
    let mut summary = DiffusionSummary {
        objective: config.objective.label().into(),
        dim: obj.dim(),
        samples: obj.sample_count(),
        batch_size: batch,
        delta: dc.delta,
        form: "full".into(),
        d_scalar: f64::NAN,
        gradient_norm: f64::NAN,
        split_residual: None,
        offdiag_ratio: None,
        draws: None,
        mc_relative_error: None,
        mc_mean_norm: None,
        tolerance: dc.tolerance,
        pass: true,
        config_hash: config.hash(),
    };

    if obj.dim() > MAX_FULL_DIM {
        let diag = diagonal_diffusion(obj.as_ref(), &x, dc.delta, dc.moment_mode).map_err(core_config)?;
        summary.form = "diagonal".into();
        summary.d_scalar = diag.d_scalar;
        summary.gradient_norm = diag.gradient_norm;
        let rows: Vec<DiagonalEntry> = diag
            .dhat_diag
            .iter()
            .enumerate()
            .map(|(i, &d)| DiagonalEntry { i, dhat: d })
            .collect();
        write_csv(&out.join(COMPARISON_FILE), &rows)?;
        write_toml(&out.join(DIFFUSION_FILE), &summary)?;
        return Ok(summary);
    }

    let report =
        analytic_covariance(obj.as_ref(), &x, dc.delta, batch, dc.scheme, dc.moment_mode).map_err(core_config)?;
    let mut g = vec![0.0; obj.dim()];
    obj.full_grad(&x, &mut g);
    summary.gradient_norm = rlr_core::linalg::norm(&g);
    summary.d_scalar = report.isotropic_scalar();
    let split = report.split_residual();
    summary.split_residual = Some(split);
    let sigma_norm = report.sigma.frobenius_norm();
    summary.offdiag_ratio = Some(if sigma_norm > 0.0 {
        report.d_offdiag.frobenius_norm() / sigma_norm
    } else {
        0.0
    });
    summary.pass = split <= SPLIT_TOLERANCE;

    let empirical = if dc.draws > 0 {
        let emp = empirical_covariance(
            obj.as_ref(),
            &x,
            dc.delta,
            batch,
            dc.scheme,
            dc.draws,
            config.seed,
            dc.workers,
        )
        .map_err(core_config)?;
        let err = relative_frobenius_error(&emp.covariance, &report.sigma);
        summary.draws = Some(dc.draws);
        summary.mc_relative_error = Some(err);
        summary.mc_mean_norm = Some(rlr_core::linalg::norm(&emp.mean));
        summary.pass &= err <= dc.tolerance;
        Some(emp.covariance)
    } else {
        None
    };

    let n = obj.dim();
    let mut rows = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            rows.push(CovarianceEntry {
                i,
                j,
                sigma: report.sigma[(i, j)],
                dhat: report.dhat[(i, j)],
                d_offdiag: report.d_offdiag[(i, j)],
                empirical: empirical.as_ref().map(|m| m[(i, j)]),
            });
        }
    }
    write_csv(&out.join(COMPARISON_FILE), &rows)?;
    write_toml(&out.join(DIFFUSION_FILE), &summary)?;
    Ok(summary)
}

/// Langevin parameters of the configured run on the `[sde]` potential.
pub struct StationarySetup {
    pub params: SdeParams<f64>,
    /// Potential the chain actually samples: the configured quadratic, or
    /// its corrected form `A + (l/2) A²` when the correction is on.
    pub potential: Quadratic<f64>,
}

pub fn stationary_setup(config: &Config) -> Result<StationarySetup> {
    let sc = &config.sde;
    let a = sc.curvature_matrix()?;
    let base = Quadratic::new(a.clone(), sc.center_vec()).map_err(core_config)?;
    let mut params =
        SdeParams::new(config.lr, config.momentum, sc.diffusion, config.batch_size).map_err(core_config)?;
    let dt = sc
        .dt
        .unwrap_or_else(|| default_dt(sc.integrator, config.lr, config.momentum));
    params = params.with_dt(dt).with_correction(sc.correction);
    let potential = if sc.correction {
        let corrected = a.add(&a.matmul(&a).scale(0.5 * config.lr));
        Quadratic::new(corrected, base.center.clone()).map_err(core_config)?
    } else {
        base
    };
    Ok(StationarySetup { params, potential })
}

/// Sampling interval: one friction time `l/(1-μ)` for the exact kernel,
/// which has no step-size bias, and `l/10` for Euler–Maruyama.
pub fn default_dt(integrator: Integrator, lr: f64, momentum: f64) -> f64 {
    match integrator {
        Integrator::ExactOu => lr / (1.0 - momentum),
        Integrator::EulerMaruyama => lr / 10.0,
    }
}

pub fn sample_stationary_chains(config: &Config, setup: &StationarySetup) -> Result<PhaseSamples<f64>> {
    let sc = &config.sde;
    if sc.chains == 0 || sc.samples_per_chain == 0 {
        return Err(HarnessError::config(
            "sde.chains and sde.samples_per_chain must be positive",
        ));
    }
    match sc.integrator {
        Integrator::ExactOu => {
            let kernel = OuKernel::new(&setup.potential, &setup.params).map_err(core_config)?;
            sample_exact_ou(&kernel, sc.chains, sc.samples_per_chain, config.seed).map_err(core_config)
        }
        Integrator::EulerMaruyama => {
            setup.params.validate_em().map_err(core_config)?;
            // single-sample ensemble: f = ½ (x - c)ᵀ A (x - c); the corrected
            // drift comes from the integrator itself
            let a = sc.curvature_matrix()?;
            let obj = QuadraticEnsemble::new(a, vec![sc.center_vec()]).map_err(core_config)?;
            let mut all = PhaseSamples::new(obj.dim());
            for c in 0..sc.chains {
                let mut rng = seeded_stream(config.seed, c as u64);
                let start = SdeState::at_rest(sc.center_vec());
                all.extend(sample_em(
                    &obj,
                    &setup.params,
                    start,
                    sc.samples_per_chain,
                    1,
                    &mut rng,
                )?);
            }
            Ok(all)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HistogramRow {
    variable: String,
    index: usize,
    lo: f64,
    hi: f64,
    count: usize,
    density: f64,
    analytic: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MomentRow {
    variable: String,
    index: usize,
    mean_empirical: f64,
    mean_analytic: f64,
    var_empirical: f64,
    var_analytic: f64,
    var_ratio: f64,
    ks_distance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationarySummary {
    pub integrator: Integrator,
    pub temperature: f64,
    pub friction: f64,
    pub dt: f64,
    pub chains: usize,
    pub samples: usize,
    pub correction: bool,
    pub config_hash: String,
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

fn histogram(variable: &str, index: usize, data: &[f64], mean: f64, var: f64, bins: usize) -> Vec<HistogramRow> {
    let sd = var.sqrt();
    let (lo, hi) = (mean - 4.0 * sd, mean + 4.0 * sd);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in data {
        let k = ((x - lo) / width).floor();
        if k >= 0.0 && (k as usize) < bins {
            counts[k as usize] += 1;
        }
    }
    let m = data.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(k, &count)| {
            let a = lo + k as f64 * width;
            HistogramRow {
                variable: variable.into(),
                index,
                lo: a,
                hi: a + width,
                count,
                density: count as f64 / (m * width),
                analytic: normal_pdf(a + 0.5 * width, mean, var),
            }
        })
        .collect()
}

fn moment_rows(cmp: &GibbsComparison) -> Vec<MomentRow> {
    cmp.marginals
        .iter()
        .map(|m| MomentRow {
            variable: m.variable.clone(),
            index: m.index,
            mean_empirical: m.mean_empirical,
            mean_analytic: m.mean_analytic,
            var_empirical: m.var_empirical,
            var_analytic: m.var_analytic,
            var_ratio: m.var_ratio,
            ks_distance: m.ks_distance,
        })
        .collect()
}

fn write_histograms(path: &Path, samples: &PhaseSamples<f64>, cmp: &GibbsComparison, bins: usize) -> Result<()> {
    let mut rows = Vec::new();
    for m in &cmp.marginals {
        let data: Vec<f64> = if m.variable == "x" {
            samples.x_component(m.index).collect()
        } else {
            samples.v_component(m.index).collect()
        };
        rows.extend(histogram(
            &m.variable,
            m.index,
            &data,
            m.mean_analytic,
            m.var_analytic,
            bins.max(1),
        ));
    }
    write_csv(path, &rows)
}

/// Draws stationary samples and writes their moments and histograms next to
/// the analytic Gibbs marginals.
pub fn sample_stationary(config: &Config, out: &Path) -> Result<(StationarySummary, GibbsComparison)> {
    create_dir(out)?;
    let setup = stationary_setup(config)?;
    let samples = sample_stationary_chains(config, &setup)?;
    let gibbs = GibbsDensity::from_params(setup.potential.clone(), &setup.params).map_err(core_config)?;
    let cmp = compare_to_gibbs(&samples, &gibbs, &config.sde.tolerances).map_err(core_config)?;
    write_csv(&out.join(MOMENTS_FILE), &moment_rows(&cmp))?;
    write_histograms(&out.join(HISTOGRAM_FILE), &samples, &cmp, config.sde.bins)?;
    let summary = StationarySummary {
        integrator: config.sde.integrator,
        temperature: setup.params.temperature(),
        friction: setup.params.friction(),
        dt: setup.params.dt,
        chains: config.sde.chains,
        samples: samples.len(),
        correction: config.sde.correction,
        config_hash: config.hash(),
    };
    write_toml(&out.join(STATIONARY_FILE), &summary)?;
    Ok((summary, cmp))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GibbsVerdict {
    pub temperature: f64,
    pub samples: usize,
    pub pass: bool,
    /// Comparison against the Gibbs law at half the temperature, which must fail.
    pub control_rejected: bool,
    pub matched: GibbsComparison,
    pub control: GibbsComparison,
}

pub fn verify_gibbs(config: &Config, out: &Path) -> Result<GibbsVerdict> {
    create_dir(out)?;
    let setup = stationary_setup(config)?;
    let samples = sample_stationary_chains(config, &setup)?;
    let gibbs = GibbsDensity::from_params(setup.potential.clone(), &setup.params).map_err(core_config)?;
    let tol = &config.sde.tolerances;
    let matched = compare_to_gibbs(&samples, &gibbs, tol).map_err(core_config)?;
    let halved = gibbs.with_temperature(gibbs.temperature / 2.0);
    let control = compare_to_gibbs(&samples, &halved, tol).map_err(core_config)?;
    write_csv(&out.join(MOMENTS_FILE), &moment_rows(&matched))?;
    write_histograms(&out.join(HISTOGRAM_FILE), &samples, &matched, config.sde.bins)?;
    let verdict = GibbsVerdict {
        temperature: gibbs.temperature,
        samples: samples.len(),
        pass: matched.pass && !control.pass,
        control_rejected: !control.pass,
        matched,
        control,
    };
    write_toml(&out.join(GIBBS_FILE), &verdict)?;
    Ok(verdict)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WeakErrorRow {
    lr: f64,
    steps: usize,
    error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakErrorSummary {
    pub slope: f64,
    pub slope_range: [f64; 2],
    pub pass: bool,
}

pub fn weak_error(config: &Config, out: &Path) -> Result<WeakErrorSummary> {
    create_dir(out)?;
    let wc = &config.weak_error;
    let a = Matrix::from_rows(&wc.curvature).map_err(core_config)?;
    let pot = Quadratic::new(a, vec![0.0; wc.curvature.len()]).map_err(core_config)?;
    if wc.x0.len() != pot.dim() {
        return Err(HarnessError::config(
            "weak_error.x0 does not match the curvature dimension",
        ));
    }
    let report = weak_error_probe(&pot, wc.momentum, &wc.rates, wc.horizon, &wc.x0).map_err(core_config)?;
    let rows: Vec<WeakErrorRow> = report
        .points
        .iter()
        .map(|&(l, e)| WeakErrorRow {
            lr: l,
            steps: (wc.horizon / l).round().max(1.0) as usize,
            error: e,
        })
        .collect();
    write_csv(&out.join(WEAK_ERROR_FILE), &rows)?;
    let [lo, hi] = wc.slope_range;
    Ok(WeakErrorSummary {
        slope: report.slope,
        slope_range: wc.slope_range,
        pass: report.slope >= lo && report.slope <= hi,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemperatureSummary {
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub diffusion: f64,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// `l / (C (1 - μ))`, the part of `T` that excludes `D`.
    pub ratio: f64,
}

pub fn temperature(lr: f64, batch_size: usize, momentum: f64, diffusion: f64) -> Result<TemperatureSummary> {
    let t = effective_temperature(lr, diffusion, batch_size, momentum).map_err(core_config)?;
    Ok(TemperatureSummary {
        lr,
        batch_size,
        momentum,
        diffusion,
        temperature: t.temperature,
        beta: t.beta,
        ratio: lr / (batch_size as f64 * (1.0 - momentum)),
    })
}
