//! Multi-run experiments: single training, protocol sweeps and
//! equal-temperature comparisons, with manifests and aggregation.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use rlr_core::HyperParams;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{HarnessError, Result};
use crate::run::{
    build_objective, read_epoch_csv, read_toml, run_training, write_epoch_csv, write_toml, DynObjective, EpochRow,
    RunResult, RunStatus, RunSummary,
};
use crate::stats::{mean, pooled_sd, sample_sd};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const REPORT_FILE: &str = "report.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Train,
    SweepProtocols,
    EqualTemperature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub label: String,
    pub seed: u64,
    pub csv: String,
    pub summary: String,
    pub status: RunStatus,
}

/// Everything needed to regenerate the CSVs of an output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub command: ExperimentKind,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub wall_clock_seconds: f64,
    pub runs: Vec<ManifestRun>,
    pub config: Config,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        read_toml(&dir.join(MANIFEST_FILE))
    }
}

pub fn tool_version() -> String {
    format!("rlr {}", env!("CARGO_PKG_VERSION"))
}

/// One planned run.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub label: String,
    pub seed: u64,
    pub hyper: HyperParams<f64>,
}

/// Executes `plans` on up to `jobs` threads; results come back in plan
/// order regardless of completion order.
pub fn execute(obj: &DynObjective, plans: &[RunPlan], epochs: u64, jobs: usize) -> Result<Vec<RunResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::config(format!("cannot start {jobs} workers: {e}")))?;
    let obj = obj.as_ref();
    pool.install(|| {
        plans
            .par_iter()
            .map(|p| run_training(obj, &p.hyper, epochs, p.seed, &p.label))
            .collect()
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

fn relative_paths(run: &RunResult, single: bool) -> (String, String) {
    if single {
        ("run.csv".into(), "run.summary.toml".into())
    } else {
        let base = format!("runs/{}/seed-{}", run.label, run.seed);
        (format!("{base}.csv"), format!("{base}.summary.toml"))
    }
}

fn write_runs(out: &Path, results: &[RunResult], hash: &str, single: bool) -> Result<Vec<ManifestRun>> {
    let mut entries = Vec::with_capacity(results.len());
    for run in results {
        let (csv, summary) = relative_paths(run, single);
        let csv_path = out.join(&csv);
        if let Some(parent) = csv_path.parent() {
            create_dir(parent)?;
        }
        let rows: Vec<EpochRow> = run.epochs.iter().map(EpochRow::from).collect();
        write_epoch_csv(&csv_path, &rows)?;
        write_toml(&out.join(&summary), &RunSummary::new(run, hash))?;
        entries.push(ManifestRun {
            label: run.label.clone(),
            seed: run.seed,
            csv,
            summary,
            status: run.status,
        });
    }
    Ok(entries)
}

/// Outcome of an experiment command.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: Manifest,
    pub results: Vec<RunResult>,
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

fn all_diverged(results: &[RunResult]) -> bool {
    !results.is_empty() && results.iter().all(|r| r.status == RunStatus::Diverged)
}

fn finish(
    out: &Path,
    kind: ExperimentKind,
    config: &Config,
    plans: &[RunPlan],
    epochs: u64,
    jobs: usize,
) -> Result<Outcome> {
    create_dir(out)?;
    let start = Instant::now();
    let obj = build_objective(&config.objective)?;
    let results = execute(&obj, plans, epochs, jobs)?;
    let hash = config.hash();
    let runs = write_runs(out, &results, &hash, kind == ExperimentKind::Train)?;
    let mut seeds: Vec<u64> = plans.iter().map(|p| p.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let manifest = Manifest {
        tool: tool_version(),
        command: kind,
        config_hash: hash,
        seeds,
        jobs,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        runs,
        config: config.clone(),
    };
    write_toml(&out.join(MANIFEST_FILE), &manifest)?;
    let verdict = match kind {
        ExperimentKind::Train => None,
        _ if all_diverged(&results) => None,
        _ => {
            let agg = aggregate(out)?;
            Some(evaluate(kind, config, &agg, out)?)
        }
    };
    Ok(Outcome {
        manifest,
        results,
        verdict,
    })
}

pub fn run_single(config: &Config, out: &Path, jobs: usize) -> Result<Outcome> {
    config.validate_training()?;
    let plans = vec![RunPlan {
        label: config.protocol.resolve(config.lr)?.label(),
        seed: config.seed,
        hyper: config.hyper()?,
    }];
    finish(out, ExperimentKind::Train, config, &plans, config.epochs, jobs)
}

pub fn sweep_plans(config: &Config) -> Result<Vec<RunPlan>> {
    config.validate_training()?;
    if config.sweep.protocols.is_empty() {
        return Err(HarnessError::config("sweep.protocols is empty"));
    }
    let seeds = config.sweep_seeds();
    if seeds.len() < 2 {
        return Err(HarnessError::config(
            "a sweep needs at least two seeds for its standard deviations",
        ));
    }
    let mut plans = Vec::new();
    let mut labels = Vec::new();
    for block in &config.sweep.protocols {
        let hyper = config.hyper_with(block, config.lr, config.batch_size, config.momentum)?;
        let label = hyper.protocol.label();
        if labels.contains(&label) {
            return Err(HarnessError::config(format!("protocol {label} listed twice")));
        }
        labels.push(label.clone());
        for &seed in &seeds {
            plans.push(RunPlan {
                label: label.clone(),
                seed,
                hyper,
            });
        }
    }
    Ok(plans)
}

pub fn run_sweep(config: &Config, out: &Path, jobs: usize) -> Result<Outcome> {
    let plans = sweep_plans(config)?;
    finish(out, ExperimentKind::SweepProtocols, config, &plans, config.epochs, jobs)
}

pub fn equal_temperature_plans(config: &Config) -> Result<Vec<RunPlan>> {
    config.validate_training()?;
    config.validate_equal_temperature()?;
    let seeds = config.equal_temperature_seeds();
    if seeds.len() < 2 {
        return Err(HarnessError::config(
            "equal_temperature needs at least two seeds for its standard deviations",
        ));
    }
    let et = &config.equal_temperature;
    let mut plans = Vec::new();
    for t in et.group.iter().chain(et.control.iter()) {
        let hyper = config.hyper_with(&config.protocol, t.lr, t.batch_size, t.momentum)?;
        for &seed in &seeds {
            plans.push(RunPlan {
                label: t.label(),
                seed,
                hyper,
            });
        }
    }
    Ok(plans)
}

pub fn run_equal_temperature(config: &Config, out: &Path, jobs: usize) -> Result<Outcome> {
    let plans = equal_temperature_plans(config)?;
    finish(
        out,
        ExperimentKind::EqualTemperature,
        config,
        &plans,
        config.epochs,
        jobs,
    )
}

/// Re-executes the experiment recorded in `manifest_dir` into `out`.
pub fn replay(manifest_dir: &Path, out: &Path, jobs: usize) -> Result<Outcome> {
    let manifest = Manifest::load(manifest_dir)?;
    if manifest.config.hash() != manifest.config_hash {
        return Err(HarnessError::format(
            manifest_dir.join(MANIFEST_FILE),
            "embedded configuration does not match its recorded hash",
        ));
    }
    match manifest.command {
        ExperimentKind::Train => run_single(&manifest.config, out, jobs),
        ExperimentKind::SweepProtocols => run_sweep(&manifest.config, out, jobs),
        ExperimentKind::EqualTemperature => run_equal_temperature(&manifest.config, out, jobs),
    }
}

/// Per-label statistics over completed runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub label: String,
    pub runs: usize,
    pub diverged: usize,
    pub best_test_acc_mean: Option<f64>,
    pub best_test_acc_sd: Option<f64>,
    pub final_test_acc_mean: Option<f64>,
    pub final_test_acc_sd: Option<f64>,
    pub final_train_loss_mean: Option<f64>,
    pub final_train_loss_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub label: String,
    pub epoch: u64,
    pub runs: usize,
    pub lr: f64,
    pub train_loss_mean: f64,
    pub train_loss_sd: f64,
    pub train_acc_mean: Option<f64>,
    pub train_acc_sd: Option<f64>,
    pub test_acc_mean: Option<f64>,
    pub test_acc_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub rows: Vec<AggregateRow>,
    pub curves: Vec<CurveRow>,
}

impl Aggregate {
    pub fn row(&self, label: &str) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn curve(&self, label: &str, epoch: u64) -> Option<&CurveRow> {
        self.curves.iter().find(|r| r.label == label && r.epoch == epoch)
    }
}

fn stats_of(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        (None, None)
    } else {
        (Some(mean(xs)), Some(sample_sd(xs)))
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::format(path, e.to_string()))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| HarnessError::format(path, e.to_string()))
}

/// Recomputes `aggregate.csv` and `curves.csv` of `dir` from the per-run
/// files listed in its manifest. Rows are ordered by label in manifest order;
/// only completed runs contribute statistics.
pub fn aggregate(dir: &Path) -> Result<Aggregate> {
    let manifest = Manifest::load(dir)?;
    let mut labels: Vec<String> = Vec::new();
    for r in &manifest.runs {
        if !labels.contains(&r.label) {
            labels.push(r.label.clone());
        }
    }
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for label in &labels {
        let mut completed: Vec<Vec<EpochRow>> = Vec::new();
        let mut total = 0;
        for r in manifest.runs.iter().filter(|r| &r.label == label) {
            total += 1;
            let summary: RunSummary = read_toml(&dir.join(&r.summary))?;
            if summary.status == RunStatus::Completed {
                completed.push(read_epoch_csv(&dir.join(&r.csv))?);
            }
        }
        let best: Vec<f64> = completed
            .iter()
            .filter_map(|rows| rows.iter().filter_map(|e| e.test_acc).reduce(f64::max))
            .collect();
        let fin: Vec<f64> = completed
            .iter()
            .filter_map(|rows| rows.last().and_then(|e| e.test_acc))
            .collect();
        let loss: Vec<f64> = completed
            .iter()
            .filter_map(|rows| rows.last().map(|e| e.train_loss))
            .collect();
        let (bm, bs) = stats_of(&best);
        let (fm, fs) = stats_of(&fin);
        let (lm, ls) = stats_of(&loss);
        rows.push(AggregateRow {
            label: label.clone(),
            runs: completed.len(),
            diverged: total - completed.len(),
            best_test_acc_mean: bm,
            best_test_acc_sd: bs,
            final_test_acc_mean: fm,
            final_test_acc_sd: fs,
            final_train_loss_mean: lm,
            final_train_loss_sd: ls,
        });
        let epochs = completed.iter().map(Vec::len).min().unwrap_or(0);
        for k in 0..epochs {
            let at: Vec<&EpochRow> = completed.iter().map(|rows| &rows[k]).collect();
            let pick = |f: fn(&EpochRow) -> Option<f64>| -> Vec<f64> { at.iter().filter_map(|r| f(r)).collect() };
            let losses: Vec<f64> = at.iter().map(|r| r.train_loss).collect();
            let (tam, tas) = stats_of(&pick(|r| r.train_acc));
            let (tem, tes) = stats_of(&pick(|r| r.test_acc));
            curves.push(CurveRow {
                label: label.clone(),
                epoch: at[0].epoch,
                runs: at.len(),
                lr: at[0].lr,
                train_loss_mean: mean(&losses),
                train_loss_sd: sample_sd(&losses),
                train_acc_mean: tam,
                train_acc_sd: tas,
                test_acc_mean: tem,
                test_acc_sd: tes,
            });
        }
    }
    write_csv(&dir.join(AGGREGATE_FILE), &rows)?;
    write_csv(&dir.join(CURVES_FILE), &curves)?;
    Ok(Aggregate { rows, curves })
}

/// Band-overlap check of a protocol sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub metric: String,
    pub labels: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub pooled_sd: f64,
    /// Largest difference between label means.
    pub spread: f64,
    /// All `mean ± pooled_sd` bands intersect, i.e. `spread ≤ 2 pooled_sd`.
    pub bands_overlap: bool,
}

pub fn sweep_report(agg: &Aggregate) -> Result<SweepReport> {
    let mut labels = Vec::new();
    let mut means = Vec::new();
    let mut sds = Vec::new();
    for r in &agg.rows {
        if let (Some(m), Some(s)) = (r.best_test_acc_mean, r.best_test_acc_sd) {
            labels.push(r.label.clone());
            means.push(m);
            sds.push(s);
        }
    }
    if labels.is_empty() {
        return Err(HarnessError::Verification(
            "no completed run reports a test accuracy".into(),
        ));
    }
    let pooled = pooled_sd(&sds);
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SweepReport {
        metric: "best_test_acc".into(),
        labels,
        means,
        sds,
        pooled_sd: pooled,
        spread: hi - lo,
        bands_overlap: hi - lo <= 2.0 * pooled,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub a: String,
    pub b: String,
    pub metric: String,
    pub epoch: u64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub pooled_sd: f64,
    pub pass: bool,
}

/// Two-sample criterion of an equal-temperature experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualTemperatureReport {
    /// Group pairs: final test accuracy means within one pooled sd.
    pub group: Vec<PairCheck>,
    /// Control against each group member: mean training loss at the final
    /// epoch differs by more than one pooled sd.
    pub control: Vec<PairCheck>,
    /// Fraction of epochs at which the control separates from every member.
    pub control_separated_epochs: f64,
    pub pass: bool,
}

fn pair(
    a: &CurveRow,
    b: &CurveRow,
    metric: &str,
    values: fn(&CurveRow) -> Option<(f64, f64)>,
    within: bool,
) -> Option<PairCheck> {
    let (ma, sa) = values(a)?;
    let (mb, sb) = values(b)?;
    let pooled = pooled_sd(&[sa, sb]);
    let diff = (ma - mb).abs();
    Some(PairCheck {
        a: a.label.clone(),
        b: b.label.clone(),
        metric: metric.into(),
        epoch: a.epoch,
        mean_a: ma,
        mean_b: mb,
        pooled_sd: pooled,
        pass: if within { diff <= pooled } else { diff > pooled },
    })
}

fn test_acc(r: &CurveRow) -> Option<(f64, f64)> {
    Some((r.test_acc_mean?, r.test_acc_sd?))
}

fn train_loss(r: &CurveRow) -> Option<(f64, f64)> {
    Some((r.train_loss_mean, r.train_loss_sd))
}

pub fn equal_temperature_report(config: &Config, agg: &Aggregate) -> Result<EqualTemperatureReport> {
    let et = &config.equal_temperature;
    let epoch = config.epochs;
    let missing =
        |label: &str| HarnessError::Verification(format!("{label} has no completed runs through epoch {epoch}"));
    let curve = |label: &str, e: u64| agg.curve(label, e).ok_or_else(|| missing(label));
    let mut group = Vec::new();
    for (i, a) in et.group.iter().enumerate() {
        for b in &et.group[i + 1..] {
            let (ca, cb) = (curve(&a.label(), epoch)?, curve(&b.label(), epoch)?);
            group.push(pair(ca, cb, "final_test_acc", test_acc, true).ok_or_else(|| missing(&a.label()))?);
        }
    }
    let mut control = Vec::new();
    let mut separated = 0usize;
    if let Some(c) = &et.control {
        for a in &et.group {
            let (cc, ca) = (curve(&c.label(), epoch)?, curve(&a.label(), epoch)?);
            control.push(pair(cc, ca, "train_loss", train_loss, false).ok_or_else(|| missing(&c.label()))?);
        }
        for e in 1..=epoch {
            let all = et
                .group
                .iter()
                .all(|a| match (agg.curve(&c.label(), e), agg.curve(&a.label(), e)) {
                    (Some(cc), Some(ca)) => pair(cc, ca, "train_loss", train_loss, false).is_some_and(|p| p.pass),
                    _ => false,
                });
            separated += usize::from(all);
        }
    }
    let pass = group.iter().chain(&control).all(|p| p.pass);
    Ok(EqualTemperatureReport {
        group,
        control,
        control_separated_epochs: if et.control.is_some() {
            separated as f64 / epoch as f64
        } else {
            0.0
        },
        pass,
    })
}

fn evaluate(kind: ExperimentKind, config: &Config, agg: &Aggregate, out: &Path) -> Result<Verdict> {
    let path = out.join(REPORT_FILE);
    match kind {
        ExperimentKind::SweepProtocols => {
            let report = sweep_report(agg)?;
            write_toml(&path, &report)?;
            Ok(Verdict {
                pass: report.bands_overlap,
                detail: format!(
                    "best test accuracy spread {:.5} vs 2 x pooled sd {:.5}",
                    report.spread,
                    2.0 * report.pooled_sd
                ),
            })
        }
        ExperimentKind::EqualTemperature => {
            let report = equal_temperature_report(config, agg)?;
            write_toml(&path, &report)?;
            let detail = report
                .group
                .iter()
                .chain(&report.control)
                .map(|p| {
                    format!(
                        "{} {} vs {}: {:.5} vs {:.5} (pooled sd {:.5}) {}",
                        p.metric,
                        p.a,
                        p.b,
                        p.mean_a,
                        p.mean_b,
                        p.pooled_sd,
                        if p.pass { "ok" } else { "FAIL" }
                    )
                })
                .collect::<Vec<_>>()
                .join("; ");
            Ok(Verdict {
                pass: report.pass,
                detail,
            })
        }
        ExperimentKind::Train => unreachable!("single runs carry no verdict"),
    }
}

/// Maps an experiment outcome to the command result: all runs diverged, then
/// a failed verdict, in that order.
pub fn check_outcome(outcome: &Outcome) -> Result<()> {
    if all_diverged(&outcome.results) {
        return Err(HarnessError::AllDiverged {
            runs: outcome.results.len(),
        });
    }
    match &outcome.verdict {
        Some(v) if !v.pass => Err(HarnessError::Verification(v.detail.clone())),
        _ => Ok(()),
    }
}

pub fn output_paths(dir: &Path, manifest: &Manifest) -> Vec<PathBuf> {
    manifest.runs.iter().map(|r| dir.join(&r.csv)).collect()
}
