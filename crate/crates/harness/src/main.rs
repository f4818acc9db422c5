use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rlr_harness::analysis;
use rlr_harness::config::{Config, ProtocolBlock, ProtocolName};
use rlr_harness::error::{HarnessError, Result, EXIT_OK};
use rlr_harness::experiment::{self, check_outcome, Outcome};

#[derive(Parser, Debug)]
#[command(
    name = "rlr",
    version,
    about = "SGD with a random learning rate: training, sweeps and Langevin diagnostics"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration; omitted keys take their desk-scale defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: out/<command>].
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads [default: available cores].
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct Scale {
    /// Full MNIST (60000/10000) and 180 epochs.
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    epochs: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One training run with the configured protocol.
    Train {
        #[command(flatten)]
        scale: Scale,
        #[arg(long, value_parser = ["constant", "random", "cyclic"])]
        protocol: Option<String>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        period: Option<u32>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        momentum: Option<f64>,
    },
    /// Every configured protocol over every seed, with band-overlap check.
    SweepProtocols {
        #[command(flatten)]
        scale: Scale,
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Equal-temperature group against its control.
    EqualTemperature {
        #[command(flatten)]
        scale: Scale,
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Analytic gradient-noise covariance, checked against Monte Carlo.
    EstimateDiffusion {
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Stationary Langevin samples on the configured quadratic.
    SampleStationary,
    /// Stationary samples against the Gibbs law, with a halved-temperature control.
    VerifyGibbs,
    /// Weak error of SGD against the Langevin mean, and its order.
    WeakError,
    /// Effective temperature of `(l, C, μ, D)`.
    Temperature {
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        momentum: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        diffusion: f64,
    },
    /// Re-runs the experiment recorded in a manifest.
    Replay {
        /// Directory holding `manifest.toml`.
        manifest_dir: PathBuf,
    },
    /// Recomputes the aggregate CSVs of an experiment directory.
    Aggregate { dir: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Train { .. } => "train",
            Self::SweepProtocols { .. } => "sweep-protocols",
            Self::EqualTemperature { .. } => "equal-temperature",
            Self::EstimateDiffusion { .. } => "estimate-diffusion",
            Self::SampleStationary => "sample-stationary",
            Self::VerifyGibbs => "verify-gibbs",
            Self::WeakError => "weak-error",
            Self::Temperature { .. } => "temperature",
            Self::Replay { .. } => "replay",
            Self::Aggregate { .. } => "aggregate",
        }
    }
}

fn load_config(common: &Common) -> Result<Config> {
    let mut config = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn apply_scale(config: &mut Config, scale: &Scale) {
    if scale.full_scale {
        config.full_scale();
    }
    if let Some(e) = scale.epochs {
        config.epochs = e;
    }
}

fn report(outcome: &Outcome, out: &Path) -> Result<()> {
    let m = &outcome.manifest;
    println!(
        "{} runs written to {} in {:.1}s (config {})",
        m.runs.len(),
        out.display(),
        m.wall_clock_seconds,
        &m.config_hash[..12]
    );
    for r in &outcome.results {
        let last = r.epochs.last();
        println!(
            "  {} seed {}: {:?}, final loss {}, test acc {}",
            r.label,
            r.seed,
            r.status,
            last.map_or("-".into(), |e| format!("{:.5}", e.train_loss)),
            last.and_then(|e| e.test_acc).map_or("-".into(), |a| format!("{a:.4}")),
        );
    }
    if let Some(v) = &outcome.verdict {
        println!("{}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    check_outcome(outcome)
}

fn verification(pass: bool, detail: String) -> Result<()> {
    println!("{}: {detail}", if pass { "PASS" } else { "FAIL" });
    if pass {
        Ok(())
    } else {
        Err(HarnessError::Verification(detail))
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli.common)?;
    let jobs = cli
        .common
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let out = cli
        .common
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(cli.command.name()));
    match cli.command {
        Command::Train {
            scale,
            protocol,
            delta,
            period,
            lr,
            batch_size,
            momentum,
        } => {
            apply_scale(&mut config, &scale);
            if let Some(p) = protocol {
                config.protocol = match p.as_str() {
                    "constant" => ProtocolBlock::constant(),
                    "cyclic" => ProtocolBlock {
                        protocol: ProtocolName::Cyclic,
                        delta: None,
                        period: None,
                    },
                    _ => ProtocolBlock::random(1.0),
                };
            }
            if delta.is_some() {
                config.protocol.delta = delta;
            }
            if period.is_some() {
                config.protocol.period = period;
            }
            config.lr = lr.unwrap_or(config.lr);
            config.batch_size = batch_size.unwrap_or(config.batch_size);
            config.momentum = momentum.unwrap_or(config.momentum);
            report(&experiment::run_single(&config, &out, jobs)?, &out)
        }
        Command::SweepProtocols { scale, replicas } => {
            apply_scale(&mut config, &scale);
            config.sweep.replicas = replicas.unwrap_or(config.sweep.replicas);
            report(&experiment::run_sweep(&config, &out, jobs)?, &out)
        }
        Command::EqualTemperature { scale, replicas } => {
            apply_scale(&mut config, &scale);
            config.equal_temperature.replicas = replicas.unwrap_or(config.equal_temperature.replicas);
            report(&experiment::run_equal_temperature(&config, &out, jobs)?, &out)
        }
        Command::Replay { manifest_dir } => report(&experiment::replay(&manifest_dir, &out, jobs)?, &out),
        Command::Aggregate { dir } => {
            let agg = experiment::aggregate(&dir)?;
            for r in &agg.rows {
                println!(
                    "{}: {} runs, {} diverged, best test acc {}",
                    r.label,
                    r.runs,
                    r.diverged,
                    match (r.best_test_acc_mean, r.best_test_acc_sd) {
                        (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
                        _ => "-".into(),
                    }
                );
            }
            Ok(())
        }
        Command::EstimateDiffusion { draws } => {
            config.diffusion.draws = draws.unwrap_or(config.diffusion.draws);
            let s = analysis::estimate_diffusion(&config, &out)?;
            println!(
                "{} form on {} (n = {}, N = {}, C = {})",
                s.form, s.objective, s.dim, s.samples, s.batch_size
            );
            println!("D = {:.6e}, |grad f| = {:.6e}", s.d_scalar, s.gradient_norm);
            if let (Some(split), Some(ratio)) = (s.split_residual, s.offdiag_ratio) {
                println!("split residual {split:.3e}, |d|/|Sigma| = {ratio:.4}");
            }
            let detail = match s.mc_relative_error {
                Some(e) => format!(
                    "Monte Carlo relative error {e:.4} (tolerance {}) over {} draws",
                    s.tolerance,
                    s.draws.unwrap_or(0)
                ),
                None => "no Monte Carlo comparison".into(),
            };
            verification(s.pass, detail)
        }
        Command::SampleStationary => {
            let (s, cmp) = analysis::sample_stationary(&config, &out)?;
            println!(
                "T = {:.6e}, gamma = {}, dt = {}, {} samples",
                s.temperature, s.friction, s.dt, s.samples
            );
            for m in &cmp.marginals {
                println!(
                    "  {}[{}]: var {:.6e} vs {:.6e} (ratio {:.4}), KS {:.4}",
                    m.variable, m.index, m.var_empirical, m.var_analytic, m.var_ratio, m.ks_distance
                );
            }
            Ok(())
        }
        Command::VerifyGibbs => {
            let v = analysis::verify_gibbs(&config, &out)?;
            let worst = v
                .matched
                .marginals
                .iter()
                .map(|m| (m.var_ratio - 1.0).abs())
                .fold(0.0, f64::max);
            verification(
                v.pass,
                format!(
                    "T = {:.6e}, {} samples: worst variance deviation {:.4}, matched {}, halved-T control {}",
                    v.temperature,
                    v.samples,
                    worst,
                    if v.matched.pass { "accepted" } else { "rejected" },
                    if v.control_rejected { "rejected" } else { "accepted" },
                ),
            )
        }
        Command::WeakError => {
            let s = analysis::weak_error(&config, &out)?;
            verification(
                s.pass,
                format!(
                    "slope {:.4}, accepted range [{}, {}]",
                    s.slope, s.slope_range[0], s.slope_range[1]
                ),
            )
        }
        Command::Temperature {
            lr,
            batch_size,
            momentum,
            diffusion,
        } => {
            let t = analysis::temperature(
                lr.unwrap_or(config.lr),
                batch_size.unwrap_or(config.batch_size),
                momentum.unwrap_or(config.momentum),
                diffusion,
            )?;
            print!(
                "{}",
                toml::to_string(&t).map_err(|e| HarnessError::config(e.to_string()))?
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("rlr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
