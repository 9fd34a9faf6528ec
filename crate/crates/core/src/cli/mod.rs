//! The `fbl` command-line front end: config-driven training, tracking
//! evaluation, convexity certification and plotting.

pub mod config;
pub mod io;
pub mod plot;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use crate::fbl::{exact_linearizing_control, reference_model};
use crate::numerics::Rng;
use crate::objective::{
    certify_strong_convexity, closed_form_optimum, loss_on_samples, quadratic_form_on_samples, SampleSet,
};
use crate::policy::ControllerParams;
use crate::rl::{final_mean_reward, train, TrainHooks};
use crate::tracking::{initial_state, reference, track, tracking_gain, TrackingReport, TrajectoryKind};
use config::{ExperimentConfig, TrackingSection, STREAM_EVAL, STREAM_GRAM, STREAM_INIT};
use io::{Checkpoint, CurveWriter, CHECKPOINT_VERSION};
use plot::PlotKind;

pub const WORKERS_ENV: &str = "FBL_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "fbl", version, about = "Learn feedback linearizing controllers with policy gradients")]
pub struct Cli {
    /// Worker threads (overridden by FBL_WORKERS). Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the learned correction with REINFORCE or PPO.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Start from the parameters in this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Record real wall-clock time in the learning curve. Off by default
        /// so that repeated runs produce identical files.
        #[arg(long)]
        wall_time: bool,
    },
    /// Track a reference with the exact, nominal and learned controllers.
    EvalTracking {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config whose `[tracking]` section (and system) to use instead of
        /// the one stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trajectory family with default parameters: sinusoid,
        /// figure-eight, corkscrew or square-wave.
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the quadratic form of a linear-in-parameters config and certify
    /// strong convexity.
    VerifyConvexity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render CSV outputs as SVG.
    Plot {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        /// CSV files; tracking inputs may be given as `label=path`.
        #[arg(required = true)]
        inputs: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Curve,
    Tracking,
    Path,
}

impl From<Kind> for PlotKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Curve => PlotKind::Curve,
            Kind::Tracking => PlotKind::Tracking,
            Kind::Path => PlotKind::Path,
        }
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    configure_workers(cli.workers)?;
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            checkpoint,
            wall_time,
        } => cmd_train(&config, seed, out.as_deref(), checkpoint.as_deref(), wall_time),
        Command::EvalTracking {
            checkpoint,
            config,
            task,
            out,
        } => cmd_eval_tracking(&checkpoint, config.as_deref(), task.as_deref(), out.as_deref()),
        Command::VerifyConvexity { config, seed, out } => cmd_verify_convexity(&config, seed, out.as_deref()),
        Command::Plot { kind, out, inputs } => cmd_plot(kind.into(), &inputs, &out),
    }
}

fn configure_workers(flag: Option<usize>) -> anyhow::Result<()> {
    let env = match std::env::var(WORKERS_ENV) {
        Ok(v) => Some(v.parse::<usize>().with_context(|| format!("{WORKERS_ENV}={v} is not a count"))?),
        Err(_) => None,
    };
    if let Some(n) = env.or(flag) {
        if n == 0 {
            bail!("worker count must be positive");
        }
        // Fails only if a pool already exists, as in repeated in-process runs.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn output_dir(flag: Option<&Path>, config: &ExperimentConfig, fallback: &str) -> anyhow::Result<PathBuf> {
    let dir = flag
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(config.name.as_deref().unwrap_or(fallback)));
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

pub fn cmd_train(
    config_path: &Path,
    seed: Option<u64>,
    out: Option<&Path>,
    init: Option<&Path>,
    wall_time: bool,
) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(config_path).with_context(|| format!("cannot read config {}", config_path.display()))?;
    let config = ExperimentConfig::parse(&text).with_context(|| format!("invalid config {}", config_path.display()))?;
    let seed = config.resolve_seed(seed, &text);
    println!("seed {seed}");
    let exp = config.experiment(seed)?;
    let env = exp.env()?;
    let train_config = config.train_config(seed)?;
    let dir = output_dir(out, &config, "train")?;

    let mut resolved = config.clone();
    resolved.seed = Some(seed);
    std::fs::write(dir.join("resolved_config.cfg"), resolved.to_text()?)?;

    let param = exp.controller.param.clone();
    let initial = match init {
        Some(path) => {
            let c = Checkpoint::load(path)?;
            if c.parameterization != param {
                bail!("checkpoint {} was trained with a different parameterization", path.display());
            }
            c.theta
        }
        None => param.initial_params(&mut Rng::new(seed).derive(STREAM_INIT)),
    };
    let checkpoint = |epoch: Option<usize>, theta: &ControllerParams| Checkpoint {
        version: CHECKPOINT_VERSION,
        epoch,
        seed,
        config: resolved.clone(),
        parameterization: param.clone(),
        theta: theta.clone(),
    };

    let every = config.train.as_ref().and_then(|t| t.checkpoint_every).unwrap_or(0);
    let mut curve = CurveWriter::create(&dir.join("learning_curve.csv"))?;
    let mut last = (None, initial.clone());
    let hooks = TrainHooks {
        suppress_timing: !wall_time,
    };
    let result = train(&env, &train_config, initial, hooks, |stats, theta| {
        curve.push(stats).map_err(|e| crate::Error::Config(format!("{e:#}")))?;
        last = (Some(stats.epoch), theta.clone());
        if every > 0 && (stats.epoch + 1) % every == 0 {
            let path = dir.join(format!("checkpoint_epoch{:05}.json", stats.epoch + 1));
            checkpoint(Some(stats.epoch), theta).save(&path).map_err(|e| crate::Error::Config(format!("{e:#}")))?;
        }
        Ok(())
    });
    match result {
        Ok(outcome) => {
            checkpoint(outcome.curve.last().map(|s| s.epoch), &outcome.theta).save(&dir.join("checkpoint.json"))?;
            if !outcome.curve.is_empty() {
                println!("final mean reward {:.6e}", final_mean_reward(&outcome.curve, 10));
            }
            println!("wrote {}", dir.display());
            Ok(())
        }
        Err(e) => {
            checkpoint(last.0, &last.1).save(&dir.join("checkpoint_partial.json"))?;
            Err(e).context(format!("training failed; completed epochs kept in {}", dir.display()))
        }
    }
}

/// Default parameters for each trajectory family.
pub fn named_task(name: &str) -> anyhow::Result<TrajectoryKind> {
    Ok(match name {
        "sinusoid" => TrajectoryKind::default(),
        "figure-eight" => TrajectoryKind::FigureEight {
            a: 1.0,
            b: 0.5,
            frequency_hz: 0.1,
            height: 0.5,
            yaw_amplitude: 0.3,
        },
        "corkscrew" => TrajectoryKind::Corkscrew {
            radius: 1.0,
            frequency_hz: 0.1,
            climb_rate: 0.1,
            yaw_amplitude: 0.3,
        },
        "square-wave" => TrajectoryKind::SquareWave {
            amplitude: 0.5,
            period: 5.0,
        },
        other => bail!("unknown task `{other}` (expected sinusoid, figure-eight, corkscrew or square-wave)"),
    })
}

#[derive(Debug, Serialize)]
struct Triple<T> {
    exact: T,
    nominal: T,
    learned: T,
}

#[derive(Debug, Serialize)]
struct Ratios {
    learned_over_exact: f64,
    nominal_over_exact: f64,
}

#[derive(Debug, Serialize)]
struct Comparison {
    task: TrajectoryKind,
    offset: f64,
    duration: f64,
    dt: f64,
    total_l2: Triple<f64>,
    ratios: Ratios,
    diverged: Triple<bool>,
    diverged_at: Triple<Option<f64>>,
    rms: Triple<Vec<f64>>,
}

pub fn cmd_eval_tracking(
    checkpoint_path: &Path,
    config_path: Option<&Path>,
    task: Option<&str>,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(checkpoint_path)?;
    let mut config = ckpt.config.clone();
    if let Some(path) = config_path {
        let other = ExperimentConfig::load(path)?;
        if other.system != ckpt.config.system {
            bail!(
                "checkpoint {} is for system {} but config {} describes {}",
                checkpoint_path.display(),
                ckpt.config.system.name(),
                path.display(),
                other.system.name()
            );
        }
        config.tracking = other.tracking;
    }
    let mut section = config.tracking.clone().unwrap_or_default();
    if let Some(name) = task {
        section.trajectory = named_task(name)?;
    }
    let exp = config
        .experiment_with(ckpt.seed, ckpt.parameterization.clone())
        .with_context(|| format!("checkpoint {} does not fit system {}", checkpoint_path.display(), config.system.name()))?;
    let reports = evaluate_tracking(&exp, &ckpt.theta, &section)?;
    let dir = output_dir(out, &config, "eval")?;
    for (name, report) in [("exact", &reports[0]), ("nominal", &reports[1]), ("learned", &reports[2])] {
        io::write_tracking(&dir.join(format!("tracking_{name}.csv")), report)?;
    }
    let [exact, nominal, learned] = reports;
    let comparison = Comparison {
        task: section.trajectory,
        offset: section.offset,
        duration: section.duration,
        dt: section.dt,
        total_l2: Triple {
            exact: exact.total_l2_error,
            nominal: nominal.total_l2_error,
            learned: learned.total_l2_error,
        },
        ratios: Ratios {
            learned_over_exact: learned.total_l2_error / exact.total_l2_error,
            nominal_over_exact: nominal.total_l2_error / exact.total_l2_error,
        },
        diverged: Triple {
            exact: exact.diverged,
            nominal: nominal.diverged,
            learned: learned.diverged,
        },
        diverged_at: Triple {
            exact: exact.diverged_at,
            nominal: nominal.diverged_at,
            learned: learned.diverged_at,
        },
        rms: Triple {
            exact: exact.rms_error,
            nominal: nominal.rms_error,
            learned: learned.rms_error,
        },
    };
    io::write_json(&dir.join("comparison.json"), &comparison)?;
    println!(
        "total l2: exact {:.4e}, nominal {:.4e}{}, learned {:.4e}{}",
        comparison.total_l2.exact,
        comparison.total_l2.nominal,
        if comparison.diverged.nominal { " (diverged)" } else { "" },
        comparison.total_l2.learned,
        if comparison.diverged.learned { " (diverged)" } else { "" },
    );
    println!("wrote {}", dir.display());
    Ok(())
}

/// Exact, nominal and learned tracking runs from the same initial state.
pub fn evaluate_tracking(
    exp: &config::Experiment,
    theta: &ControllerParams,
    section: &TrackingSection,
) -> anyhow::Result<[TrackingReport; 3]> {
    let plant = exp.plant.as_ref();
    let gamma = plant.relative_degree();
    let traj = reference(&section.trajectory, &gamma)?;
    let gain = tracking_gain(&reference_model(&gamma, section.dt)?)?;
    let x0 = initial_state(plant, &traj, section.offset)?;
    let ctrl = &exp.controller;
    let zero = ctrl.param.zero_params();
    let run = |which: usize| -> crate::Result<TrackingReport> {
        match which {
            0 => track(plant, |x, v| exact_linearizing_control(plant, x, v), &traj, &gain, &x0, section.duration, section.dt),
            1 => track(plant, |x, v| ctrl.control(&zero, x, v), &traj, &gain, &x0, section.duration, section.dt),
            _ => track(plant, |x, v| ctrl.control(theta, x, v), &traj, &gain, &x0, section.duration, section.dt),
        }
    };
    Ok([run(0)?, run(1)?, run(2)?])
}

#[derive(Debug, Serialize)]
struct ConvexityReport {
    min_eig: f64,
    max_eig: f64,
    verdict: &'static str,
    #[serde(rename = "L_at_zero")]
    l_at_zero: f64,
    #[serde(rename = "L_at_opt")]
    l_at_opt: Option<f64>,
    n_samples: usize,
    seed: u64,
    theta_opt: Option<Vec<f64>>,
}

pub fn cmd_verify_convexity(config_path: &Path, seed: Option<u64>, out: Option<&Path>) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(config_path).with_context(|| format!("cannot read config {}", config_path.display()))?;
    let config = ExperimentConfig::parse(&text).with_context(|| format!("invalid config {}", config_path.display()))?;
    let seed = config.resolve_seed(seed, &text);
    println!("seed {seed}");
    let exp = config.experiment(seed)?;
    let settings = config.convexity.clone().unwrap_or_default();
    let plant = exp.plant.as_ref();
    let root = Rng::new(seed);
    let samples = SampleSet::draw(plant, settings.samples, &mut root.derive(STREAM_GRAM))?;
    let qf = quadratic_form_on_samples(plant, &exp.controller, &samples)?;
    let cert = certify_strong_convexity(&qf);
    let eval = SampleSet::draw(plant, settings.eval_samples, &mut root.derive(STREAM_EVAL))?;
    let zero = exp.controller.param.zero_params();
    let l_zero = loss_on_samples(plant, &exp.controller, &zero, &eval)?.mean;
    let (l_opt, theta_opt) = if cert.strongly_convex {
        let star = closed_form_optimum(&qf)?;
        let theta = ControllerParams::from_flat(exp.controller.param.k1(), &star);
        (Some(loss_on_samples(plant, &exp.controller, &theta, &eval)?.mean), Some(star.iter().copied().collect()))
    } else {
        (None, None)
    };
    let report = ConvexityReport {
        min_eig: cert.min_eigenvalue,
        max_eig: cert.max_eigenvalue,
        verdict: if cert.strongly_convex { "strong" } else { "not-strong" },
        l_at_zero: l_zero,
        l_at_opt: l_opt,
        n_samples: settings.samples,
        seed,
        theta_opt,
    };
    let dir = output_dir(out, &config, "convexity")?;
    io::write_json(&dir.join("convexity_report.json"), &report)?;
    std::fs::write(dir.join("quadratic_form.bin"), qf.to_bytes())?;
    println!("eigenvalues: min {:.4e}, max {:.4e}", report.min_eig, report.max_eig);
    println!("verdict: {}", report.verdict);
    match report.l_at_opt {
        Some(l) => println!("L(0) = {l_zero:.6e}, L(theta*) = {l:.6e}"),
        None => println!("L(0) = {l_zero:.6e}, no unique optimum"),
    }
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn cmd_plot(kind: PlotKind, inputs: &[String], out: &Path) -> anyhow::Result<()> {
    let svg = match kind {
        PlotKind::Curve => {
            let [path] = inputs else { bail!("curve plots take exactly one learning_curve.csv") };
            plot::learning_curve(&io::read_table(Path::new(path), io::LEARNING_CURVE)?)?
        }
        PlotKind::Tracking | PlotKind::Path => {
            let mut runs = Vec::new();
            for arg in inputs {
                let (label, path) = match arg.split_once('=') {
                    Some((l, p)) => (l.to_string(), PathBuf::from(p)),
                    None => {
                        let p = PathBuf::from(arg);
                        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
                        (stem.trim_start_matches("tracking_").to_string(), p)
                    }
                };
                runs.push((label, io::read_table(&path, io::TRACKING)?));
            }
            if kind == PlotKind::Tracking {
                plot::tracking(&runs)?
            } else {
                plot::path(&runs)?
            }
        }
    };
    std::fs::write(out, svg).with_context(|| format!("cannot write {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(())
}
