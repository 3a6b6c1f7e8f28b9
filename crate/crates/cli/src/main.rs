//! Command-line front end for the sparselab sparse-training laboratory.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use sparselab::data::write_idx_labels;
use sparselab::diagnostics::{
    classify_phases, dd_signature, learning_distance, DD_COLLAPSE_MARGIN,
};
use sparselab::svg;
use sparselab::sweep::{
    self, curves_of, load_metrics, load_sweep, run_reinit_compare, run_sweep, ExperimentConfig,
    DEFAULT_DELTA, DEFAULT_TAU,
};

#[derive(Parser)]
#[command(
    name = "sparselab",
    about = "Train, prune, retrain, and diagnose small dense networks under label noise",
    version
)]
struct Cli {
    /// Worker threads for result-invariant parallelism (0 = automatic).
    /// Thread count never changes any result.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) a sparsity sweep from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's pruning level count.
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Run the lottery-vs-reinitialization comparison (shared masks).
    CompareReinit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Run one diagnostic against a finished sweep directory.
    Diagnose {
        #[command(subcommand)]
        which: Diagnostic,
    },
    /// Classify phases and detect the double-descent signature.
    Phases {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
    },
    /// Render an SVG chart from a sweep directory.
    Plot {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
        /// Level index (interp and slice plots).
        #[arg(long)]
        level: Option<usize>,
    },
    /// Emit the corrupted training-label vector of a config for audit.
    NoiseGen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum Diagnostic {
    /// Recompute learning distances from the stored checkpoints.
    Distance {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        level: Option<usize>,
    },
    /// Re-dense training from a level's sparse solution.
    Redense {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        level: usize,
    },
    /// Interpolation scan between a level's sparse and re-dense
    /// solutions (requires a prior redense).
    Interp {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        level: usize,
    },
    /// Filter-normalized 1-D loss slice around a level's solution.
    Slice {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        level: usize,
        #[arg(long, default_value_t = 1.0)]
        span: f64,
        #[arg(long, default_value_t = 41)]
        points: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Accuracy,
    Distance,
    Interp,
    Slice,
}

fn load_config(
    path: &std::path::Path,
    seed: Option<u64>,
    levels: Option<usize>,
) -> Result<ExperimentConfig> {
    let mut config =
        ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(l) = levels {
        config.prune.levels = l;
    }
    Ok(config)
}

fn find_level<'a>(
    sweep: &'a sweep::SweepResult,
    run: &std::path::Path,
    level: usize,
) -> Result<&'a sparselab::retrain::LevelResult> {
    sweep.levels.get(level).ok_or_else(|| {
        sparselab::Error::LevelNotFound {
            level,
            dir: run.to_path_buf(),
        }
        .into()
    })
}

fn run_command(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run {
            config,
            out,
            seed,
            levels,
        } => {
            let config = load_config(&config, seed, levels)?;
            let sweep = run_sweep(&config, &out)?;
            println!(
                "sweep complete: {} levels, final sparsity {:.6}, csv at {}",
                sweep.levels.len(),
                sweep
                    .levels
                    .last()
                    .map(|l| l.sparsity.prunable)
                    .unwrap_or(0.0),
                out.join("sweep.csv").display()
            );
        }
        Command::CompareReinit {
            config,
            out,
            seed,
            levels,
        } => {
            let config = load_config(&config, seed, levels)?;
            let (lottery, reinit) = run_reinit_compare(&config, &out)?;
            println!(
                "compare complete: {} levels per arm, csv at {}",
                lottery.levels.len().min(reinit.levels.len()),
                out.join("compare.csv").display()
            );
        }
        Command::Diagnose { which } => run_diagnostic(which)?,
        Command::Phases { run, tau, delta } => {
            let metrics = load_metrics(&run)?;
            if metrics.is_empty() {
                bail!("no completed levels in {}", run.display());
            }
            let (train, test, sparsity) = curves_of(&metrics);
            let labeling = classify_phases(&train, &test, tau, delta)?;
            let signature = dd_signature(&test, &sparsity, DD_COLLAPSE_MARGIN);
            let report = serde_json::json!({
                "threshold_level": labeling.threshold_level,
                "phases": labeling.phases,
                "dd_signature": signature,
                "tau": tau,
                "delta": delta,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Plot {
            run,
            kind,
            out,
            level,
        } => run_plot(run, kind, out, level)?,
        Command::NoiseGen { config, out } => {
            let config = ExperimentConfig::load(&config)?;
            let exp = sweep::Experiment::materialize(&config)?;
            let labels = sparselab::data::IdxLabels {
                labels: exp.train_set.data.labels.iter().map(|&l| l as u8).collect(),
            };
            std::fs::write(&out, write_idx_labels(&labels))
                .with_context(|| format!("writing {}", out.display()))?;
            println!(
                "wrote {} labels ({} flipped) to {}",
                exp.train_set.data.len(),
                exp.train_set.flip_count(),
                out.display()
            );
        }
    }
    Ok(())
}

fn run_diagnostic(which: Diagnostic) -> Result<()> {
    match which {
        Diagnostic::Distance { run, level } => {
            let (exp, store, sweep) = load_sweep(&run)?;
            if sweep.levels.is_empty() {
                bail!("no completed levels in {}", run.display());
            }
            let w_init = store.load_init(&exp.spec, 0)?;
            let targets: Vec<usize> = match level {
                Some(l) => vec![find_level(&sweep, &run, l)?.level],
                None => sweep.levels.iter().map(|l| l.level).collect(),
            };
            for l in targets {
                let lev = &sweep.levels[l];
                let recomputed = learning_distance(&w_init, &lev.trace.final_params, &lev.mask)?;
                println!(
                    "{}",
                    serde_json::json!({
                        "level": l,
                        "stored": lev.learning_distance,
                        "recomputed": recomputed,
                    })
                );
            }
        }
        Diagnostic::Redense { run, level } => {
            let (exp, store, sweep) = load_sweep(&run)?;
            let lev = find_level(&sweep, &run, level)?;
            let metrics = sweep::run_and_persist_redense(&exp, &store, lev)?;
            let report = serde_json::json!({
                "level": level,
                "lr": metrics.lr,
                "epochs": metrics.epochs,
                "sparse_final_train_acc": lev.trace.final_train().accuracy,
                "redense_final_train_acc": metrics.train.last().map(|m| m.accuracy),
                "sparse_final_test_acc": lev.trace.final_test().accuracy,
                "redense_final_test_acc": metrics.test.last().map(|m| m.accuracy),
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Diagnostic::Interp { run, level } => {
            let (exp, store, sweep) = load_sweep(&run)?;
            let lev = find_level(&sweep, &run, level)?;
            let scan = sweep::run_and_persist_interp(&exp, &store, lev)?;
            let report = serde_json::json!({
                "level": level,
                "points": scan.alphas.len(),
                "train_loss_alpha0": scan.train.first().map(|m| m.loss),
                "train_loss_alpha1": scan.train.last().map(|m| m.loss),
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Diagnostic::Slice {
            run,
            level,
            span,
            points,
        } => {
            let (exp, store, sweep) = load_sweep(&run)?;
            let lev = find_level(&sweep, &run, level)?;
            let slice = sweep::run_and_persist_slice(&exp, &store, lev, span, points)?;
            let center = slice.train_loss[slice.train_loss.len() / 2];
            let report = serde_json::json!({
                "level": level,
                "points": slice.offsets.len(),
                "center_loss": center,
                "direction_seed": slice.direction_seed,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn run_plot(run: PathBuf, kind: PlotKind, out: PathBuf, level: Option<usize>) -> Result<()> {
    match kind {
        PlotKind::Accuracy => {
            // A compare directory (lottery/ + reinit/) plots both arms.
            let chart = if run.join("lottery").is_dir() && run.join("reinit").is_dir() {
                let lm = load_metrics(&run.join("lottery"))?;
                let rm = load_metrics(&run.join("reinit"))?;
                svg::accuracy_chart(&[("lottery".into(), lm), ("reinit".into(), rm)])?
            } else {
                let metrics = load_metrics(&run)?;
                svg::accuracy_chart(&[("sweep".into(), metrics)])?
            };
            svg::write_svg(&chart, &out)?;
        }
        PlotKind::Distance => {
            let metrics = load_metrics(&run)?;
            svg::write_svg(&svg::distance_chart(&metrics)?, &out)?;
        }
        PlotKind::Interp => {
            let level = level.context("--level is required for interp plots")?;
            let (_, store, _) = load_sweep(&run)?;
            let scan = sweep::load_interp(&store, level)
                .map_err(|_| sparselab::Error::MissingRedense { level })?;
            svg::write_svg(&svg::interp_chart(&scan)?, &out)?;
        }
        PlotKind::Slice => {
            let level = level.context("--level is required for slice plots")?;
            let (_, store, _) = load_sweep(&run)?;
            let slice = sweep::load_slice(&store, level)?;
            svg::write_svg(
                &svg::slice_chart(&[(format!("level {level}"), slice)])?,
                &out,
            )?;
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Parallelism only ever splits result-invariant work.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match run_command(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Single-line, machine-parsable failure report.
            let chain = e
                .chain()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(": ");
            eprintln!("error: {}", chain.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
