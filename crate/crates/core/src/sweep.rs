//! Experiment orchestration: configs, resumable sparsity sweeps, the
//! lottery-vs-reinitialization comparison, and CSV emission.
//!
//! A sweep directory is self-describing:
//!
//! ```text
//! out/
//!   config.json          experiment snapshot (resume guard)
//!   labels_clean.idx     training labels before corruption
//!   labels_noisy.idx     training labels the sweep actually used
//!   run_meta.json        wall-clock bookkeeping
//!   levels/level_000/    {init,rewind,final,mask}.ckpt + metrics.json
//!   levels/level_001/    ...
//!   sweep.csv            one row per level
//! ```
//!
//! A completed level is never recomputed: re-running a finished sweep
//! reloads every level and re-emits a byte-identical CSV.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::data::{load_mnist_dir, make_synthetic_pair, write_idx_labels, Dataset, IdxLabels};
use crate::diagnostics::{
    classify_phases, dd_signature, interp_scan, landscape_slice, redense_train, DdSignature,
    InterpScan, PhaseLabeling, DD_COLLAPSE_MARGIN,
};
use crate::error::{Error, Result};
use crate::mask::{self, Mask, PrunableScope, PruneStrategy, SparsityReport};
use crate::nn::{init_params, Metrics, MlpSpec};
use crate::noise::{NoiseKind, NoiseSpec, NoisyDataset};
use crate::optim::{train, LrSchedule, TrainConfig, TrainTrace};
use crate::retrain::{
    run_level, run_level_with_mask, CheckpointStore, LevelContext, LevelResult, RetrainMethod,
};

/// Default phase-classifier thresholds.
pub const DEFAULT_TAU: f64 = 0.99;
pub const DEFAULT_DELTA: f64 = 0.01;

// ---------------------------------------------------------------------------
// Config document
// ---------------------------------------------------------------------------

/// The experiment document. Serialized as JSON with a fixed schema;
/// unknown keys are rejected so a run's provenance is exactly what the
/// file says.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub prune: PruneSection,
    pub retrain: RetrainSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// The four standard IDX files inside `dir`.
    Mnist {
        dir: PathBuf,
        #[serde(default)]
        train_subset: Option<usize>,
        /// `None` takes the first `train_subset` examples; a seed samples
        /// them without replacement instead.
        #[serde(default)]
        subset_seed: Option<u64>,
    },
    Synthetic {
        train_n: usize,
        test_n: usize,
        input_dim: usize,
        classes: usize,
        separation: f64,
        #[serde(default)]
        data_seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    #[serde(default)]
    pub rate: f64,
    #[serde(default)]
    pub class_map: Option<Vec<(u32, u32)>>,
    /// Defaults to the experiment seed.
    #[serde(default)]
    pub noise_seed: Option<u64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKind::None,
            rate: 0.0,
            class_map: None,
            noise_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layer_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub lr: f64,
    #[serde(default)]
    pub lr_drop_epochs: Vec<usize>,
    #[serde(default = "default_drop_factor")]
    pub lr_drop_factor: f64,
    #[serde(default)]
    pub rewind_step: usize,
}

fn default_drop_factor() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSection {
    pub strategy: PruneStrategy,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    pub levels: usize,
}

fn default_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum RetrainSection {
    /// Rewind to `train.rewind_step`.
    LotteryRewind,
    Finetune {
        lr: f64,
    },
    /// Replay the schedule from `train.rewind_step`.
    LrRewind,
    Scratch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(default = "default_true")]
    pub distance: bool,
    #[serde(default)]
    pub redense: bool,
    #[serde(default)]
    pub interp: bool,
    #[serde(default)]
    pub slice: bool,
}

fn default_true() -> bool {
    true
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            distance: true,
            redense: false,
            interp: false,
            slice: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io_at(path))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(Error::io_at(path))?;
        Ok(())
    }

    pub fn retrain_method(&self) -> RetrainMethod {
        match self.retrain {
            RetrainSection::LotteryRewind => RetrainMethod::LotteryRewind {
                t: self.train.rewind_step,
            },
            RetrainSection::Finetune { lr } => RetrainMethod::Finetune { lr },
            RetrainSection::LrRewind => RetrainMethod::LrRewind {
                t: self.train.rewind_step,
            },
            RetrainSection::Scratch => RetrainMethod::Scratch,
        }
    }
}

// ---------------------------------------------------------------------------
// Materialized experiment
// ---------------------------------------------------------------------------

/// Config resolved into concrete datasets and training settings.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub spec: MlpSpec,
    pub scope: PrunableScope,
    pub train_set: NoisyDataset,
    pub test_set: Dataset,
    pub base: TrainConfig,
    pub method: RetrainMethod,
}

impl Experiment {
    pub fn materialize(config: &ExperimentConfig) -> Result<Self> {
        let spec = MlpSpec::new(config.model.layer_sizes.clone())?;
        let scope = PrunableScope::hidden_weights(&spec);

        let (train_clean, test_set) = match &config.dataset {
            DatasetConfig::Mnist {
                dir,
                train_subset,
                subset_seed,
            } => {
                let (mut train, test) = load_mnist_dir(dir)?;
                if let Some(k) = train_subset {
                    train = match subset_seed {
                        Some(s) => train.subset_seeded(*k, *s),
                        None => train.subset_first(*k),
                    };
                }
                (train, test)
            }
            DatasetConfig::Synthetic {
                train_n,
                test_n,
                input_dim,
                classes,
                separation,
                data_seed,
            } => make_synthetic_pair(
                *train_n,
                *test_n,
                *input_dim,
                *classes,
                *separation,
                *data_seed,
            ),
        };

        if train_clean.input_dim != spec.input_dim() {
            return Err(Error::InvalidConfig(format!(
                "model expects input_dim {}, dataset has {}",
                spec.input_dim(),
                train_clean.input_dim
            )));
        }
        if train_clean.num_classes != spec.output_dim() {
            return Err(Error::InvalidConfig(format!(
                "model expects {} classes, dataset has {}",
                spec.output_dim(),
                train_clean.num_classes
            )));
        }
        if train_clean.num_classes > 256 {
            return Err(Error::InvalidConfig(
                "label persistence supports at most 256 classes".into(),
            ));
        }

        let noise_spec = NoiseSpec {
            kind: config.noise.kind,
            rate: config.noise.rate,
            seed: config.noise.noise_seed.unwrap_or(config.seed),
            class_map: config.noise.class_map.clone(),
        };
        let train_set = NoisyDataset::corrupt(train_clean, &noise_spec)?;

        let base = TrainConfig {
            epochs: config.train.epochs,
            batch_size: config.train.batch_size,
            momentum: config.train.momentum,
            weight_decay: config.train.weight_decay,
            schedule: LrSchedule::Step {
                base_lr: config.train.lr,
                drop_epochs: config.train.lr_drop_epochs.clone(),
                drop_factor: config.train.lr_drop_factor,
            },
            schedule_start_epoch: 0,
            seed: config.seed,
            rewind_step: config.train.rewind_step,
        };
        base.validate(train_set.data.len())?;
        if !(config.prune.fraction > 0.0 && config.prune.fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "prune fraction must be in (0, 1), got {}",
                config.prune.fraction
            )));
        }

        Ok(Self {
            spec,
            scope,
            train_set,
            test_set,
            base,
            method: config.retrain_method(),
            config: config.clone(),
        })
    }

    pub fn level_ctx(&self) -> LevelContext<'_> {
        LevelContext {
            spec: &self.spec,
            scope: &self.scope,
            train_set: &self.train_set,
            test_set: &self.test_set,
            base: &self.base,
        }
    }
}

// ---------------------------------------------------------------------------
// Persisted per-level metrics
// ---------------------------------------------------------------------------

/// The JSON record of one completed level (everything the CSV needs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub level: usize,
    pub seed: u64,
    pub sparsity: SparsityReport,
    pub learning_distance: f64,
    pub config: TrainConfig,
    pub initial_train: Metrics,
    pub initial_test: Metrics,
    pub train: Vec<Metrics>,
    pub test: Vec<Metrics>,
    pub best_test_acc: f64,
    pub best_test_epoch: usize,
    pub rewind_step: usize,
    /// Wall-clock seconds this level took (bookkeeping only; never part
    /// of the CSV).
    pub wall_secs: f64,
}

impl LevelMetrics {
    pub fn from_result(res: &LevelResult, wall_secs: f64) -> Self {
        Self {
            level: res.level,
            seed: res.seed,
            sparsity: res.sparsity,
            learning_distance: res.learning_distance,
            config: res.config.clone(),
            initial_train: res.trace.initial_train,
            initial_test: res.trace.initial_test,
            train: res.trace.train_metrics.clone(),
            test: res.trace.test_metrics.clone(),
            best_test_acc: res.trace.best_test_acc,
            best_test_epoch: res.trace.best_test_epoch,
            rewind_step: res.trace.rewind_step,
            wall_secs,
        }
    }

    pub fn final_train(&self) -> Metrics {
        *self.train.last().unwrap_or(&self.initial_train)
    }

    pub fn final_test(&self) -> Metrics {
        *self.test.last().unwrap_or(&self.initial_test)
    }

    /// Generalization gap: test error − train error at the final epoch.
    pub fn gen_gap(&self) -> f64 {
        (1.0 - self.final_test().accuracy) - (1.0 - self.final_train().accuracy)
    }
}

fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(Error::io_at(path))?;
    Ok(())
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(Error::io_at(path))?;
    Ok(serde_json::from_str(&text)?)
}

// ---------------------------------------------------------------------------
// Sweep results
// ---------------------------------------------------------------------------

/// Ordered level results forming one sparsity-vs-accuracy curve.
#[derive(Debug)]
pub struct SweepResult {
    pub levels: Vec<LevelResult>,
    pub config: ExperimentConfig,
}

impl SweepResult {
    pub fn metrics(&self) -> Vec<LevelMetrics> {
        self.levels
            .iter()
            .map(|l| LevelMetrics::from_result(l, 0.0))
            .collect()
    }

    /// Final-epoch accuracy curves (train, test) plus prunable sparsity
    /// per level.
    pub fn curves(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        curves_of(&self.metrics())
    }

    pub fn classify_phases(&self, tau: f64, delta: f64) -> Result<PhaseLabeling> {
        let (train, test, _) = self.curves();
        classify_phases(&train, &test, tau, delta)
    }

    pub fn dd_signature(&self) -> Option<DdSignature> {
        let (_, test, sparsity) = self.curves();
        dd_signature(&test, &sparsity, DD_COLLAPSE_MARGIN)
    }
}

pub fn curves_of(metrics: &[LevelMetrics]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let train = metrics.iter().map(|m| m.final_train().accuracy).collect();
    let test = metrics.iter().map(|m| m.final_test().accuracy).collect();
    let sparsity = metrics.iter().map(|m| m.sparsity.prunable).collect();
    (train, test, sparsity)
}

// ---------------------------------------------------------------------------
// The sweep runner
// ---------------------------------------------------------------------------

fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Debug, Serialize, Deserialize)]
struct RunMeta {
    started_unix: f64,
    finished_unix: Option<f64>,
}

fn record_failure(out: &Path, level: usize, err: &Error) {
    let line = format!("level {level} failed: {err}\n");
    if let Ok(mut f) = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out.join("error.log"))
    {
        let _ = f.write_all(line.as_bytes());
    }
}

/// Level 0 of a sweep: train the dense model from a fresh init.
fn run_dense_level(exp: &Experiment, store: &CheckpointStore) -> Result<LevelResult> {
    let params = init_params(&exp.spec, exp.base.seed);
    let mask = Mask::all_ones(&params, &exp.scope);
    let trace = train(
        params.clone(),
        &mask,
        &exp.train_set,
        &exp.test_set,
        &exp.base,
    )?;
    store.save_level(0, &params, &trace.rewind_params, &trace.final_params, &mask)?;
    let distance = crate::diagnostics::learning_distance(&params, &trace.final_params, &mask)?;
    let sparsity = mask::sparsity(&mask, &exp.scope);
    Ok(LevelResult {
        level: 0,
        mask,
        sparsity,
        trace,
        learning_distance: distance,
        seed: exp.base.seed,
        config: exp.base.clone(),
    })
}

/// Rebuild a completed level from its persisted artifacts.
fn load_level(exp: &Experiment, store: &CheckpointStore, level: usize) -> Result<LevelResult> {
    let metrics: LevelMetrics = load_json(&store.metrics_path(level))?;
    let mask = store.load_mask(level)?;
    let final_params = store.load_final(&exp.spec, level)?;
    let rewind_params = store.load_rewind(&exp.spec, level)?;
    let trace = TrainTrace {
        train_metrics: metrics.train.clone(),
        test_metrics: metrics.test.clone(),
        initial_train: metrics.initial_train,
        initial_test: metrics.initial_test,
        final_params,
        rewind_params,
        rewind_step: metrics.rewind_step,
        best_test_acc: metrics.best_test_acc,
        best_test_epoch: metrics.best_test_epoch,
        epochs_trained: metrics.train.len(),
    };
    Ok(LevelResult {
        level,
        mask,
        sparsity: metrics.sparsity,
        trace,
        learning_distance: metrics.learning_distance,
        seed: metrics.seed,
        config: metrics.config,
    })
}

/// Guard a sweep directory: the stored config must match the requested
/// one, otherwise resuming would silently mix experiments.
fn check_or_write_config(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let path = out.join("config.json");
    if path.exists() {
        let existing = ExperimentConfig::load(&path)?;
        if &existing != config {
            return Err(Error::InvalidConfig(format!(
                "output directory {} holds a different experiment (config.json mismatch)",
                out.display()
            )));
        }
    } else {
        config.save(&path)?;
    }
    Ok(())
}

fn persist_labels(exp: &Experiment, out: &Path) -> Result<()> {
    let clean = IdxLabels {
        labels: exp
            .train_set
            .clean_labels
            .iter()
            .map(|&l| l as u8)
            .collect(),
    };
    let noisy = IdxLabels {
        labels: exp.train_set.data.labels.iter().map(|&l| l as u8).collect(),
    };
    std::fs::write(out.join("labels_clean.idx"), write_idx_labels(&clean))
        .map_err(Error::io_at(out.join("labels_clean.idx")))?;
    std::fs::write(out.join("labels_noisy.idx"), write_idx_labels(&noisy))
        .map_err(Error::io_at(out.join("labels_noisy.idx")))?;
    Ok(())
}

/// Run (or resume) a full sparsity sweep into `out`.
pub fn run_sweep(config: &ExperimentConfig, out: &Path) -> Result<SweepResult> {
    let exp = Experiment::materialize(config)?;
    std::fs::create_dir_all(out).map_err(Error::io_at(out))?;
    check_or_write_config(config, out)?;
    persist_labels(&exp, out)?;
    save_json(
        &RunMeta {
            started_unix: now_unix(),
            finished_unix: None,
        },
        &out.join("run_meta.json"),
    )?;

    let store = CheckpointStore::new(out.join("levels"))?;
    let mut levels: Vec<LevelResult> = Vec::with_capacity(config.prune.levels + 1);

    for level in 0..=config.prune.levels {
        let t0 = std::time::Instant::now();
        let was_complete = store.level_complete(level);
        let result = if was_complete {
            load_level(&exp, &store, level)
        } else if level == 0 {
            run_dense_level(&exp, &store)
        } else {
            let ctx = exp.level_ctx();
            run_level(
                levels.last().expect("level 0 runs first"),
                &store,
                config.prune.strategy,
                &exp.method,
                config.prune.fraction,
                &ctx,
            )
        };
        let result = match result {
            Ok(r) => r,
            Err(e) => {
                record_failure(out, level, &e);
                return Err(e);
            }
        };
        if !was_complete {
            let metrics = LevelMetrics::from_result(&result, t0.elapsed().as_secs_f64());
            save_json(&metrics, &store.metrics_path(level))?;
            eprintln!(
                "[sweep] level {level:>3}  sparsity {:>8.5}  train {:.4}  test {:.4}  dist {:.3}",
                result.sparsity.prunable,
                result.trace.final_train().accuracy,
                result.trace.final_test().accuracy,
                result.learning_distance,
            );
        }
        levels.push(result);
    }

    let sweep = SweepResult {
        levels,
        config: config.clone(),
    };
    emit_csv(&sweep, &out.join("sweep.csv"))?;
    run_configured_diagnostics(&exp, &store, &sweep)?;
    save_json(
        &RunMeta {
            started_unix: now_unix(),
            finished_unix: Some(now_unix()),
        },
        &out.join("run_meta.json"),
    )?;
    Ok(sweep)
}

/// Post-sweep diagnostics selected by the config toggles (distance is
/// already part of every level).
fn run_configured_diagnostics(
    exp: &Experiment,
    store: &CheckpointStore,
    sweep: &SweepResult,
) -> Result<()> {
    let d = exp.config.diagnostics;
    for level in &sweep.levels {
        if d.redense && !store.redense_metrics_path(level.level).exists() {
            run_and_persist_redense(exp, store, level)?;
        }
        if d.interp && !store.level_dir(level.level).join("interp.json").exists() {
            run_and_persist_interp(exp, store, level)?;
        }
        if d.slice && !store.level_dir(level.level).join("slice.json").exists() {
            run_and_persist_slice(exp, store, level, 1.0, 41)?;
        }
    }
    Ok(())
}

/// Persisted summary of one re-dense run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedenseMetrics {
    pub level: usize,
    pub lr: f64,
    pub epochs: usize,
    pub initial_train: Metrics,
    pub initial_test: Metrics,
    pub train: Vec<Metrics>,
    pub test: Vec<Metrics>,
}

pub fn run_and_persist_redense(
    exp: &Experiment,
    store: &CheckpointStore,
    level: &LevelResult,
) -> Result<RedenseMetrics> {
    let res = redense_train(level, &exp.scope, &exp.train_set, &exp.test_set)?;
    crate::checkpoint::save_params(
        &res.trace.final_params,
        &store.redense_params_path(level.level),
    )?;
    let metrics = RedenseMetrics {
        level: level.level,
        lr: res.lr,
        epochs: res.epochs,
        initial_train: res.trace.initial_train,
        initial_test: res.trace.initial_test,
        train: res.trace.train_metrics.clone(),
        test: res.trace.test_metrics.clone(),
    };
    save_json(&metrics, &store.redense_metrics_path(level.level))?;
    Ok(metrics)
}

pub fn load_redense_metrics(store: &CheckpointStore, level: usize) -> Result<RedenseMetrics> {
    load_json(&store.redense_metrics_path(level))
}

/// Interpolate between a level's sparse solution and its re-dense
/// solution. Requires the re-dense artifact.
pub fn run_and_persist_interp(
    exp: &Experiment,
    store: &CheckpointStore,
    level: &LevelResult,
) -> Result<InterpScan> {
    let redense_path = store.redense_params_path(level.level);
    if !redense_path.exists() {
        return Err(Error::MissingRedense { level: level.level });
    }
    let w_r = crate::checkpoint::load_params(&exp.spec, &redense_path)?;
    let scan = interp_scan(
        &level.trace.final_params,
        &w_r,
        &exp.train_set.data,
        &exp.test_set,
        0.01,
    )?;
    save_json(&scan, &store.level_dir(level.level).join("interp.json"))?;
    Ok(scan)
}

pub fn load_interp(store: &CheckpointStore, level: usize) -> Result<InterpScan> {
    load_json(&store.level_dir(level).join("interp.json"))
}

pub fn run_and_persist_slice(
    exp: &Experiment,
    store: &CheckpointStore,
    level: &LevelResult,
    span: f64,
    points: usize,
) -> Result<crate::diagnostics::LandscapeSlice> {
    let seed = crate::rng::mix(
        exp.base.seed,
        crate::rng::tag::SLICE_DIRECTION,
        level.level as u64,
    );
    let slice = landscape_slice(
        &level.trace.final_params,
        &exp.train_set.data,
        seed,
        span,
        points,
    )?;
    save_json(&slice, &store.level_dir(level.level).join("slice.json"))?;
    Ok(slice)
}

pub fn load_slice(
    store: &CheckpointStore,
    level: usize,
) -> Result<crate::diagnostics::LandscapeSlice> {
    load_json(&store.level_dir(level).join("slice.json"))
}

/// Reload a finished (or partial) sweep from its directory.
pub fn load_sweep(out: &Path) -> Result<(Experiment, CheckpointStore, SweepResult)> {
    let config = ExperimentConfig::load(&out.join("config.json"))?;
    let exp = Experiment::materialize(&config)?;
    let store = CheckpointStore::new(out.join("levels"))?;
    let mut levels = Vec::new();
    for level in 0..=config.prune.levels {
        if !store.level_complete(level) {
            break;
        }
        levels.push(load_level(&exp, &store, level)?);
    }
    let sweep = SweepResult { levels, config };
    Ok((exp, store, sweep))
}

/// Load just the per-level metric records of a sweep directory.
pub fn load_metrics(out: &Path) -> Result<Vec<LevelMetrics>> {
    let config = ExperimentConfig::load(&out.join("config.json"))?;
    let store = CheckpointStore::new(out.join("levels"))?;
    let mut all = Vec::new();
    for level in 0..=config.prune.levels {
        let path = store.metrics_path(level);
        if !path.exists() {
            break;
        }
        all.push(load_json::<LevelMetrics>(&path)?);
    }
    Ok(all)
}

// ---------------------------------------------------------------------------
// Lottery-vs-reinitialization comparison
// ---------------------------------------------------------------------------

/// Run the paired comparison: a lottery-rewinding sweep, then a second
/// sweep that reuses *exactly* the first sweep's masks but retrains each
/// level from a fresh random initialization with the full schedule.
///
/// Output layout: `out/lottery/`, `out/reinit/`, `out/compare.csv`.
pub fn run_reinit_compare(
    config: &ExperimentConfig,
    out: &Path,
) -> Result<(SweepResult, SweepResult)> {
    let mut lottery_cfg = config.clone();
    lottery_cfg.retrain = RetrainSection::LotteryRewind;
    let lottery_dir = out.join("lottery");
    let lottery = run_sweep(&lottery_cfg, &lottery_dir)?;

    let mut reinit_cfg = lottery_cfg.clone();
    reinit_cfg.retrain = RetrainSection::Scratch;
    let reinit_dir = out.join("reinit");
    std::fs::create_dir_all(&reinit_dir).map_err(Error::io_at(&reinit_dir))?;
    check_or_write_config(&reinit_cfg, &reinit_dir)?;

    let exp = Experiment::materialize(&reinit_cfg)?;
    persist_labels(&exp, &reinit_dir)?;
    let lottery_store = CheckpointStore::new(lottery_dir.join("levels"))?;
    let reinit_store = CheckpointStore::new(reinit_dir.join("levels"))?;

    // The dense baseline is shared: copy level 0 verbatim.
    if !reinit_store.level_complete(0) {
        let src = lottery_store.level_dir(0);
        let dst = reinit_store.level_dir(0);
        std::fs::create_dir_all(&dst).map_err(Error::io_at(&dst))?;
        for name in [
            "init.ckpt",
            "rewind.ckpt",
            "final.ckpt",
            "mask.ckpt",
            "metrics.json",
        ] {
            std::fs::copy(src.join(name), dst.join(name)).map_err(Error::io_at(src.join(name)))?;
        }
    }

    let mut levels = vec![load_level(&exp, &reinit_store, 0)?];
    for level in 1..=reinit_cfg.prune.levels {
        let t0 = std::time::Instant::now();
        let was_complete = reinit_store.level_complete(level);
        let result = if was_complete {
            load_level(&exp, &reinit_store, level)
        } else {
            let mask = lottery_store.load_mask(level)?;
            let ctx = exp.level_ctx();
            run_level_with_mask(level, mask, &reinit_store, &RetrainMethod::Scratch, &ctx)
        };
        let result = match result {
            Ok(r) => r,
            Err(e) => {
                record_failure(&reinit_dir, level, &e);
                return Err(e);
            }
        };
        if !was_complete {
            let metrics = LevelMetrics::from_result(&result, t0.elapsed().as_secs_f64());
            save_json(&metrics, &reinit_store.metrics_path(level))?;
            eprintln!(
                "[reinit] level {level:>3}  sparsity {:>8.5}  train {:.4}  test {:.4}",
                result.sparsity.prunable,
                result.trace.final_train().accuracy,
                result.trace.final_test().accuracy,
            );
        }
        levels.push(result);
    }
    let reinit = SweepResult {
        levels,
        config: reinit_cfg,
    };
    emit_csv(&reinit, &reinit_dir.join("sweep.csv"))?;
    emit_compare_csv(&lottery, &reinit, &out.join("compare.csv"))?;
    Ok((lottery, reinit))
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

/// Format with six significant digits (plain decimal notation).
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (5 - mag).clamp(0, 17) as usize;
    format!("{x:.decimals$}")
}

pub const CSV_HEADER: &str = "level,sparsity_prunable,sparsity_total,surviving_weights,epochs_trained,final_train_loss,final_train_acc,final_test_loss,final_test_acc,best_test_acc,best_test_epoch,gen_gap,learning_distance,seed";

fn csv_row(m: &LevelMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        m.level,
        fmt_sig6(m.sparsity.prunable),
        fmt_sig6(m.sparsity.total),
        m.sparsity.surviving,
        m.train.len(),
        fmt_sig6(m.final_train().loss),
        fmt_sig6(m.final_train().accuracy),
        fmt_sig6(m.final_test().loss),
        fmt_sig6(m.final_test().accuracy),
        fmt_sig6(m.best_test_acc),
        m.best_test_epoch,
        fmt_sig6(m.gen_gap()),
        fmt_sig6(m.learning_distance),
        m.seed,
    )
}

/// Write the per-level summary table: header plus one row per level,
/// UTF-8 with LF line endings, decimals at six significant digits.
pub fn emit_csv(sweep: &SweepResult, path: &Path) -> Result<()> {
    if sweep.levels.is_empty() {
        return Err(Error::InvalidConfig(
            "cannot emit CSV for an empty sweep".into(),
        ));
    }
    emit_metrics_csv(&sweep.metrics(), path)
}

pub fn emit_metrics_csv(metrics: &[LevelMetrics], path: &Path) -> Result<()> {
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for m in metrics {
        text.push_str(&csv_row(m));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(Error::io_at(path))?;
    Ok(())
}

fn emit_compare_csv(lottery: &SweepResult, reinit: &SweepResult, path: &Path) -> Result<()> {
    let lm = lottery.metrics();
    let rm = reinit.metrics();
    let mut text = String::from(
        "level,sparsity_prunable,lottery_train_acc,lottery_test_acc,reinit_train_acc,reinit_test_acc\n",
    );
    for (l, r) in lm.iter().zip(&rm) {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            l.level,
            fmt_sig6(l.sparsity.prunable),
            fmt_sig6(l.final_train().accuracy),
            fmt_sig6(l.final_test().accuracy),
            fmt_sig6(r.final_train().accuracy),
            fmt_sig6(r.final_test().accuracy),
        ));
    }
    std::fs::write(path, text).map_err(Error::io_at(path))?;
    Ok(())
}
