//! The four retraining regimes and the per-level prune-retrain iteration.
//!
//! A sweep walks levels `0, 1, 2, ...`: level 0 is the dense training
//! run; each later level scores the *previous level's trained weights*,
//! prunes globally, builds a start state according to the retraining
//! method, and trains again. Checkpoints (init / step-t / final weights
//! and the mask) are persisted per level in the `SDD1` format so that
//! rewinding and resuming are bit-exact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{batch_indices, steps_per_epoch, Dataset};
use crate::diagnostics::learning_distance;
use crate::error::{Error, Result};
use crate::mask::{self, Mask, PrunableScope, PruneStrategy, SparsityReport};
use crate::nn::{init_params, Batch, MlpSpec, ParamSet};
use crate::noise::NoisyDataset;
use crate::optim::{train, LrSchedule, TrainConfig, TrainTrace};
use crate::rng::{self, tag};

/// How a pruned network is retrained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum RetrainMethod {
    /// Rewind parameters and the learning-rate schedule to optimizer
    /// step `t` of the original dense run, then train `T − t_epochs`
    /// epochs.
    LotteryRewind { t: usize },
    /// Continue from the previous level's final weights at a fixed
    /// learning rate for `T` epochs.
    Finetune { lr: f64 },
    /// Continue from the previous level's final weights but replay the
    /// schedule from step `t`, training `T − t_epochs` epochs.
    LrRewind { t: usize },
    /// Fresh random initialization (a new seed per level), full schedule,
    /// `T` epochs.
    Scratch,
}

impl RetrainMethod {
    pub fn name(&self) -> &'static str {
        match self {
            RetrainMethod::LotteryRewind { .. } => "lottery_rewind",
            RetrainMethod::Finetune { .. } => "finetune",
            RetrainMethod::LrRewind { .. } => "lr_rewind",
            RetrainMethod::Scratch => "scratch",
        }
    }
}

/// Directory-backed store of per-level artifacts.
///
/// Layout: `<root>/level_<NNN>/{init,rewind,final,mask}.ckpt` plus a
/// `metrics.json` written by the sweep runner as the completion marker.
#[derive(Debug, Clone)]
pub struct CheckpointStore {
    root: PathBuf,
}

impl CheckpointStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(Error::io_at(&root))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn level_dir(&self, level: usize) -> PathBuf {
        self.root.join(format!("level_{level:03}"))
    }

    pub fn init_path(&self, level: usize) -> PathBuf {
        self.level_dir(level).join("init.ckpt")
    }

    pub fn rewind_path(&self, level: usize) -> PathBuf {
        self.level_dir(level).join("rewind.ckpt")
    }

    pub fn final_path(&self, level: usize) -> PathBuf {
        self.level_dir(level).join("final.ckpt")
    }

    pub fn mask_path(&self, level: usize) -> PathBuf {
        self.level_dir(level).join("mask.ckpt")
    }

    pub fn metrics_path(&self, level: usize) -> PathBuf {
        self.level_dir(level).join("metrics.json")
    }

    pub fn redense_params_path(&self, level: usize) -> PathBuf {
        self.level_dir(level).join("redense.ckpt")
    }

    pub fn redense_metrics_path(&self, level: usize) -> PathBuf {
        self.level_dir(level).join("redense_metrics.json")
    }

    /// Save all binary artifacts of one level.
    pub fn save_level(
        &self,
        level: usize,
        init: &ParamSet,
        rewind: &ParamSet,
        final_params: &ParamSet,
        mask: &Mask,
    ) -> Result<()> {
        let dir = self.level_dir(level);
        std::fs::create_dir_all(&dir).map_err(Error::io_at(&dir))?;
        checkpoint::save_params(init, &self.init_path(level))?;
        checkpoint::save_params(rewind, &self.rewind_path(level))?;
        checkpoint::save_params(final_params, &self.final_path(level))?;
        checkpoint::save_mask(mask, &self.mask_path(level))?;
        Ok(())
    }

    fn load_params_at(&self, spec: &MlpSpec, level: usize, path: PathBuf) -> Result<ParamSet> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint { level, path });
        }
        checkpoint::load_params(spec, &path)
    }

    pub fn load_init(&self, spec: &MlpSpec, level: usize) -> Result<ParamSet> {
        self.load_params_at(spec, level, self.init_path(level))
    }

    pub fn load_rewind(&self, spec: &MlpSpec, level: usize) -> Result<ParamSet> {
        self.load_params_at(spec, level, self.rewind_path(level))
    }

    pub fn load_final(&self, spec: &MlpSpec, level: usize) -> Result<ParamSet> {
        self.load_params_at(spec, level, self.final_path(level))
    }

    pub fn load_mask(&self, level: usize) -> Result<Mask> {
        let path = self.mask_path(level);
        if !path.exists() {
            return Err(Error::MissingCheckpoint { level, path });
        }
        checkpoint::load_mask(&path)
    }

    /// A level is complete once all binary artifacts and the metrics
    /// marker exist.
    pub fn level_complete(&self, level: usize) -> bool {
        [
            self.init_path(level),
            self.rewind_path(level),
            self.final_path(level),
            self.mask_path(level),
            self.metrics_path(level),
        ]
        .iter()
        .all(|p| p.exists())
    }
}

/// Everything produced at one pruning level.
#[derive(Debug, Clone)]
pub struct LevelResult {
    pub level: usize,
    pub mask: Mask,
    pub sparsity: SparsityReport,
    pub trace: TrainTrace,
    /// ℓ₂ distance from the original dense initialization to the level's
    /// final masked weights.
    pub learning_distance: f64,
    pub seed: u64,
    /// The exact training configuration this level ran with.
    pub config: TrainConfig,
}

/// Shared inputs of every level in one sweep.
pub struct LevelContext<'a> {
    pub spec: &'a MlpSpec,
    pub scope: &'a PrunableScope,
    pub train_set: &'a NoisyDataset,
    pub test_set: &'a Dataset,
    /// The dense run's configuration: `epochs` is the retraining budget
    /// `T`, the schedule is the original schedule, `rewind_step` is `t`.
    pub base: &'a TrainConfig,
}

/// The resolved starting point of one level's training.
#[derive(Debug, Clone)]
pub struct StartState {
    pub params: ParamSet,
    pub schedule: LrSchedule,
    pub schedule_start_epoch: usize,
    pub epochs: usize,
}

/// Convert a step count into a whole-epoch boundary (`ceil`).
///
/// The checkpoint itself is captured at the exact step; this only feeds
/// the `T − t_epochs` retraining-length accounting.
pub fn rewind_epochs(t: usize, steps_per_epoch: usize) -> usize {
    t.div_ceil(steps_per_epoch.max(1))
}

/// Build the start state of `level` for `method`.
///
/// Rewinding methods read the *dense run's* (level 0) step-t checkpoint;
/// finetune and learning-rate rewinding read the previous level's final
/// weights; scratch draws a fresh per-level initialization.
pub fn start_state(
    method: &RetrainMethod,
    store: &CheckpointStore,
    ctx: &LevelContext,
    level: usize,
    new_mask: &Mask,
) -> Result<StartState> {
    let spe = steps_per_epoch(ctx.train_set.data.len(), ctx.base.batch_size);
    let total = ctx.base.epochs;
    match method {
        RetrainMethod::LotteryRewind { t } => {
            let params = store.load_rewind(ctx.spec, 0)?.masked(new_mask)?;
            let t_epochs = rewind_epochs(*t, spe);
            Ok(StartState {
                params,
                schedule: ctx.base.schedule.clone(),
                schedule_start_epoch: t_epochs,
                epochs: total.saturating_sub(t_epochs),
            })
        }
        RetrainMethod::Finetune { lr } => {
            let params = store.load_final(ctx.spec, level - 1)?.masked(new_mask)?;
            Ok(StartState {
                params,
                schedule: LrSchedule::Fixed { lr: *lr },
                schedule_start_epoch: 0,
                epochs: total,
            })
        }
        RetrainMethod::LrRewind { t } => {
            let params = store.load_final(ctx.spec, level - 1)?.masked(new_mask)?;
            let t_epochs = rewind_epochs(*t, spe);
            Ok(StartState {
                params,
                schedule: ctx.base.schedule.clone(),
                schedule_start_epoch: t_epochs,
                epochs: total.saturating_sub(t_epochs),
            })
        }
        RetrainMethod::Scratch => {
            let seed = rng::mix(ctx.base.seed, tag::SCRATCH_INIT, level as u64);
            let params = init_params(ctx.spec, seed).masked(new_mask)?;
            Ok(StartState {
                params,
                schedule: ctx.base.schedule.clone(),
                schedule_start_epoch: 0,
                epochs: total,
            })
        }
    }
}

/// The seeded batch used by gradient-based scoring at `level`.
pub fn score_batch(ctx: &LevelContext, level: usize) -> Batch {
    let data = &ctx.train_set.data;
    let mut rng = rng::stream(ctx.base.seed, tag::SCORE_BATCH, level as u64);
    let chunks = batch_indices(data.len(), ctx.base.batch_size.min(data.len()), &mut rng);
    Batch::gather(&data.features, data.input_dim, &data.labels, &chunks[0])
}

/// Compute the next level's mask from the previous level's trained
/// weights.
pub fn next_mask(
    prev: &LevelResult,
    ctx: &LevelContext,
    strategy: PruneStrategy,
    fraction: f64,
    level: usize,
) -> Result<Mask> {
    let batch;
    let batch_ref = match strategy {
        PruneStrategy::Gradient => {
            batch = score_batch(ctx, level);
            Some(&batch)
        }
        _ => None,
    };
    let mut rng = rng::stream(ctx.base.seed, tag::SCORE_RANDOM, level as u64);
    let rng_ref = match strategy {
        PruneStrategy::Random => Some(&mut rng),
        _ => None,
    };
    let scores = mask::compute_scores(
        strategy,
        &prev.trace.final_params,
        &prev.mask,
        batch_ref,
        rng_ref,
    )?;
    mask::prune_global(&prev.mask, &scores, fraction)
}

/// Run one prune-retrain level: score the previous level's final
/// weights, prune globally by `fraction`, build the start state for
/// `method`, train, and persist the new checkpoints.
pub fn run_level(
    prev: &LevelResult,
    store: &CheckpointStore,
    strategy: PruneStrategy,
    method: &RetrainMethod,
    fraction: f64,
    ctx: &LevelContext,
) -> Result<LevelResult> {
    let level = prev.level + 1;
    let new_mask = next_mask(prev, ctx, strategy, fraction, level)?;
    run_level_with_mask(level, new_mask, store, method, ctx)
}

/// As [`run_level`], but with the mask supplied by the caller (the
/// reinitialization comparison reuses another sweep's masks verbatim).
pub fn run_level_with_mask(
    level: usize,
    new_mask: Mask,
    store: &CheckpointStore,
    method: &RetrainMethod,
    ctx: &LevelContext,
) -> Result<LevelResult> {
    let start = start_state(method, store, ctx, level, &new_mask)?;
    let config = TrainConfig {
        epochs: start.epochs,
        batch_size: ctx.base.batch_size,
        momentum: ctx.base.momentum,
        weight_decay: ctx.base.weight_decay,
        schedule: start.schedule,
        schedule_start_epoch: start.schedule_start_epoch,
        seed: ctx.base.seed,
        rewind_step: 0,
    };
    let init = start.params.clone();
    let trace = train(
        start.params,
        &new_mask,
        ctx.train_set,
        ctx.test_set,
        &config,
    )?;

    let w_init_dense = store.load_init(ctx.spec, 0)?;
    let distance = learning_distance(&w_init_dense, &trace.final_params, &new_mask)?;

    store.save_level(
        level,
        &init,
        &trace.rewind_params,
        &trace.final_params,
        &new_mask,
    )?;
    let sparsity = mask::sparsity(&new_mask, ctx.scope);
    Ok(LevelResult {
        level,
        mask: new_mask,
        sparsity,
        trace,
        learning_distance: distance,
        seed: ctx.base.seed,
        config,
    })
}
