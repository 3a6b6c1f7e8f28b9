//! SGD with momentum and weight decay, step learning-rate schedules, and
//! the epoch training loop with rewind-checkpoint capture.
//!
//! The loop is deterministic: the per-epoch shuffle stream is derived from
//! `(seed, epoch)` alone (see [`crate::rng::shuffle_stream`]), updates are
//! sequential, and after every optimizer step the mask is re-applied so
//! pruned coordinates stay exactly zero.

use serde::{Deserialize, Serialize};

use crate::data::{batch_indices, steps_per_epoch, Dataset};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::nn::{evaluate, loss_and_grads, Batch, GradSet, Metrics, MlpSpec, ParamSet};
use crate::noise::NoisyDataset;
use crate::rng::shuffle_stream;

/// Learning-rate schedule, indexed by epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// A single constant rate.
    Fixed { lr: f64 },
    /// `base_lr × factor^(number of drop epochs ≤ epoch)`.
    Step {
        base_lr: f64,
        drop_epochs: Vec<usize>,
        drop_factor: f64,
    },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            LrSchedule::Fixed { lr } => {
                if *lr <= 0.0 {
                    return Err(Error::InvalidConfig(format!("lr must be > 0, got {lr}")));
                }
            }
            LrSchedule::Step {
                base_lr,
                drop_epochs,
                drop_factor,
            } => {
                if *base_lr <= 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "base_lr must be > 0, got {base_lr}"
                    )));
                }
                if !(*drop_factor > 0.0 && *drop_factor <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "drop_factor must be in (0, 1], got {drop_factor}"
                    )));
                }
                if drop_epochs.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidConfig(
                        "drop_epochs must be strictly increasing".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Rate in effect at `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self {
            LrSchedule::Fixed { lr } => *lr,
            LrSchedule::Step {
                base_lr,
                drop_epochs,
                drop_factor,
            } => {
                let drops = drop_epochs.iter().filter(|&&d| d <= epoch).count();
                base_lr * drop_factor.powi(drops as i32)
            }
        }
    }
}

/// Everything one training run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
    /// Epoch offset into the schedule and shuffle streams. Rewinding
    /// retrains resume here instead of epoch 0.
    pub schedule_start_epoch: usize,
    pub seed: u64,
    /// Capture a checkpoint after this many optimizer steps; 0 means the
    /// pre-training weights.
    pub rewind_step: usize,
}

impl TrainConfig {
    pub fn validate(&self, train_len: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.momentum < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig(
                "momentum and weight_decay must be >= 0".into(),
            ));
        }
        self.schedule.validate()?;
        let total_steps = self.epochs * steps_per_epoch(train_len, self.batch_size);
        if self.rewind_step > total_steps {
            return Err(Error::InvalidConfig(format!(
                "rewind step {} exceeds total steps {total_steps}",
                self.rewind_step
            )));
        }
        Ok(())
    }
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone)]
pub struct SgdState {
    v_weight: Vec<Vec<f32>>,
    v_bias: Vec<Vec<f32>>,
}

impl SgdState {
    pub fn zeros(params: &ParamSet) -> Self {
        Self {
            v_weight: params
                .layers()
                .iter()
                .map(|l| vec![0.0; l.weight.len()])
                .collect(),
            v_bias: params
                .layers()
                .iter()
                .map(|l| vec![0.0; l.bias.len()])
                .collect(),
        }
    }
}

/// One momentum-SGD update:
///
/// - weights: `g = (raw ⊙ mask) + wd·w`, `v ← momentum·v + g`,
///   `w ← w − lr·v`, then the mask is re-applied so pruned coordinates
///   remain exactly `0`.
/// - biases: same, without weight decay and without masking.
///
/// Gradients may be passed raw; masking happens here.
pub fn sgd_step(
    params: &mut ParamSet,
    grads: &GradSet,
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    mask: &Mask,
) -> Result<()> {
    let num_layers = params.layers().len();
    for l in 0..num_layers {
        let bits = mask.bits(&MlpSpec::weight_name(l)).map(|b| b.to_vec());
        let layer = &mut params.layers_mut()[l];
        let g = &grads.layers[l];
        let vw = &mut state.v_weight[l];
        for i in 0..layer.weight.len() {
            let masked_out = bits.as_ref().is_some_and(|b| b[i] == 0);
            let raw = if masked_out {
                0.0
            } else {
                g.d_weight[i] as f64
            };
            let gi = raw + weight_decay * layer.weight[i] as f64;
            let v = momentum * vw[i] as f64 + gi;
            vw[i] = v as f32;
            let w = layer.weight[i] as f64 - lr * v;
            layer.weight[i] = if masked_out { 0.0 } else { w as f32 };
            if !layer.weight[i].is_finite() {
                return Err(Error::NonFiniteUpdate { epoch: 0, step: 0 });
            }
        }
        let vb = &mut state.v_bias[l];
        for ((b, vb_i), &db) in layer.bias.iter_mut().zip(vb.iter_mut()).zip(&g.d_bias) {
            let v = momentum * *vb_i as f64 + db as f64;
            *vb_i = v as f32;
            *b = (*b as f64 - lr * v) as f32;
            if !b.is_finite() {
                return Err(Error::NonFiniteUpdate { epoch: 0, step: 0 });
            }
        }
    }
    Ok(())
}

/// Everything a training run produced.
#[derive(Debug, Clone)]
pub struct TrainTrace {
    /// Full-dataset train metrics after each epoch (noisy labels).
    pub train_metrics: Vec<Metrics>,
    /// Full test-set metrics after each epoch.
    pub test_metrics: Vec<Metrics>,
    /// Metrics of the starting weights, before the first optimizer step.
    pub initial_train: Metrics,
    pub initial_test: Metrics,
    pub final_params: ParamSet,
    /// The exact parameters after `rewind_step` optimizer steps
    /// (`rewind_step = 0` means the starting weights).
    pub rewind_params: ParamSet,
    pub rewind_step: usize,
    pub best_test_acc: f64,
    pub best_test_epoch: usize,
    pub epochs_trained: usize,
}

impl TrainTrace {
    pub fn final_train(&self) -> Metrics {
        *self.train_metrics.last().unwrap_or(&self.initial_train)
    }

    pub fn final_test(&self) -> Metrics {
        *self.test_metrics.last().unwrap_or(&self.initial_test)
    }
}

/// Train for `config.epochs` epochs of mini-batch SGD over seeded
/// per-epoch shuffles.
///
/// Parameters are masked on entry; the step-`t` checkpoint is captured
/// bit-exactly; per-epoch metrics are full-dataset evaluations of the
/// fixed end-of-epoch weights. Deterministic given `(params, mask,
/// datasets, config)`. On divergence the error carries the epoch/step.
pub fn train(
    params: ParamSet,
    mask: &Mask,
    train_set: &NoisyDataset,
    test_set: &Dataset,
    config: &TrainConfig,
) -> Result<TrainTrace> {
    config.validate(train_set.data.len())?;
    let mut params = params.masked(mask)?;
    let mut state = SgdState::zeros(&params);

    let initial_train = evaluate(&params, mask, &train_set.data)?;
    let initial_test = evaluate(&params, mask, test_set)?;

    let mut rewind_params = params.clone();
    let mut step = 0usize;
    let mut train_metrics = Vec::with_capacity(config.epochs);
    let mut test_metrics = Vec::with_capacity(config.epochs);

    let data = &train_set.data;
    for epoch in 0..config.epochs {
        let global_epoch = config.schedule_start_epoch + epoch;
        let lr = config.schedule.lr_at(global_epoch);
        let mut rng = shuffle_stream(config.seed, global_epoch);
        for chunk in batch_indices(data.len(), config.batch_size, &mut rng) {
            let batch = Batch::gather(&data.features, data.input_dim, &data.labels, &chunk);
            let (_, grads) = loss_and_grads(&params, mask, &batch)
                .map_err(|e| with_step_context(e, epoch, step))?;
            sgd_step(
                &mut params,
                &grads,
                &mut state,
                lr,
                config.momentum,
                config.weight_decay,
                mask,
            )
            .map_err(|e| with_step_context(e, epoch, step))?;
            step += 1;
            if step == config.rewind_step {
                rewind_params = params.clone();
            }
            debug_assert!(params.masked_coords_are_zero(mask));
        }
        train_metrics.push(evaluate(&params, mask, data)?);
        test_metrics.push(evaluate(&params, mask, test_set)?);
    }

    let (best_test_epoch, best_test_acc) =
        test_metrics
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |(be, ba), (e, m)| {
                if m.accuracy > ba {
                    (e, m.accuracy)
                } else {
                    (be, ba)
                }
            });
    let (best_test_epoch, best_test_acc) = if test_metrics.is_empty() {
        (0, initial_test.accuracy)
    } else {
        (best_test_epoch, best_test_acc)
    };

    Ok(TrainTrace {
        train_metrics,
        test_metrics,
        initial_train,
        initial_test,
        final_params: params,
        rewind_params,
        rewind_step: config.rewind_step,
        best_test_acc,
        best_test_epoch,
        epochs_trained: config.epochs,
    })
}

fn with_step_context(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { epoch, step },
        Error::NonFiniteUpdate { .. } => Error::NonFiniteUpdate { epoch, step },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic;
    use crate::mask::{Mask, PrunableScope};
    use crate::nn::{init_params, MlpSpec};

    fn fixed(lr: f64) -> LrSchedule {
        LrSchedule::Fixed { lr }
    }

    #[test]
    fn lr_schedule_mnist_row_is_flat() {
        let s = LrSchedule::Step {
            base_lr: 0.1,
            drop_epochs: vec![],
            drop_factor: 0.1,
        };
        assert_eq!(s.lr_at(0), 0.1);
        assert_eq!(s.lr_at(150), 0.1);
    }

    #[test]
    fn lr_schedule_cifar_row_drops() {
        let s = LrSchedule::Step {
            base_lr: 0.1,
            drop_epochs: vec![80, 120],
            drop_factor: 0.1,
        };
        assert!((s.lr_at(79) - 0.1).abs() < 1e-15);
        assert!((s.lr_at(80) - 0.01).abs() < 1e-15);
        assert!((s.lr_at(119) - 0.01).abs() < 1e-15);
        assert!((s.lr_at(120) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn lr_identity_factor_is_constant() {
        let s = LrSchedule::Step {
            base_lr: 0.1,
            drop_epochs: vec![3, 5, 9],
            drop_factor: 1.0,
        };
        for e in 0..20 {
            assert_eq!(s.lr_at(e), 0.1);
        }
    }

    fn manual_two_param_setup() -> (ParamSet, Mask) {
        // A [2, 1] "network" so the weight vector is just (w0, w1).
        let spec = MlpSpec::new(vec![2, 1]).unwrap();
        let mut params = init_params(&spec, 0);
        params.layers_mut()[0].weight.copy_from_slice(&[0.0, 0.0]);
        let scope = PrunableScope::from_names(["fc1.weight".to_string()]).unwrap();
        let mask = Mask::all_ones(&params, &scope);
        (params, mask)
    }

    fn grads_of(params: &ParamSet, w: &[f32]) -> GradSet {
        GradSet {
            layers: vec![crate::nn::LayerGrads {
                d_weight: w.to_vec(),
                d_bias: vec![0.0; params.layers()[0].bias.len()],
            }],
        }
    }

    #[test]
    fn plain_sgd_arithmetic() {
        let (mut params, mask) = manual_two_param_setup();
        let mut state = SgdState::zeros(&params);
        let grads = grads_of(&params, &[1.0, -2.0]);
        sgd_step(&mut params, &grads, &mut state, 0.1, 0.0, 0.0, &mask).unwrap();
        assert_eq!(params.layers()[0].weight, [-0.1, 0.2]);
    }

    #[test]
    fn momentum_two_step_oracle() {
        // momentum 0.9, two identical steps g = 1 at lr = 1 from w = 0:
        // w2 = -(1) - (0.9*1 + 1) = -2.9.
        let (mut params, mask) = manual_two_param_setup();
        let mut state = SgdState::zeros(&params);
        let grads = grads_of(&params, &[1.0, 1.0]);
        sgd_step(&mut params, &grads, &mut state, 1.0, 0.9, 0.0, &mask).unwrap();
        sgd_step(&mut params, &grads, &mut state, 1.0, 0.9, 0.0, &mask).unwrap();
        assert_eq!(params.layers()[0].weight, [-2.9, -2.9]);
    }

    #[test]
    fn pruned_coordinates_stay_exactly_zero() {
        let (mut params, mask) = manual_two_param_setup();
        params.layers_mut()[0].weight.copy_from_slice(&[0.5, 0.5]);
        let mut pruned = mask.clone();
        let entries = vec![crate::mask::MaskEntry {
            name: "fc1.weight".into(),
            dims: vec![1, 2],
            bits: vec![0, 1],
        }];
        pruned = Mask::from_entries(entries, pruned.dense_param_count()).unwrap();
        let mut params = params.masked(&pruned).unwrap();
        let mut state = SgdState::zeros(&params);
        let grads = grads_of(&params, &[3.0, 3.0]);
        for _ in 0..5 {
            sgd_step(&mut params, &grads, &mut state, 0.1, 0.9, 1e-4, &pruned).unwrap();
            assert_eq!(params.layers()[0].weight[0].to_bits(), 0.0f32.to_bits());
        }
    }

    #[test]
    fn zero_epochs_returns_inputs_unchanged() {
        let spec = MlpSpec::new(vec![4, 3, 2]).unwrap();
        let params = init_params(&spec, 5);
        let scope = PrunableScope::hidden_weights(&spec);
        let mask = Mask::all_ones(&params, &scope);
        let train_ds = NoisyDataset::clean(make_synthetic(12, 4, 2, 3.0, 1));
        let test_ds = make_synthetic(8, 4, 2, 3.0, 2);
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 4,
            momentum: 0.0,
            weight_decay: 0.0,
            schedule: fixed(0.1),
            schedule_start_epoch: 0,
            seed: 3,
            rewind_step: 0,
        };
        let trace = train(params.clone(), &mask, &train_ds, &test_ds, &cfg).unwrap();
        assert!(trace.final_params.bits_eq(&params));
        assert!(trace.rewind_params.bits_eq(&params));
        assert!(trace.train_metrics.is_empty());
        assert_eq!(trace.epochs_trained, 0);
    }

    #[test]
    fn rewind_zero_checkpoint_equals_initial_weights() {
        let spec = MlpSpec::new(vec![4, 5, 2]).unwrap();
        let params = init_params(&spec, 7);
        let scope = PrunableScope::hidden_weights(&spec);
        let mask = Mask::all_ones(&params, &scope);
        let train_ds = NoisyDataset::clean(make_synthetic(20, 4, 2, 3.0, 1));
        let test_ds = make_synthetic(8, 4, 2, 3.0, 2);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            momentum: 0.0,
            weight_decay: 0.0,
            schedule: fixed(0.1),
            schedule_start_epoch: 0,
            seed: 3,
            rewind_step: 0,
        };
        let trace = train(params.clone(), &mask, &train_ds, &test_ds, &cfg).unwrap();
        assert!(trace.rewind_params.bits_eq(&params));
        assert!(!trace.final_params.bits_eq(&params));
    }

    #[test]
    fn rewind_checkpoint_matches_manual_replay() {
        // Replay the loop from the public pieces and stop after t steps;
        // the captured checkpoint must match bit-exactly.
        let spec = MlpSpec::new(vec![4, 5, 3]).unwrap();
        let params = init_params(&spec, 11);
        let scope = PrunableScope::hidden_weights(&spec);
        let mask = Mask::all_ones(&params, &scope);
        let train_ds = NoisyDataset::clean(make_synthetic(20, 4, 3, 3.0, 4));
        let test_ds = make_synthetic(9, 4, 3, 3.0, 5);
        let t = 7; // mid-epoch: 20/8 -> 3 steps/epoch
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 8,
            momentum: 0.9,
            weight_decay: 1e-4,
            schedule: fixed(0.05),
            schedule_start_epoch: 0,
            seed: 13,
            rewind_step: t,
        };
        let trace = train(params.clone(), &mask, &train_ds, &test_ds, &cfg).unwrap();

        let mut replay = params.masked(&mask).unwrap();
        let mut state = SgdState::zeros(&replay);
        let mut step = 0;
        'outer: for epoch in 0..cfg.epochs {
            let mut rng = shuffle_stream(cfg.seed, epoch);
            for chunk in batch_indices(20, 8, &mut rng) {
                let batch = Batch::gather(
                    &train_ds.data.features,
                    train_ds.data.input_dim,
                    &train_ds.data.labels,
                    &chunk,
                );
                let (_, grads) = loss_and_grads(&replay, &mask, &batch).unwrap();
                sgd_step(&mut replay, &grads, &mut state, 0.05, 0.9, 1e-4, &mask).unwrap();
                step += 1;
                if step == t {
                    break 'outer;
                }
            }
        }
        assert!(trace.rewind_params.bits_eq(&replay));
    }

    #[test]
    fn separable_blobs_reach_high_train_accuracy() {
        let spec = MlpSpec::new(vec![6, 8, 2]).unwrap();
        let params = init_params(&spec, 21);
        let scope = PrunableScope::hidden_weights(&spec);
        let mask = Mask::all_ones(&params, &scope);
        let train_ds = NoisyDataset::clean(make_synthetic(200, 6, 2, 8.0, 6));
        let test_ds = make_synthetic(80, 6, 2, 8.0, 7);
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 32,
            momentum: 0.9,
            weight_decay: 0.0,
            schedule: fixed(0.1),
            schedule_start_epoch: 0,
            seed: 8,
            rewind_step: 0,
        };
        let trace = train(params, &mask, &train_ds, &test_ds, &cfg).unwrap();
        assert!(
            trace.final_train().accuracy >= 0.95,
            "train accuracy {}",
            trace.final_train().accuracy
        );
        let best = trace
            .test_metrics
            .iter()
            .map(|m| m.accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(trace.best_test_acc, best);
    }

    #[test]
    fn indistinguishable_classes_sit_at_chance_level() {
        // Separation 0: both blobs share one mean, so nothing beats 1/K.
        let spec = MlpSpec::new(vec![6, 8, 2]).unwrap();
        let params = init_params(&spec, 4);
        let scope = PrunableScope::hidden_weights(&spec);
        let mask = Mask::all_ones(&params, &scope);
        let (train_half, test) = crate::data::make_synthetic_pair(400, 400, 6, 2, 0.0, 9);
        let train_ds = NoisyDataset::clean(train_half);
        let cfg = TrainConfig {
            epochs: 12,
            batch_size: 32,
            momentum: 0.9,
            weight_decay: 0.0,
            schedule: fixed(0.1),
            schedule_start_epoch: 0,
            seed: 10,
            rewind_step: 0,
        };
        let trace = train(params, &mask, &train_ds, &test, &cfg).unwrap();
        let acc = trace.final_test().accuracy;
        // Chance is 0.5; allow a generous sampling band.
        assert!((acc - 0.5).abs() < 0.12, "test accuracy {acc} not at chance");
    }

    #[test]
    fn divergence_aborts_with_step_context() {
        let spec = MlpSpec::new(vec![4, 6, 3]).unwrap();
        let params = init_params(&spec, 2);
        let scope = PrunableScope::hidden_weights(&spec);
        let mask = Mask::all_ones(&params, &scope);
        let train_ds = NoisyDataset::clean(make_synthetic(30, 4, 3, 3.0, 1));
        let test_ds = make_synthetic(12, 4, 3, 3.0, 2);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            momentum: 0.0,
            weight_decay: 0.0,
            schedule: fixed(1e30), // guaranteed blow-up
            schedule_start_epoch: 0,
            seed: 5,
            rewind_step: 0,
        };
        let err = train(params, &mask, &train_ds, &test_ds, &cfg).unwrap_err();
        match err {
            Error::NonFiniteLoss { .. } | Error::NonFiniteUpdate { .. } => {}
            other => panic!("expected a non-finite abort, got {other}"),
        }
    }

    #[test]
    fn training_is_deterministic() {
        let spec = MlpSpec::new(vec![4, 6, 3]).unwrap();
        let params = init_params(&spec, 2);
        let scope = PrunableScope::hidden_weights(&spec);
        let mask = Mask::all_ones(&params, &scope);
        let train_ds = NoisyDataset::clean(make_synthetic(30, 4, 3, 3.0, 1));
        let test_ds = make_synthetic(12, 4, 3, 3.0, 2);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 7,
            momentum: 0.9,
            weight_decay: 1e-4,
            schedule: LrSchedule::Step {
                base_lr: 0.1,
                drop_epochs: vec![2],
                drop_factor: 0.1,
            },
            schedule_start_epoch: 0,
            seed: 77,
            rewind_step: 2,
        };
        let a = train(params.clone(), &mask, &train_ds, &test_ds, &cfg).unwrap();
        let b = train(params, &mask, &train_ds, &test_ds, &cfg).unwrap();
        assert!(a.final_params.bits_eq(&b.final_params));
        assert!(a.rewind_params.bits_eq(&b.rewind_params));
        assert_eq!(a.test_metrics, b.test_metrics);
    }

    #[test]
    fn rewind_step_beyond_run_is_rejected() {
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            momentum: 0.0,
            weight_decay: 0.0,
            schedule: fixed(0.1),
            schedule_start_epoch: 0,
            seed: 0,
            rewind_step: 100,
        };
        assert!(cfg.validate(20).is_err());
    }
}
