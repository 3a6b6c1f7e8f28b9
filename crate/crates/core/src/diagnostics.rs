//! Analysis instruments over trained levels: ℓ₂ learning distance,
//! re-dense training, linear interpolation scans, filter-normalized 1-D
//! loss slices, phase classification, and double-descent signature
//! detection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mask::{Mask, PrunableScope};
use crate::math::dot_f64;
use crate::nn::{evaluate, Metrics, MlpSpec, ParamSet};
use crate::noise::NoisyDataset;
use crate::optim::{train, LrSchedule, TrainConfig, TrainTrace};
use crate::retrain::LevelResult;
use crate::rng::{self, tag};

/// ℓ₂ distance from the original dense initialization to the learned
/// masked weights: `‖w_init − (w_learned ⊙ m)‖₂` over all weight
/// tensors, biases excluded. Pruned coordinates count as zero.
pub fn learning_distance(w_init: &ParamSet, w_learned: &ParamSet, mask: &Mask) -> Result<f64> {
    if w_init.spec() != w_learned.spec() {
        return Err(Error::ShapeMismatch {
            context: "learning_distance".into(),
            expected: format!("{:?}", w_init.spec().layer_sizes),
            got: format!("{:?}", w_learned.spec().layer_sizes),
        });
    }
    mask.check_shapes(w_learned)?;
    let mut sum = 0.0f64;
    for (l, (li, ll)) in w_init.layers().iter().zip(w_learned.layers()).enumerate() {
        let bits = mask.bits(&MlpSpec::weight_name(l));
        for (i, (&wi, &wl)) in li.weight.iter().zip(&ll.weight).enumerate() {
            let masked = match bits {
                Some(b) if b[i] == 0 => 0.0,
                _ => wl as f64,
            };
            let d = wi as f64 - masked;
            sum += d * d;
        }
    }
    Ok(sum.sqrt())
}

/// Outcome of re-dense training: the dense continuation's trace (its
/// `final_params` are the re-dense solution) and the fixed rate used.
#[derive(Debug, Clone)]
pub struct RedenseResult {
    pub trace: TrainTrace,
    pub lr: f64,
    pub epochs: usize,
}

/// Lift a level's mask to all-ones and continue training the full
/// network.
///
/// Recovered coordinates start at exactly zero (the level's final
/// weights already hold zeros there); surviving coordinates start at the
/// level's final values. Trains as many epochs as the sparse phase did,
/// at a fixed learning rate equal to the sparse run's last-epoch rate;
/// batch size, momentum and weight decay are unchanged.
pub fn redense_train(
    level: &LevelResult,
    scope: &PrunableScope,
    train_set: &NoisyDataset,
    test_set: &Dataset,
) -> Result<RedenseResult> {
    let sparse_cfg = &level.config;
    let last_epoch = sparse_cfg.schedule_start_epoch + sparse_cfg.epochs.saturating_sub(1);
    let lr = sparse_cfg.schedule.lr_at(last_epoch);
    let epochs = sparse_cfg.epochs;

    let params = level.trace.final_params.clone();
    let dense_mask = Mask::all_ones(&params, scope);
    let config = TrainConfig {
        epochs,
        batch_size: sparse_cfg.batch_size,
        momentum: sparse_cfg.momentum,
        weight_decay: sparse_cfg.weight_decay,
        schedule: LrSchedule::Fixed { lr },
        schedule_start_epoch: 0,
        seed: sparse_cfg.seed,
        rewind_step: 0,
    };
    let trace = train(params, &dense_mask, train_set, test_set, &config)?;
    Ok(RedenseResult { trace, lr, epochs })
}

/// A linear interpolation scan `w(α) = (1−α)·w_s + α·w_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpScan {
    pub alphas: Vec<f64>,
    pub train: Vec<Metrics>,
    pub test: Vec<Metrics>,
}

/// Evaluate train and test metrics along the segment between two
/// solutions (sparse solutions embedded dense, zeros at pruned
/// coordinates). `step = 0.01` gives the 101-point grid.
pub fn interp_scan(
    w_s: &ParamSet,
    w_r: &ParamSet,
    train_set: &Dataset,
    test_set: &Dataset,
    step: f64,
) -> Result<InterpScan> {
    if w_s.spec() != w_r.spec() {
        return Err(Error::ShapeMismatch {
            context: "interp_scan".into(),
            expected: format!("{:?}", w_s.spec().layer_sizes),
            got: format!("{:?}", w_r.spec().layer_sizes),
        });
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "interpolation step must be in (0, 1], got {step}"
        )));
    }
    let points = (1.0 / step).round() as usize + 1;
    let alphas: Vec<f64> = (0..points)
        .map(|i| i as f64 / (points - 1) as f64)
        .collect();
    let dense_mask = Mask::from_entries(vec![], w_s.param_count())?;

    let metrics: Result<Vec<(Metrics, Metrics)>> = alphas
        .par_iter()
        .map(|&alpha| {
            let params = lerp_params(w_s, w_r, alpha);
            let tr = evaluate(&params, &dense_mask, train_set)?;
            let te = evaluate(&params, &dense_mask, test_set)?;
            Ok((tr, te))
        })
        .collect();
    let (train, test) = metrics?.into_iter().unzip();
    Ok(InterpScan {
        alphas,
        train,
        test,
    })
}

/// `(1−α)·a + α·b`, exact at both endpoints.
fn lerp_params(a: &ParamSet, b: &ParamSet, alpha: f64) -> ParamSet {
    if alpha == 0.0 {
        return a.clone();
    }
    if alpha == 1.0 {
        return b.clone();
    }
    let mut out = a.clone();
    for (l, lo) in out.layers_mut().iter_mut().enumerate() {
        let (la, lb) = (&a.layers()[l], &b.layers()[l]);
        for i in 0..lo.weight.len() {
            lo.weight[i] =
                ((1.0 - alpha) * la.weight[i] as f64 + alpha * lb.weight[i] as f64) as f32;
        }
        for i in 0..lo.bias.len() {
            lo.bias[i] = ((1.0 - alpha) * la.bias[i] as f64 + alpha * lb.bias[i] as f64) as f32;
        }
    }
    out
}

/// A 1-D filter-normalized loss slice around a center point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSlice {
    pub offsets: Vec<f64>,
    pub train_loss: Vec<f64>,
    /// Seed of the random direction, so the slice can be reproduced.
    pub direction_seed: u64,
}

/// Train loss along a random direction, rescaled so each output unit's
/// incoming-weight row of the direction has the same ℓ₂ norm as the
/// corresponding row of the center weights (zero-norm rows are zeroed;
/// bias directions are zero).
pub fn landscape_slice(
    w_center: &ParamSet,
    train_set: &Dataset,
    direction_seed: u64,
    span: f64,
    points: usize,
) -> Result<LandscapeSlice> {
    if points < 3 || points.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "slice needs an odd number of points >= 3 so offset 0 is on the grid, got {points}"
        )));
    }
    if span <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "span must be > 0, got {span}"
        )));
    }

    let direction = filter_normalized_direction(w_center, direction_seed);
    let offsets: Vec<f64> = (0..points)
        .map(|j| span * (2.0 * j as f64 / (points - 1) as f64 - 1.0))
        .collect();
    let dense_mask = Mask::from_entries(vec![], w_center.param_count())?;

    let train_loss: Result<Vec<f64>> = offsets
        .par_iter()
        .map(|&off| {
            let params = if off == 0.0 {
                w_center.clone()
            } else {
                offset_params(w_center, &direction, off)
            };
            Ok(evaluate(&params, &dense_mask, train_set)?.loss)
        })
        .collect();
    Ok(LandscapeSlice {
        offsets,
        train_loss: train_loss?,
        direction_seed,
    })
}

/// Gaussian direction with per-unit row norms matched to the center
/// weights. Returned per layer as a row-major `f64` matrix (weights
/// only; bias direction is implicitly zero).
pub fn filter_normalized_direction(w_center: &ParamSet, seed: u64) -> Vec<Vec<f64>> {
    w_center
        .layers()
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let mut rng = rng::stream(seed, tag::SLICE_DIRECTION, l as u64);
            let mut d: Vec<f64> = (0..layer.weight.len())
                .map(|_| rng::standard_normal(&mut rng))
                .collect();
            for o in 0..layer.out_dim {
                let row = o * layer.in_dim..(o + 1) * layer.in_dim;
                let w_row: Vec<f64> = layer.weight[row.clone()]
                    .iter()
                    .map(|&v| v as f64)
                    .collect();
                let w_norm = dot_f64(&w_row, &w_row).sqrt();
                let d_norm = dot_f64(&d[row.clone()], &d[row.clone()]).sqrt();
                let scale = if w_norm == 0.0 || d_norm == 0.0 {
                    0.0
                } else {
                    w_norm / d_norm
                };
                for v in &mut d[row] {
                    *v *= scale;
                }
            }
            d
        })
        .collect()
}

fn offset_params(center: &ParamSet, direction: &[Vec<f64>], off: f64) -> ParamSet {
    let mut out = center.clone();
    for (l, layer) in out.layers_mut().iter_mut().enumerate() {
        for (w, &d) in layer.weight.iter_mut().zip(&direction[l]) {
            *w = (*w as f64 + off * d) as f32;
        }
    }
    out
}

/// The four sparsity regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Light,
    Critical,
    Sweet,
    Collapsed,
}

/// Per-level phase labels plus the interpolation-threshold level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLabeling {
    /// One entry per level; `None` means no label applied.
    pub phases: Vec<Option<Phase>>,
    /// First level whose final train accuracy fell below `τ ×` the dense
    /// train accuracy.
    pub threshold_level: Option<usize>,
}

/// Classify levels into Light / Critical / Sweet / Collapsed from their
/// final-epoch train and test accuracies (level 0 is the dense run).
///
/// - threshold `θ`: first level with `train < τ · dense_train`;
/// - Critical: the contiguous run of levels with `test < dense − δ`
///   around `θ`;
/// - Light: levels before Critical with `test ≥ dense − δ`;
/// - Sweet: levels after Critical with `test > dense + δ`, up to the
///   post-threshold test-accuracy maximum;
/// - Collapsed: levels past that maximum with `test < dense − δ` and
///   `train < τ · dense_train`.
pub fn classify_phases(
    train_acc: &[f64],
    test_acc: &[f64],
    tau: f64,
    delta: f64,
) -> Result<PhaseLabeling> {
    let n = train_acc.len();
    if n != test_acc.len() {
        return Err(Error::ShapeMismatch {
            context: "classify_phases".into(),
            expected: format!("{n} test accuracies"),
            got: format!("{}", test_acc.len()),
        });
    }
    if n < 3 {
        return Err(Error::SweepTooShort { got: n, need: 3 });
    }
    let dense_train = train_acc[0];
    let dense_test = test_acc[0];
    let low_bar = dense_test - delta;
    let high_bar = dense_test + delta;

    let threshold = train_acc.iter().position(|&a| a < tau * dense_train);
    let mut phases: Vec<Option<Phase>> = vec![None; n];

    match threshold {
        None => {
            // Never failed to fit: only Light applies.
            for (l, p) in phases.iter_mut().enumerate() {
                if test_acc[l] >= low_bar {
                    *p = Some(Phase::Light);
                }
            }
            Ok(PhaseLabeling {
                phases,
                threshold_level: None,
            })
        }
        Some(theta) => {
            // Critical: contiguous run of depressed test accuracy around
            // the threshold.
            let seed = if test_acc[theta] < low_bar {
                Some(theta)
            } else if theta >= 1 && test_acc[theta - 1] < low_bar {
                Some(theta - 1)
            } else {
                None
            };
            let (mut crit_lo, mut crit_hi) = (usize::MAX, theta); // empty by default
            if let Some(s) = seed {
                let mut lo = s;
                while lo > 0 && test_acc[lo - 1] < low_bar {
                    lo -= 1;
                }
                let mut hi = s;
                while hi + 1 < n && test_acc[hi + 1] < low_bar {
                    hi += 1;
                }
                for p in phases.iter_mut().take(hi + 1).skip(lo) {
                    *p = Some(Phase::Critical);
                }
                (crit_lo, crit_hi) = (lo, hi);
            }

            // Light: unlabeled levels before Critical (or before the
            // threshold when Critical is empty) that kept dense-level
            // test accuracy.
            let light_end = if crit_lo == usize::MAX {
                theta
            } else {
                crit_lo
            };
            for l in 0..light_end {
                if phases[l].is_none() && test_acc[l] >= low_bar {
                    phases[l] = Some(Phase::Light);
                }
            }

            // Sweet: up to the post-critical test-accuracy maximum.
            let search_from = crit_hi.max(theta) + 1;
            let sweet_max =
                (search_from..n).reduce(|b, l| if test_acc[l] > test_acc[b] { l } else { b });
            if let Some(mx) = sweet_max {
                for l in search_from..=mx {
                    if test_acc[l] > high_bar {
                        phases[l] = Some(Phase::Sweet);
                    }
                }
                // Collapsed: past the maximum, both accuracies gone.
                for l in (mx + 1)..n {
                    if test_acc[l] < low_bar && train_acc[l] < tau * dense_train {
                        phases[l] = Some(Phase::Collapsed);
                    }
                }
            }

            let labeling = PhaseLabeling {
                phases,
                threshold_level: Some(theta),
            };
            debug_assert!(labeling.order_holds());
            Ok(labeling)
        }
    }
}

impl PhaseLabeling {
    /// Labels appear in nondecreasing phase order along the levels.
    pub fn order_holds(&self) -> bool {
        let rank = |p: &Phase| match p {
            Phase::Light => 0,
            Phase::Critical => 1,
            Phase::Sweet => 2,
            Phase::Collapsed => 3,
        };
        let mut last = 0;
        for p in self.phases.iter().flatten() {
            let r = rank(p);
            if r < last {
                return false;
            }
            last = r;
        }
        true
    }

    /// Levels labeled with `phase`.
    pub fn levels_in(&self, phase: Phase) -> Vec<usize> {
        self.phases
            .iter()
            .enumerate()
            .filter(|(_, p)| **p == Some(phase))
            .map(|(l, _)| l)
            .collect()
    }
}

/// Indices of the dip / peak / collapse of a double-descent curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdSignature {
    pub dip_level: usize,
    pub peak_level: usize,
    pub collapse_level: usize,
}

pub const DD_COLLAPSE_MARGIN: f64 = 0.05;

/// Detect the fall-rise-fall shape in a last-epoch test-accuracy curve.
///
/// dip = first argmin before the global max of the post-dense suffix;
/// peak = argmax after the dip; collapse = the last level if its accuracy
/// sits more than `margin` below the peak. Returns `None` whenever that
/// ordering is absent (monotone or flat curves, no dip below the dense
/// point, no post-dip recovery, or no final drop). Needs at least 5
/// levels.
pub fn dd_signature(test_acc: &[f64], _sparsity: &[f64], margin: f64) -> Option<DdSignature> {
    let n = test_acc.len();
    if n < 5 {
        return None;
    }
    // Global max of the suffix (levels >= 1), first occurrence.
    let suffix_max = (1..n).fold(1usize, |b, l| if test_acc[l] > test_acc[b] { l } else { b });
    // First argmin strictly before it.
    let dip = (0..suffix_max).fold(0usize, |b, l| if test_acc[l] < test_acc[b] { l } else { b });
    if dip == 0 || test_acc[dip] >= test_acc[0] {
        return None; // no real dip below the dense level
    }
    // Argmax after the dip, first occurrence.
    let peak = (dip + 1..n).fold(
        dip + 1,
        |b, l| if test_acc[l] > test_acc[b] { l } else { b },
    );
    if test_acc[peak] <= test_acc[dip] {
        return None; // no recovery
    }
    let last = n - 1;
    if test_acc[last] < test_acc[peak] - margin {
        Some(DdSignature {
            dip_level: dip,
            peak_level: peak,
            collapse_level: last,
        })
    } else {
        None
    }
}
