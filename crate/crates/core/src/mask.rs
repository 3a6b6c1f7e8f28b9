//! Binary masks over prunable weights, pruning scores, and global
//! one-shot pruning of a fixed fraction.
//!
//! Sparsity bookkeeping follows `1 − Σ mᵢ / d`, reported two ways: over
//! the prunable weights only, and over every parameter of the network
//! (biases and non-prunable weights counted as surviving).

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{loss_and_grads, Batch, MlpSpec, ParamSet};

/// Names of the parameter tensors eligible for pruning.
///
/// Biases are never eligible. The standard scope for an MLP is every
/// weight matrix except the output layer's.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrunableScope {
    names: BTreeSet<String>,
}

impl PrunableScope {
    /// Weights of all layers but the last; biases excluded.
    pub fn hidden_weights(spec: &MlpSpec) -> Self {
        let names = (0..spec.num_layers().saturating_sub(1))
            .map(MlpSpec::weight_name)
            .collect();
        Self { names }
    }

    pub fn from_names<I: IntoIterator<Item = String>>(names: I) -> Result<Self> {
        let names: BTreeSet<String> = names.into_iter().collect();
        if let Some(bad) = names.iter().find(|n| n.ends_with(".bias")) {
            return Err(Error::InvalidConfig(format!(
                "biases are never prunable: {bad}"
            )));
        }
        Ok(Self { names })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains(name)
    }

    /// Scope names in sorted order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

/// One prunable tensor's mask bits (`0` = pruned, `1` = surviving).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub bits: Vec<u8>,
}

/// Binary mask over the prunable weights of one network.
///
/// Entries are kept sorted by tensor name; tensors outside the mask are
/// implicitly all-ones. The dense parameter count of the covered network
/// is carried along so total-sparsity can be reported without the
/// `ParamSet` at hand.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    entries: Vec<MaskEntry>,
    dense_param_count: usize,
}

/// Sparsity of a mask: fraction pruned over the prunable scope, fraction
/// pruned over all parameters, and the surviving prunable count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub prunable: f64,
    pub total: f64,
    pub surviving: usize,
}

impl Mask {
    /// All-ones mask over `scope` for `params`.
    pub fn all_ones(params: &ParamSet, scope: &PrunableScope) -> Mask {
        let mut entries = Vec::new();
        for (name, dims, data) in params.named_tensors() {
            if scope.contains(&name) {
                entries.push(MaskEntry {
                    name,
                    dims,
                    bits: vec![1u8; data.len()],
                });
            }
        }
        entries.sort_by(|a, b| a.name.cmp(&b.name));
        Mask {
            entries,
            dense_param_count: params.param_count(),
        }
    }

    pub fn from_entries(mut entries: Vec<MaskEntry>, dense_param_count: usize) -> Result<Mask> {
        for e in &entries {
            let len: usize = e.dims.iter().product();
            if e.bits.len() != len {
                return Err(Error::ShapeMismatch {
                    context: e.name.clone(),
                    expected: format!("{len} mask bits"),
                    got: format!("{}", e.bits.len()),
                });
            }
            if e.bits.iter().any(|&b| b > 1) {
                return Err(Error::InvalidConfig(format!(
                    "mask {} has entries outside {{0,1}}",
                    e.name
                )));
            }
        }
        entries.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(Mask {
            entries,
            dense_param_count,
        })
    }

    pub fn entries(&self) -> &[MaskEntry] {
        &self.entries
    }

    pub fn bits(&self, name: &str) -> Option<&[u8]> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.bits.as_slice())
    }

    pub fn dense_param_count(&self) -> usize {
        self.dense_param_count
    }

    /// Count of surviving (bit = 1) prunable coordinates.
    pub fn surviving(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.bits.iter().filter(|&&b| b == 1).count())
            .sum()
    }

    /// Total prunable coordinate count.
    pub fn prunable_total(&self) -> usize {
        self.entries.iter().map(|e| e.bits.len()).sum()
    }

    /// Verify the mask's tensors exist in `params` with matching shapes.
    pub fn check_shapes(&self, params: &ParamSet) -> Result<()> {
        for e in &self.entries {
            let found = params
                .named_tensors()
                .find(|(name, _, _)| *name == e.name)
                .ok_or_else(|| Error::ShapeMismatch {
                    context: e.name.clone(),
                    expected: "a parameter tensor with this name".into(),
                    got: "nothing".into(),
                })?;
            if found.1 != e.dims {
                return Err(Error::ShapeMismatch {
                    context: e.name.clone(),
                    expected: format!("{:?}", found.1),
                    got: format!("{:?}", e.dims),
                });
            }
        }
        Ok(())
    }

    /// `self ≤ outer` elementwise (once pruned, always pruned).
    pub fn is_nested_in(&self, outer: &Mask) -> bool {
        self.entries.len() == outer.entries.len()
            && self
                .entries
                .iter()
                .zip(&outer.entries)
                .all(|(a, b)| a.name == b.name && a.bits.iter().zip(&b.bits).all(|(&x, &y)| x <= y))
    }
}

/// Sparsity of `mask` with respect to its prunable scope and the full
/// parameter vector.
pub fn sparsity(mask: &Mask, scope: &PrunableScope) -> SparsityReport {
    debug_assert!(mask.entries.iter().all(|e| scope.contains(&e.name)));
    let prunable_total = mask.prunable_total();
    let surviving = mask.surviving();
    let removed = prunable_total - surviving;
    let prunable = if prunable_total == 0 {
        0.0
    } else {
        removed as f64 / prunable_total as f64
    };
    let total = if mask.dense_param_count == 0 {
        0.0
    } else {
        removed as f64 / mask.dense_param_count as f64
    };
    SparsityReport {
        prunable,
        total,
        surviving,
    }
}

/// The three pruning heuristics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneStrategy {
    /// Lowest `|w|` pruned first.
    Magnitude,
    /// Lowest `|∂L/∂w ⊙ w|` pruned first, gradients taken on one batch.
    Gradient,
    /// I.i.d. `U(0,1)` scores; lowest pruned first.
    Random,
}

impl PruneStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            PruneStrategy::Magnitude => "magnitude",
            PruneStrategy::Gradient => "gradient",
            PruneStrategy::Random => "random",
        }
    }
}

/// Per-prunable-tensor scores, aligned with the mask entries.
///
/// Already-pruned coordinates carry `-inf` so they are never re-ranked.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    pub entries: Vec<(String, Vec<f64>)>,
}

/// Scores for every prunable coordinate under `strategy`.
///
/// The gradient strategy needs a batch; the random strategy needs an RNG
/// stream. Scores at already-pruned coordinates are set to the `-inf`
/// sentinel.
pub fn compute_scores(
    strategy: PruneStrategy,
    params: &ParamSet,
    mask: &Mask,
    batch: Option<&Batch>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<ScoreSet> {
    let raw_grads = match strategy {
        PruneStrategy::Gradient => {
            let batch = batch.ok_or(Error::MissingScoreInput {
                strategy: "gradient",
                missing: "a batch of examples",
            })?;
            let (_, grads) = loss_and_grads(params, mask, batch)?;
            Some(grads)
        }
        _ => None,
    };
    let mut rng = match strategy {
        PruneStrategy::Random => Some(rng.ok_or(Error::MissingScoreInput {
            strategy: "random",
            missing: "an RNG stream",
        })?),
        _ => None,
    };

    let mut entries = Vec::with_capacity(mask.entries().len());
    for entry in mask.entries() {
        let layer_idx = params
            .layers()
            .iter()
            .enumerate()
            .position(|(l, _)| MlpSpec::weight_name(l) == entry.name)
            .ok_or_else(|| Error::ShapeMismatch {
                context: entry.name.clone(),
                expected: "a weight tensor".into(),
                got: "nothing".into(),
            })?;
        let weights = &params.layers()[layer_idx].weight;

        let mut scores: Vec<f64> = match strategy {
            PruneStrategy::Magnitude => weights.iter().map(|&w| w.abs() as f64).collect(),
            PruneStrategy::Gradient => {
                let g = &raw_grads.as_ref().unwrap().layers[layer_idx].d_weight;
                weights
                    .iter()
                    .zip(g.iter())
                    .map(|(&w, &gw)| (gw as f64 * w as f64).abs())
                    .collect()
            }
            PruneStrategy::Random => {
                let rng = rng.as_deref_mut().unwrap();
                (0..weights.len()).map(|_| rng.gen::<f64>()).collect()
            }
        };

        for (i, (s, &b)) in scores.iter_mut().zip(&entry.bits).enumerate() {
            if b == 0 {
                *s = f64::NEG_INFINITY;
            } else if !s.is_finite() {
                return Err(Error::NonFiniteScore {
                    tensor: entry.name.clone(),
                    index: i,
                });
            }
        }
        entries.push((entry.name.clone(), scores));
    }
    Ok(ScoreSet { entries })
}

/// Remove the `floor(fraction × surviving)` lowest-scored surviving
/// coordinates, pooled globally across all prunable tensors.
///
/// Ties at the cut boundary are broken by ascending `(tensor name, flat
/// index)`. The result is nested within the input mask.
pub fn prune_global(mask: &Mask, scores: &ScoreSet, fraction: f64) -> Result<Mask> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "prune fraction must be in (0, 1), got {fraction}"
        )));
    }
    let surviving = mask.surviving();
    if surviving == 0 {
        return Err(Error::MaskExhausted);
    }
    // Guard the floor against products like 0.3 × 10 landing just below
    // the true integer.
    let k = (fraction * surviving as f64 + 1e-9).floor() as usize;

    // Pool surviving coordinates. Entry order is name order, so the index
    // pair (entry, flat) is exactly the stated tie-break key.
    let mut pool: Vec<(f64, usize, usize)> = Vec::with_capacity(surviving);
    for (ei, entry) in mask.entries().iter().enumerate() {
        let (sname, svals) = &scores.entries[ei];
        if sname != &entry.name || svals.len() != entry.bits.len() {
            return Err(Error::ShapeMismatch {
                context: entry.name.clone(),
                expected: "scores aligned with mask".into(),
                got: format!("scores for {sname}"),
            });
        }
        for (i, (&b, &s)) in entry.bits.iter().zip(svals).enumerate() {
            if b == 1 {
                if !s.is_finite() {
                    return Err(Error::NonFiniteScore {
                        tensor: entry.name.clone(),
                        index: i,
                    });
                }
                pool.push((s, ei, i));
            }
        }
    }

    pool.sort_unstable_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("scores validated finite")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut out = mask.clone();
    for &(_, ei, i) in pool.iter().take(k) {
        out.entries[ei].bits[i] = 0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, MlpSpec};
    use crate::rng;

    fn tiny() -> (ParamSet, PrunableScope) {
        let spec = MlpSpec::new(vec![4, 3, 2]).unwrap();
        let params = init_params(&spec, 9);
        let scope = PrunableScope::hidden_weights(&spec);
        (params, scope)
    }

    #[test]
    fn lenet_scope_excludes_output_layer_and_biases() {
        let spec = MlpSpec::lenet_300_100();
        let scope = PrunableScope::hidden_weights(&spec);
        let names: Vec<&str> = scope.names().collect();
        assert_eq!(names, ["fc1.weight", "fc2.weight"]);
    }

    #[test]
    fn bias_scope_rejected() {
        assert!(PrunableScope::from_names(["fc1.bias".to_string()]).is_err());
    }

    #[test]
    fn all_ones_sparsity_is_zero() {
        let (params, scope) = tiny();
        let mask = Mask::all_ones(&params, &scope);
        let rep = sparsity(&mask, &scope);
        assert_eq!(rep.prunable, 0.0);
        assert_eq!(rep.total, 0.0);
        assert_eq!(rep.surviving, 4 * 3); // fc1 only: fc2 is the output layer
    }

    #[test]
    fn lenet_iterated_prune_counts() {
        // Counting oracle for the 784-300-100-10 scope: d_p = 265200,
        // one 20% prune removes floor(0.2 * 265200) = 53040, a second
        // removes floor(0.2 * 212160) = 42432.
        let spec = MlpSpec::lenet_300_100();
        let params = init_params(&spec, 1);
        let scope = PrunableScope::hidden_weights(&spec);
        let m0 = Mask::all_ones(&params, &scope);
        assert_eq!(m0.prunable_total(), 784 * 300 + 300 * 100);

        let s1 = compute_scores(PruneStrategy::Magnitude, &params, &m0, None, None).unwrap();
        let m1 = prune_global(&m0, &s1, 0.2).unwrap();
        let r1 = sparsity(&m1, &scope);
        assert_eq!(r1.surviving, 212_160);
        assert_eq!(r1.prunable, 0.2);

        let s2 = compute_scores(PruneStrategy::Magnitude, &params, &m1, None, None).unwrap();
        let m2 = prune_global(&m1, &s2, 0.2).unwrap();
        let r2 = sparsity(&m2, &scope);
        assert_eq!(r2.surviving, 169_728);
        assert_eq!(r2.prunable, 0.36);
        assert!(m2.is_nested_in(&m1) && m1.is_nested_in(&m0));
    }

    #[test]
    fn magnitude_prune_respects_threshold_property() {
        // Sort-based oracle: every removed |w| <= every surviving |w|.
        let spec = MlpSpec::lenet_300_100();
        let params = init_params(&spec, 3);
        let scope = PrunableScope::hidden_weights(&spec);
        let m0 = Mask::all_ones(&params, &scope);
        let scores = compute_scores(PruneStrategy::Magnitude, &params, &m0, None, None).unwrap();
        let m1 = prune_global(&m0, &scores, 0.2).unwrap();

        let mut removed_max = f64::NEG_INFINITY;
        let mut survived_min = f64::INFINITY;
        for (e, (_, svals)) in m1.entries().iter().zip(&scores.entries) {
            for (&b, &s) in e.bits.iter().zip(svals) {
                if b == 0 {
                    removed_max = removed_max.max(s);
                } else {
                    survived_min = survived_min.min(s);
                }
            }
        }
        assert!(removed_max <= survived_min);
    }

    #[test]
    fn magnitude_scores_are_absolute_values() {
        let (params, scope) = tiny();
        let mask = Mask::all_ones(&params, &scope);
        let scores = compute_scores(PruneStrategy::Magnitude, &params, &mask, None, None).unwrap();
        let w = &params.layers()[0].weight;
        for (i, &s) in scores.entries[0].1.iter().enumerate() {
            assert_eq!(s, (w[i].abs()) as f64);
        }
    }

    #[test]
    fn gradient_scores_are_abs_grad_times_weight() {
        // |g ⊙ w| with the RAW gradient from loss_and_grads on the batch.
        let (params, scope) = tiny();
        let mask = Mask::all_ones(&params, &scope);
        let feats: Vec<f64> = (0..12).map(|i| (i as f64 * 0.29).sin().abs()).collect();
        let batch = Batch::new(feats, 3, 4, vec![0, 1, 0]);
        let scores =
            compute_scores(PruneStrategy::Gradient, &params, &mask, Some(&batch), None).unwrap();
        let (_, grads) = loss_and_grads(&params, &mask, &batch).unwrap();
        let w = &params.layers()[0].weight;
        let g = &grads.layers[0].d_weight;
        for i in 0..w.len() {
            let expect = (g[i] as f64 * w[i] as f64).abs();
            assert_eq!(scores.entries[0].1[i], expect, "coord {i}");
        }
    }

    #[test]
    fn random_scores_deterministic_per_seed() {
        let (params, scope) = tiny();
        let mask = Mask::all_ones(&params, &scope);
        let mut r1 = rng::stream(5, rng::tag::SCORE_RANDOM, 0);
        let mut r2 = rng::stream(5, rng::tag::SCORE_RANDOM, 0);
        let a = compute_scores(PruneStrategy::Random, &params, &mask, None, Some(&mut r1)).unwrap();
        let b = compute_scores(PruneStrategy::Random, &params, &mask, None, Some(&mut r2)).unwrap();
        assert_eq!(a.entries, b.entries);
    }

    #[test]
    fn strategies_demand_their_inputs() {
        let (params, scope) = tiny();
        let mask = Mask::all_ones(&params, &scope);
        assert!(matches!(
            compute_scores(PruneStrategy::Gradient, &params, &mask, None, None),
            Err(Error::MissingScoreInput {
                strategy: "gradient",
                ..
            })
        ));
        assert!(matches!(
            compute_scores(PruneStrategy::Random, &params, &mask, None, None),
            Err(Error::MissingScoreInput {
                strategy: "random",
                ..
            })
        ));
    }

    #[test]
    fn tie_break_is_name_then_flat_index() {
        // Scores [1, 1, 1, 5] with k = 2: the two removed are the first
        // two coordinates in (tensor name, flat index) order.
        let entries = vec![MaskEntry {
            name: "fc1.weight".into(),
            dims: vec![1, 4],
            bits: vec![1; 4],
        }];
        let mask = Mask::from_entries(entries, 10).unwrap();
        let scores = ScoreSet {
            entries: vec![("fc1.weight".into(), vec![1.0, 1.0, 1.0, 5.0])],
        };
        let pruned = prune_global(&mask, &scores, 0.5).unwrap();
        assert_eq!(pruned.bits("fc1.weight").unwrap(), &[0, 0, 1, 1]);
    }

    #[test]
    fn exhausted_mask_errors() {
        let entries = vec![MaskEntry {
            name: "fc1.weight".into(),
            dims: vec![1, 2],
            bits: vec![0, 0],
        }];
        let mask = Mask::from_entries(entries, 4).unwrap();
        let scores = ScoreSet {
            entries: vec![("fc1.weight".into(), vec![f64::NEG_INFINITY; 2])],
        };
        assert!(matches!(
            prune_global(&mask, &scores, 0.5),
            Err(Error::MaskExhausted)
        ));
    }

    #[test]
    fn pruned_coordinates_get_sentinel_scores() {
        let (params, scope) = tiny();
        let mut mask = Mask::all_ones(&params, &scope);
        mask.entries[0].bits[2] = 0;
        let scores = compute_scores(PruneStrategy::Magnitude, &params, &mask, None, None).unwrap();
        assert_eq!(scores.entries[0].1[2], f64::NEG_INFINITY);
    }
}
