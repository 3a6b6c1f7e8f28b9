//! Synthetic label corruption: symmetric, asymmetric, and pairflip noise.
//!
//! All three kinds flip exact counts (no Bernoulli sampling): symmetric
//! noise flips `round(ε·n)` examples chosen without replacement, each to
//! a uniformly chosen *different* class; asymmetric and pairflip noise
//! flip `round(ε·count(c))` examples per source class. Features are never
//! touched; clean labels and per-example flags are retained for audit.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// What kind of corruption to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Symmetric,
    Asymmetric,
    Pairflip,
}

/// A corruption recipe. `class_map` is only used by asymmetric noise;
/// when absent there, the standard MNIST map applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
    pub class_map: Option<Vec<(u32, u32)>>,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            rate: 0.0,
            seed: 0,
            class_map: None,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::InvalidConfig(format!(
                "noise rate must be in [0, 1), got {}",
                self.rate
            )));
        }
        if let Some(map) = &self.class_map {
            for &(src, dst) in map {
                if src == dst {
                    return Err(Error::InvalidConfig(format!(
                        "class map has fixed point {src} -> {dst}"
                    )));
                }
                if src as usize >= num_classes || dst as usize >= num_classes {
                    return Err(Error::InvalidConfig(format!(
                        "class map entry {src} -> {dst} outside [0, {num_classes})"
                    )));
                }
            }
            let mut sources: Vec<u32> = map.iter().map(|&(s, _)| s).collect();
            sources.sort_unstable();
            sources.dedup();
            if sources.len() != map.len() {
                return Err(Error::InvalidConfig(
                    "class map has duplicate sources".into(),
                ));
            }
        }
        Ok(())
    }
}

/// The similar-class flips used for MNIST: 2→7, 3→8, 5↔6.
pub fn mnist_class_map() -> Vec<(u32, u32)> {
    vec![(2, 7), (3, 8), (5, 6), (6, 5)]
}

/// A dataset whose labels were corrupted. Training consumes `data`
/// (noisy labels); `clean_labels` and `flipped` exist for analysis only.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    pub data: Dataset,
    pub clean_labels: Vec<u32>,
    pub flipped: Vec<bool>,
}

impl NoisyDataset {
    /// Wrap a dataset without corruption.
    pub fn clean(data: Dataset) -> Self {
        let clean_labels = data.labels.clone();
        let flipped = vec![false; data.len()];
        Self {
            data,
            clean_labels,
            flipped,
        }
    }

    /// Apply `spec` to `data`'s labels.
    pub fn corrupt(data: Dataset, spec: &NoiseSpec) -> Result<Self> {
        spec.validate(data.num_classes)?;
        let k = data.num_classes;
        let mut rng = rng::stream(spec.seed, tag::NOISE, 0);
        let (noisy, flipped) = match spec.kind {
            NoiseKind::None => (data.labels.clone(), vec![false; data.len()]),
            NoiseKind::Symmetric => apply_symmetric(&data.labels, spec.rate, k, &mut rng),
            NoiseKind::Asymmetric => {
                let map = spec.class_map.clone().unwrap_or_else(mnist_class_map);
                apply_asymmetric(&data.labels, spec.rate, &map, &mut rng)
            }
            NoiseKind::Pairflip => apply_pairflip(&data.labels, spec.rate, k, &mut rng),
        };
        let clean_labels = data.labels.clone();
        let mut data = data;
        data.labels = noisy;
        Ok(Self {
            data,
            clean_labels,
            flipped,
        })
    }

    pub fn flip_count(&self) -> usize {
        self.flipped.iter().filter(|&&f| f).count()
    }
}

/// Count to flip under rate `eps` out of `n` (rounded, half away from zero).
#[inline]
pub fn flip_count(eps: f64, n: usize) -> usize {
    (eps * n as f64).round() as usize
}

/// Symmetric noise: exactly `round(ε·n)` examples chosen uniformly
/// without replacement, each reassigned uniformly over the `K−1` *other*
/// classes (a chosen label always changes).
pub fn apply_symmetric(
    labels: &[u32],
    eps: f64,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<u32>, Vec<bool>) {
    assert!(k >= 2, "symmetric noise needs at least two classes");
    let n = labels.len();
    let m = flip_count(eps, n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);

    let mut noisy = labels.to_vec();
    let mut flipped = vec![false; n];
    for &i in idx.iter().take(m) {
        let old = labels[i];
        // Uniform over the K-1 other classes.
        let r = rng.gen_range(0..(k - 1) as u32);
        let new = if r >= old { r + 1 } else { r };
        noisy[i] = new;
        flipped[i] = true;
    }
    (noisy, flipped)
}

/// Asymmetric noise: for each `(source, target)` in `class_map`, exactly
/// `round(ε·count(source))` of the source's examples flip to the target;
/// classes not in the map are untouched.
pub fn apply_asymmetric(
    labels: &[u32],
    eps: f64,
    class_map: &[(u32, u32)],
    rng: &mut ChaCha8Rng,
) -> (Vec<u32>, Vec<bool>) {
    let mut map: Vec<(u32, u32)> = class_map.to_vec();
    map.sort_unstable();

    let mut noisy = labels.to_vec();
    let mut flipped = vec![false; labels.len()];
    for (src, dst) in map {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l == src)
            .map(|(i, _)| i)
            .collect();
        let m = flip_count(eps, members.len());
        members.shuffle(rng);
        for &i in members.iter().take(m) {
            noisy[i] = dst;
            flipped[i] = true;
        }
    }
    (noisy, flipped)
}

/// Pairflip noise: for each class `c`, exactly `round(ε·count(c))` of its
/// examples relabel to the adjacent class `(c+1) mod K`.
pub fn apply_pairflip(
    labels: &[u32],
    eps: f64,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<u32>, Vec<bool>) {
    assert!(k >= 2, "pairflip noise needs at least two classes");
    let mut noisy = labels.to_vec();
    let mut flipped = vec![false; labels.len()];
    for c in 0..k as u32 {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l == c)
            .map(|(i, _)| i)
            .collect();
        let m = flip_count(eps, members.len());
        members.shuffle(rng);
        let dst = (c + 1) % k as u32;
        for &i in members.iter().take(m) {
            noisy[i] = dst;
            flipped[i] = true;
        }
    }
    (noisy, flipped)
}
