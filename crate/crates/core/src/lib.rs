//! A desk-scale sparse-training laboratory.
//!
//! `sparselab` trains small dense networks under synthetic label noise,
//! prunes them iteratively with several scoring strategies, retrains the
//! pruned networks under several regimes, and runs a set of diagnostics
//! over the resulting sparsity sweeps (learning distance, re-dense
//! training, linear interpolation scans, filter-normalized 1-D loss
//! slices, phase classification, double-descent signature detection).
//!
//! The crate is organized around a few value types:
//!
//! - [`nn::ParamSet`]: named weight/bias tensors of a multilayer perceptron.
//! - [`mask::Mask`]: a binary mask over the prunable weights; the model a
//!   sweep studies is always `f(w ⊙ m)`.
//! - [`noise::NoisyDataset`]: a dataset whose labels were corrupted by a
//!   seeded, exact-count noise process (clean labels retained for audit).
//! - [`retrain::LevelResult`] / [`sweep::SweepResult`]: everything produced
//!   at one pruning level, and the ordered sequence of levels forming a
//!   sparsity-vs-accuracy curve.
//!
//! Everything is deterministic: a sweep is a pure function of its
//! [`sweep::ExperimentConfig`], independent of thread count. All random
//! streams are derived from the experiment seed with [`rng`] helpers, and
//! all floating-point accumulation happens in `f64` over `f32` parameter
//! storage with a fixed association order.

pub mod checkpoint;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod mask;
pub mod math;
pub mod nn;
pub mod noise;
pub mod optim;
pub mod retrain;
pub mod rng;
pub mod svg;
pub mod sweep;

pub use error::{Error, Result};
