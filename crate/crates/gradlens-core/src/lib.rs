//! Desk-scale laboratory for studying how adversarial training reshapes
//! loss-gradient explanations.
//!
//! The crate is a self-contained pipeline over dense `f64` tensors:
//!
//! - [`tensor`], [`kernels`], [`tape`] — values, forward kernels (matmul,
//!   conv, pooling), and reverse-mode automatic differentiation on an
//!   operation tape.
//! - [`data`] — dataset container with a hard `[-1, 1]` input invariant,
//!   a two-Gaussian toy problem, a synthetic image corpus, and an IDX
//!   loader for external image files.
//! - [`model`], [`train`], [`advtrain`] — feed-forward classifiers
//!   (dense/conv), minibatch Adam training, adversarial training, and
//!   ε-sweeps producing model families.
//! - [`attack`] — projected gradient descent in ℓ2/ℓ∞ balls with
//!   cross-entropy or margin objectives.
//! - [`attribution`] — per-example saliency maps (gradient, gradient×input,
//!   seeded random) behind a common strategy interface.
//! - [`occlusion`] — remove-and-retrain style evaluation: occlude
//!   top/bottom-ranked pixels, retrain, and reduce accuracy curves to
//!   area-based faithfulness scores plus rank correlations.
//! - [`manifold`] — PCA and autoencoder projectors with off-manifold
//!   distances and cohort statistics.
//! - [`checkpoint`] — versioned binary persistence for models and
//!   projectors.
//!
//! Everything is deterministic given the seeds in the public configs:
//! derived seed streams keep shuffling, attacks, and initialization
//! independent, so any experiment replays bit-identically.

pub mod advtrain;
pub mod attack;
pub mod attribution;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod kernels;
pub mod manifold;
pub mod model;
pub mod occlusion;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
