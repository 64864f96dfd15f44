//! Per-sample feature weighting for tabular classification.
//!
//! The pipeline learns an `N x K` weight matrix for a tabular dataset: each
//! cell of the raw feature matrix gets its own multiplier. Weights are decoded
//! from a transformer encoding of the sample's feature tokens, trained against
//! the cross-entropy of a frozen differentiable surrogate classifier, and
//! optionally fine-tuned by a PPO agent that is rewarded for lowering the mean
//! pairwise mutual information across feature columns.
//!
//! Module map:
//! - [`numerics`]: dense `f64` tensors with reverse-mode autodiff on a tape.
//! - [`data`]: CSV ingestion, schemas, stratified splits, normalization stats.
//! - [`alignment`]: per-cell tokenization of discrete/continuous features.
//! - [`encoder`] / [`decoder`]: self-attention encoder, cross-attention weight
//!   decoder.
//! - [`weighting`]: the training loop tying weighter, surrogate, and data.
//! - [`redundancy`]: histogram mutual-information redundancy scoring.
//! - [`ppo`]: actor-critic fine-tuner over the weight matrix.
//! - [`downstream`]: classifiers (LR, NB, KNN, MLP, forest) and metrics.
//! - [`baselines`]: undersampling, LASSO selection, weighted bootstrapping.
//! - [`checkpoint`]: model serialization (JSON manifest + raw f64 payload).

pub mod alignment;
pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod downstream;
pub mod encoder;
pub mod numerics;
pub mod ppo;
pub mod redundancy;
pub mod weighting;

use thiserror::Error;

/// Crate-wide error type. Variants map onto the failure classes of the
/// public operations (dimension, parse, schema, training, ...).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("category index {index} out of range for feature {feature} (cardinality {cardinality})")]
    Category {
        feature: String,
        index: usize,
        cardinality: usize,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: {message}")]
    Divergence { epoch: usize, message: String },
    #[error("fit error: {0}")]
    Fit(String),
    #[error("comparison error: {0}")]
    Comparison(String),
    #[error("rollout error: {0}")]
    Rollout(String),
    #[error("empty selection: {0}")]
    EmptySelection(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Derive a component-specific seed from a run seed.
///
/// All randomness in a run is funneled through one named seed; components
/// (split, dropout, shuffles, samplers, ...) get their own streams by mixing
/// the component name into the run seed with FNV-1a. Hand-rolled so the
/// mapping never changes under toolchain updates.
pub fn derive_seed(component: &str, run_seed: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in component.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    for b in run_seed.to_le_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    // final avalanche (splitmix64 tail) so nearby seeds decorrelate
    let mut z = h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
