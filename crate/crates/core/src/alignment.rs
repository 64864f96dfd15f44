//! Feature alignment: turn each cell of a mixed-type row into a fixed-width
//! token so self-attention can run across the K features of a sample.
//!
//! Discrete cells index an embedding table; continuous cells are normalized
//! and mapped through a learned direction/bias pair. Tokenization is
//! per-cell, which is what makes per-sample weights possible downstream.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, FeatureStats};
use crate::numerics::{Tape, Tensor, Var};
use crate::{Error, Result};

/// How to treat a test-time category index that was never seen in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeMode {
    /// Error out (training-time contract).
    Strict,
    /// Map to the reserved unknown row of the embedding table.
    Lenient,
}

/// Learned per-feature encoders.
///
/// Each discrete feature owns a `(cardinality + 1) x d` embedding table (the
/// extra row is the unknown-category fallback); each continuous feature owns
/// a `1 x d` direction and a `d` bias, applied to the normalized value.
pub struct FeatureTokenizer {
    d: usize,
    /// one table per discrete feature, indexed by feature position
    embeddings: Vec<Tensor>,
    /// direction/bias per continuous feature, indexed relative to the first
    /// continuous feature
    directions: Vec<Tensor>,
    biases: Vec<Tensor>,
    feature_names: Vec<String>,
    cardinalities: Vec<usize>,
}

fn uniform_init(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

impl FeatureTokenizer {
    pub fn new(ds: &Dataset, d: usize, rng: &mut ChaCha8Rng) -> Result<FeatureTokenizer> {
        if d == 0 {
            return Err(Error::Config("token width d must be positive".into()));
        }
        let scale = 1.0 / (d as f64).sqrt();
        let m = ds.m_discrete();
        let mut embeddings = Vec::with_capacity(m);
        for col in 0..m {
            let rows = ds.cardinality(col) + 1; // reserved unknown row
            embeddings.push(Tensor::param(
                uniform_init(rng, rows * d, scale),
                &[rows, d],
            )?);
        }
        let mut directions = Vec::new();
        let mut biases = Vec::new();
        for _ in m..ds.k() {
            directions.push(Tensor::param(uniform_init(rng, d, scale), &[1, d])?);
            biases.push(Tensor::param(vec![0.0; d], &[d])?);
        }
        Ok(FeatureTokenizer {
            d,
            embeddings,
            directions,
            biases,
            feature_names: ds.feature_names().to_vec(),
            cardinalities: ds.cardinalities(),
        })
    }

    pub fn token_width(&self) -> usize {
        self.d
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.embeddings
            .iter()
            .chain(self.directions.iter())
            .chain(self.biases.iter())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.embeddings
            .iter_mut()
            .chain(self.directions.iter_mut())
            .chain(self.biases.iter_mut())
            .collect()
    }

    /// Embed a batch of category indices for one discrete feature.
    /// Out-of-range indices error in strict mode and fall back to the
    /// reserved unknown row in lenient mode.
    pub fn encode_discrete(
        &self,
        tape: &mut Tape,
        feature: usize,
        indices: &[usize],
        mode: EncodeMode,
    ) -> Result<Var> {
        let card = self.cardinalities[feature];
        let mut rows = Vec::with_capacity(indices.len());
        for &idx in indices {
            if idx < card {
                rows.push(idx);
            } else {
                match mode {
                    EncodeMode::Strict => {
                        return Err(Error::Category {
                            feature: self.feature_names[feature].clone(),
                            index: idx,
                            cardinality: card,
                        })
                    }
                    EncodeMode::Lenient => rows.push(card),
                }
            }
        }
        let table = tape.param(&self.embeddings[feature]);
        tape.gather_rows(&table, &rows)
    }

    /// Encode a batch of normalized values for one continuous feature:
    /// `token = z * direction + bias`.
    pub fn encode_continuous(
        &self,
        tape: &mut Tape,
        feature: usize,
        zvalues: &[f64],
    ) -> Result<Var> {
        if zvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encode_continuous"));
        }
        let rel = feature
            .checked_sub(self.embeddings.len())
            .ok_or_else(|| Error::Config(format!("feature {feature} is not continuous")))?;
        let z = tape.constant(&Tensor::new(zvalues.to_vec(), &[zvalues.len(), 1])?);
        let dir = tape.param(&self.directions[rel]);
        let scaled = tape.matmul(&z, &dir)?;
        let bias = tape.param(&self.biases[rel]);
        tape.add_bias(&scaled, &bias)
    }
}

/// Tokens for a batch of rows, shape `n x K x d`, plus the source rows.
pub struct AlignedBatch {
    pub tokens: Var,
    pub rows: Vec<usize>,
}

/// Tokenize the given dataset rows. Discrete features occupy token
/// positions `0..M`, continuous features `M..K`, matching the dataset's
/// internal column order.
pub fn align_batch(
    tape: &mut Tape,
    ds: &Dataset,
    rows: &[usize],
    stats: &FeatureStats,
    tok: &FeatureTokenizer,
    mode: EncodeMode,
) -> Result<AlignedBatch> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("align_batch with no rows".into()));
    }
    let (k, m, d) = (ds.k(), ds.m_discrete(), tok.token_width());
    let mut per_feature = Vec::with_capacity(k);
    for col in 0..k {
        if col < m {
            let indices: Vec<usize> = rows.iter().map(|&r| ds.value(r, col) as usize).collect();
            per_feature.push(tok.encode_discrete(tape, col, &indices, mode)?);
        } else {
            let z: Vec<f64> = rows
                .iter()
                .map(|&r| stats.normalize(col, ds.value(r, col)))
                .collect();
            per_feature.push(tok.encode_continuous(tape, col, &z)?);
        }
    }
    // concatenating K (n x d) blocks along the last axis yields exactly the
    // row-major layout of (n x K x d)
    let refs: Vec<&Var> = per_feature.iter().collect();
    let flat = tape.concat_last(&refs)?;
    let tokens = tape.reshape(&flat, &[rows.len(), k, d])?;
    Ok(AlignedBatch {
        tokens,
        rows: rows.to_vec(),
    })
}
