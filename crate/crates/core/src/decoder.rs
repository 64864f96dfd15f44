//! Weight decoder: cross-attention from lifted weight tokens onto the
//! encoded feature representation, ending in a scalar projection per
//! (sample, feature) cell.
//!
//! The final projection starts at (zero weights, unit bias), so an untrained
//! decoder emits an all-ones weight matrix and the weighted features equal
//! the raw features bit-exactly. That identity is the epoch-0 baseline the
//! tests lean on.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Matrix, NumericView};
use crate::encoder::{multi_head_attention, AttentionParams, FeedForwardParams, LayerNormParams};
use crate::numerics::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Reject decoded weights beyond this magnitude as divergence.
pub const WEIGHT_GUARD: f64 = 1e3;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DecoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ff_width: usize,
    pub dropout: f64,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("decoder needs at least one layer".into()));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by head count {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

/// Per-sample, per-feature weights. Starts life as all ones.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    values: Vec<f64>,
    n: usize,
    k: usize,
    /// training epoch (or fine-tuning round) that produced these weights
    pub version: u64,
}

impl WeightMatrix {
    pub fn ones(n: usize, k: usize) -> WeightMatrix {
        WeightMatrix {
            values: vec![1.0; n * k],
            n,
            k,
            version: 0,
        }
    }

    pub fn from_values(values: Vec<f64>, n: usize, k: usize, version: u64) -> Result<WeightMatrix> {
        if values.len() != n * k {
            return Err(Error::Dimension {
                op: "weight_matrix",
                lhs: vec![n, k],
                rhs: vec![values.len()],
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("weight_matrix"));
        }
        Ok(WeightMatrix {
            values,
            n,
            k,
            version,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.k + col]
    }

    pub fn is_all_ones(&self) -> bool {
        self.values.iter().all(|&v| v == 1.0)
    }
}

pub struct DecoderLayerParams {
    pub attn: AttentionParams,
    pub ln1: LayerNormParams,
    pub ff: FeedForwardParams,
    pub ln2: LayerNormParams,
}

impl DecoderLayerParams {
    fn new(cfg: &DecoderConfig, rng: &mut ChaCha8Rng) -> Result<DecoderLayerParams> {
        Ok(DecoderLayerParams {
            attn: AttentionParams::new(cfg.d_model, cfg.heads, rng)?,
            ln1: LayerNormParams::new(cfg.d_model)?,
            ff: FeedForwardParams::new(cfg.d_model, cfg.ff_width, rng)?,
            ln2: LayerNormParams::new(cfg.d_model)?,
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.attn.params();
        p.extend(self.ln1.params());
        p.extend(self.ff.params());
        p.extend(self.ln2.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.attn.params_mut();
        p.extend(self.ln1.params_mut());
        p.extend(self.ff.params_mut());
        p.extend(self.ln2.params_mut());
        p
    }
}

/// Cross-attention layers over lifted weight tokens plus the scalar lift and
/// projection maps at either end.
pub struct DecoderStack {
    pub cfg: DecoderConfig,
    /// affine lift of a scalar weight into a d-vector token
    pub lift_w: Tensor,
    pub lift_b: Tensor,
    pub layers: Vec<DecoderLayerParams>,
    /// projection of a token back to one scalar weight
    pub proj_w: Tensor,
    pub proj_b: Tensor,
}

impl DecoderStack {
    pub fn new(cfg: DecoderConfig, rng: &mut ChaCha8Rng) -> Result<DecoderStack> {
        cfg.validate()?;
        let d = cfg.d_model;
        let scale = 1.0 / (d as f64).sqrt();
        let layers = (0..cfg.layers)
            .map(|_| DecoderLayerParams::new(&cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(DecoderStack {
            lift_w: Tensor::param(
                (0..d).map(|_| rng.gen_range(-scale..scale)).collect(),
                &[1, d],
            )?,
            lift_b: Tensor::param(vec![0.0; d], &[d])?,
            layers,
            // zero weights and unit bias: untrained output is exactly 1
            proj_w: Tensor::param(vec![0.0; d], &[d, 1])?,
            proj_b: Tensor::param(vec![1.0], &[1])?,
            cfg,
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = vec![&self.lift_w, &self.lift_b];
        p.extend(self.layers.iter().flat_map(|l| l.params()));
        p.push(&self.proj_w);
        p.push(&self.proj_b);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = vec![&mut self.lift_w, &mut self.lift_b];
        p.extend(self.layers.iter_mut().flat_map(|l| l.params_mut()));
        p.push(&mut self.proj_w);
        p.push(&mut self.proj_b);
        p
    }

    /// Lift scalar weights (n x K) into attention-width tokens (n x K x d).
    pub fn lift_weights(&self, tape: &mut Tape, w: &Var) -> Result<Var> {
        let sh = w.shape().to_vec();
        if sh.len() != 2 {
            return Err(Error::Dimension {
                op: "lift_weights",
                lhs: sh,
                rhs: vec![0, 0],
            });
        }
        let (n, k) = (sh[0], sh[1]);
        let flat = tape.reshape(w, &[n * k, 1])?;
        let lw = tape.param(&self.lift_w);
        let lifted = tape.matmul(&flat, &lw)?;
        let lb = tape.param(&self.lift_b);
        let lifted = tape.add_bias(&lifted, &lb)?;
        tape.reshape(&lifted, &[n, k, self.cfg.d_model])
    }

    /// Decode a weight matrix from the encoded representation `z`, starting
    /// from `w_init` (all ones at the top of each forward pass).
    pub fn decode(
        &self,
        tape: &mut Tape,
        z: &Var,
        w_init: &Var,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let mut h = self.lift_weights(tape, w_init)?;
        for layer in &self.layers {
            let (attn, _) = multi_head_attention(tape, &h, z, &layer.attn, self.cfg.heads)?;
            let attn = tape.dropout(&attn, self.cfg.dropout, training, rng)?;
            let res = tape.add(&h, &attn)?;
            let h1 = layer.ln1.forward(tape, &res)?;
            let ff = layer.ff.forward(tape, &h1)?;
            let ff = tape.dropout(&ff, self.cfg.dropout, training, rng)?;
            let res2 = tape.add(&h1, &ff)?;
            h = layer.ln2.forward(tape, &res2)?;
        }
        let sh = h.shape().to_vec();
        let (n, k, d) = (sh[0], sh[1], sh[2]);
        let flat = tape.reshape(&h, &[n * k, d])?;
        let pw = tape.param(&self.proj_w);
        let pb = tape.param(&self.proj_b);
        let scalars = tape.matmul(&flat, &pw)?;
        let scalars = tape.add_bias(&scalars, &pb)?;
        let w = tape.reshape(&scalars, &[n, k])?;
        if !w.value.is_finite() {
            return Err(Error::NonFinite("decode_weights"));
        }
        if w.data().iter().any(|v| v.abs() > WEIGHT_GUARD) {
            return Err(Error::Divergence {
                epoch: 0,
                message: format!(
                    "decoded weight magnitude exceeded {WEIGHT_GUARD}; largest = {:.3e}",
                    w.data().iter().fold(0.0f64, |a, v| a.max(v.abs()))
                ),
            });
        }
        Ok(w)
    }
}

/// Cross-attention with queries from lifted weight tokens and keys/values
/// from the encoded features.
pub fn cross_attention(
    tape: &mut Tape,
    weight_tokens: &Var,
    z: &Var,
    params: &AttentionParams,
    heads: usize,
) -> Result<Var> {
    Ok(multi_head_attention(tape, weight_tokens, z, params, heads)?.0)
}

/// Apply per-feature weights to a classifier view: each raw feature's weight
/// scales its whole one-hot block (discrete) or its normalized column
/// (continuous).
pub fn apply_weights(w: &WeightMatrix, view: &NumericView) -> Result<Matrix> {
    if view.matrix.rows != w.n() || view.blocks.len() != w.k() {
        return Err(Error::Dimension {
            op: "apply_weights",
            lhs: vec![w.n(), w.k()],
            rhs: vec![view.matrix.rows, view.blocks.len()],
        });
    }
    let mut data = view.matrix.data.clone();
    let cols = view.matrix.cols;
    for row in 0..view.matrix.rows {
        for (feat, &(start, width)) in view.blocks.iter().enumerate() {
            let weight = w.get(row, feat);
            for j in start..start + width {
                data[row * cols + j] *= weight;
            }
        }
    }
    Matrix::new(data, view.matrix.rows, cols)
}

/// Same weighting on a compact K-column matrix (used for redundancy scores).
pub fn apply_weights_compact(w: &WeightMatrix, compact: &Matrix) -> Result<Matrix> {
    if compact.rows != w.n() || compact.cols != w.k() {
        return Err(Error::Dimension {
            op: "apply_weights_compact",
            lhs: vec![w.n(), w.k()],
            rhs: vec![compact.rows, compact.cols],
        });
    }
    let data: Vec<f64> = compact
        .data
        .iter()
        .zip(w.values())
        .map(|(x, wv)| x * wv)
        .collect();
    Matrix::new(data, compact.rows, compact.cols)
}
