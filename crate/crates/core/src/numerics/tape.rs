use std::sync::{Arc, Mutex};

use rand::Rng;

use super::linalg;
use super::tensor::Tensor;
use crate::{Error, Result};

/// A value produced while recording on a [`Tape`].
///
/// `node` is `None` for constants: subgraphs built purely from constants are
/// never recorded, so inference costs no tape memory.
#[derive(Clone, Debug)]
pub struct Var {
    pub value: Tensor,
    node: Option<usize>,
}

impl Var {
    pub fn data(&self) -> &[f64] {
        self.value.data()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }
}

type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

struct Node {
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    /// Leaf nodes sink their accumulated gradient into a parameter buffer.
    sink: Option<Arc<Mutex<Vec<f64>>>>,
}

/// Define-by-run record of executed operations.
///
/// Nodes are appended in execution order, so parents always precede children
/// and the backward pass is a single reverse sweep that visits each node
/// exactly once. Repeated `backward` calls without `zero_grad` accumulate.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// Build an op output tensor: shape always checked, finiteness checked in
/// debug builds so NaN/Inf cannot escape an operation unnoticed.
fn op_output(data: Vec<f64>, shape: &[usize], op: &'static str) -> Result<Tensor> {
    Tensor::new(data, shape).map_err(|e| match e {
        Error::NonFinite(_) => Error::NonFinite(op),
        other => other,
    })
}

/// Split a shape into (rows, last-dimension) for ops that act on the
/// trailing axis.
fn row_view(shape: &[usize]) -> (usize, usize) {
    match shape.split_last() {
        Some((last, lead)) => (lead.iter().product::<usize>().max(1), *last),
        None => (1, 1),
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Wrap a tensor as an untraced constant.
    pub fn constant(&self, t: &Tensor) -> Var {
        Var {
            value: t.clone(),
            node: None,
        }
    }

    /// Register a parameter leaf. Tensors without a grad buffer degrade to
    /// constants, which is how frozen surrogates enter the graph.
    pub fn param(&mut self, t: &Tensor) -> Var {
        match t.grad_handle() {
            Some(sink) => {
                self.nodes.push(Node {
                    parents: Vec::new(),
                    backward: None,
                    sink: Some(sink),
                });
                Var {
                    value: t.clone(),
                    node: Some(self.nodes.len() - 1),
                }
            }
            None => self.constant(t),
        }
    }

    fn push_op(&mut self, value: Tensor, parents: Vec<usize>, backward: BackwardFn) -> Var {
        if parents.is_empty() {
            return Var { value, node: None };
        }
        self.nodes.push(Node {
            parents,
            backward: Some(backward),
            sink: None,
        });
        Var {
            value,
            node: Some(self.nodes.len() - 1),
        }
    }

    /// Reverse sweep from a scalar loss, accumulating into parameter grads.
    pub fn backward(&self, loss: &Var) -> Result<()> {
        if loss.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.value.shape()
            )));
        }
        let Some(start) = loss.node else {
            // Loss is a constant: no parameter can influence it, grads of
            // disconnected parameters stay at zero.
            return Ok(());
        };
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(start + 1, || None);
        grads[start] = Some(vec![1.0]);
        for i in (0..=start).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(sink) = &node.sink {
                let mut buf = sink.lock().unwrap();
                for (b, d) in buf.iter_mut().zip(&g) {
                    *b += d;
                }
                continue;
            }
            let backward = node.backward.as_ref().expect("op node has backward");
            let contribs = backward(&g);
            debug_assert_eq!(contribs.len(), node.parents.len());
            for (pid, c) in node.parents.iter().zip(contribs) {
                match &mut grads[*pid] {
                    Some(acc) => {
                        for (a, d) in acc.iter_mut().zip(&c) {
                            *a += d;
                        }
                    }
                    slot => *slot = Some(c),
                }
            }
        }
        Ok(())
    }

    // ── linear algebra ──────────────────────────────────────────────────

    /// Standard matrix product, 2-D only.
    pub fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (ash, bsh) = (a.shape().to_vec(), b.shape().to_vec());
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(dim_err("matmul", &ash, &bsh));
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let out = linalg::mm_nn(a.data(), b.data(), m, k, n);
        let value = op_output(out, &[m, n], "matmul")?;
        let (adata, bdata) = (a.value.data_arc(), b.value.data_arc());
        let (atr, btr) = (a.node.is_some(), b.node.is_some());
        let parents: Vec<usize> = [a.node, b.node].into_iter().flatten().collect();
        Ok(self.push_op(
            value,
            parents,
            Box::new(move |g| {
                let mut out = Vec::new();
                if atr {
                    out.push(linalg::mm_nt(g, &bdata, m, n, k));
                }
                if btr {
                    out.push(linalg::mm_tn(&adata, g, m, k, n));
                }
                out
            }),
        ))
    }

    /// Batched matmul over the leading axis: (B,m,k) x (B,k,n) -> (B,m,n).
    pub fn bmm(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (ash, bsh) = (a.shape().to_vec(), b.shape().to_vec());
        if ash.len() != 3 || bsh.len() != 3 || ash[0] != bsh[0] || ash[2] != bsh[1] {
            return Err(dim_err("bmm", &ash, &bsh));
        }
        let (bt, m, k, n) = (ash[0], ash[1], ash[2], bsh[2]);
        let mut out = vec![0.0; bt * m * n];
        for i in 0..bt {
            linalg::mm_nn_acc(
                &a.data()[i * m * k..(i + 1) * m * k],
                &b.data()[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let value = op_output(out, &[bt, m, n], "bmm")?;
        let (adata, bdata) = (a.value.data_arc(), b.value.data_arc());
        let (atr, btr) = (a.node.is_some(), b.node.is_some());
        let parents: Vec<usize> = [a.node, b.node].into_iter().flatten().collect();
        Ok(self.push_op(
            value,
            parents,
            Box::new(move |g| {
                let mut res = Vec::new();
                if atr {
                    let mut da = vec![0.0; bt * m * k];
                    for i in 0..bt {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &bdata[i * k * n..(i + 1) * k * n];
                        da[i * m * k..(i + 1) * m * k]
                            .copy_from_slice(&linalg::mm_nt(gi, bi, m, n, k));
                    }
                    res.push(da);
                }
                if btr {
                    let mut db = vec![0.0; bt * k * n];
                    for i in 0..bt {
                        let ai = &adata[i * m * k..(i + 1) * m * k];
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        linalg::mm_tn_acc(ai, gi, &mut db[i * k * n..(i + 1) * k * n], m, k, n);
                    }
                    res.push(db);
                }
                res
            }),
        ))
    }

    /// Batched product with the second operand transposed:
    /// (B,m,k) x (B,n,k)^T -> (B,m,n). This is the attention-score shape.
    pub fn bmm_nt(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (ash, bsh) = (a.shape().to_vec(), b.shape().to_vec());
        if ash.len() != 3 || bsh.len() != 3 || ash[0] != bsh[0] || ash[2] != bsh[2] {
            return Err(dim_err("bmm_nt", &ash, &bsh));
        }
        let (bt, m, k, n) = (ash[0], ash[1], ash[2], bsh[1]);
        let mut out = vec![0.0; bt * m * n];
        for i in 0..bt {
            let oi = linalg::mm_nt(
                &a.data()[i * m * k..(i + 1) * m * k],
                &b.data()[i * n * k..(i + 1) * n * k],
                m,
                k,
                n,
            );
            out[i * m * n..(i + 1) * m * n].copy_from_slice(&oi);
        }
        let value = op_output(out, &[bt, m, n], "bmm_nt")?;
        let (adata, bdata) = (a.value.data_arc(), b.value.data_arc());
        let (atr, btr) = (a.node.is_some(), b.node.is_some());
        let parents: Vec<usize> = [a.node, b.node].into_iter().flatten().collect();
        Ok(self.push_op(
            value,
            parents,
            Box::new(move |g| {
                let mut res = Vec::new();
                if atr {
                    let mut da = vec![0.0; bt * m * k];
                    for i in 0..bt {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &bdata[i * n * k..(i + 1) * n * k];
                        linalg::mm_nn_acc(gi, bi, &mut da[i * m * k..(i + 1) * m * k], m, n, k);
                    }
                    res.push(da);
                }
                if btr {
                    let mut db = vec![0.0; bt * n * k];
                    for i in 0..bt {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &adata[i * m * k..(i + 1) * m * k];
                        linalg::mm_tn_acc(gi, ai, &mut db[i * n * k..(i + 1) * n * k], m, n, k);
                    }
                    res.push(db);
                }
                res
            }),
        ))
    }

    // ── elementwise ─────────────────────────────────────────────────────

    fn zip_op(
        &mut self,
        op: &'static str,
        a: &Var,
        b: &Var,
        f: impl Fn(f64, f64) -> f64,
        // given (a_i, b_i, g_i) produce (da_i, db_i)
        vjp: impl Fn(f64, f64, f64) -> (f64, f64) + 'static,
    ) -> Result<Var> {
        if a.shape() != b.shape() {
            return Err(dim_err(op, a.shape(), b.shape()));
        }
        let out: Vec<f64> = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let value = op_output(out, a.shape(), op)?;
        let (adata, bdata) = (a.value.data_arc(), b.value.data_arc());
        let (atr, btr) = (a.node.is_some(), b.node.is_some());
        let parents: Vec<usize> = [a.node, b.node].into_iter().flatten().collect();
        Ok(self.push_op(
            value,
            parents,
            Box::new(move |g| {
                let mut da = if atr { Vec::with_capacity(g.len()) } else { Vec::new() };
                let mut db = if btr { Vec::with_capacity(g.len()) } else { Vec::new() };
                for i in 0..g.len() {
                    let (ga, gb) = vjp(adata[i], bdata[i], g[i]);
                    if atr {
                        da.push(ga);
                    }
                    if btr {
                        db.push(gb);
                    }
                }
                let mut res = Vec::new();
                if atr {
                    res.push(da);
                }
                if btr {
                    res.push(db);
                }
                res
            }),
        ))
    }

    pub fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.zip_op("add", a, b, |x, y| x + y, |_, _, g| (g, g))
    }

    pub fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.zip_op("sub", a, b, |x, y| x - y, |_, _, g| (g, -g))
    }

    pub fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.zip_op("mul", a, b, |x, y| x * y, |x, y, g| (g * y, g * x))
    }

    /// Elementwise minimum; ties route the gradient to the first operand.
    pub fn minimum(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.zip_op(
            "minimum",
            a,
            b,
            f64::min,
            |x, y, g| if x <= y { (g, 0.0) } else { (0.0, g) },
        )
    }

    fn map_op(
        &mut self,
        op: &'static str,
        x: &Var,
        f: impl Fn(f64) -> f64,
        // (x_i, y_i, g_i) -> dx_i
        vjp: impl Fn(f64, f64, f64) -> f64 + 'static,
    ) -> Result<Var> {
        let out: Vec<f64> = x.data().iter().map(|v| f(*v)).collect();
        let value = op_output(out, x.shape(), op)?;
        let xdata = x.value.data_arc();
        let ydata = value.data_arc();
        let parents: Vec<usize> = x.node.into_iter().collect();
        Ok(self.push_op(
            value,
            parents,
            Box::new(move |g| {
                vec![g
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| vjp(xdata[i], ydata[i], *gi))
                    .collect()]
            }),
        ))
    }

    pub fn scale(&mut self, x: &Var, c: f64) -> Result<Var> {
        self.map_op("scale", x, |v| v * c, move |_, _, g| g * c)
    }

    pub fn add_const(&mut self, x: &Var, c: f64) -> Result<Var> {
        self.map_op("add_const", x, |v| v + c, |_, _, g| g)
    }

    pub fn relu(&mut self, x: &Var) -> Result<Var> {
        self.map_op("relu", x, |v| v.max(0.0), |xi, _, g| {
            if xi > 0.0 {
                g
            } else {
                0.0
            }
        })
    }

    pub fn exp(&mut self, x: &Var) -> Result<Var> {
        self.map_op("exp", x, f64::exp, |_, yi, g| g * yi)
    }

    /// Clamp to `[lo, hi]`; the gradient passes only inside the interval
    /// (inclusive), matching the usual subgradient convention.
    pub fn clamp(&mut self, x: &Var, lo: f64, hi: f64) -> Result<Var> {
        self.map_op(
            "clamp",
            x,
            |v| v.clamp(lo, hi),
            move |xi, _, g| if xi >= lo && xi <= hi { g } else { 0.0 },
        )
    }

    /// Broadcast-add a vector over the trailing axis.
    pub fn add_bias(&mut self, x: &Var, bias: &Var) -> Result<Var> {
        let (rows, d) = row_view(x.shape());
        if bias.shape() != [d] {
            return Err(dim_err("add_bias", x.shape(), bias.shape()));
        }
        let bdata = bias.value.data_arc();
        let mut out = x.data().to_vec();
        for r in 0..rows {
            for j in 0..d {
                out[r * d + j] += bdata[j];
            }
        }
        let value = op_output(out, x.shape(), "add_bias")?;
        let (xtr, btr) = (x.node.is_some(), bias.node.is_some());
        let parents: Vec<usize> = [x.node, bias.node].into_iter().flatten().collect();
        Ok(self.push_op(
            value,
            parents,
            Box::new(move |g| {
                let mut res = Vec::new();
                if xtr {
                    res.push(g.to_vec());
                }
                if btr {
                    let mut db = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            db[j] += g[r * d + j];
                        }
                    }
                    res.push(db);
                }
                res
            }),
        ))
    }

    // ── structured ops ──────────────────────────────────────────────────

    /// Row-wise softmax over the trailing axis, max-subtracted for
    /// stability. Rejects non-finite input.
    pub fn softmax_rows(&mut self, x: &Var) -> Result<Var> {
        if !x.value.is_finite() {
            return Err(Error::NonFinite("softmax_rows"));
        }
        let (rows, d) = row_view(x.shape());
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &x.data()[r * d..(r + 1) * d];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let orow = &mut out[r * d..(r + 1) * d];
            let mut sum = 0.0;
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        let value = op_output(out, x.shape(), "softmax_rows")?;
        let ydata = value.data_arc();
        let parents: Vec<usize> = x.node.into_iter().collect();
        Ok(self.push_op(
            value,
            parents,
            Box::new(move |g| {
                let mut dx = vec![0.0; g.len()];
                for r in 0..rows {
                    let y = &ydata[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dx[r * d + j] = y[j] * (gr[j] - dot);
                    }
                }
                vec![dx]
            }),
        ))
    }

    /// Layer normalization over the trailing axis with learned gain/bias.
    pub fn layer_norm(&mut self, x: &Var, gamma: &Var, beta: &Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let (rows, d) = row_view(x.shape());
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(dim_err("layer_norm", x.shape(), gamma.shape()));
        }
        let mut out = vec![0.0; rows * d];
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let gdata = gamma.value.data_arc();
        let bdata = beta.value.data_arc();
        for r in 0..rows {
            let row = &x.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * gdata[j] + bdata[j];
            }
        }
        let value = op_output(out, x.shape(), "layer_norm")?;
        let (xtr, gtr, btr) = (x.node.is_some(), gamma.node.is_some(), beta.node.is_some());
        let parents: Vec<usize> = [x.node, gamma.node, beta.node]
            .into_iter()
            .flatten()
            .collect();
        Ok(self.push_op(
            value,
            parents,
            Box::new(move |g| {
                let mut dx = if xtr { vec![0.0; rows * d] } else { Vec::new() };
                let mut dgamma = if gtr { vec![0.0; d] } else { Vec::new() };
                let mut dbeta = if btr { vec![0.0; d] } else { Vec::new() };
                for r in 0..rows {
                    let xh = &xhat[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    if gtr {
                        for j in 0..d {
                            dgamma[j] += gr[j] * xh[j];
                        }
                    }
                    if btr {
                        for j in 0..d {
                            dbeta[j] += gr[j];
                        }
                    }
                    if xtr {
                        // dxhat = g * gamma; dx = (dxhat - mean(dxhat)
                        //        - xhat * mean(dxhat .* xhat)) * inv_std
                        let mut sum_dxh = 0.0;
                        let mut sum_dxh_xh = 0.0;
                        for j in 0..d {
                            let dxh = gr[j] * gdata[j];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh[j];
                        }
                        let m1 = sum_dxh / d as f64;
                        let m2 = sum_dxh_xh / d as f64;
                        for j in 0..d {
                            let dxh = gr[j] * gdata[j];
                            dx[r * d + j] = (dxh - m1 - xh[j] * m2) * inv_std[r];
                        }
                    }
                }
                let mut res = Vec::new();
                if xtr {
                    res.push(dx);
                }
                if gtr {
                    res.push(dgamma);
                }
                if btr {
                    res.push(dbeta);
                }
                res
            }),
        ))
    }

    /// Inverted dropout. Identity when not training or rate is zero.
    pub fn dropout<R: Rng>(
        &mut self,
        x: &Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0,1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..x.value.numel())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let out: Vec<f64> = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = op_output(out, x.shape(), "dropout")?;
        let parents: Vec<usize> = x.node.into_iter().collect();
        Ok(self.push_op(
            value,
            parents,
            Box::new(move |g| vec![g.iter().zip(&mask).map(|(gi, m)| gi * m).collect()]),
        ))
    }

    /// Embedding lookup: pick rows of `table` (R x d) by index.
    pub fn gather_rows(&mut self, table: &Var, indices: &[usize]) -> Result<Var> {
        let sh = table.shape();
        if sh.len() != 2 {
            return Err(dim_err("gather_rows", sh, &[indices.len()]));
        }
        let (r, d) = (sh[0], sh[1]);
        let n = indices.len();
        let mut out = vec![0.0; n * d];
        for (i, &idx) in indices.iter().enumerate() {
            if idx >= r {
                return Err(Error::Contract(format!(
                    "gather_rows: index {idx} out of range for table with {r} rows"
                )));
            }
            out[i * d..(i + 1) * d].copy_from_slice(&table.data()[idx * d..(idx + 1) * d]);
        }
        let value = op_output(out, &[n, d], "gather_rows")?;
        let idx: Vec<usize> = indices.to_vec();
        let parents: Vec<usize> = table.node.into_iter().collect();
        Ok(self.push_op(
            value,
            parents,
            Box::new(move |g| {
                let mut dt = vec![0.0; r * d];
                for (i, &row) in idx.iter().enumerate() {
                    for j in 0..d {
                        dt[row * d + j] += g[i * d + j];
                    }
                }
                vec![dt]
            }),
        ))
    }

    /// Concatenate along the trailing axis. All parts share leading dims.
    pub fn concat_last(&mut self, parts: &[&Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat_last: no parts".into()));
        }
        let lead: Vec<usize> = {
            let s = parts[0].shape();
            s[..s.len() - 1].to_vec()
        };
        let rows: usize = lead.iter().product::<usize>().max(1);
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(dim_err("concat_last", parts[0].shape(), s));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let mut shape = lead;
        shape.push(total);
        let value = op_output(out, &shape, "concat_last")?;
        let traced: Vec<bool> = parts.iter().map(|p| p.node.is_some()).collect();
        let parents: Vec<usize> = parts.iter().filter_map(|p| p.node).collect();
        Ok(self.push_op(
            value,
            parents,
            Box::new(move |g| {
                let mut res = Vec::new();
                let mut offset = 0;
                for (pi, &w) in widths.iter().enumerate() {
                    if traced[pi] {
                        let mut dp = vec![0.0; rows * w];
                        for r in 0..rows {
                            dp[r * w..(r + 1) * w].copy_from_slice(
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                        res.push(dp);
                    }
                    offset += w;
                }
                res
            }),
        ))
    }

    /// Same buffer, new shape; identity gradient.
    pub fn reshape(&mut self, x: &Var, shape: &[usize]) -> Result<Var> {
        let value = x.value.reshaped(shape)?;
        let parents: Vec<usize> = x.node.into_iter().collect();
        Ok(self.push_op(value, parents, Box::new(move |g| vec![g.to_vec()])))
    }

    // ── reductions and losses ───────────────────────────────────────────

    pub fn sum_all(&mut self, x: &Var) -> Result<Var> {
        let s: f64 = x.data().iter().sum();
        let n = x.value.numel();
        let value = op_output(vec![s], &[1], "sum_all")?;
        let parents: Vec<usize> = x.node.into_iter().collect();
        Ok(self.push_op(value, parents, Box::new(move |g| vec![vec![g[0]; n]])))
    }

    pub fn mean_all(&mut self, x: &Var) -> Result<Var> {
        let n = x.value.numel() as f64;
        let s = self.sum_all(x)?;
        self.scale(&s, 1.0 / n)
    }

    /// Sum over the trailing axis: (..., d) -> flat vector of row sums.
    pub fn sum_rows(&mut self, x: &Var) -> Result<Var> {
        let (rows, d) = row_view(x.shape());
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            out[r] = x.data()[r * d..(r + 1) * d].iter().sum();
        }
        let value = op_output(out, &[rows], "sum_rows")?;
        let parents: Vec<usize> = x.node.into_iter().collect();
        Ok(self.push_op(
            value,
            parents,
            Box::new(move |g| {
                let mut dx = vec![0.0; rows * d];
                for r in 0..rows {
                    for j in 0..d {
                        dx[r * d + j] = g[r];
                    }
                }
                vec![dx]
            }),
        ))
    }

    /// Mean negative log-likelihood of integer targets under row softmax.
    /// Fused with the softmax for numerical stability.
    pub fn cross_entropy_logits(&mut self, logits: &Var, targets: &[usize]) -> Result<Var> {
        let sh = logits.shape();
        if sh.len() != 2 || sh[0] != targets.len() {
            return Err(dim_err("cross_entropy", sh, &[targets.len()]));
        }
        let (n, c) = (sh[0], sh[1]);
        for (i, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(Error::Contract(format!(
                    "cross_entropy: target {t} at row {i} out of range for {c} classes"
                )));
            }
        }
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &logits.data()[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                probs[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                probs[i * c + j] /= sum;
            }
            loss -= probs[i * c + targets[i]].max(f64::MIN_POSITIVE).ln();
        }
        loss /= n as f64;
        let value = op_output(vec![loss], &[1], "cross_entropy")?;
        let tgt = targets.to_vec();
        let parents: Vec<usize> = logits.node.into_iter().collect();
        Ok(self.push_op(
            value,
            parents,
            Box::new(move |g| {
                let scale = g[0] / n as f64;
                let mut dl = probs.clone();
                for (i, &t) in tgt.iter().enumerate() {
                    dl[i * c + t] -= 1.0;
                }
                for v in dl.iter_mut() {
                    *v *= scale;
                }
                vec![dl]
            }),
        ))
    }

    /// Affine map over the trailing axis: reshape to 2-D, `x @ w + b`,
    /// reshape back. `w` is (in, out), `b` is (out).
    pub fn linear(&mut self, x: &Var, w: &Var, b: &Var) -> Result<Var> {
        let xsh = x.shape().to_vec();
        let d_in = *xsh
            .last()
            .ok_or_else(|| dim_err("linear", &xsh, w.shape()))?;
        if w.shape().len() != 2 || w.shape()[0] != d_in {
            return Err(dim_err("linear", &xsh, w.shape()));
        }
        let d_out = w.shape()[1];
        let rows: usize = xsh[..xsh.len() - 1].iter().product::<usize>().max(1);
        let x2 = self.reshape(x, &[rows, d_in])?;
        let y = self.matmul(&x2, w)?;
        let y = self.add_bias(&y, b)?;
        let mut out_shape = xsh[..xsh.len() - 1].to_vec();
        out_shape.push(d_out);
        self.reshape(&y, &out_shape)
    }
}
