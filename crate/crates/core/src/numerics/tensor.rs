use std::sync::{Arc, Mutex};

use crate::{Error, Result};

/// Dense row-major tensor of 64-bit floats.
///
/// Data is shared behind an `Arc`, so clones are cheap and snapshots taken by
/// the tape stay valid when an optimizer later swaps a parameter's buffer.
/// Parameters additionally carry a shared gradient buffer; gradient
/// accumulation is the one mutation allowed after construction.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    grad: Option<Arc<Mutex<Vec<f64>>>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

fn check_shape(data: &[f64], shape: &[usize]) -> Result<()> {
    let numel: usize = shape.iter().product();
    if numel != data.len() {
        return Err(Error::Dimension {
            op: "tensor_new",
            lhs: shape.to_vec(),
            rhs: vec![data.len()],
        });
    }
    // NaN/Inf guarded at construction in debug builds only; release relies
    // on the explicit checks of the few ops (softmax, decode) that need them.
    #[cfg(debug_assertions)]
    if !data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("tensor_new"));
    }
    Ok(())
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        check_shape(&data, shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            grad: None,
        })
    }

    /// A trainable tensor: same as [`Tensor::new`] plus a zeroed grad buffer.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let n = data.len();
        let mut t = Tensor::new(data, shape)?;
        t.grad = Some(Arc::new(Mutex::new(vec![0.0; n])));
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(vec![0.0; n], shape).expect("zeros: consistent shape")
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(vec![1.0; n], shape).expect("ones: consistent shape")
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![v], &[1]).expect("scalar: consistent shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }

    /// Snapshot of the accumulated gradient (zeros if nothing flowed yet).
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.grad.as_ref().map(|g| g.lock().unwrap().clone())
    }

    pub fn zero_grad(&self) {
        if let Some(g) = &self.grad {
            for v in g.lock().unwrap().iter_mut() {
                *v = 0.0;
            }
        }
    }

    /// Replace the value buffer (optimizer step, checkpoint load). The old
    /// buffer stays alive for any tape that snapshotted it.
    pub fn set_data(&mut self, data: Vec<f64>) -> Result<()> {
        check_shape(&data, &self.shape)?;
        self.data = Arc::new(data);
        Ok(())
    }

    /// Reinterpret the same buffer under a new shape (no copy).
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
            grad: None,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    pub(crate) fn grad_handle(&self) -> Option<Arc<Mutex<Vec<f64>>>> {
        self.grad.as_ref().map(Arc::clone)
    }

    #[cfg(test)]
    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        if let Some(g) = &self.grad {
            let mut buf = g.lock().unwrap();
            debug_assert_eq!(buf.len(), delta.len());
            for (b, d) in buf.iter_mut().zip(delta) {
                *b += d;
            }
        }
    }
}
