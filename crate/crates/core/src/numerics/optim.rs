use super::tensor::Tensor;
use crate::{Error, Result};

/// Adaptive moment estimation with the usual decay defaults.
///
/// Holds first/second moment buffers per parameter slot; parameters must be
/// passed in the same order on every step. `step` consumes the accumulated
/// gradients and zeroes them afterwards.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (vec![0.0; p.numel()], vec![0.0; p.numel()]))
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer saw {} parameters, expected {}",
                params.len(),
                self.moments.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            let grad = p
                .grad()
                .ok_or_else(|| Error::Contract("optimizer step on non-parameter".into()))?;
            let mut data = p.data().to_vec();
            for i in 0..data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            p.set_data(data)?;
            p.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;

    #[test]
    fn adam_minimizes_a_quadratic() {
        // f(x) = sum((x - 3)^2), optimum at 3
        let mut x = Tensor::param(vec![0.0, 10.0], &[2]).unwrap();
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let mut tape = Tape::new();
            let xv = tape.param(&x);
            let shift = tape.add_const(&xv, -3.0).unwrap();
            let sq = tape.mul(&shift, &shift).unwrap();
            let loss = tape.sum_all(&sq).unwrap();
            tape.backward(&loss).unwrap();
            opt.step(&mut [&mut x]).unwrap();
        }
        for v in x.data() {
            assert!((v - 3.0).abs() < 1e-3, "converged to {v}");
        }
    }

    #[test]
    fn step_zeroes_gradients() {
        let mut x = Tensor::param(vec![1.0], &[1]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let loss = tape.sum_all(&xv).unwrap();
        tape.backward(&loss).unwrap();
        let mut opt = Adam::new(0.01);
        opt.step(&mut [&mut x]).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0]);
    }
}
