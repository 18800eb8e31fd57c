use ndarray::Array2;

use super::Tensor;
use crate::error::{Error, Result};

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self::with_betas(learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            learning_rate,
            beta1,
            beta2,
            eps,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter and zeroes its gradient.
    ///
    /// The parameter list must be passed in the same order on every call.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if let Some(i) = params.iter().position(|p| p.grad.is_none()) {
            return Err(Error::Usage(format!("parameter {i} has no gradient")));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Array2::zeros(p.shape())).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len()
            || self
                .first
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.dim() != p.shape())
        {
            return Err(Error::contract(
                "parameter set changed between optimizer steps",
            ));
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);

        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let g = p.grad.as_mut().expect("checked above");
            ndarray::Zip::from(&mut p.values)
                .and(m)
                .and(v)
                .and(&*g)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                });
            g.fill(0.0);
            if p.values.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("adam_step".into()));
            }
        }
        Ok(())
    }
}
