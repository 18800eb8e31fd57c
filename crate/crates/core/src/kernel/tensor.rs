use ndarray::Array2;

use crate::error::{Error, Result};

/// A trainable dense matrix with an optional accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub values: Array2<f64>,
    pub grad: Option<Array2<f64>>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(values: Array2<f64>, requires_grad: bool) -> Self {
        Tensor {
            values,
            grad: None,
            requires_grad,
        }
    }

    pub fn parameter(values: Array2<f64>) -> Self {
        Self::new(values, true)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Adds `g` into the gradient slot.
    pub fn accumulate_grad(&mut self, g: &Array2<f64>) -> Result<()> {
        if g.dim() != self.values.dim() {
            return Err(Error::Shape {
                op: "accumulate_grad",
                detail: format!("{:?} into {:?}", g.dim(), self.values.dim()),
            });
        }
        match &mut self.grad {
            Some(acc) => *acc += g,
            None => self.grad = Some(g.clone()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(0.0);
        }
    }
}
