//! Parameter containers shared by the classifier and the structural
//! auto-encoder.

use ndarray::Array2;
use rand::Rng;

use crate::error::Result;
use crate::kernel::{glorot, Gradients, Tape, Tensor, Var};

/// Affine map `x W + b` with `W: in x out`, `b: 1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Dense {
            weight: Tensor::parameter(glorot(input, output, rng)),
            bias: Tensor::parameter(Array2::zeros((1, output))),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.values.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.values.ncols()
    }
}

/// A dense layer whose parameters are recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundDense {
    pub weight: Var,
    pub bias: Var,
}

impl BoundDense {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.weight)?;
        tape.add(xw, self.bias)
    }

    /// Graph convolution `A_hat (x W) + b`.
    pub fn propagate(&self, tape: &mut Tape, a_hat: Var, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.weight)?;
        let agg = tape.matmul(a_hat, xw)?;
        tape.add(agg, self.bias)
    }
}

/// Anything holding trainable tensors in a fixed order.
pub trait Parameterized {
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    /// Records every parameter on `tape`, in [`Parameterized::parameters`]
    /// order.
    fn bind(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.parameters()
            .into_iter()
            .map(|p| tape.param(p))
            .collect()
    }

    /// Moves gradients of the bound variables into the parameter slots.
    fn absorb(&mut self, bound: &[Var], grads: &Gradients) -> Result<()> {
        for (p, &v) in self.parameters_mut().into_iter().zip(bound) {
            grads.accumulate_into(v, p)?;
        }
        Ok(())
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.values.len()).sum()
    }
}

pub(crate) fn bound_dense(vars: &[Var], layer: usize) -> BoundDense {
    BoundDense {
        weight: vars[2 * layer],
        bias: vars[2 * layer + 1],
    }
}
