//! Minimal dense differentiable kernel: taped matrices, the graph
//! propagation operator and the Adam optimizer.

mod adam;
mod tape;
mod tensor;

pub use adam::Adam;
pub(crate) use tape::sigmoid;
pub use tape::{log_softmax_rows, Gradients, Tape, Var};
pub use tensor::Tensor;

use ndarray::{Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance on target rows summing to one.
pub const TARGET_SUM_TOL: f64 = 1e-6;

/// Symmetric GCN propagation operator `D^-1/2 (A + I) D^-1/2`, with `D`
/// the row degrees of `A + I`.
pub fn normalize_adjacency(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut with_loops = a.clone();
    for i in 0..n {
        with_loops[[i, i]] += 1.0;
    }
    let deg = with_loops.sum_axis(Axis(1));
    for ((i, j), v) in with_loops.indexed_iter_mut() {
        if *v != 0.0 {
            *v /= (deg[i] * deg[j]).sqrt();
        }
    }
    with_loops
}

/// Mean over rows of `-sum_c targets[b, c] * log_probs[b, c]`.
pub fn soft_cross_entropy(tape: &mut Tape, log_probs: Var, targets: &Array2<f64>) -> Result<Var> {
    if tape.value(log_probs).dim() != targets.dim() {
        return Err(Error::Shape {
            op: "soft_cross_entropy",
            detail: format!("{:?} vs {:?}", tape.value(log_probs).dim(), targets.dim()),
        });
    }
    for (b, row) in targets.rows().into_iter().enumerate() {
        let sum = row.sum();
        if (sum - 1.0).abs() > TARGET_SUM_TOL || row.iter().any(|&v| v < 0.0) {
            return Err(Error::contract(format!("target row {b} sums to {sum}")));
        }
    }
    let batch = targets.nrows() as f64;
    let t = tape.constant(targets.clone())?;
    let weighted = tape.mul(log_probs, t)?;
    let total = tape.sum_all(weighted)?;
    tape.scale(total, -1.0 / batch)
}

/// Glorot-uniform initialised matrix.
pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalizes_single_edge() {
        let out = normalize_adjacency(&array![[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(out, array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn isolated_node_keeps_self_loop() {
        assert_eq!(normalize_adjacency(&array![[0.0]]), array![[1.0]]);
        let out = normalize_adjacency(&Array2::zeros((3, 3)));
        assert_eq!(out, Array2::<f64>::eye(3));
    }

    #[test]
    fn regular_rings_have_unit_row_sums() {
        for n in 3..=8 {
            let ring = crate::graph::synthetic::ring_adjacency(n);
            let out = normalize_adjacency(&ring);
            for s in out.sum_axis(Axis(1)) {
                assert!((s - 1.0).abs() < 1e-12);
            }
            assert_eq!(out, out.t());
        }
    }

    #[test]
    fn weighted_input_is_symmetric() {
        let a = array![[0.0, 0.3, 0.0], [0.3, 0.0, 2.0], [0.0, 2.0, 0.0]];
        let out = normalize_adjacency(&a);
        for i in 0..3 {
            for j in 0..3 {
                assert!((out[[i, j]] - out[[j, i]]).abs() < 1e-15);
            }
        }
    }

    fn ce(logits: Array2<f64>, targets: Array2<f64>) -> f64 {
        let mut tape = Tape::new();
        let z = tape.leaf(logits, true).unwrap();
        let lp = tape.log_softmax(z).unwrap();
        let l = soft_cross_entropy(&mut tape, lp, &targets).unwrap();
        tape.scalar(l)
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let l = ce(array![[0.0, -1000.0]], array![[1.0, 0.0]]);
        assert!(l.abs() < 1e-300);
    }

    #[test]
    fn uniform_prediction_costs_ln2() {
        let l = ce(array![[0.3, 0.3]], array![[0.5, 0.5]]);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn logit_gradient_is_softmax_minus_target() {
        let logits = array![[0.2, -1.0, 0.7], [1.5, 0.1, -0.3]];
        let targets = array![[0.2, 0.3, 0.5], [1.0, 0.0, 0.0]];
        let mut tape = Tape::new();
        let z = tape.leaf(logits.clone(), true).unwrap();
        let lp = tape.log_softmax(z).unwrap();
        let l = soft_cross_entropy(&mut tape, lp, &targets).unwrap();
        let g = tape.backward(l).unwrap();
        let expected = (log_softmax_rows(&logits).mapv(f64::exp) - &targets) / 2.0;
        let diff = (g.get(z).unwrap() - &expected).mapv(f64::abs).sum();
        assert!(diff < 1e-12);
    }

    #[test]
    fn bad_targets_are_rejected() {
        let mut tape = Tape::new();
        let lp = tape.constant(array![[-0.5, -1.0]]).unwrap();
        let r = soft_cross_entropy(&mut tape, lp, &array![[0.6, 0.6]]);
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
