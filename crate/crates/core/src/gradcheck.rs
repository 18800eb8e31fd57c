//! Finite-difference verification of the reverse-mode kernel.
//!
//! Every primitive is checked on random small inputs by reducing its output
//! to a scalar with a fixed random weighting and comparing the tape
//! gradient to central differences. The classifier loss and the
//! reconstruction loss are checked with respect to model parameters.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::classifier::{
    set_loss, ClassifierConfig, ClassifierModel, LossReduction, PreparedGraph, Readout,
};
use crate::error::{Error, Result};
use crate::graph::{synthetic::erdos_renyi_adjacency, Graph};
use crate::gsae::{GsaeConfig, GsaeModel, NegativeEdgeSample, StructuralInputKind};
use crate::kernel::{normalize_adjacency, soft_cross_entropy, Tape, Var};
use crate::layers::Parameterized;
use crate::rng::{derive, rng_from};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradient norms below this are compared absolutely.
pub const GRADIENT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub instance: usize,
    pub relative_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.relative_error <= TOLERANCE
    }
}

/// `|a - b| / max(|a|, |b|, GRADIENT_FLOOR)` over the flattened gradients.
/// The floor keeps flat, fully saturated instances from turning rounding
/// noise into a large ratio.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied())
        .max(norm(&mut numeric.iter().copied()))
        .max(GRADIENT_FLOOR);
    diff / scale
}

type Build<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a;

/// Checks the gradient of a scalar function of several matrix inputs.
fn check_inputs(inputs: &[Array2<f64>], f: &Build) -> Result<f64> {
    let eval = |xs: &[Array2<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = xs
            .iter()
            .map(|x| tape.leaf(x.clone(), false))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|x| tape.leaf(x.clone(), true))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut xs = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let g = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(inputs[k].dim()));
        for idx in 0..inputs[k].len() {
            let (r, c) = (idx / inputs[k].ncols(), idx % inputs[k].ncols());
            let orig = xs[k][[r, c]];
            xs[k][[r, c]] = orig + STEP;
            let up = eval(&xs)?;
            xs[k][[r, c]] = orig - STEP;
            let down = eval(&xs)?;
            xs[k][[r, c]] = orig;
            analytic.push(g[[r, c]]);
            numeric.push((up - down) / (2.0 * STEP));
        }
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Scalar loss built on a tape from a model and its bound parameters.
type ModelLoss<'a, M> = dyn Fn(&M, &mut Tape, &[Var]) -> Result<Var> + 'a;

/// Checks the gradient of a scalar loss with respect to every parameter of
/// a model.
fn check_model<M: Parameterized + Clone>(model: &M, loss: &ModelLoss<'_, M>) -> Result<f64> {
    let eval = |m: &M| -> Result<f64> {
        let mut tape = Tape::new();
        let params = m.bind(&mut tape)?;
        let out = loss(m, &mut tape, &params)?;
        Ok(tape.scalar(out))
    };
    let mut tape = Tape::new();
    let params = model.bind(&mut tape)?;
    let out = loss(model, &mut tape, &params)?;
    let grads = tape.backward(out)?;

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut probe = model.clone();
    for (k, p) in model.parameters().into_iter().enumerate() {
        let g = grads
            .get(params[k])
            .cloned()
            .unwrap_or_else(|| Array2::zeros(p.shape()));
        let cols = p.values.ncols();
        for idx in 0..p.values.len() {
            let (r, c) = (idx / cols, idx % cols);
            let orig = p.values[[r, c]];
            probe.parameters_mut()[k].values[[r, c]] = orig + STEP;
            let up = eval(&probe)?;
            probe.parameters_mut()[k].values[[r, c]] = orig - STEP;
            let down = eval(&probe)?;
            probe.parameters_mut()[k].values[[r, c]] = orig;
            analytic.push(g[[r, c]]);
            numeric.push((up - down) / (2.0 * STEP));
        }
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Distance below which an input counts as sitting on a kink.
const KINK_MARGIN: f64 = 1e-3;
const MAX_REDRAWS: usize = 100;

/// Fresh models start with zero biases, which puts dead units exactly on
/// the relu kink. Biases are redrawn until every relu input is clear of
/// zero and every clamped logarithm is clear of its floor, so the loss is
/// differentiable at the checked point.
fn move_off_kinks<M: Parameterized>(
    model: &mut M,
    rng: &mut ChaCha8Rng,
    loss: &ModelLoss<'_, M>,
) -> Result<()> {
    for _ in 0..MAX_REDRAWS {
        for (k, p) in model.parameters_mut().into_iter().enumerate() {
            if k % 2 == 1 {
                p.values.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            }
        }
        let mut tape = Tape::new();
        let params = model.bind(&mut tape)?;
        loss(model, &mut tape, &params)?;
        if tape.kink_margin() >= KINK_MARGIN {
            return Ok(());
        }
    }
    Err(Error::NonFinite(
        "could not find a differentiable point for the gradient check".into(),
    ))
}

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    uniform(rows, cols, -1.0, 1.0, rng)
}

fn simplex_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut t = uniform(rows, cols, 0.05, 1.0, rng);
    for mut row in t.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    t
}

/// Reduces a matrix to a scalar through a fixed random weighting.
fn weighted_sum(tape: &mut Tape, v: Var, w: &Array2<f64>) -> Result<Var> {
    let w = tape.constant(w.clone())?;
    let p = tape.mul(v, w)?;
    tape.sum_all(p)
}

fn random_graph(n: usize, d: usize, c: usize, rng: &mut ChaCha8Rng) -> Result<Graph> {
    let a = erdos_renyi_adjacency(n, 0.5, rng);
    let x = normal(n, d, rng);
    let y = simplex_rows(1, c, rng).row(0).to_owned();
    Graph::new(x, a, y)
}

fn primitive_checks(rng: &mut ChaCha8Rng) -> Result<Vec<(String, f64)>> {
    let n = rng.random_range(2..=6);
    let d = rng.random_range(2..=5);
    let k = rng.random_range(2..=5);
    let mut out = Vec::new();
    let mut record = |name: &str, err: f64| out.push((name.to_string(), err));

    let (a, b) = (normal(n, d, rng), normal(d, k, rng));
    let w = normal(n, k, rng);
    record(
        "matmul",
        check_inputs(&[a.clone(), b], &|t, v| {
            let m = t.matmul(v[0], v[1])?;
            weighted_sum(t, m, &w)
        })?,
    );

    let (x, y) = (normal(n, d, rng), normal(n, d, rng));
    let w = normal(n, d, rng);
    record(
        "add",
        check_inputs(&[x.clone(), y.clone()], &|t, v| {
            let s = t.add(v[0], v[1])?;
            weighted_sum(t, s, &w)
        })?,
    );
    let bias = normal(1, d, rng);
    record(
        "add_broadcast",
        check_inputs(&[x.clone(), bias], &|t, v| {
            let s = t.add(v[0], v[1])?;
            weighted_sum(t, s, &w)
        })?,
    );
    record(
        "mul",
        check_inputs(&[x.clone(), y], &|t, v| {
            let s = t.mul(v[0], v[1])?;
            weighted_sum(t, s, &w)
        })?,
    );
    let s = rng.random_range(-2.0..2.0);
    record(
        "scale",
        check_inputs(std::slice::from_ref(&x), &|t, v| {
            let s = t.scale(v[0], s)?;
            weighted_sum(t, s, &w)
        })?,
    );
    record(
        "add_scalar",
        check_inputs(std::slice::from_ref(&x), &|t, v| {
            let s = t.add_scalar(v[0], s)?;
            weighted_sum(t, s, &w)
        })?,
    );
    // Keep inputs away from the kink so central differences stay on one
    // side of it.
    let away = x.mapv(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    record(
        "relu",
        check_inputs(&[away], &|t, v| {
            let s = t.relu(v[0])?;
            weighted_sum(t, s, &w)
        })?,
    );
    let logits = uniform(n, d, -3.0, 3.0, rng);
    record(
        "sigmoid",
        check_inputs(std::slice::from_ref(&logits), &|t, v| {
            let s = t.sigmoid(v[0])?;
            weighted_sum(t, s, &w)
        })?,
    );
    let wt = normal(d, n, rng);
    record(
        "transpose",
        check_inputs(std::slice::from_ref(&x), &|t, v| {
            let s = t.transpose(v[0])?;
            weighted_sum(t, s, &wt)
        })?,
    );
    let w_row = normal(1, d, rng);
    record(
        "row_mean",
        check_inputs(std::slice::from_ref(&x), &|t, v| {
            let s = t.row_mean(v[0])?;
            weighted_sum(t, s, &w_row)
        })?,
    );
    record(
        "row_sum",
        check_inputs(std::slice::from_ref(&x), &|t, v| {
            let s = t.row_sum(v[0])?;
            weighted_sum(t, s, &w_row)
        })?,
    );
    record(
        "row_max",
        check_inputs(std::slice::from_ref(&x), &|t, v| {
            let s = t.row_max(v[0])?;
            weighted_sum(t, s, &w_row)
        })?,
    );
    let z = normal(k, d, rng);
    let wc = normal(n + k, d, rng);
    record(
        "concat_rows",
        check_inputs(&[x.clone(), z], &|t, v| {
            let s = t.concat_rows(&[v[0], v[1]])?;
            weighted_sum(t, s, &wc)
        })?,
    );
    record(
        "log_softmax",
        check_inputs(std::slice::from_ref(&logits), &|t, v| {
            let s = t.log_softmax(v[0])?;
            weighted_sum(t, s, &w)
        })?,
    );
    let entries: Vec<(usize, usize)> = (0..2 * n)
        .map(|_| (rng.random_range(0..n), rng.random_range(0..d)))
        .collect();
    let wg = normal(entries.len(), 1, rng);
    record(
        "gather",
        check_inputs(std::slice::from_ref(&x), &|t, v| {
            let s = t.gather(v[0], &entries)?;
            weighted_sum(t, s, &wg)
        })?,
    );
    let positive = uniform(n, d, 0.05, 1.0, rng);
    record(
        "ln_clamped",
        check_inputs(&[positive], &|t, v| {
            let s = t.ln_clamped(v[0], 1e-12)?;
            weighted_sum(t, s, &w)
        })?,
    );
    let wide = uniform(n, d, -25.0, 25.0, rng);
    record(
        "log_sigmoid_clamped",
        check_inputs(&[wide], &|t, v| {
            let s = t.log_sigmoid_clamped(v[0], 1e-12)?;
            weighted_sum(t, s, &w)
        })?,
    );
    record(
        "sum_all",
        check_inputs(std::slice::from_ref(&x), &|t, v| t.sum_all(v[0]))?,
    );

    let a_hat = normalize_adjacency(&erdos_renyi_adjacency(n, 0.5, rng));
    let (weight, bias) = (normal(d, k, rng), normal(1, k, rng));
    record(
        "graph_convolution",
        check_inputs(&[x, weight, bias], &|t, v| {
            let a = t.constant(a_hat.clone())?;
            let xw = t.matmul(v[0], v[1])?;
            let agg = t.matmul(a, xw)?;
            let h = t.add(agg, v[2])?;
            let h = t.sigmoid(h)?;
            weighted_sum(t, h, &normal_fixed(n, k))
        })?,
    );

    let targets = simplex_rows(n, d, rng);
    record(
        "soft_cross_entropy",
        check_inputs(&[logits], &|t, v| {
            let lp = t.log_softmax(v[0])?;
            soft_cross_entropy(t, lp, &targets)
        })?,
    );
    Ok(out)
}

fn normal_fixed(rows: usize, cols: usize) -> Array2<f64> {
    normal(rows, cols, &mut rng_from(rows as u64 * 31 + cols as u64))
}

fn classifier_checks(rng: &mut ChaCha8Rng) -> Result<Vec<(String, f64)>> {
    let d = rng.random_range(1..=5);
    let c = rng.random_range(2..=3);
    let graphs = (0..3)
        .map(|_| {
            let n = rng.random_range(1..=6);
            random_graph(n, d, c, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let prepared: Vec<PreparedGraph> = graphs.iter().map(PreparedGraph::new).collect();
    let mut out = Vec::new();
    for readout in [Readout::Mean, Readout::Add, Readout::Max] {
        let config = ClassifierConfig {
            hidden_dim: 4,
            mp_layers: 2,
            readout,
            ..ClassifierConfig::new(d, c)
        };
        let mut model = ClassifierModel::new(config, rng.random())?;
        let loss = |m: &ClassifierModel, t: &mut Tape, p: &[Var]| {
            set_loss(m, t, p, &prepared, LossReduction::Mean)
        };
        move_off_kinks(&mut model, rng, &loss)?;
        let err = check_model(&model, &loss)?;
        out.push((format!("classifier_loss_{readout}"), err));
    }
    Ok(out)
}

fn gsae_checks(rng: &mut ChaCha8Rng) -> Result<Vec<(String, f64)>> {
    let n = rng.random_range(3..=6);
    let g = random_graph(n, 1, 2, rng)?;
    let neg = NegativeEdgeSample::sample(&g, rng);
    let mut out = Vec::new();
    for kind in [
        StructuralInputKind::Degree,
        StructuralInputKind::DegreeDiagonal,
    ] {
        let config = GsaeConfig {
            hidden_dim: 4,
            embed_dim: 3,
            ..GsaeConfig::new(kind.resolve(n))
        };
        let mut model = GsaeModel::new(config, rng.random())?;
        let loss = |m: &GsaeModel, t: &mut Tape, p: &[Var]| match m.loss_on_tape(t, p, &g, &neg)? {
            Some(l) => Ok(l),
            None => t.constant(Array2::zeros((1, 1))),
        };
        move_off_kinks(&mut model, rng, &loss)?;
        let err = check_model(&model, &loss)?;
        out.push((format!("reconstruction_loss_{kind}"), err));
    }
    Ok(out)
}

/// Runs every check on `instances` independent random instances.
pub fn run_gradcheck(instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    for instance in 0..instances {
        let mut rng = rng_from(derive(seed, instance as u64));
        let mut checks = primitive_checks(&mut rng)?;
        checks.extend(classifier_checks(&mut rng)?);
        checks.extend(gsae_checks(&mut rng)?);
        results.extend(
            checks
                .into_iter()
                .map(|(name, relative_error)| CheckResult {
                    name,
                    instance,
                    relative_error,
                }),
        );
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[1.0], &[2.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Array2::from_elem((2, 2), 0.5);
        let err = check_inputs(&[x], &|t, v| {
            let s = t.sigmoid(v[0])?;
            let sum = t.sum_all(s)?;
            // A detached copy: the tape sees half the true slope.
            let value = t.value(sum).clone();
            let c = t.constant(value)?;
            t.add(c, sum)
        })
        .unwrap();
        assert!(err > 0.1, "doubling should be caught, got {err}");
    }

    #[test]
    fn all_checks_pass_on_a_few_instances() {
        for r in run_gradcheck(2, 17).unwrap() {
            assert!(
                r.passed(),
                "{} instance {}: {}",
                r.name,
                r.instance,
                r.relative_error
            );
        }
    }
}
