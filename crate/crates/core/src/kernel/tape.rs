//! Reverse-mode differentiation over dense matrices.
//!
//! Operations are appended to a [`Tape`] in execution order; `backward`
//! walks the tape in exact reverse order and accumulates gradients
//! additively, so a value used by several operations receives the sum of
//! its branch gradients.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array2, Axis};

use super::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Transpose(usize),
    RowMean(usize),
    RowSum(usize),
    RowMax(usize, Vec<usize>),
    ConcatRows(Vec<usize>),
    LogSoftmax(usize),
    SumAll(usize),
    Gather(usize, Vec<(usize, usize)>),
    LnClamped(usize, f64),
    LogSigmoidClamped(usize, f64),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of operations.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    /// Adds the gradient of `v` (zero when `v` did not influence the loss)
    /// into `tensor`.
    pub fn accumulate_into(&self, v: Var, tensor: &mut Tensor) -> Result<()> {
        match self.get(v) {
            Some(g) => tensor.accumulate_grad(g),
            None => tensor.accumulate_grad(&Array2::zeros(tensor.values.dim())),
        }
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without forming `1 - sigmoid` for large `|x|`.
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Usage("variable does not belong to this tape".into()));
        }
        Ok(v.index)
    }

    fn push(
        &mut self,
        name: &'static str,
        value: Array2<f64>,
        op: Op,
        requires_grad: bool,
    ) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        let i = self.index(v).expect("foreign variable");
        &self.nodes[i].value
    }

    /// Scalar value of a 1x1 variable.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Result<Var> {
        self.push("leaf", value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn param(&mut self, t: &Tensor) -> Result<Var> {
        self.leaf(t.values.clone(), t.requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.ncols() != vb.nrows() {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", va.dim(), vb.dim()),
            ));
        }
        let out = va.dot(vb);
        let rg = self.rg(ia) || self.rg(ib);
        self.push("matmul", out, Op::MatMul(ia, ib), rg)
    }

    /// Elementwise sum; `b` may be a single row broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let ok = va.dim() == vb.dim() || (vb.nrows() == 1 && vb.ncols() == va.ncols());
        if !ok {
            return Err(shape_err("add", format!("{:?} + {:?}", va.dim(), vb.dim())));
        }
        let out = va + vb;
        let rg = self.rg(ia) || self.rg(ib);
        self.push("add", out, Op::Add(ia, ib), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.dim() != vb.dim() {
            return Err(shape_err("mul", format!("{:?} * {:?}", va.dim(), vb.dim())));
        }
        let out = va * vb;
        let rg = self.rg(ia) || self.rg(ib);
        self.push("mul", out, Op::Mul(ia, ib), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ia = self.index(a)?;
        let out = &self.nodes[ia].value * s;
        self.push("scale", out, Op::Scale(ia, s), self.rg(ia))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let ia = self.index(a)?;
        let out = &self.nodes[ia].value + s;
        self.push("add_scalar", out, Op::AddScalar(ia), self.rg(ia))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let out = self.nodes[ia].value.mapv(|v| v.max(0.0));
        self.push("relu", out, Op::Relu(ia), self.rg(ia))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let out = self.nodes[ia].value.mapv(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(ia), self.rg(ia))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let out = self.nodes[ia].value.t().to_owned();
        self.push("transpose", out, Op::Transpose(ia), self.rg(ia))
    }

    /// Mean over rows: `r x c -> 1 x c`.
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let v = &self.nodes[ia].value;
        if v.nrows() == 0 {
            return Err(shape_err("row_mean", "no rows".into()));
        }
        let out = v.sum_axis(Axis(0)).insert_axis(Axis(0)) / v.nrows() as f64;
        self.push("row_mean", out, Op::RowMean(ia), self.rg(ia))
    }

    /// Sum over rows: `r x c -> 1 x c`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let out = self.nodes[ia].value.sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push("row_sum", out, Op::RowSum(ia), self.rg(ia))
    }

    /// Column-wise maximum over rows: `r x c -> 1 x c`. The gradient flows
    /// to the first maximal row of each column.
    pub fn row_max(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let v = &self.nodes[ia].value;
        if v.nrows() == 0 {
            return Err(shape_err("row_max", "no rows".into()));
        }
        let mut arg = vec![0usize; v.ncols()];
        let mut out = Array2::zeros((1, v.ncols()));
        for (c, col) in v.columns().into_iter().enumerate() {
            let mut best = 0;
            for (r, &x) in col.iter().enumerate() {
                if x > col[best] {
                    best = r;
                }
            }
            arg[c] = best;
            out[[0, c]] = col[best];
        }
        self.push("row_max", out, Op::RowMax(ia, arg), self.rg(ia))
    }

    /// Stacks the rows of all inputs in order.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat_rows", "no inputs".into()));
        }
        let idx: Vec<usize> = parts
            .iter()
            .map(|&p| self.index(p))
            .collect::<Result<_>>()?;
        let cols = self.nodes[idx[0]].value.ncols();
        if idx.iter().any(|&i| self.nodes[i].value.ncols() != cols) {
            return Err(shape_err("concat_rows", "column counts differ".into()));
        }
        let views: Vec<_> = idx.iter().map(|&i| self.nodes[i].value.view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("column counts checked");
        let rg = idx.iter().any(|&i| self.rg(i));
        self.push("concat_rows", out, Op::ConcatRows(idx), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let out = log_softmax_rows(&self.nodes[ia].value);
        self.push("log_softmax", out, Op::LogSoftmax(ia), self.rg(ia))
    }

    /// Sum of all entries as a 1x1 value.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let out = Array2::from_elem((1, 1), self.nodes[ia].value.sum());
        self.push("sum_all", out, Op::SumAll(ia), self.rg(ia))
    }

    /// Picks entries `(row, col)` into a `k x 1` column.
    pub fn gather(&mut self, a: Var, entries: &[(usize, usize)]) -> Result<Var> {
        let ia = self.index(a)?;
        let v = &self.nodes[ia].value;
        let (r, c) = v.dim();
        if let Some(bad) = entries.iter().find(|&&(i, j)| i >= r || j >= c) {
            return Err(shape_err(
                "gather",
                format!("entry {bad:?} outside {r}x{c}"),
            ));
        }
        let out = Array2::from_shape_fn((entries.len(), 1), |(k, _)| v[entries[k]]);
        self.push("gather", out, Op::Gather(ia, entries.to_vec()), self.rg(ia))
    }

    /// `ln(max(x, floor))`; zero gradient where the floor is active.
    pub fn ln_clamped(&mut self, a: Var, floor: f64) -> Result<Var> {
        let ia = self.index(a)?;
        let out = self.nodes[ia].value.mapv(|v| v.max(floor).ln());
        self.push("ln_clamped", out, Op::LnClamped(ia, floor), self.rg(ia))
    }

    /// `max(ln sigmoid(x), ln floor)`, evaluated stably; zero gradient where
    /// the floor is active.
    pub fn log_sigmoid_clamped(&mut self, a: Var, floor: f64) -> Result<Var> {
        let ia = self.index(a)?;
        let lf = floor.ln();
        let out = self.nodes[ia].value.mapv(|v| log_sigmoid(v).max(lf));
        self.push(
            "log_sigmoid_clamped",
            out,
            Op::LogSigmoidClamped(ia, floor),
            self.rg(ia),
        )
    }

    /// Smallest distance of any input of a piecewise op on this tape from
    /// its breakpoint; infinite when there are none. Covers relu, the clamped
    /// logarithms and near ties in a column max. Exact ties are skipped:
    /// they come from structurally identical rows and survive perturbation.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for n in &self.nodes {
            let (v, at) = match n.op {
                Op::Relu(a) => (&self.nodes[a].value, 0.0),
                Op::LnClamped(a, floor) => (&self.nodes[a].value, floor),
                Op::LogSigmoidClamped(a, floor) => {
                    (&self.nodes[a].value, (floor / (1.0 - floor)).ln())
                }
                Op::RowMax(a, _) => {
                    for col in self.nodes[a].value.columns() {
                        let top = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        for &x in col {
                            if x < top {
                                margin = margin.min(top - x);
                            }
                        }
                    }
                    continue;
                }
                _ => continue,
            };
            margin = v.iter().map(|x| (x - at).abs()).fold(margin, f64::min);
        }
        margin
    }

    /// Propagates d(loss)/d(value) to every recorded value. A tape supports
    /// a single backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let il = self.index(loss)?;
        if self.consumed {
            return Err(Error::Usage("backward already ran on this tape".into()));
        }
        if self.nodes[il].value.dim() != (1, 1) {
            return Err(Error::Usage(format!(
                "loss must be 1x1, got {:?}",
                self.nodes[il].value.dim()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[il] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], i: usize, g: Array2<f64>) {
            match &mut grads[i] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=il).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].clone() else { continue };
            let out = &self.nodes[i].value;
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        acc(&mut grads, a, g.dot(&self.nodes[b].value.t()));
                    }
                    if self.rg(b) {
                        acc(&mut grads, b, self.nodes[a].value.t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        acc(&mut grads, a, g.clone());
                    }
                    if self.rg(b) {
                        let gb = if self.nodes[b].value.dim() == g.dim() {
                            g
                        } else {
                            g.sum_axis(Axis(0)).insert_axis(Axis(0))
                        };
                        acc(&mut grads, b, gb);
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        acc(&mut grads, a, &g * &self.nodes[b].value);
                    }
                    if self.rg(b) {
                        acc(&mut grads, b, &g * &self.nodes[a].value);
                    }
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g * *s),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Relu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&self.nodes[*a].value, |d, &x| {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(out, |d, &y| *d *= y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::RowMean(a) => {
                    let rows = self.nodes[*a].value.nrows();
                    let ga = g
                        .broadcast((rows, g.ncols()))
                        .expect("1 x c row")
                        .to_owned()
                        / rows as f64;
                    acc(&mut grads, *a, ga);
                }
                Op::RowSum(a) => {
                    let rows = self.nodes[*a].value.nrows();
                    let ga = g
                        .broadcast((rows, g.ncols()))
                        .expect("1 x c row")
                        .to_owned();
                    acc(&mut grads, *a, ga);
                }
                Op::RowMax(a, arg) => {
                    let mut ga = Array2::zeros(self.nodes[*a].value.dim());
                    for (c, &r) in arg.iter().enumerate() {
                        ga[[r, c]] = g[[0, c]];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.nodes[p].value.nrows();
                        if self.rg(p) {
                            acc(
                                &mut grads,
                                p,
                                g.slice(s![start..start + rows, ..]).to_owned(),
                            );
                        }
                        start += rows;
                    }
                }
                Op::LogSoftmax(a) => {
                    let mut ga = g.clone();
                    for (mut row, (grow, orow)) in ga
                        .rows_mut()
                        .into_iter()
                        .zip(g.rows().into_iter().zip(out.rows()))
                    {
                        let total: f64 = grow.sum();
                        row.zip_mut_with(&orow, |d, &lp| *d -= lp.exp() * total);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(self.nodes[*a].value.dim(), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::Gather(a, entries) => {
                    let mut ga = Array2::zeros(self.nodes[*a].value.dim());
                    for (k, &e) in entries.iter().enumerate() {
                        ga[e] += g[[k, 0]];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LnClamped(a, floor) => {
                    let mut ga = g;
                    ga.zip_mut_with(&self.nodes[*a].value, |d, &x| {
                        *d = if x > *floor { *d / x } else { 0.0 };
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::LogSigmoidClamped(a, floor) => {
                    let lf = floor.ln();
                    let mut ga = g;
                    ga.zip_mut_with(&self.nodes[*a].value, |d, &x| {
                        *d = if log_sigmoid(x) > lf {
                            *d * sigmoid(-x)
                        } else {
                            0.0
                        };
                    });
                    acc(&mut grads, *a, ga);
                }
            }
        }

        for g in grads.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("backward".into()));
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}
