//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every primitive in evaluation order. Values are
//! computed eagerly when a node is pushed; [`Tape::backward`] walks the
//! record in reverse and accumulates adjoints. Parameters enter the tape
//! once each (the first [`Tape::param`] call caches the leaf), so gradient
//! contributions from every use site sum into a single buffer.

use super::matrix::{dot, softmax_in_place};
use super::{Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
const NORM_FLOOR_SQ: f64 = 1e-24;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    DivScalar(Var, Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Gelu(Var),
    Softmax { x: Var, causal: bool },
    LayerNorm { x: Var, gamma: Var, beta: Var },
    MeanRows(Var),
    SelectRows(Var, Vec<usize>),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    L2NormalizeRows(Var),
    SumAll(Var),
    CrossEntropy { logits: Var, targets: Vec<Option<usize>> },
}

/// The computation record.
pub struct Tape<'s> {
    store: &'s ParamStore,
    ops: Vec<Op>,
    values: Vec<Matrix>,
    param_vars: Vec<Option<Var>>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
    params: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient with respect to any recorded node.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to a parameter; `None` if it did not take part.
    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Adds every parameter gradient into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (i, g) in self.params.iter().enumerate() {
            if let Some(g) = g {
                store.get_mut(ParamId(i)).grad.add_assign(g);
            }
        }
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn layer_norm_row(x: &[f64]) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    (x.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            ops: Vec::new(),
            values: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.values[v.0].shape()
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.ops.push(op);
        self.values.push(value);
        Var(self.ops.len() - 1)
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let value = eval_op(&op, &self.values, self.store, None)?;
        Ok(self.push(op, value))
    }

    /// A non-differentiated input.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(Op::Input, m)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(Op::Param(id), self.store.value(id).clone());
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }

    /// Adds a 1×c row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.record(Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.values[a.0].scale(s);
        self.push(Op::Scale(a, s), v)
    }

    /// Divides every entry of `a` by the 1×1 node `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        self.record(Op::DivScalar(a, s))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.values[a.0].map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    /// Clamps entries to `[lo, hi]`; clamped entries pass no gradient.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.values[a.0].map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), v)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.values[a.0].map(gelu);
        self.push(Op::Gelu(a), v)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let v = self.values[x.0].softmax_rows();
        self.push(Op::Softmax { x, causal: false }, v)
    }

    /// Row softmax where row `i` only sees columns `0..=i`; masked entries
    /// get probability exactly zero.
    pub fn causal_softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Softmax { x, causal: true })
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        self.record(Op::LayerNorm { x, gamma, beta })
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        self.record(Op::MeanRows(x))
    }

    /// Gathers rows by index (repeats allowed); gradients scatter-add back.
    pub fn select_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        self.record(Op::SelectRows(x, idx))
    }

    pub fn row(&mut self, x: Var, r: usize) -> Result<Var> {
        self.select_rows(x, vec![r])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.record(Op::SliceCols(x, start, len))
    }

    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Result<Var> {
        self.record(Op::ConcatRows(parts))
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Result<Var> {
        self.record(Op::ConcatCols(parts))
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let mut v = self.values[x.0].clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let n = dot(row, row).max(NORM_FLOOR_SQ).sqrt();
            row.iter_mut().for_each(|e| *e /= n);
        }
        self.push(Op::L2NormalizeRows(x), v)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.values[x.0].sum();
        self.push(Op::SumAll(x), Matrix::scalar(s))
    }

    /// Sum over rows with a target of `logsumexp(row) − row[target]`.
    /// Rows whose target is `None` are masked out.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: Vec<Option<usize>>) -> Result<Var> {
        self.record(Op::CrossEntropy { logits, targets })
    }

    /// Recomputes every node from the recorded inputs and the store's
    /// current parameter values.
    pub fn replay(&self, store: &ParamStore) -> Result<Vec<Matrix>> {
        let mut values: Vec<Matrix> = Vec::with_capacity(self.values.len());
        for (i, op) in self.ops.iter().enumerate() {
            let v = eval_op(op, &values, store, Some(&self.values[i]))?;
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.values[loss.0].shape() != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.ops.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut params = vec![None; self.store.len()];
        for (pid, var) in self.param_vars.iter().enumerate() {
            if let Some(v) = var {
                params[pid] = grads[v.0].clone();
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.values[v.0];
        let out = &self.values[i];
        match &self.ops[i] {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul_bt(val(*b)).expect("recorded shapes");
                let gb = val(*a).matmul_at(g).expect("recorded shapes");
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::MatMulBt(a, b) => {
                let ga = g.matmul(val(*b)).expect("recorded shapes");
                let gb = g.matmul_at(val(*a)).expect("recorded shapes");
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                acc(grads, *a, g.clone());
                let mut gr = vec![0.0; g.cols()];
                for r in 0..g.rows() {
                    for (o, x) in gr.iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                acc(grads, *row, Matrix::row_vector(&gr));
            }
            Op::Scale(a, s) => acc(grads, *a, g.scale(*s)),
            Op::DivScalar(a, s) => {
                let sv = val(*s).item();
                acc(grads, *a, g.scale(1.0 / sv));
                let num: f64 = g
                    .as_slice()
                    .iter()
                    .zip(val(*a).as_slice())
                    .map(|(gi, ai)| gi * ai)
                    .sum();
                acc(grads, *s, Matrix::scalar(-num / (sv * sv)));
            }
            Op::Exp(a) => acc(grads, *a, g.zip_map(out, |x, y| x * y).unwrap()),
            Op::Clamp(a, lo, hi) => {
                let ga = g
                    .zip_map(val(*a), |gi, x| if x >= *lo && x <= *hi { gi } else { 0.0 })
                    .unwrap();
                acc(grads, *a, ga);
            }
            Op::Gelu(a) => {
                let ga = g.zip_map(val(*a), |gi, x| gi * gelu_grad(x)).unwrap();
                acc(grads, *a, ga);
            }
            Op::Softmax { x, .. } => {
                let mut gx = g.clone();
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let inner = dot(g.row(r), y);
                    for (gi, yi) in gx.row_mut(r).iter_mut().zip(y) {
                        *gi = yi * (*gi - inner);
                    }
                }
                acc(grads, *x, gx);
            }
            Op::LayerNorm { x, gamma, beta } => {
                let xv = val(*x);
                let gam = val(*gamma).as_slice();
                let d = xv.cols();
                let n = d as f64;
                let mut gx = Matrix::zeros(xv.rows(), d);
                let mut gg = vec![0.0; d];
                let mut gb = vec![0.0; d];
                for r in 0..xv.rows() {
                    let (xhat, inv_std) = layer_norm_row(xv.row(r));
                    let gr = g.row(r);
                    let gxhat: Vec<f64> = gr.iter().zip(gam).map(|(a, b)| a * b).collect();
                    let mean_g = gxhat.iter().sum::<f64>() / n;
                    let mean_gx = dot(&gxhat, &xhat) / n;
                    for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                        *o = inv_std * (gxhat[c] - mean_g - xhat[c] * mean_gx);
                        gg[c] += gr[c] * xhat[c];
                        gb[c] += gr[c];
                    }
                }
                acc(grads, *x, gx);
                acc(grads, *gamma, Matrix::row_vector(&gg));
                acc(grads, *beta, Matrix::row_vector(&gb));
            }
            Op::MeanRows(x) => {
                let n = val(*x).rows();
                let mut gx = Matrix::zeros(n, g.cols());
                for r in 0..n {
                    for (o, gi) in gx.row_mut(r).iter_mut().zip(g.as_slice()) {
                        *o = gi / n as f64;
                    }
                }
                acc(grads, *x, gx);
            }
            Op::SelectRows(x, idx) => {
                let (rows, cols) = val(*x).shape();
                let mut gx = Matrix::zeros(rows, cols);
                for (k, &r) in idx.iter().enumerate() {
                    for (o, gi) in gx.row_mut(r).iter_mut().zip(g.row(k)) {
                        *o += gi;
                    }
                }
                acc(grads, *x, gx);
            }
            Op::SliceCols(x, start, len) => {
                let (rows, cols) = val(*x).shape();
                let mut gx = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    gx.row_mut(r)[*start..start + len].copy_from_slice(g.row(r));
                }
                acc(grads, *x, gx);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).rows();
                    let idx: Vec<usize> = (offset..offset + n).collect();
                    acc(grads, *p, g.select_rows(&idx));
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let c = val(*p).cols();
                    acc(grads, *p, g.slice_cols(offset, c));
                    offset += c;
                }
            }
            Op::L2NormalizeRows(x) => {
                let xv = val(*x);
                let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let n = dot(xv.row(r), xv.row(r)).max(NORM_FLOOR_SQ).sqrt();
                    let y = out.row(r);
                    let gr = g.row(r);
                    let proj = dot(y, gr);
                    for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                        *o = (gr[c] - y[c] * proj) / n;
                    }
                }
                acc(grads, *x, gx);
            }
            Op::SumAll(x) => {
                let (r, c) = val(*x).shape();
                acc(grads, *x, Matrix::filled(r, c, g.item()));
            }
            Op::CrossEntropy { logits, targets } => {
                let lv = val(*logits);
                let scale = g.item();
                let mut gl = Matrix::zeros(lv.rows(), lv.cols());
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = t else { continue };
                    let row = gl.row_mut(r);
                    row.copy_from_slice(lv.row(r));
                    softmax_in_place(row);
                    row[*t] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                acc(grads, *logits, gl);
            }
        }
    }
}

fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Forward kernel shared by recording and replay. `recorded` supplies the
/// original value for `Input` nodes during replay.
fn eval_op(op: &Op, values: &[Matrix], store: &ParamStore, recorded: Option<&Matrix>) -> Result<Matrix> {
    let val = |v: &Var| &values[v.0];
    Ok(match op {
        Op::Input => recorded
            .cloned()
            .ok_or_else(|| Error::contract("input nodes are pushed directly"))?,
        Op::Param(id) => store.value(*id).clone(),
        Op::MatMul(a, b) => val(a).matmul(val(b))?,
        Op::MatMulBt(a, b) => val(a).matmul_bt(val(b))?,
        Op::Add(a, b) => val(a).add(val(b))?,
        Op::AddRow(a, row) => {
            let (a, row) = (val(a), val(row));
            if row.rows() != 1 || row.cols() != a.cols() {
                return Err(Error::Dimension {
                    op: "add_row",
                    lhs: a.shape(),
                    rhs: row.shape(),
                });
            }
            let mut out = a.clone();
            for r in 0..out.rows() {
                for (o, b) in out.row_mut(r).iter_mut().zip(row.as_slice()) {
                    *o += b;
                }
            }
            out
        }
        Op::Scale(a, s) => val(a).scale(*s),
        Op::DivScalar(a, s) => {
            let s = val(s);
            if s.shape() != (1, 1) {
                return Err(Error::Dimension {
                    op: "div_scalar",
                    lhs: val(a).shape(),
                    rhs: s.shape(),
                });
            }
            let s = s.item();
            val(a).map(|x| x / s)
        }
        Op::Exp(a) => val(a).map(f64::exp),
        Op::Clamp(a, lo, hi) => val(a).map(|x| x.clamp(*lo, *hi)),
        Op::Gelu(a) => val(a).map(gelu),
        Op::Softmax { x, causal } => {
            let x = val(x);
            if !causal {
                x.softmax_rows()
            } else {
                let mut out = x.clone();
                for r in 0..out.rows() {
                    let row = out.row_mut(r);
                    let visible = (r + 1).min(row.len());
                    softmax_in_place(&mut row[..visible]);
                    row[visible..].iter_mut().for_each(|v| *v = 0.0);
                }
                out
            }
        }
        Op::LayerNorm { x, gamma, beta } => {
            let (x, gamma, beta) = (val(x), val(gamma), val(beta));
            if gamma.shape() != (1, x.cols()) || beta.shape() != (1, x.cols()) {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    lhs: x.shape(),
                    rhs: gamma.shape(),
                });
            }
            let mut out = Matrix::zeros(x.rows(), x.cols());
            for r in 0..x.rows() {
                let (xhat, _) = layer_norm_row(x.row(r));
                for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                    *o = gamma.as_slice()[c] * xhat[c] + beta.as_slice()[c];
                }
            }
            out
        }
        Op::MeanRows(x) => val(x).mean_rows()?,
        Op::SelectRows(x, idx) => {
            let x = val(x);
            if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
                return Err(Error::contract(format!(
                    "row index {bad} out of range for {} rows",
                    x.rows()
                )));
            }
            x.select_rows(idx)
        }
        Op::SliceCols(x, start, len) => {
            let x = val(x);
            if start + len > x.cols() {
                return Err(Error::Dimension {
                    op: "slice_cols",
                    lhs: x.shape(),
                    rhs: (*start, *len),
                });
            }
            x.slice_cols(*start, *len)
        }
        Op::ConcatRows(parts) => {
            let ms: Vec<&Matrix> = parts.iter().map(val).collect();
            Matrix::concat_rows(&ms)?
        }
        Op::ConcatCols(parts) => {
            let ms: Vec<&Matrix> = parts.iter().map(val).collect();
            Matrix::concat_cols(&ms)?
        }
        Op::L2NormalizeRows(x) => {
            let mut v = val(x).clone();
            for r in 0..v.rows() {
                let row = v.row_mut(r);
                let n = dot(row, row).max(NORM_FLOOR_SQ).sqrt();
                row.iter_mut().for_each(|e| *e /= n);
            }
            v
        }
        Op::SumAll(x) => Matrix::scalar(val(x).sum()),
        Op::CrossEntropy { logits, targets } => {
            let l = val(logits);
            if targets.len() != l.rows() {
                return Err(Error::contract(format!(
                    "{} targets for {} logit rows",
                    targets.len(),
                    l.rows()
                )));
            }
            let mut total = 0.0;
            for (r, t) in targets.iter().enumerate() {
                let Some(t) = t else { continue };
                if *t >= l.cols() {
                    return Err(Error::data(format!("target {t} outside {} classes", l.cols())));
                }
                let row = l.row(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - row[*t];
            }
            Matrix::scalar(total)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut store = ParamStore::new();
        let m = store.add("m", Matrix::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.0, 9.0]]));
        let mut tape = Tape::new(&store);
        let x = tape.param(m);
        let loss = tape.sum_all(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.param(m).unwrap(), &Matrix::filled(2, 3, 1.0));
    }

    #[test]
    fn quadratic_gradient_is_x() {
        let mut store = ParamStore::new();
        let x = store.add("x", Matrix::row_vector(&[1.5, -0.25, 3.0]));
        let mut tape = Tape::new(&store);
        let xv = tape.param(x);
        let xtx = tape.matmul_bt(xv, xv).unwrap();
        let loss = tape.scale(xtx, 0.5);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.param(x).unwrap(), store.value(x));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Matrix::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.7]]));
        let g = store.add("g", Matrix::row_vector(&[1.0, 0.5]));
        let b = store.add("b", Matrix::row_vector(&[0.1, -0.1]));
        let mut tape = Tape::new(&store);
        let x = tape.constant(Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.25]]));
        let wv = tape.param(w);
        let h = tape.matmul(x, wv).unwrap();
        let s = tape.softmax_rows(h);
        let (gv, bv) = (tape.param(g), tape.param(b));
        let n = tape.layer_norm(s, gv, bv).unwrap();
        let _ = tape.sum_all(n);
        let replayed = tape.replay(&store).unwrap();
        for (i, v) in replayed.iter().enumerate() {
            assert_eq!(v.as_slice(), tape.values[i].as_slice());
        }
    }

    #[test]
    fn causal_softmax_masks_future() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Matrix::from_rows(&[vec![1.0, 5.0, 2.0], vec![0.0, 0.0, 9.0]]));
        let s = tape.causal_softmax_rows(x).unwrap();
        let v = tape.value(s);
        assert_eq!(v.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(v.row(1), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Matrix::zeros(3, 7));
        let l = tape.cross_entropy_rows(x, vec![Some(0), None, Some(6)]).unwrap();
        assert!((tape.value(l).item() - 2.0 * 7f64.ln()).abs() < 1e-15);
        let bad = tape.cross_entropy_rows(x, vec![Some(7), None, None]);
        assert!(matches!(bad, Err(Error::Data(_))));
    }
}
