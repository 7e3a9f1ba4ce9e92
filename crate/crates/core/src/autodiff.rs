//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in evaluation order. Nodes are
//! addressed by [`Var`] handles, so the graph is acyclic by construction:
//! a node can only reference nodes recorded before it. [`Tape::backward`]
//! may be called once per tape.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math;
use crate::matrix::{self, Matrix};

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
    Leaf,
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Elu(Var),
    Exp(Var),
    Square(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    ConcatCols(Var, Var),
    SelectRows(Var, Vec<usize>),
    MeanRows(Var),
    PairwiseSqDist(Var, Var),
    WeightedSum(Var, Matrix),
    Mse(Var, Matrix),
    Sse(Var, Matrix),
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Matrix>,
    ops: Vec<Op>,
    tracked: Vec<bool>,
    grads: Vec<Option<Matrix>>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, tracked: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.tracked.push(tracked);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    fn tracked_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.tracked[v.0])
    }

    /// A differentiable input (a parameter).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input; no gradient is accumulated for it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.values[v.0]
    }

    /// Gradient of the last backward pass. Nodes unreachable from the loss
    /// (or before any backward pass) report zeros.
    pub fn grad(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.values[v.0].shape();
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.values[a.0].matmul(&self.values[b.0])?;
        let t = self.tracked_any(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), t))
    }

    pub fn affine(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let value = self.values[x.0].affine(&self.values[weight.0], &self.values[bias.0])?;
        let t = self.tracked_any(&[x, weight, bias]);
        Ok(self.push(value, Op::Affine(x, weight, bias), t))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let value = self.values[x.0].map(elu);
        let t = self.tracked[x.0];
        self.push(value, Op::Elu(x), t)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.values[x.0].map(math::exp);
        let t = self.tracked[x.0];
        self.push(value, Op::Exp(x), t)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.values[x.0].map(|v| v * v);
        let t = self.tracked[x.0];
        self.push(value, Op::Square(x), t)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.values[a.0].shape(), self.values[b.0].shape());
        if sa != sb {
            return Err(Error::Dimension {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut value = self.values[a.0].clone();
        value.add_assign(&self.values[b.0]);
        let t = self.tracked_any(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let mut value = self.values[a.0].clone();
        value.add_scaled(&self.values[b.0], -1.0);
        let t = self.tracked_any(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), t))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.values[x.0].map(|v| v * factor);
        let t = self.tracked[x.0];
        self.push(value, Op::Scale(x, factor), t)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.values[x.0].sum());
        let t = self.tracked[x.0];
        self.push(value, Op::Sum(x), t)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let m = &self.values[x.0];
        if m.is_empty() {
            return Err(invalid("mean of an empty matrix"));
        }
        let value = Matrix::scalar(m.sum() / m.len() as f64);
        let t = self.tracked[x.0];
        Ok(self.push(value, Op::Mean(x), t))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.values[a.0].concat_cols(&self.values[b.0])?;
        let t = self.tracked_any(&[a, b]);
        Ok(self.push(value, Op::ConcatCols(a, b), t))
    }

    pub fn select_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let m = &self.values[x.0];
        if let Some(&bad) = indices.iter().find(|&&i| i >= m.rows()) {
            return Err(invalid(alloc::format!(
                "row index {bad} out of range for {} rows",
                m.rows()
            )));
        }
        let value = m.select_rows(indices);
        let t = self.tracked[x.0];
        Ok(self.push(value, Op::SelectRows(x, indices.to_vec()), t))
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let m = &self.values[x.0];
        if m.rows() == 0 {
            return Err(invalid("mean_rows of a matrix without rows"));
        }
        let value = m.mean_rows();
        let t = self.tracked[x.0];
        Ok(self.push(value, Op::MeanRows(x), t))
    }

    /// Squared Euclidean distances between all row pairs of `a` and `b`.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matrix::pairwise_sq_dist(&self.values[a.0], &self.values[b.0])?;
        let t = self.tracked_any(&[a, b]);
        Ok(self.push(value, Op::PairwiseSqDist(a, b), t))
    }

    /// `Σ weights ⊙ x` with `weights` held constant.
    pub fn weighted_sum(&mut self, x: Var, weights: Matrix) -> Result<Var> {
        let m = &self.values[x.0];
        if m.shape() != weights.shape() {
            return Err(Error::Dimension {
                op: "weighted_sum",
                left: m.shape(),
                right: weights.shape(),
            });
        }
        let value = Matrix::scalar(matrix::dot(m.as_slice(), weights.as_slice()));
        let t = self.tracked[x.0];
        Ok(self.push(value, Op::WeightedSum(x, weights), t))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Matrix) -> Result<Var> {
        let p = &self.values[pred.0];
        check_target("mse", p, target)?;
        let value = Matrix::scalar(sse(p, target) / p.len() as f64);
        let t = self.tracked[pred.0];
        Ok(self.push(value, Op::Mse(pred, target.clone()), t))
    }

    /// Sum of squared errors against a constant target.
    pub fn sse(&mut self, pred: Var, target: &Matrix) -> Result<Var> {
        let p = &self.values[pred.0];
        check_target("sse", p, target)?;
        let value = Matrix::scalar(sse(p, target));
        let t = self.tracked[pred.0];
        Ok(self.push(value, Op::Sse(pred, target.clone()), t))
    }

    /// Populates gradients of `loss` with respect to every tracked node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(invalid(
                "backward was already run on this tape; record a new tape",
            ));
        }
        if self.values[loss.0].shape() != (1, 1) {
            return Err(invalid(alloc::format!(
                "backward requires a scalar loss, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.tracked[i] {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &Matrix) {
        let Tape {
            values,
            ops,
            tracked,
            grads,
            ..
        } = self;
        let values: &[Matrix] = values;
        let tracked: &[bool] = tracked;
        macro_rules! grad_buf {
            ($v:expr) => {
                grad_slot(grads, tracked, values, $v)
            };
        }
        let op = &ops[i];
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&values[a.0], &values[b.0]);
                if let Some(ga) = grad_buf!(*a) {
                    matrix::matmul_transb_into(g, bv, ga);
                }
                if let Some(gb) = grad_buf!(*b) {
                    matrix::matmul_transa_into(av, g, gb);
                }
            }
            Op::Affine(x, w, b) => {
                let (xv, wv) = (&values[x.0], &values[w.0]);
                if let Some(gx) = grad_buf!(*x) {
                    matrix::matmul_transb_into(g, wv, gx);
                }
                if let Some(gw) = grad_buf!(*w) {
                    matrix::matmul_transa_into(xv, g, gw);
                }
                if let Some(gb) = grad_buf!(*b) {
                    let slots = gb.as_mut_slice();
                    for row in g.row_iter() {
                        for (s, v) in slots.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                }
            }
            Op::Elu(x) => {
                let y = &values[i];
                if let Some(gx) = grad_buf!(*x) {
                    for ((s, &yv), &gv) in gx.as_mut_slice().iter_mut().zip(y.as_slice()).zip(g.as_slice()) {
                        let d = if yv > 0.0 { 1.0 } else { yv + 1.0 };
                        *s += gv * d;
                    }
                }
            }
            Op::Exp(x) => {
                let y = &values[i];
                if let Some(gx) = grad_buf!(*x) {
                    for ((s, &yv), &gv) in gx.as_mut_slice().iter_mut().zip(y.as_slice()).zip(g.as_slice()) {
                        *s += gv * yv;
                    }
                }
            }
            Op::Square(x) => {
                let xv = &values[x.0];
                if let Some(gx) = grad_buf!(*x) {
                    for ((s, &v), &gv) in gx.as_mut_slice().iter_mut().zip(xv.as_slice()).zip(g.as_slice()) {
                        *s += 2.0 * v * gv;
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = grad_buf!(*a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = grad_buf!(*b) {
                    gb.add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = grad_buf!(*a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = grad_buf!(*b) {
                    gb.add_scaled(g, -1.0);
                }
            }
            Op::Scale(x, factor) => {
                if let Some(gx) = grad_buf!(*x) {
                    gx.add_scaled(g, *factor);
                }
            }
            Op::Sum(x) => {
                let gv = g.item();
                if let Some(gx) = grad_buf!(*x) {
                    gx.as_mut_slice().iter_mut().for_each(|s| *s += gv);
                }
            }
            Op::Mean(x) => {
                let n = values[x.0].len() as f64;
                let gv = g.item() / n;
                if let Some(gx) = grad_buf!(*x) {
                    gx.as_mut_slice().iter_mut().for_each(|s| *s += gv);
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = values[a.0].cols();
                if let Some(ga) = grad_buf!(*a) {
                    for r in 0..g.rows() {
                        for (s, v) in ga.row_mut(r).iter_mut().zip(&g.row(r)[..ca]) {
                            *s += v;
                        }
                    }
                }
                if let Some(gb) = grad_buf!(*b) {
                    for r in 0..g.rows() {
                        for (s, v) in gb.row_mut(r).iter_mut().zip(&g.row(r)[ca..]) {
                            *s += v;
                        }
                    }
                }
            }
            Op::SelectRows(x, indices) => {
                if let Some(gx) = grad_buf!(*x) {
                    for (r, &src) in indices.iter().enumerate() {
                        for (s, v) in gx.row_mut(src).iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                }
            }
            Op::MeanRows(x) => {
                let n = values[x.0].rows() as f64;
                if let Some(gx) = grad_buf!(*x) {
                    for r in 0..gx.rows() {
                        for (s, v) in gx.row_mut(r).iter_mut().zip(g.as_slice()) {
                            *s += v / n;
                        }
                    }
                }
            }
            Op::PairwiseSqDist(a, b) => {
                let (av, bv) = (&values[a.0], &values[b.0]);
                let d = av.cols();
                let mut ga_local = Matrix::zeros(av.rows(), d);
                let mut gb_local = Matrix::zeros(bv.rows(), d);
                for p in 0..av.rows() {
                    let ap = av.row(p);
                    for q in 0..bv.rows() {
                        let w = 2.0 * g[(p, q)];
                        if w == 0.0 {
                            continue;
                        }
                        let bq = bv.row(q);
                        for c in 0..d {
                            let diff = w * (ap[c] - bq[c]);
                            ga_local[(p, c)] += diff;
                            gb_local[(q, c)] -= diff;
                        }
                    }
                }
                if let Some(ga) = grad_buf!(*a) {
                    ga.add_assign(&ga_local);
                }
                if let Some(gb) = grad_buf!(*b) {
                    gb.add_assign(&gb_local);
                }
            }
            Op::WeightedSum(x, weights) => {
                let gv = g.item();
                if let Some(gx) = grad_buf!(*x) {
                    gx.add_scaled(weights, gv);
                }
            }
            Op::Mse(pred, target) | Op::Sse(pred, target) => {
                let pv = &values[pred.0];
                let scale = match op {
                    Op::Mse(..) => 2.0 * g.item() / pv.len() as f64,
                    _ => 2.0 * g.item(),
                };
                if let Some(gp) = grad_buf!(*pred) {
                    for ((s, &p), &t) in gp.as_mut_slice().iter_mut().zip(pv.as_slice()).zip(target.as_slice()) {
                        *s += scale * (p - t);
                    }
                }
            }
        }
    }
}

fn grad_slot<'a>(
    grads: &'a mut [Option<Matrix>],
    tracked: &[bool],
    values: &[Matrix],
    v: Var,
) -> Option<&'a mut Matrix> {
    if !tracked[v.0] {
        return None;
    }
    let (r, c) = values[v.0].shape();
    Some(grads[v.0].get_or_insert_with(|| Matrix::zeros(r, c)))
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        math::expm1(x)
    }
}

fn check_target(op: &'static str, pred: &Matrix, target: &Matrix) -> Result<()> {
    if pred.is_empty() {
        return Err(invalid(alloc::format!("{op} of an empty prediction")));
    }
    if pred.shape() != target.shape() {
        return Err(Error::Dimension {
            op,
            left: pred.shape(),
            right: target.shape(),
        });
    }
    Ok(())
}

fn sse(pred: &Matrix, target: &Matrix) -> f64 {
    pred.as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| (p - t) * (p - t))
        .sum()
}

/// Central finite-difference gradient of `f` at `x`, one coordinate at a time.
pub fn numeric_gradient(x: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut probe = x.clone();
    let mut out = vec![0.0; x.len()];
    for (k, o) in out.iter_mut().enumerate() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + h;
        let up = f(&probe);
        probe.as_mut_slice()[k] = orig - h;
        let down = f(&probe);
        probe.as_mut_slice()[k] = orig;
        *o = (up - down) / (2.0 * h);
    }
    Matrix::from_vec(x.rows(), x.cols(), out).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_hand_value() {
        let mut t = Tape::new();
        let p = t.leaf(Matrix::column(&[0.0, 0.0]));
        let l = t.mse(p, &Matrix::column(&[1.0, 3.0])).unwrap();
        assert_eq!(t.value(l).item(), 5.0);
        t.backward(l).unwrap();
        // 2(ŷ - y)/N
        assert_eq!(t.grad(p).as_slice(), &[-1.0, -3.0]);
    }

    #[test]
    fn mse_of_identical_is_zero() {
        let mut t = Tape::new();
        let target = Matrix::column(&[1.5, -2.0, 0.25]);
        let p = t.leaf(target.clone());
        let l = t.mse(p, &target).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
    }

    #[test]
    fn mse_rejects_empty() {
        let mut t = Tape::new();
        let p = t.leaf(Matrix::zeros(0, 1));
        assert!(matches!(
            t.mse(p, &Matrix::zeros(0, 1)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(elu(2.5), 2.5);
        for x in [-20.0, -35.0, -400.0] {
            assert!((elu(x) + 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn second_backward_is_an_error() {
        let mut t = Tape::new();
        let p = t.leaf(Matrix::scalar(2.0));
        let l = t.square(p);
        t.backward(l).unwrap();
        assert_eq!(t.grad(p).item(), 4.0);
        assert!(matches!(t.backward(l), Err(Error::InvalidArgument(_))));
        assert_eq!(t.grad(p).item(), 4.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let p = t.leaf(Matrix::zeros(2, 2));
        assert!(matches!(t.backward(p), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn constant_loss_leaves_params_at_zero() {
        let mut t = Tape::new();
        let p = t.leaf(Matrix::filled(2, 3, 0.7));
        let c = t.constant(Matrix::scalar(4.0));
        let l = t.scale(c, 2.0);
        t.backward(l).unwrap();
        assert_eq!(t.grad(p), Matrix::zeros(2, 3));
    }

    #[test]
    fn sum_of_parameter_gives_ones() {
        let mut t = Tape::new();
        let p = t.leaf(Matrix::filled(3, 2, -1.25));
        let l = t.sum(p);
        t.backward(l).unwrap();
        assert_eq!(t.grad(p), Matrix::filled(3, 2, 1.0));
    }

    #[test]
    fn affine_identity_and_zero() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [-3.0, 0.5]]);
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let w = t.leaf(Matrix::identity(2));
        let b = t.leaf(Matrix::zeros(1, 2));
        let y = t.affine(xv, w, b).unwrap();
        assert_eq!(t.value(y), &x);

        let w0 = t.leaf(Matrix::zeros(2, 2));
        let y0 = t.affine(xv, w0, b).unwrap();
        assert_eq!(t.value(y0), &Matrix::zeros(2, 2));

        let bad = t.leaf(Matrix::zeros(1, 3));
        assert!(matches!(t.affine(xv, w, bad), Err(Error::Dimension { .. })));
    }
}
