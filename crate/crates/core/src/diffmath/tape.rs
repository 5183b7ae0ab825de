//! Reverse-mode differentiation over dense matrices.
//!
//! Every node on a [`Tape`] holds a full matrix, so a whole training batch
//! (and the per-sample Jacobians of a flow, stacked row-wise) flows through
//! a handful of nodes instead of millions of scalar ones. Jacobians of the
//! model are built explicitly from per-layer derivative terms, which keeps
//! this engine first order: parameter gradients of Jacobian-dependent
//! losses never need reverse-over-reverse.
//!
//! Shape mismatches are programming errors and panic. Numerical failures
//! (singular blocks, non-differentiable primitives) surface as [`Error`].

use std::cell::RefCell;
use std::ops::{Add, Mul, Neg, Sub};

use ndarray::{s, Array2, ArrayView2, Axis};

use super::linalg::{checked_lu, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Tanh,
    Log,
    Exp,
    Square,
    Abs,
    /// `log(1 + eˣ)`
    Softplus,
    /// Derivative is zero almost everywhere but not usable for learning;
    /// backpropagating through it is an error.
    Sign,
    /// `scale · (tanh x + slope · x)`
    LeakyTanh { slope: f64, scale: f64 },
    /// Derivative of [`Unary::LeakyTanh`], itself differentiable.
    LeakyTanhDeriv { slope: f64, scale: f64 },
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Tanh => x.tanh(),
            Unary::Log => x.ln(),
            Unary::Exp => x.exp(),
            Unary::Square => x * x,
            Unary::Abs => x.abs(),
            Unary::Softplus => {
                if x > 0.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
            Unary::Sign => x.signum(),
            Unary::LeakyTanh { slope, scale } => scale * (x.tanh() + slope * x),
            Unary::LeakyTanhDeriv { slope, scale } => {
                let t = x.tanh();
                scale * (1.0 - t * t + slope)
            }
        }
    }

    /// Derivative given the input `x` and the forward output `y`.
    fn derivative(self, x: f64, y: f64) -> Result<f64> {
        Ok(match self {
            Unary::Tanh => 1.0 - y * y,
            Unary::Log => 1.0 / x,
            Unary::Exp => y,
            Unary::Square => 2.0 * x,
            Unary::Abs => x.signum(),
            Unary::Softplus => 1.0 / (1.0 + (-x).exp()),
            Unary::Sign => return Err(Error::UnsupportedPrimitive("sign")),
            Unary::LeakyTanh { slope, scale } => {
                let t = x.tanh();
                scale * (1.0 - t * t + slope)
            }
            Unary::LeakyTanhDeriv { scale, .. } => {
                let t = x.tanh();
                -2.0 * scale * t * (1.0 - t * t)
            }
        })
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Unary(usize, Unary),
    RepeatRows(usize, usize),
    Column(usize, usize),
    HStack(Vec<usize>),
    Reshape(usize),
    Sum(usize),
    SumCols(usize),
    RowNorms(usize),
    /// Cached `A_k^{-T}` for every block.
    BlockLogAbsDet(usize, Vec<Matrix>),
    BlockInverse(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Records matrix operations for a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a matrix-valued node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("idx", &self.idx)
            .field("shape", &self.shape())
            .finish()
    }
}

/// A 1×1 node: a scalar whose derivative w.r.t. any tracked parameter can
/// be queried through [`Tape::gradients`].
pub type DifferentiableScalar<'t> = Var<'t>;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    fn requires(&self, idx: usize) -> bool {
        self.nodes.borrow()[idx].requires_grad
    }

    /// A tracked leaf.
    pub fn param(&self, value: Array2<f64>) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// An untracked leaf; no gradient is accumulated for it.
    pub fn constant(&self, value: Array2<f64>) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// Concatenates columns of equal-height nodes.
    pub fn hstack<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "hstack of nothing");
        let views: Vec<Array2<f64>> = parts.iter().map(|p| p.value()).collect();
        let vv: Vec<ArrayView2<f64>> = views.iter().map(|v| v.view()).collect();
        let value = ndarray::concatenate(Axis(1), &vv).expect("hstack: row counts differ");
        let rg = parts.iter().any(|p| self.requires(p.idx));
        self.push(value, Op::HStack(parts.iter().map(|p| p.idx).collect()), rg)
    }

    /// Backpropagates from `output` with `d output = seed`.
    pub fn backward(&self, output: Var<'_>, seed: Array2<f64>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[output.idx].value.dim(),
            seed.dim(),
            "backward: seed shape must match output"
        );
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; output.idx + 1];
        grads[output.idx] = Some(seed);

        for idx in (0..=output.idx).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let val = |i: usize| &nodes[i].value;
            let wants = |i: usize| nodes[i].requires_grad;
            let mut contrib: Vec<(usize, Array2<f64>)> = Vec::with_capacity(2);
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    if wants(*a) {
                        contrib.push((*a, g.clone()));
                    }
                    if wants(*b) {
                        contrib.push((*b, g));
                    }
                }
                Op::Sub(a, b) => {
                    if wants(*a) {
                        contrib.push((*a, g.clone()));
                    }
                    if wants(*b) {
                        contrib.push((*b, -g));
                    }
                }
                Op::Mul(a, b) => {
                    if wants(*a) {
                        contrib.push((*a, &g * val(*b)));
                    }
                    if wants(*b) {
                        contrib.push((*b, &g * val(*a)));
                    }
                }
                Op::AddRow(a, row) => {
                    if wants(*row) {
                        contrib.push((*row, g.sum_axis(Axis(0)).insert_axis(Axis(0))));
                    }
                    if wants(*a) {
                        contrib.push((*a, g));
                    }
                }
                Op::Scale(a, f) => contrib.push((*a, g * *f)),
                Op::AddConst(a) => contrib.push((*a, g)),
                Op::MatMul(a, b) => {
                    if wants(*a) {
                        contrib.push((*a, g.dot(&val(*b).t())));
                    }
                    if wants(*b) {
                        contrib.push((*b, val(*a).t().dot(&g)));
                    }
                }
                Op::MatMulT(a, b) => {
                    if wants(*a) {
                        contrib.push((*a, g.dot(val(*b))));
                    }
                    if wants(*b) {
                        contrib.push((*b, g.t().dot(val(*a))));
                    }
                }
                Op::Unary(a, u) => {
                    let x = val(*a);
                    let y = &node.value;
                    let mut out = g;
                    for ((o, &xi), &yi) in out.iter_mut().zip(x.iter()).zip(y.iter()) {
                        *o *= u.derivative(xi, yi)?;
                    }
                    contrib.push((*a, out));
                }
                Op::RepeatRows(a, k) => {
                    let src = val(*a);
                    let mut out = Array2::zeros(src.dim());
                    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
                        for r in 0..*k {
                            row += &g.row(i * k + r);
                        }
                    }
                    contrib.push((*a, out));
                }
                Op::Column(a, j) => {
                    let mut out = Array2::zeros(val(*a).dim());
                    out.column_mut(*j).assign(&g.column(0));
                    contrib.push((*a, out));
                }
                Op::HStack(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = val(p).ncols();
                        if wants(p) {
                            contrib.push((p, g.slice(s![.., offset..offset + w]).to_owned()));
                        }
                        offset += w;
                    }
                }
                Op::Reshape(a) => {
                    let dim = val(*a).dim();
                    let flat: Vec<f64> = g.iter().copied().collect();
                    contrib.push((*a, Array2::from_shape_vec(dim, flat).expect("reshape")));
                }
                Op::Sum(a) => {
                    contrib.push((*a, Array2::from_elem(val(*a).dim(), g[[0, 0]])));
                }
                Op::SumCols(a) => {
                    let dim = val(*a).dim();
                    let gc = g.column(0);
                    contrib.push((*a, Array2::from_shape_fn(dim, |(i, _)| gc[i])));
                }
                Op::RowNorms(a) => {
                    let x = val(*a);
                    let norms = &node.value;
                    let mut out = x.clone();
                    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
                        let f = g[[i, 0]] / norms[[i, 0]];
                        row.mapv_inplace(|v| v * f);
                    }
                    contrib.push((*a, out));
                }
                Op::BlockLogAbsDet(a, inv_t) => {
                    let k = inv_t.first().map_or(0, |m| m.nrows());
                    let mut out = Array2::zeros(val(*a).dim());
                    for (b, it) in inv_t.iter().enumerate() {
                        let mut blk = out.slice_mut(s![b * k..(b + 1) * k, ..]);
                        blk.assign(it);
                        blk *= g[[b, 0]];
                    }
                    contrib.push((*a, out));
                }
                Op::BlockInverse(a, k) => {
                    let y = &node.value;
                    let mut out = Array2::zeros(y.dim());
                    let blocks = y.nrows() / k;
                    for b in 0..blocks {
                        let rows = s![b * k..(b + 1) * k, ..];
                        let yb = y.slice(rows);
                        let gb = g.slice(rows);
                        let d = -yb.t().dot(&gb).dot(&yb.t());
                        out.slice_mut(rows).assign(&d);
                    }
                    contrib.push((*a, out));
                }
            }
            for (p, d) in contrib {
                match &mut grads[p] {
                    Some(acc) => *acc += &d,
                    slot @ None => *slot = Some(d),
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Gradient of a 1×1 `loss` with respect to each of `wrt`.
    pub fn gradients<'t>(&'t self, loss: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Array2<f64>>> {
        assert_eq!(loss.shape(), (1, 1), "gradients: loss must be 1×1");
        let g = self.backward(loss, Array2::ones((1, 1)))?;
        Ok(wrt.iter().map(|v| g.wrt(*v)).collect())
    }
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, zeros when `v` does not influence the output.
    pub fn wrt(&self, v: Var<'_>) -> Array2<f64> {
        match self.grads.get(v.idx).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Array2::zeros(v.shape()),
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Array2<f64> {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(ArrayView2<f64>) -> R) -> R {
        f(self.tape.nodes.borrow()[self.idx].value.view())
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.idx].value.dim()
    }

    /// Value of a 1×1 node.
    pub fn item(&self) -> f64 {
        self.with_value(|v| {
            assert_eq!(v.dim(), (1, 1), "item() on a non-scalar node");
            v[[0, 0]]
        })
    }

    fn rg(&self) -> bool {
        self.tape.requires(self.idx)
    }

    fn unary_op(self, u: Unary) -> Var<'t> {
        let value = self.with_value(|v| v.mapv(|x| u.apply(x)));
        self.tape.push(value, Op::Unary(self.idx, u), self.rg())
    }

    fn elementwise(
        self,
        other: Var<'t>,
        name: &str,
        f: impl Fn(&Array2<f64>, &Array2<f64>) -> Array2<f64>,
    ) -> Array2<f64> {
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.idx].value;
        let b = &nodes[other.idx].value;
        assert_eq!(a.dim(), b.dim(), "{name}: shapes differ");
        f(a, b)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary_op(Unary::Tanh)
    }
    pub fn ln(self) -> Var<'t> {
        self.unary_op(Unary::Log)
    }
    pub fn exp(self) -> Var<'t> {
        self.unary_op(Unary::Exp)
    }
    pub fn square(self) -> Var<'t> {
        self.unary_op(Unary::Square)
    }
    pub fn abs(self) -> Var<'t> {
        self.unary_op(Unary::Abs)
    }
    pub fn softplus(self) -> Var<'t> {
        self.unary_op(Unary::Softplus)
    }
    pub fn sign(self) -> Var<'t> {
        self.unary_op(Unary::Sign)
    }
    pub fn leaky_tanh(self, slope: f64, scale: f64) -> Var<'t> {
        self.unary_op(Unary::LeakyTanh { slope, scale })
    }
    pub fn leaky_tanh_deriv(self, slope: f64, scale: f64) -> Var<'t> {
        self.unary_op(Unary::LeakyTanhDeriv { slope, scale })
    }

    pub fn scale(self, f: f64) -> Var<'t> {
        let value = self.with_value(|v| v.mapv(|x| x * f));
        self.tape.push(value, Op::Scale(self.idx, f), self.rg())
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let value = self.with_value(|v| v.mapv(|x| x + c));
        self.tape.push(value, Op::AddConst(self.idx), self.rg())
    }

    /// `self + 1·row`, broadcasting a 1×c row over every row.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.idx].value;
            let r = &nodes[row.idx].value;
            assert_eq!(r.nrows(), 1, "add_row: bias must be a single row");
            assert_eq!(a.ncols(), r.ncols(), "add_row: widths differ");
            a + r
        };
        let rg = self.rg() || row.rg();
        self.tape.push(value, Op::AddRow(self.idx, row.idx), rg)
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.idx].value;
            let b = &nodes[other.idx].value;
            assert_eq!(a.ncols(), b.nrows(), "matmul: inner dimensions differ");
            a.dot(b)
        };
        let rg = self.rg() || other.rg();
        self.tape.push(value, Op::MatMul(self.idx, other.idx), rg)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(self, other: Var<'t>) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.idx].value;
            let b = &nodes[other.idx].value;
            assert_eq!(a.ncols(), b.ncols(), "matmul_t: inner dimensions differ");
            a.dot(&b.t())
        };
        let rg = self.rg() || other.rg();
        self.tape.push(value, Op::MatMulT(self.idx, other.idx), rg)
    }

    /// Repeats each row `k` times consecutively.
    pub fn repeat_rows(self, k: usize) -> Var<'t> {
        let value = self.with_value(|v| {
            let (r, c) = v.dim();
            Array2::from_shape_fn((r * k, c), |(i, j)| v[[i / k, j]])
        });
        self.tape.push(value, Op::RepeatRows(self.idx, k), self.rg())
    }

    pub fn column(self, j: usize) -> Var<'t> {
        let value = self.with_value(|v| v.column(j).to_owned().insert_axis(Axis(1)));
        self.tape.push(value, Op::Column(self.idx, j), self.rg())
    }

    /// Row-major reshape.
    pub fn reshape(self, rows: usize, cols: usize) -> Var<'t> {
        let value = self.with_value(|v| {
            let flat: Vec<f64> = v.iter().copied().collect();
            Array2::from_shape_vec((rows, cols), flat).expect("reshape: element count differs")
        });
        self.tape.push(value, Op::Reshape(self.idx), self.rg())
    }

    pub fn sum(self) -> Var<'t> {
        let value = Array2::from_elem((1, 1), self.with_value(|v| v.sum()));
        self.tape.push(value, Op::Sum(self.idx), self.rg())
    }

    pub fn mean(self) -> Var<'t> {
        let (r, c) = self.shape();
        self.sum().scale(1.0 / (r * c) as f64)
    }

    /// r×c → r×1, summing each row.
    pub fn sum_cols(self) -> Var<'t> {
        let value = self.with_value(|v| v.sum_axis(Axis(1)).insert_axis(Axis(1)));
        self.tape.push(value, Op::SumCols(self.idx), self.rg())
    }

    /// r×c → r×1 Euclidean norm of each row.
    pub fn row_norms(self) -> Var<'t> {
        let value = self.with_value(|v| {
            v.map_axis(Axis(1), |row| row.dot(&row).sqrt())
                .insert_axis(Axis(1))
        });
        self.tape.push(value, Op::RowNorms(self.idx), self.rg())
    }

    /// `log|det|` of each k×k block of a (b·k)×k stack, as a b×1 column.
    pub fn block_logabsdet(self, k: usize) -> Result<Var<'t>> {
        let (value, inv_t) = self.with_value(|v| -> Result<_> {
            let (r, c) = v.dim();
            assert!(c == k && r % k == 0, "block_logabsdet: expected a stack of {k}×{k} blocks");
            let blocks = r / k;
            let mut out = Array2::zeros((blocks, 1));
            let mut inv_t = Vec::with_capacity(blocks);
            for b in 0..blocks {
                let blk = v.slice(s![b * k..(b + 1) * k, ..]);
                let lu = checked_lu(blk).map_err(|e| Error::AtPoint {
                    index: b,
                    source: Box::new(e),
                })?;
                out[[b, 0]] = lu.log_abs_det().0;
                inv_t.push(lu.inverse().reversed_axes());
            }
            Ok((out, inv_t))
        })?;
        Ok(self
            .tape
            .push(value, Op::BlockLogAbsDet(self.idx, inv_t), self.rg()))
    }

    /// Inverse of each k×k block of a (b·k)×k stack.
    pub fn block_inverse(self, k: usize) -> Result<Var<'t>> {
        let value = self.with_value(|v| -> Result<_> {
            let (r, c) = v.dim();
            assert!(c == k && r % k == 0, "block_inverse: expected a stack of {k}×{k} blocks");
            let mut out = Array2::zeros((r, c));
            for b in 0..r / k {
                let rows = s![b * k..(b + 1) * k, ..];
                let lu = checked_lu(v.slice(rows)).map_err(|e| Error::AtPoint {
                    index: b,
                    source: Box::new(e),
                })?;
                out.slice_mut(rows).assign(&lu.inverse());
            }
            Ok(out)
        })?;
        Ok(self.tape.push(value, Op::BlockInverse(self.idx, k), self.rg()))
    }

    /// Differentiable `log|det|` of a square node.
    pub fn logabsdet(self) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        assert_eq!(r, c, "logabsdet: matrix must be square");
        self.block_logabsdet(c)
    }

    /// Differentiable inverse of a square node.
    pub fn matinv(self) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        assert_eq!(r, c, "matinv: matrix must be square");
        self.block_inverse(c)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        let value = self.elementwise(rhs, "add", |a, b| a + b);
        let rg = self.rg() || rhs.rg();
        self.tape.push(value, Op::Add(self.idx, rhs.idx), rg)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        let value = self.elementwise(rhs, "sub", |a, b| a - b);
        let rg = self.rg() || rhs.rg();
        self.tape.push(value, Op::Sub(self.idx, rhs.idx), rg)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    /// Element-wise product.
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        let value = self.elementwise(rhs, "mul", |a, b| a * b);
        let rg = self.rg() || rhs.rg();
        self.tape.push(value, Op::Mul(self.idx, rhs.idx), rg)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.scale(rhs)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn square_at_three() {
        let tape = Tape::new();
        let x = tape.param(array![[3.0]]);
        let y = x.square();
        let g = tape.gradients(y, &[x]).unwrap();
        assert_eq!(y.item(), 9.0);
        assert_eq!(g[0][[0, 0]], 6.0);
    }

    #[test]
    fn logabsdet_gradient_at_identity_is_identity() {
        let tape = Tape::new();
        let a = tape.param(Array2::eye(3));
        let l = a.logabsdet().unwrap();
        assert_abs_diff_eq!(l.item(), 0.0);
        let g = tape.gradients(l, &[a]).unwrap();
        assert_eq!(g[0], Array2::<f64>::eye(3));
    }

    #[test]
    fn sign_refuses_to_differentiate() {
        let tape = Tape::new();
        let x = tape.param(array![[1.5, -2.0]]);
        let y = x.sign().sum();
        assert!(matches!(
            tape.gradients(y, &[x]),
            Err(Error::UnsupportedPrimitive("sign"))
        ));
    }

    #[test]
    fn constants_get_no_gradient_work() {
        let tape = Tape::new();
        let c = tape.constant(array![[1.0, 2.0]]);
        let p = tape.param(array![[0.5, 0.5]]);
        let y = (c * p).sum();
        let g = tape.backward(y, Array2::ones((1, 1))).unwrap();
        assert_eq!(g.wrt(p), array![[1.0, 2.0]]);
        assert_eq!(g.wrt(c), Array2::<f64>::zeros((1, 2)));
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        // y = x·x + x  →  dy/dx = 2x + 1
        let tape = Tape::new();
        let x = tape.param(array![[2.0]]);
        let y = x * x + x;
        let g = tape.gradients(y, &[x]).unwrap();
        assert_eq!(g[0][[0, 0]], 5.0);
    }

    #[test]
    fn softplus_is_stable() {
        assert_abs_diff_eq!(Unary::Softplus.apply(800.0), 800.0);
        assert_abs_diff_eq!(Unary::Softplus.apply(-800.0), 0.0);
        assert_abs_diff_eq!(Unary::Softplus.apply(0.0), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn singular_block_names_its_index() {
        let tape = Tape::new();
        let stack = tape.param(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 1.0]]);
        match stack.block_logabsdet(2) {
            Err(Error::AtPoint { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
