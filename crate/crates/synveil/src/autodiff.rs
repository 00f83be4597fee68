//! A small reverse-mode differentiation tape over `ndarray`.
//!
//! Every intermediate value is a dense `f64` matrix; scalars are 1×1 and row
//! vectors 1×n. A [`Tape`] owns the computation graph: building an op
//! computes its value eagerly and records how to push gradients back to its
//! parents. [`Tape::backward`] then walks the nodes in reverse creation
//! order (which is a topological order by construction) and accumulates
//! gradients for every node that requires them.
//!
//! The op set is exactly what the models in this crate need — dense linear
//! algebra, a few pointwise nonlinearities, row-wise (log-)softmax,
//! gather/concat/slice plumbing for embeddings and recurrent nets, and the
//! straight-through estimator that forwards a discrete one-hot sample while
//! backpropagating through its relaxed surrogate.

use std::sync::Arc;

use ndarray::{concatenate, Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Identifier of a trainable parameter inside a parameter store.
pub type ParamId = usize;

enum Value {
    Owned(Array2<f64>),
    Shared(Arc<Array2<f64>>),
}

impl Value {
    fn get(&self) -> &Array2<f64> {
        match self {
            Value::Owned(a) => a,
            Value::Shared(a) => a,
        }
    }
}

enum Op {
    Leaf,
    /// A · B
    MatMul(Var, Var),
    /// A · Bᵀ
    MatMulNT(Var, Var),
    Add(Var, Var),
    /// (n,m) + (1,m), the bias pattern.
    AddRowBroadcast(Var, Var),
    Sub(Var, Var),
    /// Elementwise product.
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    /// Elementwise product with a constant (dropout masks).
    MulConst(Var, Array2<f64>),
    /// Addition of a constant (noise injection). The constant only affects
    /// the forward value, so it is not retained.
    AddConst(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    /// Select rows by index; repeated indices accumulate on backward.
    GatherRows(Var, Vec<usize>),
    SumAll(Var),
    /// Per-row sum: (n,m) → (n,1).
    RowSum(Var),
    LogSoftmaxRow(Var),
    SoftmaxRow(Var),
    /// Sum of the selected (row, col) entries → 1×1.
    SelectSum(Var, Vec<(usize, usize)>),
    /// Per-column max over rows: (n,m) → (1,m); remembers the arg rows.
    MaxCols(Var, Vec<usize>),
    /// Forward: a constant (the discrete sample). Backward: identity into
    /// the relaxed parent.
    StraightThrough(Var),
    Transpose(Var),
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Takes the gradient out, leaving `None` (avoids a copy when the caller
    /// owns the accumulation).
    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Leaves registered as trainable parameters: (node, parameter id).
    param_leaves: Vec<(Var, ParamId)>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        self.nodes[v.0].value.get()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let a = self.value(v);
        (a.nrows(), a.ncols())
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        debug_assert_eq!(a.dim(), (1, 1), "scalar() on non-scalar node");
        a[(0, 0)]
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn any_needs(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.needs(*v))
    }

    // ----- leaves --------------------------------------------------------

    /// A constant leaf: no gradient flows into it.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf (an input whose gradient is wanted).
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A shared leaf (typically a model parameter). `trainable` decides
    /// whether gradients flow; frozen models register with `false`.
    pub fn shared(&mut self, value: Arc<Array2<f64>>, trainable: bool) -> Var {
        self.nodes.push(Node { value: Value::Shared(value), op: Op::Leaf, needs_grad: trainable });
        Var(self.nodes.len() - 1)
    }

    /// A shared trainable leaf registered under a parameter id, so the
    /// caller can collect per-parameter gradients after `backward`.
    pub fn param(&mut self, value: Arc<Array2<f64>>, id: ParamId) -> Var {
        let v = self.shared(value, true);
        self.param_leaves.push((v, id));
        v
    }

    pub fn param_leaves(&self) -> &[(Var, ParamId)] {
        &self.param_leaves
    }

    // ----- ops -----------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let needs = self.any_needs(&[a, b]);
        self.push(value, Op::MatMul(a, b), needs)
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        let needs = self.any_needs(&[a, b]);
        self.push(value, Op::MatMulNT(a, b), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = self.value(a) + self.value(b);
        let needs = self.any_needs(&[a, b]);
        self.push(value, Op::Add(a, b), needs)
    }

    /// `(n,m) + (1,m)`: add a row vector to every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.shape(row).0, 1, "add_row: rhs must be a row vector");
        debug_assert_eq!(self.shape(a).1, self.shape(row).1, "add_row: width mismatch");
        let value = self.value(a) + self.value(row);
        let needs = self.any_needs(&[a, row]);
        self.push(value, Op::AddRowBroadcast(a, row), needs)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let value = self.value(a) - self.value(b);
        let needs = self.any_needs(&[a, b]);
        self.push(value, Op::Sub(a, b), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let value = self.value(a) * self.value(b);
        let needs = self.any_needs(&[a, b]);
        self.push(value, Op::Mul(a, b), needs)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| -x);
        let needs = self.needs(a);
        self.push(value, Op::Neg(a), needs)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).mapv(|x| k * x);
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, k), needs)
    }

    pub fn mul_const(&mut self, a: Var, mask: Array2<f64>) -> Var {
        debug_assert_eq!(self.value(a).dim(), mask.dim(), "mul_const: shape mismatch");
        let value = self.value(a) * &mask;
        let needs = self.needs(a);
        self.push(value, Op::MulConst(a, mask), needs)
    }

    pub fn add_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        debug_assert_eq!(self.value(a).dim(), c.dim(), "add_const: shape mismatch");
        let value = self.value(a) + &c;
        let needs = self.needs(a);
        self.push(value, Op::AddConst(a), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let needs = self.needs(a);
        self.push(value, Op::Sigmoid(a), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let needs = self.needs(a);
        self.push(value, Op::Tanh(a), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let needs = self.needs(a);
        self.push(value, Op::Relu(a), needs)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        let needs = self.needs(a);
        self.push(value, Op::Exp(a), needs)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        debug_assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = concatenate(Axis(0), &views).expect("concat_rows: width mismatch");
        let needs = self.any_needs(parts);
        self.push(value, Op::ConcatRows(parts.to_vec()), needs)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        debug_assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = concatenate(Axis(1), &views).expect("concat_cols: height mismatch");
        let needs = self.any_needs(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), needs)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(ndarray::s![start..end, ..]).to_owned();
        let needs = self.needs(a);
        self.push(value, Op::SliceRows(a, start, end), needs)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(ndarray::s![.., start..end]).to_owned();
        let needs = self.needs(a);
        self.push(value, Op::SliceCols(a, start, end), needs)
    }

    pub fn gather_rows(&mut self, a: Var, ids: &[usize]) -> Var {
        let src = self.value(a);
        let mut value = Array2::zeros((ids.len(), src.ncols()));
        for (k, &i) in ids.iter().enumerate() {
            value.row_mut(k).assign(&src.row(i));
        }
        let needs = self.needs(a);
        self.push(value, Op::GatherRows(a, ids.to_vec()), needs)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let needs = self.needs(a);
        self.push(value, Op::SumAll(a), needs)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let sums = self.value(a).sum_axis(Axis(1));
        let n = sums.len();
        let value = sums.into_shape((n, 1)).expect("row_sum reshape");
        let needs = self.needs(a);
        self.push(value, Op::RowSum(a), needs)
    }

    pub fn log_softmax_row(&mut self, a: Var) -> Var {
        let value = log_softmax_rows(self.value(a));
        let needs = self.needs(a);
        self.push(value, Op::LogSoftmaxRow(a), needs)
    }

    pub fn softmax_row(&mut self, a: Var) -> Var {
        let value = log_softmax_rows(self.value(a)).mapv(f64::exp);
        let needs = self.needs(a);
        self.push(value, Op::SoftmaxRow(a), needs)
    }

    pub fn select_sum(&mut self, a: Var, cells: &[(usize, usize)]) -> Var {
        let src = self.value(a);
        let total: f64 = cells.iter().map(|&(i, j)| src[(i, j)]).sum();
        let needs = self.needs(a);
        self.push(Array2::from_elem((1, 1), total), Op::SelectSum(a, cells.to_vec()), needs)
    }

    pub fn max_cols(&mut self, a: Var) -> Var {
        let src = self.value(a);
        debug_assert!(src.nrows() > 0, "max_cols on empty matrix");
        let mut value = Array2::zeros((1, src.ncols()));
        let mut arg = vec![0usize; src.ncols()];
        for j in 0..src.ncols() {
            let mut best = f64::NEG_INFINITY;
            for i in 0..src.nrows() {
                if src[(i, j)] > best {
                    best = src[(i, j)];
                    arg[j] = i;
                }
            }
            value[(0, j)] = best;
        }
        let needs = self.needs(a);
        self.push(value, Op::MaxCols(a, arg), needs)
    }

    /// Straight-through estimator: the node's value is `forward` (typically
    /// a discrete one-hot sample) while the gradient flows unchanged into
    /// `relaxed` (its differentiable surrogate of the same shape).
    pub fn straight_through(&mut self, relaxed: Var, forward: Array2<f64>) -> Var {
        debug_assert_eq!(self.value(relaxed).dim(), forward.dim(), "straight_through shape");
        let needs = self.needs(relaxed);
        self.push(forward, Op::StraightThrough(relaxed), needs)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let needs = self.needs(a);
        self.push(value, Op::Transpose(a), needs)
    }

    // ----- backward ------------------------------------------------------

    /// Reverse sweep from a scalar root. Returns per-node gradients for every
    /// node on a differentiable path from the root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward: root must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else { continue };
            self.push_back(idx, &grad, &mut grads);
            grads[idx] = Some(grad);
        }
        Gradients { grads }
    }

    fn push_back(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let add = |grads: &mut [Option<Array2<f64>>], v: Var, contrib: Array2<f64>| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => *acc += &contrib,
                slot @ None => *slot = Some(contrib),
            }
        };
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                add(grads, *a, g.dot(&self.value(*b).t()));
                add(grads, *b, self.value(*a).t().dot(g));
            }
            Op::MatMulNT(a, b) => {
                add(grads, *a, g.dot(self.value(*b)));
                add(grads, *b, g.t().dot(self.value(*a)));
            }
            Op::Add(a, b) => {
                add(grads, *a, g.clone());
                add(grads, *b, g.clone());
            }
            Op::AddRowBroadcast(a, row) => {
                add(grads, *a, g.clone());
                let col = g.sum_axis(Axis(0));
                let m = col.len();
                add(grads, *row, col.into_shape((1, m)).expect("row grad reshape"));
            }
            Op::Sub(a, b) => {
                add(grads, *a, g.clone());
                add(grads, *b, g.mapv(|x| -x));
            }
            Op::Mul(a, b) => {
                add(grads, *a, g * self.value(*b));
                add(grads, *b, g * self.value(*a));
            }
            Op::Neg(a) => add(grads, *a, g.mapv(|x| -x)),
            Op::Scale(a, k) => add(grads, *a, g.mapv(|x| k * x)),
            Op::MulConst(a, mask) => add(grads, *a, g * mask),
            Op::AddConst(a) => add(grads, *a, g.clone()),
            Op::Sigmoid(a) => {
                let y = self.nodes[idx].value.get();
                add(grads, *a, g * &y.mapv(|v| v * (1.0 - v)));
            }
            Op::Tanh(a) => {
                let y = self.nodes[idx].value.get();
                add(grads, *a, g * &y.mapv(|v| 1.0 - v * v));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                add(grads, *a, g * &x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
            }
            Op::Exp(a) => {
                let y = self.nodes[idx].value.get();
                add(grads, *a, g * y);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let h = self.value(*p).nrows();
                    add(grads, *p, g.slice(ndarray::s![start..start + h, ..]).to_owned());
                    start += h;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    add(grads, *p, g.slice(ndarray::s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::SliceRows(a, start, _end) => {
                let src = self.value(*a);
                let mut full = Array2::zeros(src.dim());
                full.slice_mut(ndarray::s![*start..*start + g.nrows(), ..]).assign(g);
                add(grads, *a, full);
            }
            Op::SliceCols(a, start, _end) => {
                let src = self.value(*a);
                let mut full = Array2::zeros(src.dim());
                full.slice_mut(ndarray::s![.., *start..*start + g.ncols()]).assign(g);
                add(grads, *a, full);
            }
            Op::GatherRows(a, ids) => {
                let src = self.value(*a);
                let mut full = Array2::zeros(src.dim());
                for (k, &i) in ids.iter().enumerate() {
                    let mut row = full.row_mut(i);
                    row += &g.row(k);
                }
                add(grads, *a, full);
            }
            Op::SumAll(a) => {
                let src = self.value(*a);
                add(grads, *a, Array2::from_elem(src.dim(), g[(0, 0)]));
            }
            Op::RowSum(a) => {
                let src = self.value(*a);
                let mut full = Array2::zeros(src.dim());
                for i in 0..src.nrows() {
                    full.row_mut(i).fill(g[(i, 0)]);
                }
                add(grads, *a, full);
            }
            Op::LogSoftmaxRow(a) => {
                // dx = g - softmax(x) * rowsum(g)
                let lp = self.nodes[idx].value.get();
                let p = lp.mapv(f64::exp);
                let mut out = g.clone();
                for i in 0..out.nrows() {
                    let s: f64 = g.row(i).sum();
                    let mut row = out.row_mut(i);
                    row.zip_mut_with(&p.row(i), |o, &pi| *o -= pi * s);
                }
                add(grads, *a, out);
            }
            Op::SoftmaxRow(a) => {
                // dx = y * (g - rowsum(g * y))
                let y = self.nodes[idx].value.get();
                let mut out = Array2::zeros(g.dim());
                for i in 0..g.nrows() {
                    let s: f64 = g.row(i).iter().zip(y.row(i)).map(|(gi, yi)| gi * yi).sum();
                    for j in 0..g.ncols() {
                        out[(i, j)] = y[(i, j)] * (g[(i, j)] - s);
                    }
                }
                add(grads, *a, out);
            }
            Op::SelectSum(a, cells) => {
                let src = self.value(*a);
                let mut full = Array2::zeros(src.dim());
                for &(i, j) in cells {
                    full[(i, j)] += g[(0, 0)];
                }
                add(grads, *a, full);
            }
            Op::MaxCols(a, arg) => {
                let src = self.value(*a);
                let mut full = Array2::zeros(src.dim());
                for (j, &i) in arg.iter().enumerate() {
                    full[(i, j)] += g[(0, j)];
                }
                add(grads, *a, full);
            }
            Op::StraightThrough(a) => add(grads, *a, g.clone()),
            Op::Transpose(a) => add(grads, *a, g.t().to_owned()),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable row-wise log-softmax (max-subtracted), shared by the
/// tape ops and a few forward-only callers.
pub fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        row.mapv_inplace(|v| v - log_z);
    }
    out
}

/// Stable log-softmax of a slice (helper for vector-shaped scores).
pub fn log_softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = x.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    x.iter().map(|v| v - log_z).collect()
}
