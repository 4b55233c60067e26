//! Reverse-mode automatic differentiation on an explicit tape.
//!
//! Two backward passes live here and the distinction matters:
//!
//! * [`Tape::backward`] walks the tape once and produces *numeric* adjoint
//!   buffers. Use it for final parameter gradients.
//! * [`Tape::input_gradient`] walks the tape and *records* the adjoint
//!   computation as new ops on the same tape. The returned gradient is a
//!   tape node like any other, so it can feed later ops and is itself
//!   differentiated by a subsequent `backward`. This is what lets a loss
//!   penalize `grad_x psi(x)` while still training psi's parameters.
//!
//! Values are computed eagerly as ops are pushed, so a tape is also a plain
//! evaluator. All buffers are `f64`. Shapes are checked at op construction
//! and mismatches panic: a shape error is a programming bug, not an input
//! condition.
//!
//! Subgradient conventions: `relu'(0) = 0`, and the derivative of `clip` is
//! zero at and beyond the bounds. The mask ops that encode those derivatives
//! (`ReluMask`, `ClipMask`) are piecewise constant, so their own derivative
//! is zero almost everywhere and they propagate nothing backward.

use crate::linalg;
use thiserror::Error;

/// Index of a node on its tape.
pub type NodeId = usize;

/// Shape of a node's value buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vec(usize),
    Mat(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vec(n) => n,
            Shape::Mat(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn mat(&self) -> (usize, usize) {
        match *self {
            Shape::Mat(r, c) => (r, c),
            _ => panic!("expected matrix shape, got {self:?}"),
        }
    }

    fn vec(&self) -> usize {
        match *self {
            Shape::Vec(n) => n,
            _ => panic!("expected vector shape, got {self:?}"),
        }
    }
}

/// Handle to a tape node. Cheap to copy; only meaningful with its tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    pub id: NodeId,
    pub shape: Shape,
}

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("gradient root must be a scalar node, got {0:?}")]
    NotScalar(Shape),
    #[error("input_gradient target must be a leaf node")]
    NotLeaf,
    #[error("node does not precede the output it should influence")]
    BadOrder,
}

// Some variants carry data only the forward builder uses (mask bounds, shift
// offsets); they stay in the IR so a dumped tape reads as a full program.
#[derive(Clone, Debug)]
#[allow(dead_code)]
enum Op {
    Leaf,
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    Shift(NodeId, f64),
    Sin(NodeId),
    Cos(NodeId),
    Relu(NodeId),
    ReluMask(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Recip(NodeId),
    Clip(NodeId, f64, f64),
    ClipMask(NodeId, f64, f64),
    Sum(NodeId),
    Broadcast(NodeId),
    MulScalar(NodeId, NodeId),
    MatMulNN(NodeId, NodeId),
    MatMulNT(NodeId, NodeId),
    MatMulTN(NodeId, NodeId),
    AddRowVec(NodeId, NodeId),
    SumRows(NodeId),
    TileRows(NodeId),
    RowDot(NodeId, NodeId),
    ScaleRows(NodeId, NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize),
    PadCols(NodeId, usize),
    RowSlice(NodeId, usize),
    PadRows(NodeId, usize),
    Reshape(NodeId),
}

struct Node {
    op: Op,
    shape: Shape,
    value: Vec<f64>,
}

/// Gradients from a numeric backward pass, indexed by [`Var`].
pub struct Gradients {
    adj: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Adjoint of `v`, if any path connected it to the root.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.adj.get(v.id).and_then(|g| g.as_deref())
    }

    /// Adjoint of a scalar node, zero if disconnected.
    pub fn scalar(&self, v: Var) -> f64 {
        assert_eq!(v.shape, Shape::Scalar);
        self.get(v).map_or(0.0, |g| g[0])
    }

    /// Copy the adjoint of `v` into `out` (zeros if disconnected).
    pub fn write(&self, v: Var, out: &mut [f64]) {
        assert_eq!(out.len(), v.shape.len());
        match self.get(v) {
            Some(g) => out.copy_from_slice(g),
            None => out.fill(0.0),
        }
    }
}

/// Append-only computation tape.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Shape, value: Vec<f64>) -> Var {
        debug_assert_eq!(value.len(), shape.len());
        let id = self.nodes.len();
        self.nodes.push(Node { op, shape, value });
        Var { id, shape }
    }

    fn val(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    /// Value buffer of a node.
    pub fn value(&self, v: Var) -> &[f64] {
        self.val(v.id)
    }

    /// Value of a scalar node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        assert_eq!(v.shape, Shape::Scalar);
        self.nodes[v.id].value[0]
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.id].op, Op::Leaf)
    }

    // ---- inputs -----------------------------------------------------------

    /// Differentiable input (parameters, or points we need gradients at).
    pub fn leaf(&mut self, values: &[f64], shape: Shape) -> Var {
        assert_eq!(values.len(), shape.len(), "leaf: value/shape mismatch");
        self.push(Op::Leaf, shape, values.to_vec())
    }

    pub fn leaf_scalar(&mut self, v: f64) -> Var {
        self.push(Op::Leaf, Shape::Scalar, vec![v])
    }

    /// Non-differentiable input; backward treats it as a stop-gradient.
    pub fn constant(&mut self, values: &[f64], shape: Shape) -> Var {
        assert_eq!(values.len(), shape.len(), "constant: value/shape mismatch");
        self.push(Op::Const, shape, values.to_vec())
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.push(Op::Const, Shape::Scalar, vec![v])
    }

    pub fn zeros_const(&mut self, shape: Shape) -> Var {
        self.push(Op::Const, shape, vec![0.0; shape.len()])
    }

    // ---- elementwise ------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(a.shape, b.shape, "add: shape mismatch");
        let value = self.zip(a, b, |x, y| x + y);
        self.push(Op::Add(a.id, b.id), a.shape, value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(a.shape, b.shape, "sub: shape mismatch");
        let value = self.zip(a, b, |x, y| x - y);
        self.push(Op::Sub(a.id, b.id), a.shape, value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(a.shape, b.shape, "mul: shape mismatch");
        let value = self.zip(a, b, |x, y| x * y);
        self.push(Op::Mul(a.id, b.id), a.shape, value)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.map(a, |x| -x);
        self.push(Op::Neg(a.id), a.shape, value)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.map(a, |x| c * x);
        self.push(Op::Scale(a.id, c), a.shape, value)
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let value = self.map(a, |x| x + c);
        self.push(Op::Shift(a.id, c), a.shape, value)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::sin);
        self.push(Op::Sin(a.id), a.shape, value)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::cos);
        self.push(Op::Cos(a.id), a.shape, value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a.id), a.shape, value)
    }

    /// 1 where the input is strictly positive, else 0 (`relu'` with the
    /// value-0-at-kink convention).
    pub fn relu_mask(&mut self, a: Var) -> Var {
        let value = self.map(a, |x| if x > 0.0 { 1.0 } else { 0.0 });
        self.push(Op::ReluMask(a.id), a.shape, value)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.map(a, |x| x * x);
        self.push(Op::Square(a.id), a.shape, value)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::sqrt);
        self.push(Op::Sqrt(a.id), a.shape, value)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.map(a, |x| 1.0 / x);
        self.push(Op::Recip(a.id), a.shape, value)
    }

    /// Clamp into `[lo, hi]`; derivative is zero at and outside the bounds.
    pub fn clip(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        assert!(lo < hi, "clip: lo must be < hi");
        let value = self.map(a, |x| x.clamp(lo, hi));
        self.push(Op::Clip(a.id, lo, hi), a.shape, value)
    }

    /// 1 strictly inside `(lo, hi)`, else 0.
    pub fn clip_mask(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.map(a, |x| if x > lo && x < hi { 1.0 } else { 0.0 });
        self.push(Op::ClipMask(a.id, lo, hi), a.shape, value)
    }

    // ---- reductions and broadcasts ----------------------------------------

    /// Sum of all entries, as a scalar node. Fixed summation order.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = linalg::sum(self.val(a.id));
        self.push(Op::Sum(a.id), Shape::Scalar, vec![s])
    }

    /// Broadcast a scalar node to `shape`.
    pub fn broadcast(&mut self, a: Var, shape: Shape) -> Var {
        assert_eq!(a.shape, Shape::Scalar, "broadcast: input must be scalar");
        let v = self.nodes[a.id].value[0];
        self.push(Op::Broadcast(a.id), shape, vec![v; shape.len()])
    }

    /// Multiply every entry of `a` by the scalar node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(s.shape, Shape::Scalar, "mul_scalar: s must be scalar");
        let sv = self.nodes[s.id].value[0];
        let value = self.map(a, |x| sv * x);
        self.push(Op::MulScalar(a.id, s.id), a.shape, value)
    }

    // ---- matrix ops --------------------------------------------------------

    /// `a (p,q) @ b (q,r)`.
    pub fn matmul_nn(&mut self, a: Var, b: Var) -> Var {
        let (p, q) = a.shape.mat();
        let (q2, r) = b.shape.mat();
        assert_eq!(q, q2, "matmul_nn: inner dims differ");
        let mut out = vec![0.0; p * r];
        linalg::matmul_nn(self.val(a.id), p, q, self.val(b.id), r, &mut out);
        self.push(Op::MatMulNN(a.id, b.id), Shape::Mat(p, r), out)
    }

    /// `a (p,q) @ b^T` with `b` stored `(r,q)`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (p, q) = a.shape.mat();
        let (r, q2) = b.shape.mat();
        assert_eq!(q, q2, "matmul_nt: inner dims differ");
        let mut out = vec![0.0; p * r];
        linalg::matmul_nt(self.val(a.id), p, q, self.val(b.id), r, &mut out);
        self.push(Op::MatMulNT(a.id, b.id), Shape::Mat(p, r), out)
    }

    /// `a^T @ b` with `a` stored `(q,p)`, `b` stored `(q,r)`.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Var {
        let (q, p) = a.shape.mat();
        let (q2, r) = b.shape.mat();
        assert_eq!(q, q2, "matmul_tn: inner dims differ");
        let mut out = vec![0.0; p * r];
        linalg::matmul_tn(self.val(a.id), q, p, self.val(b.id), r, &mut out);
        self.push(Op::MatMulTN(a.id, b.id), Shape::Mat(p, r), out)
    }

    /// Add a row vector to every row of a matrix (bias add).
    pub fn add_row_vec(&mut self, a: Var, v: Var) -> Var {
        let (p, q) = a.shape.mat();
        assert_eq!(v.shape.vec(), q, "add_row_vec: width mismatch");
        let mut out = self.val(a.id).to_vec();
        let vv = self.val(v.id);
        for i in 0..p {
            for j in 0..q {
                out[i * q + j] += vv[j];
            }
        }
        self.push(Op::AddRowVec(a.id, v.id), a.shape, out)
    }

    /// Column sums of a matrix, as a row vector.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (p, q) = a.shape.mat();
        let mut out = vec![0.0; q];
        let av = self.val(a.id);
        for i in 0..p {
            linalg::axpy(&mut out, 1.0, &av[i * q..(i + 1) * q]);
        }
        self.push(Op::SumRows(a.id), Shape::Vec(q), out)
    }

    /// Stack `rows` copies of a vector into a matrix.
    pub fn tile_rows(&mut self, v: Var, rows: usize) -> Var {
        let q = v.shape.vec();
        let vv = self.val(v.id);
        let mut out = Vec::with_capacity(rows * q);
        for _ in 0..rows {
            out.extend_from_slice(vv);
        }
        self.push(Op::TileRows(v.id), Shape::Mat(rows, q), out)
    }

    /// Per-row dot product of two equal-shape matrices, as a vector.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(a.shape, b.shape, "row_dot: shape mismatch");
        let (p, q) = a.shape.mat();
        let av = self.val(a.id);
        let bv = self.val(b.id);
        let mut out = Vec::with_capacity(p);
        for i in 0..p {
            out.push(linalg::dot(&av[i * q..(i + 1) * q], &bv[i * q..(i + 1) * q]));
        }
        self.push(Op::RowDot(a.id, b.id), Shape::Vec(p), out)
    }

    /// Scale row `i` of `a` by `s[i]`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Var {
        let (p, q) = a.shape.mat();
        assert_eq!(s.shape.vec(), p, "scale_rows: row count mismatch");
        let mut out = self.val(a.id).to_vec();
        let sv = self.val(s.id);
        for i in 0..p {
            for x in &mut out[i * q..(i + 1) * q] {
                *x *= sv[i];
            }
        }
        self.push(Op::ScaleRows(a.id, s.id), a.shape, out)
    }

    /// Concatenate matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let p = parts[0].shape.mat().0;
        let mut total = 0;
        for v in parts {
            let (r, c) = v.shape.mat();
            assert_eq!(r, p, "concat_cols: row count mismatch");
            total += c;
        }
        let mut out = vec![0.0; p * total];
        let mut off = 0;
        for v in parts {
            let (_, c) = v.shape.mat();
            let vv = self.val(v.id);
            for i in 0..p {
                out[i * total + off..i * total + off + c]
                    .copy_from_slice(&vv[i * c..(i + 1) * c]);
            }
            off += c;
        }
        let ids = parts.iter().map(|v| v.id).collect();
        self.push(Op::ConcatCols(ids), Shape::Mat(p, total), out)
    }

    /// Columns `[off, off+width)` of a matrix.
    pub fn slice_cols(&mut self, a: Var, off: usize, width: usize) -> Var {
        let (p, q) = a.shape.mat();
        assert!(off + width <= q, "slice_cols: out of range");
        let av = self.val(a.id);
        let mut out = Vec::with_capacity(p * width);
        for i in 0..p {
            out.extend_from_slice(&av[i * q + off..i * q + off + width]);
        }
        self.push(Op::SliceCols(a.id, off), Shape::Mat(p, width), out)
    }

    /// Embed a matrix into a wider zero matrix at column offset `off`.
    pub fn pad_cols(&mut self, a: Var, off: usize, total_cols: usize) -> Var {
        let (p, w) = a.shape.mat();
        assert!(off + w <= total_cols, "pad_cols: out of range");
        let av = self.val(a.id);
        let mut out = vec![0.0; p * total_cols];
        for i in 0..p {
            out[i * total_cols + off..i * total_cols + off + w]
                .copy_from_slice(&av[i * w..(i + 1) * w]);
        }
        self.push(Op::PadCols(a.id, off), Shape::Mat(p, total_cols), out)
    }

    /// Rows `[off, off+n)` of a matrix.
    pub fn row_slice(&mut self, a: Var, off: usize, n: usize) -> Var {
        let (p, q) = a.shape.mat();
        assert!(off + n <= p, "row_slice: out of range");
        let out = self.val(a.id)[off * q..(off + n) * q].to_vec();
        self.push(Op::RowSlice(a.id, off), Shape::Mat(n, q), out)
    }

    /// Embed a matrix into a taller zero matrix at row offset `off`.
    pub fn pad_rows(&mut self, a: Var, off: usize, total_rows: usize) -> Var {
        let (n, q) = a.shape.mat();
        assert!(off + n <= total_rows, "pad_rows: out of range");
        let mut out = vec![0.0; total_rows * q];
        out[off * q..(off + n) * q].copy_from_slice(self.val(a.id));
        self.push(Op::PadRows(a.id, off), Shape::Mat(total_rows, q), out)
    }

    /// Same buffer, different shape (must have equal length).
    pub fn reshape(&mut self, a: Var, shape: Shape) -> Var {
        assert_eq!(a.shape.len(), shape.len(), "reshape: length mismatch");
        let value = self.val(a.id).to_vec();
        self.push(Op::Reshape(a.id), shape, value)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.val(a.id).iter().map(|&x| f(x)).collect()
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.val(a.id)
            .iter()
            .zip(self.val(b.id))
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    // ---- numeric backward --------------------------------------------------

    /// Reverse sweep from a scalar root; returns numeric adjoints for every
    /// node reached. Deterministic: accumulation order is tape order.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        if root.shape != Shape::Scalar {
            return Err(AutodiffError::NotScalar(root.shape));
        }
        let mut adj: Vec<Option<Vec<f64>>> = Vec::with_capacity(root.id + 1);
        adj.resize_with(root.id + 1, || None);
        adj[root.id] = Some(vec![1.0]);

        for id in (0..=root.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            self.accumulate_numeric(id, &g, &mut adj);
            adj[id] = Some(g);
        }
        Ok(Gradients { adj })
    }

    /// Add the VJP contributions of node `id` (whose adjoint is `g`) onto the
    /// adjoints of its inputs.
    fn accumulate_numeric(&self, id: NodeId, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        // Lazily materialize an input's adjoint buffer, then apply `f`.
        fn with(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize, f: impl FnOnce(&mut [f64])) {
            let slot = adj[id].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        }
        let node = &self.nodes[id];
        match node.op {
            Op::Leaf | Op::Const => {}
            // Masks are piecewise constant: zero derivative a.e.
            Op::ReluMask(_) | Op::ClipMask(_, _, _) => {}
            Op::Add(a, b) => {
                with(adj, a, g.len(), |d| linalg::axpy(d, 1.0, g));
                with(adj, b, g.len(), |d| linalg::axpy(d, 1.0, g));
            }
            Op::Sub(a, b) => {
                with(adj, a, g.len(), |d| linalg::axpy(d, 1.0, g));
                with(adj, b, g.len(), |d| linalg::axpy(d, -1.0, g));
            }
            Op::Mul(a, b) => {
                let av = self.val(a);
                let bv = self.val(b);
                with(adj, a, g.len(), |d| {
                    for i in 0..g.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                with(adj, b, g.len(), |d| {
                    for i in 0..g.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::Neg(a) => with(adj, a, g.len(), |d| linalg::axpy(d, -1.0, g)),
            Op::Scale(a, c) => with(adj, a, g.len(), |d| linalg::axpy(d, c, g)),
            Op::Shift(a, _) => with(adj, a, g.len(), |d| linalg::axpy(d, 1.0, g)),
            Op::Sin(a) => {
                let av = self.val(a);
                with(adj, a, g.len(), |d| {
                    for i in 0..g.len() {
                        d[i] += g[i] * av[i].cos();
                    }
                });
            }
            Op::Cos(a) => {
                let av = self.val(a);
                with(adj, a, g.len(), |d| {
                    for i in 0..g.len() {
                        d[i] -= g[i] * av[i].sin();
                    }
                });
            }
            Op::Relu(a) => {
                let av = self.val(a);
                with(adj, a, g.len(), |d| {
                    for i in 0..g.len() {
                        if av[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Square(a) => {
                let av = self.val(a);
                with(adj, a, g.len(), |d| {
                    for i in 0..g.len() {
                        d[i] += 2.0 * g[i] * av[i];
                    }
                });
            }
            Op::Sqrt(_) | Op::Recip(_) => {
                // Both use the node's own output value.
                let out = &node.value;
                let a = match node.op {
                    Op::Sqrt(a) | Op::Recip(a) => a,
                    _ => unreachable!(),
                };
                let is_sqrt = matches!(node.op, Op::Sqrt(_));
                with(adj, a, g.len(), |d| {
                    for i in 0..g.len() {
                        if is_sqrt {
                            d[i] += 0.5 * g[i] / out[i];
                        } else {
                            d[i] -= g[i] * out[i] * out[i];
                        }
                    }
                });
            }
            Op::Clip(a, lo, hi) => {
                let av = self.val(a);
                with(adj, a, g.len(), |d| {
                    for i in 0..g.len() {
                        if av[i] > lo && av[i] < hi {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let n = self.nodes[a].shape.len();
                with(adj, a, n, |d| {
                    for x in d.iter_mut() {
                        *x += g[0];
                    }
                });
            }
            Op::Broadcast(a) => {
                let s = linalg::sum(g);
                with(adj, a, 1, |d| d[0] += s);
            }
            Op::MulScalar(a, s) => {
                let sv = self.val(s)[0];
                let av = self.val(a);
                with(adj, a, g.len(), |d| linalg::axpy(d, sv, g));
                let ds = linalg::dot(g, av);
                with(adj, s, 1, |d| d[0] += ds);
            }
            Op::MatMulNN(a, b) => {
                let (p, q) = self.nodes[a].shape.mat();
                let (_, r) = self.nodes[b].shape.mat();
                // dA = g @ B^T ; dB = A^T @ g
                let mut da = vec![0.0; p * q];
                linalg::matmul_nt(g, p, r, self.val(b), q, &mut da);
                with(adj, a, p * q, |d| linalg::axpy(d, 1.0, &da));
                let mut db = vec![0.0; q * r];
                linalg::matmul_tn(self.val(a), p, q, g, r, &mut db);
                with(adj, b, q * r, |d| linalg::axpy(d, 1.0, &db));
            }
            Op::MatMulNT(a, b) => {
                let (p, q) = self.nodes[a].shape.mat();
                let (r, _) = self.nodes[b].shape.mat();
                // out = A @ B^T : dA = g @ B ; dB = g^T @ A
                let mut da = vec![0.0; p * q];
                linalg::matmul_nn(g, p, r, self.val(b), q, &mut da);
                with(adj, a, p * q, |d| linalg::axpy(d, 1.0, &da));
                let mut db = vec![0.0; r * q];
                linalg::matmul_tn(g, p, r, self.val(a), q, &mut db);
                with(adj, b, r * q, |d| linalg::axpy(d, 1.0, &db));
            }
            Op::MatMulTN(a, b) => {
                let (q, p) = self.nodes[a].shape.mat();
                let (_, r) = self.nodes[b].shape.mat();
                // out = A^T @ B : dA = B @ g^T ; dB = A @ g
                let mut da = vec![0.0; q * p];
                linalg::matmul_nt(self.val(b), q, r, g, p, &mut da);
                with(adj, a, q * p, |d| linalg::axpy(d, 1.0, &da));
                let mut db = vec![0.0; q * r];
                linalg::matmul_nn(self.val(a), q, p, g, r, &mut db);
                with(adj, b, q * r, |d| linalg::axpy(d, 1.0, &db));
            }
            Op::AddRowVec(a, v) => {
                let (p, q) = node.shape.mat();
                with(adj, a, p * q, |d| linalg::axpy(d, 1.0, g));
                with(adj, v, q, |d| {
                    for i in 0..p {
                        linalg::axpy(d, 1.0, &g[i * q..(i + 1) * q]);
                    }
                });
            }
            Op::SumRows(a) => {
                let (p, q) = self.nodes[a].shape.mat();
                with(adj, a, p * q, |d| {
                    for i in 0..p {
                        linalg::axpy(&mut d[i * q..(i + 1) * q], 1.0, g);
                    }
                });
            }
            Op::TileRows(v) => {
                let (p, q) = node.shape.mat();
                with(adj, v, q, |d| {
                    for i in 0..p {
                        linalg::axpy(d, 1.0, &g[i * q..(i + 1) * q]);
                    }
                });
            }
            Op::RowDot(a, b) => {
                let (p, q) = self.nodes[a].shape.mat();
                let av = self.val(a);
                let bv = self.val(b);
                with(adj, a, p * q, |d| {
                    for i in 0..p {
                        linalg::axpy(&mut d[i * q..(i + 1) * q], g[i], &bv[i * q..(i + 1) * q]);
                    }
                });
                with(adj, b, p * q, |d| {
                    for i in 0..p {
                        linalg::axpy(&mut d[i * q..(i + 1) * q], g[i], &av[i * q..(i + 1) * q]);
                    }
                });
            }
            Op::ScaleRows(a, s) => {
                let (p, q) = node.shape.mat();
                let av = self.val(a);
                let sv = self.val(s);
                with(adj, a, p * q, |d| {
                    for i in 0..p {
                        linalg::axpy(&mut d[i * q..(i + 1) * q], sv[i], &g[i * q..(i + 1) * q]);
                    }
                });
                with(adj, s, p, |d| {
                    for i in 0..p {
                        d[i] += linalg::dot(&g[i * q..(i + 1) * q], &av[i * q..(i + 1) * q]);
                    }
                });
            }
            Op::ConcatCols(ref parts) => {
                let (p, total) = node.shape.mat();
                let mut off = 0;
                for &a in parts {
                    let (_, c) = self.nodes[a].shape.mat();
                    with(adj, a, p * c, |d| {
                        for i in 0..p {
                            linalg::axpy(
                                &mut d[i * c..(i + 1) * c],
                                1.0,
                                &g[i * total + off..i * total + off + c],
                            );
                        }
                    });
                    off += c;
                }
            }
            Op::SliceCols(a, off) => {
                let (p, q) = self.nodes[a].shape.mat();
                let (_, w) = node.shape.mat();
                with(adj, a, p * q, |d| {
                    for i in 0..p {
                        linalg::axpy(
                            &mut d[i * q + off..i * q + off + w],
                            1.0,
                            &g[i * w..(i + 1) * w],
                        );
                    }
                });
            }
            Op::PadCols(a, off) => {
                let (p, w) = self.nodes[a].shape.mat();
                let (_, total) = node.shape.mat();
                with(adj, a, p * w, |d| {
                    for i in 0..p {
                        linalg::axpy(
                            &mut d[i * w..(i + 1) * w],
                            1.0,
                            &g[i * total + off..i * total + off + w],
                        );
                    }
                });
            }
            Op::RowSlice(a, off) => {
                let (p, q) = self.nodes[a].shape.mat();
                let (n, _) = node.shape.mat();
                with(adj, a, p * q, |d| {
                    linalg::axpy(&mut d[off * q..(off + n) * q], 1.0, g);
                });
            }
            Op::PadRows(a, off) => {
                let (n, q) = self.nodes[a].shape.mat();
                with(adj, a, n * q, |d| {
                    linalg::axpy(d, 1.0, &g[off * q..(off + n) * q]);
                });
            }
            Op::Reshape(a) => {
                let n = self.nodes[a].shape.len();
                with(adj, a, n, |d| linalg::axpy(d, 1.0, g));
            }
        }
    }

    // ---- recorded backward -------------------------------------------------

    /// Gradient of a scalar `output` with respect to the leaf `wrt`,
    /// recorded as new tape ops. The result participates in any later ops
    /// and is differentiated by subsequent [`Tape::backward`] calls, which
    /// is how second-order terms (parameter gradients of input gradients)
    /// come out right.
    pub fn input_gradient(&mut self, output: Var, wrt: Var) -> Result<Var, AutodiffError> {
        if output.shape != Shape::Scalar {
            return Err(AutodiffError::NotScalar(output.shape));
        }
        if !matches!(self.nodes[wrt.id].op, Op::Leaf) {
            return Err(AutodiffError::NotLeaf);
        }
        if wrt.id > output.id {
            return Err(AutodiffError::BadOrder);
        }

        let limit = output.id;
        let mut adj: Vec<Option<Var>> = vec![None; limit + 1];
        adj[output.id] = Some(self.constant_scalar(1.0));

        for id in (0..=limit).rev() {
            let Some(g) = adj[id] else { continue };
            let op = self.nodes[id].op.clone();
            let out_var = Var { id, shape: self.nodes[id].shape };
            self.accumulate_recorded(&op, out_var, g, &mut adj);
        }

        Ok(match adj[wrt.id] {
            Some(v) => v,
            None => self.zeros_const(wrt.shape),
        })
    }

    /// Record the VJP ops of one node and merge them into the symbolic
    /// adjoints of its inputs.
    fn accumulate_recorded(&mut self, op: &Op, out: Var, g: Var, adj: &mut [Option<Var>]) {
        fn merge(tape: &mut Tape, adj: &mut [Option<Var>], id: NodeId, v: Var) {
            adj[id] = Some(match adj[id] {
                None => v,
                Some(prev) => tape.add(prev, v),
            });
        }
        let shape_of = |t: &Tape, id: NodeId| t.nodes[id].shape;
        match *op {
            Op::Leaf | Op::Const => {}
            Op::ReluMask(_) | Op::ClipMask(_, _, _) => {}
            Op::Add(a, b) => {
                merge(self, adj, a, g);
                merge(self, adj, b, g);
            }
            Op::Sub(a, b) => {
                merge(self, adj, a, g);
                let n = self.neg(g);
                merge(self, adj, b, n);
            }
            Op::Mul(a, b) => {
                let bv = Var { id: b, shape: shape_of(self, b) };
                let av = Var { id: a, shape: shape_of(self, a) };
                let da = self.mul(g, bv);
                merge(self, adj, a, da);
                let db = self.mul(g, av);
                merge(self, adj, b, db);
            }
            Op::Neg(a) => {
                let d = self.neg(g);
                merge(self, adj, a, d);
            }
            Op::Scale(a, c) => {
                let d = self.scale(g, c);
                merge(self, adj, a, d);
            }
            Op::Shift(a, _) => merge(self, adj, a, g),
            Op::Sin(a) => {
                let av = Var { id: a, shape: shape_of(self, a) };
                let c = self.cos(av);
                let d = self.mul(g, c);
                merge(self, adj, a, d);
            }
            Op::Cos(a) => {
                let av = Var { id: a, shape: shape_of(self, a) };
                let s = self.sin(av);
                let m = self.mul(g, s);
                let d = self.neg(m);
                merge(self, adj, a, d);
            }
            Op::Relu(a) => {
                let av = Var { id: a, shape: shape_of(self, a) };
                let m = self.relu_mask(av);
                let d = self.mul(g, m);
                merge(self, adj, a, d);
            }
            Op::Square(a) => {
                let av = Var { id: a, shape: shape_of(self, a) };
                let m = self.mul(g, av);
                let d = self.scale(m, 2.0);
                merge(self, adj, a, d);
            }
            Op::Sqrt(a) => {
                let r = self.recip(out);
                let h = self.scale(r, 0.5);
                let d = self.mul(g, h);
                merge(self, adj, a, d);
            }
            Op::Recip(a) => {
                let o2 = self.square(out);
                let m = self.mul(g, o2);
                let d = self.neg(m);
                merge(self, adj, a, d);
            }
            Op::Clip(a, lo, hi) => {
                let av = Var { id: a, shape: shape_of(self, a) };
                let m = self.clip_mask(av, lo, hi);
                let d = self.mul(g, m);
                merge(self, adj, a, d);
            }
            Op::Sum(a) => {
                let sh = shape_of(self, a);
                let d = self.broadcast(g, sh);
                merge(self, adj, a, d);
            }
            Op::Broadcast(a) => {
                let d = self.sum(g);
                merge(self, adj, a, d);
            }
            Op::MulScalar(a, s) => {
                let sv = Var { id: s, shape: Shape::Scalar };
                let av = Var { id: a, shape: shape_of(self, a) };
                let da = self.mul_scalar(g, sv);
                merge(self, adj, a, da);
                let p = self.mul(g, av);
                let ds = self.sum(p);
                merge(self, adj, s, ds);
            }
            Op::MatMulNN(a, b) => {
                let av = Var { id: a, shape: shape_of(self, a) };
                let bv = Var { id: b, shape: shape_of(self, b) };
                let da = self.matmul_nt(g, bv);
                merge(self, adj, a, da);
                let db = self.matmul_tn(av, g);
                merge(self, adj, b, db);
            }
            Op::MatMulNT(a, b) => {
                let av = Var { id: a, shape: shape_of(self, a) };
                let bv = Var { id: b, shape: shape_of(self, b) };
                let da = self.matmul_nn(g, bv);
                merge(self, adj, a, da);
                let db = self.matmul_tn(g, av);
                merge(self, adj, b, db);
            }
            Op::MatMulTN(a, b) => {
                let av = Var { id: a, shape: shape_of(self, a) };
                let bv = Var { id: b, shape: shape_of(self, b) };
                let da = self.matmul_nt(bv, g);
                merge(self, adj, a, da);
                let db = self.matmul_nn(av, g);
                merge(self, adj, b, db);
            }
            Op::AddRowVec(a, v) => {
                merge(self, adj, a, g);
                let dv = self.sum_rows(g);
                merge(self, adj, v, dv);
            }
            Op::SumRows(a) => {
                let (p, _) = shape_of(self, a).mat();
                let d = self.tile_rows(g, p);
                merge(self, adj, a, d);
            }
            Op::TileRows(v) => {
                let d = self.sum_rows(g);
                merge(self, adj, v, d);
            }
            Op::RowDot(a, b) => {
                let av = Var { id: a, shape: shape_of(self, a) };
                let bv = Var { id: b, shape: shape_of(self, b) };
                let da = self.scale_rows(bv, g);
                merge(self, adj, a, da);
                let db = self.scale_rows(av, g);
                merge(self, adj, b, db);
            }
            Op::ScaleRows(a, s) => {
                let av = Var { id: a, shape: shape_of(self, a) };
                let sv = Var { id: s, shape: shape_of(self, s) };
                let da = self.scale_rows(g, sv);
                merge(self, adj, a, da);
                let ds = self.row_dot(g, av);
                merge(self, adj, s, ds);
            }
            Op::ConcatCols(ref parts) => {
                let mut off = 0;
                for &a in parts {
                    let (_, c) = shape_of(self, a).mat();
                    let d = self.slice_cols(g, off, c);
                    merge(self, adj, a, d);
                    off += c;
                }
            }
            Op::SliceCols(a, off) => {
                let (_, q) = shape_of(self, a).mat();
                let d = self.pad_cols(g, off, q);
                merge(self, adj, a, d);
            }
            Op::PadCols(a, off) => {
                let (_, w) = shape_of(self, a).mat();
                let d = self.slice_cols(g, off, w);
                merge(self, adj, a, d);
            }
            Op::RowSlice(a, off) => {
                let (p, _) = shape_of(self, a).mat();
                let d = self.pad_rows(g, off, p);
                merge(self, adj, a, d);
            }
            Op::PadRows(a, off) => {
                let (n, _) = shape_of(self, a).mat();
                let d = self.row_slice(g, off, n);
                merge(self, adj, a, d);
            }
            Op::Reshape(a) => {
                let sh = shape_of(self, a);
                let d = self.reshape(g, sh);
                merge(self, adj, a, d);
            }
        }
    }
}
