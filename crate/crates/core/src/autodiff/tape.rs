use std::collections::HashMap;
use std::sync::Arc;

use super::tensor::{matmul, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Coordinate list of a square sparse matrix.
///
/// Entries are sorted by `(row, col)` so that row reductions visit columns in
/// ascending order, matching a dense row-major product.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl Pattern {
    /// Builds a pattern from `(row, col)` pairs. Pairs must be unique.
    pub fn new(n: usize, mut entries: Vec<(usize, usize)>) -> Result<Self> {
        entries.sort_unstable();
        for w in entries.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Contract(format!("duplicate sparse entry {:?}", w[0])));
            }
        }
        if let Some(&(r, c)) = entries.iter().find(|&&(r, c)| r >= n || c >= n) {
            return Err(Error::Contract(format!(
                "sparse entry ({r}, {c}) out of range for dimension {n}"
            )));
        }
        let (rows, cols) = entries.into_iter().unzip();
        Ok(Pattern { n, rows, cols })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    pub fn entry(&self, k: usize) -> (usize, usize) {
        (self.rows[k], self.cols[k])
    }

    fn endpoints(&self, transposed: bool) -> (&[usize], &[usize]) {
        if transposed {
            (&self.cols, &self.rows)
        } else {
            (&self.rows, &self.cols)
        }
    }
}

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Abs(Var),
    Powf(Var, f64),
    Mask(Var, Arc<Tensor>),
    Maximum(Var, Var),
    Minimum(Var, Var),
    Transpose(Var),
    Sum(Var),
    Broadcast(Var),
    ColSum(Var),
    BroadcastRows(Var),
    PickEntries { a: Var, idx: Arc<[usize]> },
    PlaceEntries { a: Var, idx: Arc<[usize]> },
    ConcatCols(Var, Var),
    SliceCols { a: Var, start: usize },
    PadCols { a: Var, start: usize },
    ConcatRows(Var, Var),
    GatherRows { a: Var, idx: Arc<[usize]> },
    ScatterAddRows { a: Var, idx: Arc<[usize]> },
    Propagate { vals: Var, h: Var, pattern: Arc<Pattern>, transposed: bool },
    EdgeDot { a: Var, b: Var, pattern: Arc<Pattern>, transposed: bool },
}

impl Op {
    fn inputs(&self) -> [Option<Var>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            MatMul { a, b, .. } => [Some(a), Some(b)],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) | Maximum(a, b) | Minimum(a, b) => {
                [Some(a), Some(b)]
            }
            ConcatCols(a, b) | ConcatRows(a, b) => [Some(a), Some(b)],
            Propagate { vals, h, .. } => [Some(vals), Some(h)],
            EdgeDot { a, b, .. } => [Some(a), Some(b)],
            Scale(a, _) | Relu(a) | Sigmoid(a) | Softplus(a) | Abs(a) | Powf(a, _) => [Some(a), None],
            Mask(a, _) | Transpose(a) | Sum(a) | Broadcast(a) | ColSum(a) => [Some(a), None],
            BroadcastRows(a) => [Some(a), None],
            PickEntries { a, .. } | PlaceEntries { a, .. } => [Some(a), None],
            SliceCols { a, .. } | PadCols { a, .. } => [Some(a), None],
            GatherRows { a, .. } | ScatterAddRows { a, .. } => [Some(a), None],
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients keyed by the leaf they belong to.
#[derive(Debug, Clone, Default)]
pub struct GradientMap {
    grads: HashMap<Var, Tensor>,
}

impl GradientMap {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Tensor)> {
        self.grads.iter()
    }
}

/// Computation record for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order. Gradients can themselves be recorded as nodes
/// ([`Tape::grad_graph`]), which is what makes optimizer updates
/// differentiable.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(Op::Leaf, value, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(Op::Leaf, value, false)
    }

    fn push_raw(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let requires_grad = op
            .inputs()
            .iter()
            .flatten()
            .any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(op, value, requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(op, x, y));
        }
        Ok(())
    }

    // ---- dense algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) · op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let value = matmul(self.value(a), ta, self.value(b), tb)?;
        Ok(self.push(Op::MatMul { a, b, ta, tb }, value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), value))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.push(Op::Scale(a, factor), value)
    }

    /// Adds a `1 x c` row to every row of an `n x c` tensor.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(shape_err("add_row", x, r));
        }
        let c = x.cols();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += r.data()[i % c];
        }
        Ok(self.push(Op::AddRow(a, row), out))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), value)
    }

    /// `ln(1 + e^x)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        self.push(Op::Softplus(a), value)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        self.push(Op::Abs(a), value)
    }

    pub fn powf(&mut self, a: Var, exponent: f64) -> Var {
        let value = self.value(a).map(|x| x.powf(exponent));
        self.push(Op::Powf(a, exponent), value)
    }

    /// Hadamard product with a constant tensor.
    pub fn mask(&mut self, a: Var, mask: Arc<Tensor>) -> Result<Var> {
        if self.value(a).shape() != mask.shape() {
            return Err(shape_err("mask", self.value(a), &mask));
        }
        let value = self.value(a).zip_map(&mask, |x, m| x * m);
        Ok(self.push(Op::Mask(a, mask), value))
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("maximum", a, b)?;
        let value = self.value(a).zip_map(self.value(b), f64::max);
        Ok(self.push(Op::Maximum(a, b), value))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("minimum", a, b)?;
        let value = self.value(a).zip_map(self.value(b), f64::min);
        Ok(self.push(Op::Minimum(a, b), value))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(Op::Transpose(a), value)
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), value)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Repeats a `1 x 1` tensor into `shape`.
    pub fn broadcast(&mut self, a: Var, shape: [usize; 2]) -> Result<Var> {
        let x = self.value(a);
        if x.shape() != [1, 1] {
            return Err(Error::Contract(format!(
                "broadcast needs a 1x1 input, got {:?}",
                x.shape()
            )));
        }
        let value = Tensor::full(shape[0], shape[1], x.item());
        Ok(self.push(Op::Broadcast(a), value))
    }

    /// Column sums, `n x c -> 1 x c`.
    pub fn col_sum(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = x.cols();
        let mut out = vec![0.0; c];
        for r in 0..x.rows() {
            for (o, v) in out.iter_mut().zip(x.row_slice(r)) {
                *o += v;
            }
        }
        self.push(Op::ColSum(a), Tensor::from_vec(1, c, out))
    }

    /// Repeats a `1 x c` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let x = self.value(a);
        if x.rows() != 1 {
            return Err(Error::Contract(format!(
                "broadcast_rows needs a single row, got {:?}",
                x.shape()
            )));
        }
        let mut data = Vec::with_capacity(n * x.cols());
        for _ in 0..n {
            data.extend_from_slice(x.data());
        }
        let value = Tensor::from_vec(n, x.cols(), data);
        Ok(self.push(Op::BroadcastRows(a), value))
    }

    // ---- pooling and indexing ----

    /// Column-wise maximum over all rows, `n x d -> 1 x d`.
    ///
    /// The gradient flows to a single row per column; among tied rows the
    /// lowest index wins.
    pub fn row_max_pool(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).rows();
        self.segment_max_pool(a, &[0, n])
    }

    /// Column-wise maximum over each row segment `offsets[s]..offsets[s+1]`,
    /// giving one output row per segment.
    pub fn segment_max_pool(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let c = x.cols();
        if offsets.len() < 2 || *offsets.last().unwrap() != x.rows() || offsets[0] != 0 {
            return Err(Error::Contract(format!(
                "segment offsets {offsets:?} do not cover {} rows",
                x.rows()
            )));
        }
        let mut idx = Vec::with_capacity((offsets.len() - 1) * c);
        for w in offsets.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi <= lo {
                return Err(Error::Degenerate("max pool over zero rows"));
            }
            for col in 0..c {
                let mut best = lo;
                for r in lo + 1..hi {
                    if x.get(r, col) > x.get(best, col) {
                        best = r;
                    }
                }
                idx.push(best);
            }
        }
        Ok(self.pick_entries(a, idx.into()))
    }

    fn pick_entries(&mut self, a: Var, idx: Arc<[usize]>) -> Var {
        let x = self.value(a);
        let c = x.cols();
        let s = idx.len().checked_div(c).unwrap_or(0);
        let data = idx
            .iter()
            .enumerate()
            .map(|(i, &r)| x.get(r, i % c))
            .collect();
        let value = Tensor::from_vec(s, c, data);
        self.push(Op::PickEntries { a, idx }, value)
    }

    fn place_entries(&mut self, a: Var, idx: Arc<[usize]>, rows: usize) -> Var {
        let x = self.value(a);
        let c = x.cols();
        let mut out = Tensor::zeros(rows, c);
        for (i, &r) in idx.iter().enumerate() {
            let col = i % c;
            let v = out.get(r, col) + x.data()[i];
            out.set(r, col, v);
        }
        self.push(Op::PlaceEntries { a, idx }, out)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows() != y.rows() {
            return Err(shape_err("concat_cols", x, y));
        }
        let cols = x.cols() + y.cols();
        let mut data = Vec::with_capacity(x.rows() * cols);
        for r in 0..x.rows() {
            data.extend_from_slice(x.row_slice(r));
            data.extend_from_slice(y.row_slice(r));
        }
        let value = Tensor::from_vec(x.rows(), cols, data);
        Ok(self.push(Op::ConcatCols(a, b), value))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(Error::Contract(format!(
                "column slice {start}..{} out of range for {:?}",
                start + len,
                x.shape()
            )));
        }
        let mut data = Vec::with_capacity(x.rows() * len);
        for r in 0..x.rows() {
            data.extend_from_slice(&x.row_slice(r)[start..start + len]);
        }
        let value = Tensor::from_vec(x.rows(), len, data);
        Ok(self.push(Op::SliceCols { a, start }, value))
    }

    fn pad_cols(&mut self, a: Var, start: usize, total: usize) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(x.rows(), total);
        for r in 0..x.rows() {
            for (c, &v) in x.row_slice(r).iter().enumerate() {
                out.set(r, start + c, v);
            }
        }
        self.push(Op::PadCols { a, start }, out)
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(shape_err("concat_rows", x, y));
        }
        let mut data = Vec::with_capacity(x.len() + y.len());
        data.extend_from_slice(x.data());
        data.extend_from_slice(y.data());
        let value = Tensor::from_vec(x.rows() + y.rows(), x.cols(), data);
        Ok(self.push(Op::ConcatRows(a, b), value))
    }

    /// Selects rows by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::Contract(format!(
                "row index {bad} out of range for {:?}",
                x.shape()
            )));
        }
        let mut data = Vec::with_capacity(idx.len() * x.cols());
        for &i in idx.iter() {
            data.extend_from_slice(x.row_slice(i));
        }
        let value = Tensor::from_vec(idx.len(), x.cols(), data);
        Ok(self.push(Op::GatherRows { a, idx }, value))
    }

    fn scatter_add_rows(&mut self, a: Var, idx: Arc<[usize]>, rows: usize) -> Var {
        let x = self.value(a);
        let c = x.cols();
        let mut out = Tensor::zeros(rows, c);
        for (k, &i) in idx.iter().enumerate() {
            let src = x.row_slice(k);
            let dst = &mut out.data_mut()[i * c..(i + 1) * c];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        self.push(Op::ScatterAddRows { a, idx }, out)
    }

    // ---- sparse message passing ----

    /// Sparse-dense product `S · h` where `S` has the given pattern and
    /// entry values `vals` (`nnz x 1`).
    pub fn propagate(&mut self, vals: Var, h: Var, pattern: &Arc<Pattern>) -> Result<Var> {
        self.propagate_t(vals, h, pattern.clone(), false)
    }

    fn propagate_t(
        &mut self,
        vals: Var,
        h: Var,
        pattern: Arc<Pattern>,
        transposed: bool,
    ) -> Result<Var> {
        let (v, x) = (self.value(vals), self.value(h));
        if v.shape() != [pattern.nnz(), 1] {
            return Err(Error::Shape {
                op: "propagate values",
                left: v.shape(),
                right: [pattern.nnz(), 1],
            });
        }
        if x.rows() != pattern.dim() {
            return Err(Error::Shape {
                op: "propagate",
                left: [pattern.dim(), pattern.dim()],
                right: x.shape(),
            });
        }
        let c = x.cols();
        let mut out = Tensor::zeros(pattern.dim(), c);
        let (dst, src) = pattern.endpoints(transposed);
        for k in 0..pattern.nnz() {
            let w = v.data()[k];
            let s = x.row_slice(src[k]);
            let o = &mut out.data_mut()[dst[k] * c..(dst[k] + 1) * c];
            for (o, s) in o.iter_mut().zip(s) {
                *o += w * s;
            }
        }
        Ok(self.push(
            Op::Propagate {
                vals,
                h,
                pattern,
                transposed,
            },
            out,
        ))
    }

    /// Per-entry row dot products: `out[k] = a[row_k] · b[col_k]`.
    pub fn edge_dot(&mut self, a: Var, b: Var, pattern: &Arc<Pattern>) -> Result<Var> {
        self.edge_dot_t(a, b, pattern.clone(), false)
    }

    fn edge_dot_t(
        &mut self,
        a: Var,
        b: Var,
        pattern: Arc<Pattern>,
        transposed: bool,
    ) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() || x.rows() != pattern.dim() {
            return Err(shape_err("edge_dot", x, y));
        }
        let (ra, rb) = pattern.endpoints(transposed);
        let data = (0..pattern.nnz())
            .map(|k| {
                x.row_slice(ra[k])
                    .iter()
                    .zip(y.row_slice(rb[k]))
                    .map(|(p, q)| p * q)
                    .sum()
            })
            .collect();
        let value = Tensor::from_vec(pattern.nnz(), 1, data);
        Ok(self.push(
            Op::EdgeDot {
                a,
                b,
                pattern,
                transposed,
            },
            value,
        ))
    }

    // ---- differentiation ----

    /// Gradients of `loss` with respect to every trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<GradientMap> {
        let leaves: Vec<Var> = (0..=loss.0)
            .filter(|&i| matches!(self.nodes[i].op, Op::Leaf) && self.nodes[i].requires_grad)
            .map(Var)
            .collect();
        let grads = self.gradients(loss, &leaves)?;
        Ok(GradientMap {
            grads: leaves.into_iter().zip(grads).collect(),
        })
    }

    /// Gradient values of `loss` with respect to `wrt`. The tape is left as it
    /// was before the call.
    pub fn gradients(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let mark = self.nodes.len();
        let result = self.grad_graph(loss, wrt).map(|vars| {
            vars.into_iter()
                .map(|v| self.nodes[v.0].value.clone())
                .collect()
        });
        self.nodes.truncate(mark);
        result
    }

    /// Records the gradient computation on the tape and returns the gradient
    /// nodes, which can be differentiated again.
    pub fn grad_graph(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.shape(loss) != [1, 1] {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let end = loss.0 + 1;
        let mut relevant = vec![false; end];
        for w in wrt {
            if w.0 < end {
                relevant[w.0] = true;
            }
        }
        for i in 0..end {
            if !relevant[i] {
                relevant[i] = self.nodes[i]
                    .op
                    .inputs()
                    .iter()
                    .flatten()
                    .any(|v| relevant[v.0]);
            }
        }

        let mut grads: Vec<Option<Var>> = vec![None; end];
        if relevant[loss.0] {
            grads[loss.0] = Some(self.constant(Tensor::scalar(1.0)));
        }
        for i in (0..end).rev() {
            let Some(g) = grads[i] else { continue };
            if !relevant[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let need = |v: Var| relevant[v.0];
            let contributions = self.local_grads(Var(i), &op, g, need)?;
            for (input, contrib) in contributions.into_iter().flatten() {
                grads[input.0] = Some(match grads[input.0] {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib)?,
                });
            }
        }

        wrt.iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let [r, c] = self.shape(*w);
                    Ok(self.constant(Tensor::zeros(r, c)))
                }
            })
            .collect()
    }

    /// Vector-Jacobian products of one node, expressed as new tape nodes.
    fn local_grads(
        &mut self,
        out: Var,
        op: &Op,
        g: Var,
        need: impl Fn(Var) -> bool,
    ) -> Result<[Option<(Var, Var)>; 2]> {
        let mut res: [Option<(Var, Var)>; 2] = [None, None];
        match *op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                if need(a) {
                    let da = if ta {
                        self.matmul_t(b, tb, g, true)?
                    } else {
                        self.matmul_t(g, false, b, !tb)?
                    };
                    res[0] = Some((a, da));
                }
                if need(b) {
                    let db = if tb {
                        self.matmul_t(g, true, a, ta)?
                    } else {
                        self.matmul_t(a, !ta, g, false)?
                    };
                    res[1] = Some((b, db));
                }
            }
            Op::Add(a, b) => {
                if need(a) {
                    res[0] = Some((a, g));
                }
                if need(b) {
                    res[1] = Some((b, g));
                }
            }
            Op::Sub(a, b) => {
                if need(a) {
                    res[0] = Some((a, g));
                }
                if need(b) {
                    res[1] = Some((b, self.scale(g, -1.0)));
                }
            }
            Op::Mul(a, b) => {
                if need(a) {
                    res[0] = Some((a, self.mul(g, b)?));
                }
                if need(b) {
                    res[1] = Some((b, self.mul(g, a)?));
                }
            }
            Op::Scale(a, f) => {
                if need(a) {
                    res[0] = Some((a, self.scale(g, f)));
                }
            }
            Op::AddRow(a, r) => {
                if need(a) {
                    res[0] = Some((a, g));
                }
                if need(r) {
                    res[1] = Some((r, self.col_sum(g)));
                }
            }
            Op::Relu(a) => {
                if need(a) {
                    let m = Arc::new(self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 }));
                    res[0] = Some((a, self.mask(g, m)?));
                }
            }
            Op::Sigmoid(a) => {
                if need(a) {
                    // s (1 - s) = s - s*s, kept on the tape for second order
                    let ss = self.mul(out, out)?;
                    let d = self.sub(out, ss)?;
                    res[0] = Some((a, self.mul(g, d)?));
                }
            }
            Op::Softplus(a) => {
                if need(a) {
                    let s = self.sigmoid(a);
                    res[0] = Some((a, self.mul(g, s)?));
                }
            }
            Op::Abs(a) => {
                if need(a) {
                    let m = Arc::new(self.value(a).map(|x| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }));
                    res[0] = Some((a, self.mask(g, m)?));
                }
            }
            Op::Powf(a, p) => {
                if need(a) {
                    let pm1 = self.powf(a, p - 1.0);
                    let d = self.scale(pm1, p);
                    res[0] = Some((a, self.mul(g, d)?));
                }
            }
            Op::Mask(a, ref m) => {
                if need(a) {
                    res[0] = Some((a, self.mask(g, m.clone())?));
                }
            }
            Op::Maximum(a, b) | Op::Minimum(a, b) => {
                let is_max = matches!(op, Op::Maximum(..));
                let (x, y) = (self.value(a), self.value(b));
                let ma = x.zip_map(y, |p, q| {
                    let pick_a = if is_max { p >= q } else { p <= q };
                    if pick_a {
                        1.0
                    } else {
                        0.0
                    }
                });
                let mb = ma.map(|m| 1.0 - m);
                if need(a) {
                    res[0] = Some((a, self.mask(g, Arc::new(ma))?));
                }
                if need(b) {
                    res[1] = Some((b, self.mask(g, Arc::new(mb))?));
                }
            }
            Op::Transpose(a) => {
                if need(a) {
                    res[0] = Some((a, self.transpose(g)));
                }
            }
            Op::Sum(a) => {
                if need(a) {
                    let shape = self.shape(a);
                    res[0] = Some((a, self.broadcast(g, shape)?));
                }
            }
            Op::Broadcast(a) => {
                if need(a) {
                    res[0] = Some((a, self.sum(g)));
                }
            }
            Op::ColSum(a) => {
                if need(a) {
                    let n = self.shape(a)[0];
                    res[0] = Some((a, self.broadcast_rows(g, n)?));
                }
            }
            Op::BroadcastRows(a) => {
                if need(a) {
                    res[0] = Some((a, self.col_sum(g)));
                }
            }
            Op::PickEntries { a, ref idx } => {
                if need(a) {
                    let rows = self.shape(a)[0];
                    res[0] = Some((a, self.place_entries(g, idx.clone(), rows)));
                }
            }
            Op::PlaceEntries { a, ref idx, .. } => {
                if need(a) {
                    res[0] = Some((a, self.pick_entries(g, idx.clone())));
                }
            }
            Op::ConcatCols(a, b) => {
                let p = self.shape(a)[1];
                let q = self.shape(b)[1];
                if need(a) {
                    res[0] = Some((a, self.slice_cols(g, 0, p)?));
                }
                if need(b) {
                    res[1] = Some((b, self.slice_cols(g, p, q)?));
                }
            }
            Op::SliceCols { a, start, .. } => {
                if need(a) {
                    let total = self.shape(a)[1];
                    res[0] = Some((a, self.pad_cols(g, start, total)));
                }
            }
            Op::PadCols { a, start, .. } => {
                if need(a) {
                    let len = self.shape(a)[1];
                    res[0] = Some((a, self.slice_cols(g, start, len)?));
                }
            }
            Op::ConcatRows(a, b) => {
                let p = self.shape(a)[0];
                let q = self.shape(b)[0];
                if need(a) {
                    res[0] = Some((a, self.gather_rows(g, (0..p).collect())?));
                }
                if need(b) {
                    res[1] = Some((b, self.gather_rows(g, (p..p + q).collect())?));
                }
            }
            Op::GatherRows { a, ref idx } => {
                if need(a) {
                    let rows = self.shape(a)[0];
                    res[0] = Some((a, self.scatter_add_rows(g, idx.clone(), rows)));
                }
            }
            Op::ScatterAddRows { a, ref idx, .. } => {
                if need(a) {
                    res[0] = Some((a, self.gather_rows(g, idx.clone())?));
                }
            }
            Op::Propagate {
                vals,
                h,
                ref pattern,
                transposed,
            } => {
                if need(vals) {
                    let dv = self.edge_dot_t(g, h, pattern.clone(), transposed)?;
                    res[0] = Some((vals, dv));
                }
                if need(h) {
                    let dh = self.propagate_t(vals, g, pattern.clone(), !transposed)?;
                    res[1] = Some((h, dh));
                }
            }
            Op::EdgeDot {
                a,
                b,
                ref pattern,
                transposed,
            } => {
                if need(a) {
                    let da = self.propagate_t(g, b, pattern.clone(), transposed)?;
                    res[0] = Some((a, da));
                }
                if need(b) {
                    let db = self.propagate_t(g, a, pattern.clone(), !transposed)?;
                    res[1] = Some((b, db));
                }
            }
        }
        Ok(res)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn sigmoid_values_and_derivative() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(s).item(), 0.5);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 0.25);
    }

    #[test]
    fn relu_definition() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![-2.0, 3.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 3.0]);
    }

    #[test]
    fn max_pool_definition_and_ties() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[&[1.0, 5.0], &[3.0, 2.0]]));
        let p = tape.row_max_pool(x).unwrap();
        assert_eq!(tape.value(p).data(), &[3.0, 5.0]);

        let y = tape.leaf(t(&[&[2.0], &[2.0], &[1.0]]));
        let q = tape.row_max_pool(y).unwrap();
        let s = tape.sum(q);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(y).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn max_pool_rejects_empty() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(0, 3));
        assert!(matches!(tape.row_max_pool(x), Err(Error::Degenerate(_))));
    }

    #[test]
    fn single_row_pool_is_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[&[4.0, -1.0, 2.0]]));
        let p = tape.row_max_pool(x).unwrap();
        assert_eq!(tape.value(p), tape.value(x));
    }

    #[test]
    fn concat_definition_and_split_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[&[1.0, 2.0]]));
        let b = tape.leaf(t(&[&[3.0]]));
        let c = tape.concat_cols(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);
        let s = tape.sum(c);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(g.get(b).unwrap().data(), &[1.0]);

        let e = tape.constant(Tensor::zeros(1, 0));
        let same = tape.concat_cols(a, e).unwrap();
        assert_eq!(tape.value(same), tape.value(a));
        let bad = tape.constant(Tensor::zeros(2, 1));
        assert!(matches!(tape.concat_cols(a, bad), Err(Error::Shape { .. })));
    }

    #[test]
    fn leaf_loss_has_unit_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(7.0));
        let g = tape.backward(x).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 1.0);
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![3.0]));
        let sq = tape.mul(x, x).unwrap();
        let l = tape.sum(sq);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn sum_of_leaves_gives_exact_ones() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::full(2, 3, 0.3));
        let b = tape.leaf(Tensor::full(2, 3, -1.7));
        let s = tape.add(a, b).unwrap();
        let l = tape.sum(s);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(a).unwrap(), &Tensor::ones(2, 3));
        assert_eq!(g.get(b).unwrap(), &Tensor::ones(2, 3));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::ones(2, 2));
        assert!(matches!(tape.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn gradients_leave_tape_untouched() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::ones(2, 2));
        let s = tape.sum(a);
        let before = tape.len();
        tape.gradients(s, &[a]).unwrap();
        assert_eq!(tape.len(), before);
    }

    #[test]
    fn second_order_through_grad_graph() {
        // f(x) = x^3, f'(x) = 3x^2, f''(x) = 6x
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let x2 = tape.mul(x, x).unwrap();
        let x3 = tape.mul(x2, x).unwrap();
        let dx = tape.grad_graph(x3, &[x]).unwrap()[0];
        assert_eq!(tape.value(dx).item(), 12.0);
        let ddx = tape.gradients(dx, &[x]).unwrap();
        assert_eq!(ddx[0].item(), 12.0);
    }

    #[test]
    fn pattern_rejects_duplicates_and_out_of_range() {
        assert!(Pattern::new(2, vec![(0, 1), (0, 1)]).is_err());
        assert!(Pattern::new(2, vec![(0, 2)]).is_err());
        let p = Pattern::new(3, vec![(2, 0), (0, 1), (0, 0)]).unwrap();
        assert_eq!(p.entry(0), (0, 0));
        assert_eq!(p.entry(2), (2, 0));
    }

    #[test]
    fn propagate_matches_dense_product() {
        let p = Arc::new(Pattern::new(3, vec![(0, 1), (1, 0), (1, 2), (2, 2)]).unwrap());
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::column(vec![2.0, 3.0, -1.0, 0.5]));
        let h = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
        let out = tape.propagate(v, h, &p).unwrap();
        let dense = t(&[&[0.0, 2.0, 0.0], &[3.0, 0.0, -1.0], &[0.0, 0.0, 0.5]]);
        let expect = dense.matmul(tape.value(h)).unwrap();
        assert_eq!(tape.value(out), &expect);
    }
}
