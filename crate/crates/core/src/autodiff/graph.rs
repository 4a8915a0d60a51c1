use alloc::vec;
use alloc::vec::Vec;

use super::{AutodiffError, ModelParams, ParamId, Tensor};

/// Lower clamp for probabilities fed to the cross-entropy.
pub const PROB_EPS: f64 = 1e-7;

/// Variance floor of [`Graph::layer_norm_rows`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Param(ParamId),
    Input,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Softmax(Var),
    /// Keeps the per-row `1/σ`.
    LayerNorm(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    RepeatRows(Var),
    Square(Var),
    Bce(Var, Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is already topologically sorted.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of every tracked node after [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Adds the parameter gradients to `params`, in tape order.
    pub fn accumulate_into(&self, params: &mut ModelParams) {
        for &(id, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                params.accumulate(id, g);
            }
        }
    }

    /// Gradient of a parameter or input leaf, or of any tracked
    /// intermediate. `None` for constants and nodes off the loss path.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn col_sums(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, t.cols());
    for i in 0..t.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(t.row(i)) {
            *o += v;
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

impl Graph {
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Copies a parameter onto the tape; backward accumulates into it.
    pub fn param(&mut self, params: &ModelParams, id: ParamId) -> Var {
        self.push(params.value(id).clone(), Op::Param(id), true)
    }

    /// A leaf whose gradient is reported in [`Gradients`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    /// A detached leaf: no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let v = self.value(a).matmul(self.value(b))?;
        let tr = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::MatMul(a, b), tr))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.value(a), self.value(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let tr = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::Add(a, b), tr))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let tr = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::Sub(a, b), tr))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let tr = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::Mul(a, b), tr))
    }

    fn row_vector(&self, op: &'static str, a: Var, row: Var) -> Result<(), AutodiffError> {
        if self.shape(row) != (1, self.shape(a).1) {
            return Err(shape_err(op, self.value(a), self.value(row)));
        }
        Ok(())
    }

    /// `a + 1·row`: adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        self.row_vector("add_row", a, row)?;
        let r = self.value(row).data().to_vec();
        let cols = r.len();
        let mut v = self.value(a).clone();
        for (k, x) in v.data_mut().iter_mut().enumerate() {
            *x += r[k % cols];
        }
        let tr = self.tracked(a) || self.tracked(row);
        Ok(self.push(v, Op::AddRow(a, row), tr))
    }

    /// Scales every row of `a` elementwise by a `1 × cols` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        self.row_vector("mul_row", a, row)?;
        let r = self.value(row).data().to_vec();
        let cols = r.len();
        let mut v = self.value(a).clone();
        for (k, x) in v.data_mut().iter_mut().enumerate() {
            *x *= r[k % cols];
        }
        let tr = self.tracked(a) || self.tracked(row);
        Ok(self.push(v, Op::MulRow(a, row), tr))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        let tr = self.tracked(a);
        self.push(v, Op::Scale(a, k), tr)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let tr = self.tracked(a);
        self.push(v, Op::Transpose(a), tr)
    }

    /// Side-by-side concatenation; all parts need the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = parts.first() else {
            return Err(AutodiffError::EmptyConcat);
        };
        let rows = self.shape(first).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(shape_err("concat_cols", self.value(first), self.value(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            for i in 0..rows {
                for j in 0..t.cols() {
                    let x = t.get(i, j);
                    v.set(i, off + j, x);
                }
            }
            off += t.cols();
        }
        let tr = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), tr))
    }

    /// Stacks parts vertically; all parts need the same column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = parts.first() else {
            return Err(AutodiffError::EmptyConcat);
        };
        let cols = self.shape(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(shape_err("concat_rows", self.value(first), self.value(p)));
            }
            rows += self.shape(p).0;
            data.extend_from_slice(self.value(p).data());
        }
        let v = Tensor::from_vec(rows, cols, data)?;
        let tr = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), tr))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let (rows, cols) = self.shape(a);
        if start + len > cols {
            return Err(AutodiffError::Slice {
                op: "slice_cols",
                start,
                len,
                extent: cols,
            });
        }
        let t = self.value(a);
        let v = Tensor::from_fn(rows, len, |i, j| t.get(i, start + j));
        let tr = self.tracked(a);
        Ok(self.push(v, Op::SliceCols(a, start), tr))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let (rows, cols) = self.shape(a);
        if start + len > rows {
            return Err(AutodiffError::Slice {
                op: "slice_rows",
                start,
                len,
                extent: rows,
            });
        }
        let t = self.value(a);
        let v = Tensor::from_vec(len, cols, t.data()[start * cols..(start + len) * cols].to_vec())?;
        let tr = self.tracked(a);
        Ok(self.push(v, Op::SliceRows(a, start), tr))
    }

    /// `x` for `x ≥ 0`, `slope·x` otherwise.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        let tr = self.tracked(a);
        self.push(v, Op::LeakyRelu(a, slope), tr)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let tr = self.tracked(a);
        self.push(v, Op::Sigmoid(a), tr)
    }

    /// Row-wise softmax. Entries where `mask` is false get weight 0; a row
    /// with no unmasked entry is all zeros.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let (rows, cols) = t.shape();
        if let Some(m) = mask {
            if m.len() != rows * cols {
                return Err(AutodiffError::DataLength {
                    rows,
                    cols,
                    len: m.len(),
                });
            }
        }
        let keep = |k: usize| mask.is_none_or(|m| m[k]);
        let mut v = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let mut max = f64::NEG_INFINITY;
            for j in 0..cols {
                if keep(i * cols + j) {
                    max = max.max(t.get(i, j));
                }
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for j in 0..cols {
                if keep(i * cols + j) {
                    let e = libm::exp(t.get(i, j) - max);
                    v.set(i, j, e);
                    z += e;
                }
            }
            for j in 0..cols {
                let x = v.get(i, j) / z;
                v.set(i, j, x);
            }
        }
        let tr = self.tracked(a);
        Ok(self.push(v, Op::Softmax(a), tr))
    }

    /// Per-row standardization to mean 0, variance 1 (no gain or bias).
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (rows, cols) = t.shape();
        let mut v = Tensor::zeros(rows, cols);
        let mut inv = Vec::with_capacity(rows);
        for i in 0..rows {
            let r = t.row(i);
            let n = cols as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let s = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            for j in 0..cols {
                v.set(i, j, (r[j] - mean) * s);
            }
            inv.push(s);
        }
        let tr = self.tracked(a);
        self.push(v, Op::LayerNorm(a, inv), tr)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let tr = self.tracked(a);
        self.push(v, Op::Sum(a), tr)
    }

    /// Mean of all entries; 0 for an empty tensor.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = if t.is_empty() { 0.0 } else { t.sum() / t.len() as f64 };
        let tr = self.tracked(a);
        self.push(Tensor::scalar(m), Op::Mean(a), tr)
    }

    /// `1 × cols` column means; zeros when there are no rows.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut v = col_sums(t);
        if t.rows() > 0 {
            let n = t.rows() as f64;
            v.data_mut().iter_mut().for_each(|x| *x /= n);
        }
        let tr = self.tracked(a);
        self.push(v, Op::MeanRows(a), tr)
    }

    /// Stacks `n` copies of a `1 × cols` row.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if t.rows() != 1 {
            return Err(shape_err("repeat_rows", t, t));
        }
        let cols = t.cols();
        let v = Tensor::from_fn(n, cols, |_, j| t.get(0, j));
        let tr = self.tracked(a);
        Ok(self.push(v, Op::RepeatRows(a), tr))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        let tr = self.tracked(a);
        self.push(v, Op::Square(a), tr)
    }

    /// `Σ −½·(g·ln l + (1−g)·ln(1−l))` over all entries of `probs`, with
    /// `l` clamped to `[PROB_EPS, 1 − PROB_EPS]`.
    pub fn bce_sum(&mut self, probs: Var, targets: &[f64]) -> Result<Var, AutodiffError> {
        let t = self.value(probs);
        if t.len() != targets.len() {
            return Err(AutodiffError::DataLength {
                rows: t.rows(),
                cols: t.cols(),
                len: targets.len(),
            });
        }
        let loss: f64 = t
            .data()
            .iter()
            .zip(targets)
            .map(|(&l, &g)| bce_term(l, g))
            .sum();
        let tr = self.tracked(probs);
        Ok(self.push(Tensor::scalar(loss), Op::Bce(probs, targets.to_vec()), tr))
    }

    /// Reverse pass from a `1 × 1` loss. Parameter gradients are added to
    /// `params` (repeated calls accumulate); all gradients are returned.
    pub fn backward(&self, loss: Var, params: &mut ModelParams) -> Result<Gradients, AutodiffError> {
        let grads = self.gradients(loss)?;
        grads.accumulate_into(params);
        Ok(grads)
    }

    /// Reverse pass that leaves the parameter set alone; see
    /// [`Gradients::accumulate_into`].
    pub fn gradients(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(AutodiffError::NonScalarLoss { rows: r, cols: c });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut param_nodes = Vec::new();
        if !self.tracked(loss) {
            return Ok(Gradients {
                grads,
                params: param_nodes,
            });
        }
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let send = |grads: &mut Vec<Option<Tensor>>, to: Var, t: Tensor| {
                if !self.nodes[to.0].tracked {
                    return;
                }
                match &mut grads[to.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Param(id) => param_nodes.push((*id, i)),
                Op::Input | Op::Constant => {}
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    if self.tracked(*a) {
                        send(&mut grads, *a, g.matmul_raw(&bv.transpose()));
                    }
                    if self.tracked(*b) {
                        send(&mut grads, *b, av.transpose().matmul_raw(&g));
                    }
                }
                Op::Add(a, b) => {
                    send(&mut grads, *a, g.clone());
                    send(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    send(&mut grads, *a, g.clone());
                    send(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    send(&mut grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                    send(&mut grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
                Op::AddRow(a, row) => {
                    send(&mut grads, *a, g.clone());
                    send(&mut grads, *row, col_sums(&g));
                }
                Op::MulRow(a, row) => {
                    let rv = self.value(*row).data();
                    let cols = rv.len();
                    let mut ga = g.clone();
                    for (k, x) in ga.data_mut().iter_mut().enumerate() {
                        *x *= rv[k % cols];
                    }
                    send(&mut grads, *a, ga);
                    send(&mut grads, *row, col_sums(&g.zip_map(self.value(*a), |x, y| x * y)));
                }
                Op::Scale(a, k) => send(&mut grads, *a, g.map(|x| x * k)),
                Op::Transpose(a) => send(&mut grads, *a, g.transpose()),
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (rows, cols) = self.shape(*p);
                        let part = Tensor::from_fn(rows, cols, |i, j| g.get(i, off + j));
                        off += cols;
                        send(&mut grads, *p, part);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (rows, cols) = self.shape(*p);
                        let part = Tensor::from_fn(rows, cols, |i, j| g.get(off + i, j));
                        off += rows;
                        send(&mut grads, *p, part);
                    }
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = self.shape(*a);
                    let len = g.cols();
                    let part = Tensor::from_fn(rows, cols, |i, j| {
                        if j >= *start && j < start + len {
                            g.get(i, j - start)
                        } else {
                            0.0
                        }
                    });
                    send(&mut grads, *a, part);
                }
                Op::SliceRows(a, start) => {
                    let (rows, cols) = self.shape(*a);
                    let len = g.rows();
                    let part = Tensor::from_fn(rows, cols, |i, j| {
                        if i >= *start && i < start + len {
                            g.get(i - start, j)
                        } else {
                            0.0
                        }
                    });
                    send(&mut grads, *a, part);
                }
                Op::LeakyRelu(a, slope) => {
                    let ga = g.zip_map(self.value(*a), |d, x| if x >= 0.0 { d } else { slope * d });
                    send(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    send(&mut grads, *a, g.zip_map(&node.value, |d, y| d * y * (1.0 - y)));
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let (rows, cols) = y.shape();
                    let mut ga = Tensor::zeros(rows, cols);
                    for i in 0..rows {
                        let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(d, y)| d * y).sum();
                        for j in 0..cols {
                            ga.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                    send(&mut grads, *a, ga);
                }
                Op::LayerNorm(a, inv) => {
                    let y = &node.value;
                    let (rows, cols) = y.shape();
                    let n = cols as f64;
                    let mut ga = Tensor::zeros(rows, cols);
                    for i in 0..rows {
                        let gm = g.row(i).iter().sum::<f64>() / n;
                        let gy = g.row(i).iter().zip(y.row(i)).map(|(d, y)| d * y).sum::<f64>() / n;
                        for j in 0..cols {
                            ga.set(i, j, inv[i] * (g.get(i, j) - gm - y.get(i, j) * gy));
                        }
                    }
                    send(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.shape(*a);
                    send(&mut grads, *a, Tensor::filled(rows, cols, g.data()[0]));
                }
                Op::Mean(a) => {
                    let (rows, cols) = self.shape(*a);
                    if rows * cols > 0 {
                        let d = g.data()[0] / (rows * cols) as f64;
                        send(&mut grads, *a, Tensor::filled(rows, cols, d));
                    }
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = self.shape(*a);
                    if rows > 0 {
                        let n = rows as f64;
                        send(&mut grads, *a, Tensor::from_fn(rows, cols, |_, j| g.get(0, j) / n));
                    }
                }
                Op::RepeatRows(a) => send(&mut grads, *a, col_sums(&g)),
                Op::Square(a) => {
                    send(&mut grads, *a, g.zip_map(self.value(*a), |d, x| 2.0 * x * d));
                }
                Op::Bce(a, targets) => {
                    let d = g.data()[0];
                    let lv = self.value(*a);
                    let mut ga = Tensor::zeros(lv.rows(), lv.cols());
                    for (k, (o, &l)) in ga.data_mut().iter_mut().zip(lv.data()).enumerate() {
                        *o = d * bce_term_grad(l, targets[k]);
                    }
                    send(&mut grads, *a, ga);
                }
            }
            grads[i] = Some(g);
        }
        param_nodes.reverse();
        Ok(Gradients {
            grads,
            params: param_nodes,
        })
    }
}

/// One term `−½·(g·ln l + (1−g)·ln(1−l))` with `l` clamped.
pub fn bce_term(l: f64, g: f64) -> f64 {
    let l = l.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -0.5 * (g * libm::log(l) + (1.0 - g) * libm::log(1.0 - l))
}

fn bce_term_grad(l: f64, g: f64) -> f64 {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&l) {
        return 0.0;
    }
    -0.5 * (g / l - (1.0 - g) / (1.0 - l))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul_is_noop() {
        let mut g = Graph::new();
        let x = g.constant(t(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let i = g.constant(Tensor::identity(3));
        let y = g.matmul(x, i).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn matmul_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(3, 1));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), (2, 1));
        assert!(matches!(g.matmul(b, b), Err(AutodiffError::Shape { op: "matmul", .. })));
    }

    #[test]
    fn concat_widths_add_up() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(4, 32));
        let b = g.constant(Tensor::zeros(4, 32));
        let c = g.concat_cols(&[a, b]).unwrap();
        assert_eq!(g.shape(c), (4, 64));
        let short = g.constant(Tensor::zeros(3, 2));
        assert!(g.concat_cols(&[a, short]).is_err());
    }

    #[test]
    fn leaky_relu_values() {
        let mut g = Graph::new();
        let x = g.constant(t(1, 3, &[0.0, -1.0, 3.0]));
        let y = g.leaky_relu(x, 0.25);
        assert_eq!(g.value(y).data(), &[0.0, -0.25, 3.0]);
    }

    #[test]
    fn sigmoid_at_zero_and_extremes() {
        let mut g = Graph::new();
        let x = g.constant(t(1, 3, &[0.0, -800.0, 800.0]));
        let y = g.sigmoid(x);
        assert_eq!(g.value(y).data(), &[0.5, 0.0, 1.0]);
    }

    #[test]
    fn softmax_uniform_and_masked() {
        let mut g = Graph::new();
        let x = g.constant(t(2, 4, &[2.0; 8]));
        let y = g.softmax_rows(x, None).unwrap();
        assert!(g.value(y).data().iter().all(|v| (v - 0.25).abs() < 1e-15));

        let mask = [true, false, true, false, false, false, false, false];
        let x = g.constant(t(2, 4, &[1.0, 50.0, 1.0, 3.0, 1.0, 2.0, 3.0, 4.0]));
        let y = g.softmax_rows(x, Some(&mask)).unwrap();
        assert_eq!(g.value(y).row(0), &[0.5, 0.0, 0.5, 0.0]);
        assert_eq!(g.value(y).row(1), &[0.0; 4]);
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let mut g = Graph::new();
        let x = g.constant(t(2, 4, &[1.0, 2.0, 3.0, 10.0, -5.0, 0.5, 0.25, 9.0]));
        let y = g.layer_norm_rows(x);
        for i in 0..2 {
            let r = g.value(y).row(i);
            let m: f64 = r.iter().sum::<f64>() / 4.0;
            let v: f64 = r.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn sum_of_squares_grad_is_twice_theta() {
        let mut params = ModelParams::new();
        let id = params.add("theta", t(2, 2, &[1.0, -2.0, 0.5, 3.0])).unwrap();
        let mut g = Graph::new();
        let th = g.param(&params, id);
        let sq = g.square(th);
        let loss = g.sum(sq);
        g.backward(loss, &mut params).unwrap();
        assert_eq!(params.grad(id).data(), &[2.0, -4.0, 1.0, 6.0]);
        // A second pass accumulates.
        g.backward(loss, &mut params).unwrap();
        assert_eq!(params.grad(id).data(), &[4.0, -8.0, 2.0, 12.0]);
        params.zero_grad();
        assert_eq!(params.grad(id).data(), &[0.0; 4]);
    }

    #[test]
    fn detached_inputs_get_no_grad() {
        let mut params = ModelParams::new();
        let id = params.add("w", t(1, 1, &[2.0])).unwrap();
        let mut g = Graph::new();
        let w = g.param(&params, id);
        let c = g.constant(t(1, 1, &[3.0]));
        let x = g.input(t(1, 1, &[5.0]));
        let wc = g.mul(w, c).unwrap();
        let wcx = g.mul(wc, x).unwrap();
        let grads = g.backward(wcx, &mut params).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
        assert_eq!(params.grad(id).data(), &[15.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut params = ModelParams::new();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(2, 1));
        assert_eq!(
            g.backward(x, &mut params).unwrap_err(),
            AutodiffError::NonScalarLoss { rows: 2, cols: 1 }
        );
    }

    #[test]
    fn bce_half_log_two() {
        let mut g = Graph::new();
        let l = g.constant(t(1, 2, &[0.5, 0.5]));
        let loss = g.bce_sum(l, &[1.0, 0.0]).unwrap();
        let expected = 0.5 * core::f64::consts::LN_2;
        assert!((g.value(loss).data()[0] - 2.0 * expected).abs() < 1e-12);
        assert!(bce_term(1.0, 1.0) < 1e-6);
    }

    #[test]
    fn empty_rows_are_fine() {
        let mut params = ModelParams::new();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(0, 3));
        let m = g.mean_rows(x);
        assert_eq!(g.value(m).data(), &[0.0; 3]);
        let s = g.sum(m);
        g.backward(s, &mut params).unwrap();
    }
}
