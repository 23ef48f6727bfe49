use std::collections::HashMap;

use super::{axis_layout, check_layer_norm, kernels, ParamId, ParamStore, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Softmax { x: Var, axis: usize },
    LogSoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Transpose(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows { x: Var, idx: Vec<usize> },
    Pick { x: Var, cols: Vec<usize> },
    L2NormalizeRows { x: Var, norms: Vec<f64> },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Single-use record of a forward computation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
/// [`Tape::backward`] consumes the tape and visits each node once in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
    bindings: Vec<(ParamId, Var)>,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    bindings: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to a node, if any flowed into it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for a parameter bound on the tape that produced these gradients.
    pub fn wrt_param(&self, id: ParamId) -> Option<&[f64]> {
        self.bindings
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.wrt(*v))
    }

    /// Adds every bound parameter's gradient into its `grad` slot.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, var) in &self.bindings {
            if let Some(g) = self.wrt(var) {
                store.get_mut(id).accumulate_grad(g);
            }
        }
    }
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

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records an input. Gradients flow into it iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        let value = Tensor {
            grad: None,
            requires_grad: false,
            ..t
        };
        self.push(value, Op::Leaf, needs)
    }

    /// Records a non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    /// Binds a stored parameter. Repeated calls return the same node, so a
    /// parameter used many times accumulates into a single gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).clone());
        self.bound.insert(id, v);
        self.bindings.push((id, v));
        v
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        value.debug_check_finite("tape op");
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            left: self.value(a).shape().to_vec(),
            right: self.value(b).shape().to_vec(),
        }
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.value(v).shape() {
            [m, n] => Ok((*m, *n)),
            s => Err(TensorError::ShapeMismatch {
                op,
                left: s.to_vec(),
                right: vec![],
            }),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.mismatch("add", a, b));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), needs))
    }

    /// Adds a length-`cols` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.value(b).len() != cols {
            return Err(self.mismatch("add_row", x, b));
        }
        let (vx, vb) = (self.value(x), self.value(b));
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(cols) {
            row.iter_mut().zip(vb.data()).for_each(|(o, v)| *o += v);
        }
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        let needs = self.any_grad(&[x, b]);
        Ok(self.push(t, Op::AddRow(x, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.mismatch("mul", a, b));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let vx = self.value(x);
        let t = Tensor::new(vx.shape().to_vec(), vx.data().iter().map(|v| v * s).collect())?;
        let needs = self.any_grad(&[x]);
        Ok(self.push(t, Op::Scale(x, s), needs))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let t = Tensor::new(vx.shape().to_vec(), vx.data().iter().map(|v| v.max(0.0)).collect())?;
        let needs = self.any_grad(&[x]);
        Ok(self.push(t, Op::Relu(x), needs))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let t = Tensor::new(vx.shape().to_vec(), vx.data().iter().map(|&v| kernels::gelu(v)).collect())?;
        let needs = self.any_grad(&[x]);
        Ok(self.push(t, Op::Gelu(x), needs))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x).softmax(axis)?;
        let needs = self.any_grad(&[x]);
        Ok(self.push(t, Op::Softmax { x, axis }, needs))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let mut out = vec![0.0; vx.len()];
        kernels::log_softmax_rows(vx.data(), &mut out, vx.cols());
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        let needs = self.any_grad(&[x]);
        Ok(self.push(t, Op::LogSoftmaxRows(x), needs))
    }

    /// Layer norm over the trailing axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        check_layer_norm(vx, vg, vb, eps)?;
        let cols = vx.cols();
        let mut out = vec![0.0; vx.len()];
        let mut xhat = vec![0.0; vx.len()];
        let mut rstd = vec![0.0; vx.rows()];
        kernels::layer_norm_rows(vx.data(), vg.data(), vb.data(), eps, cols, &mut out, &mut xhat, &mut rstd);
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        let needs = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).transpose()?;
        let needs = self.any_grad(&[x]);
        Ok(self.push(t, Op::Transpose(x), needs))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.matrix_dims("slice_cols", x)?;
        if len == 0 || start + len > n {
            return Err(TensorError::IndexOutOfRange {
                index: start + len,
                len: n,
            });
        }
        let vx = self.value(x);
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&vx.data()[r * n + start..r * n + start + len]);
        }
        let t = Tensor::new(vec![m, len], data)?;
        let needs = self.any_grad(&[x]);
        Ok(self.push(t, Op::SliceCols { x, start }, needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.matrix_dims("concat_cols", parts[0])?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.matrix_dims("concat_cols", p)?;
            if pm != m {
                return Err(self.mismatch("concat_cols", parts[0], p));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let t = Tensor::new(vec![m, n], data)?;
        let needs = self.any_grad(parts);
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Stacks rows of matrices (or vectors, treated as single rows).
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            if self.value(p).cols() != n {
                return Err(self.mismatch("concat_rows", parts[0], p));
            }
            data.extend_from_slice(self.value(p).data());
        }
        let m = data.len() / n;
        let t = Tensor::new(vec![m, n], data)?;
        let needs = self.any_grad(parts);
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), needs))
    }

    /// Selects rows by index (embedding lookup, pooling).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let (rows, cols) = (vx.rows(), vx.cols());
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange { index: i, len: rows });
            }
            data.extend_from_slice(vx.row(i));
        }
        let t = Tensor::new(vec![idx.len(), cols], data)?;
        let needs = self.any_grad(&[x]);
        Ok(self.push(t, Op::GatherRows { x, idx: idx.to_vec() }, needs))
    }

    /// `out[r] = x[r, cols[r]]`, one entry per row.
    pub fn pick(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let (rows, n) = (vx.rows(), vx.cols());
        if cols.len() != rows {
            return Err(TensorError::IndexOutOfRange {
                index: cols.len(),
                len: rows,
            });
        }
        let mut data = Vec::with_capacity(rows);
        for (r, &c) in cols.iter().enumerate() {
            if c >= n {
                return Err(TensorError::IndexOutOfRange { index: c, len: n });
            }
            data.push(vx.data()[r * n + c]);
        }
        let t = Tensor::new(vec![rows], data)?;
        let needs = self.any_grad(&[x]);
        Ok(self.push(t, Op::Pick { x, cols: cols.to_vec() }, needs))
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let cols = vx.cols();
        let mut norms = Vec::with_capacity(vx.rows());
        let mut data = Vec::with_capacity(vx.len());
        for row in vx.data().chunks(cols) {
            let n = kernels::l2_norm(row);
            if n == 0.0 {
                return Err(TensorError::Config("cannot normalize a zero row".into()));
            }
            norms.push(n);
            data.extend(row.iter().map(|v| v / n));
        }
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        let needs = self.any_grad(&[x]);
        Ok(self.push(t, Op::L2NormalizeRows { x, norms }, needs))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().fold(0.0, |a, v| a + v);
        let needs = self.any_grad(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), needs))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let s = vx.data().iter().fold(0.0, |a, v| a + v) / vx.len() as f64;
        let needs = self.any_grad(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), needs))
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(shape.to_vec()));
        }
        self.backward_from(loss, vec![1.0])
    }

    /// Reverse pass seeded with an arbitrary upstream gradient for `out`.
    pub fn backward_from(self, out: Var, seed: Vec<f64>) -> Result<Gradients> {
        if seed.len() != self.value(out).len() {
            return Err(TensorError::ShapeMismatch {
                op: "backward",
                left: self.value(out).shape().to_vec(),
                right: vec![seed.len()],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[out.0].needs_grad {
            grads[out.0] = Some(seed);
        }
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients {
            grads,
            bindings: self.bindings,
        })
    }

    fn propagate(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).cols();
                if wants(*a) {
                    let bv = val(*b).data();
                    kernels::matmul_add_a_bt(dy, bv, slot(grads, *a, m * k), m, n, k);
                }
                if wants(*b) {
                    let av = val(*a).data();
                    kernels::matmul_add_at_b(av, dy, slot(grads, *b, k * n), m, k, n);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        add_into(slot(grads, v, dy.len()), dy);
                    }
                }
            }
            Op::AddRow(x, b) => {
                if wants(*x) {
                    add_into(slot(grads, *x, dy.len()), dy);
                }
                if wants(*b) {
                    let cols = val(*b).len();
                    let g = slot(grads, *b, cols);
                    for row in dy.chunks(cols) {
                        add_into(g, row);
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = val(*b).data();
                    let g = slot(grads, *a, dy.len());
                    for ((g, d), o) in g.iter_mut().zip(dy).zip(bv) {
                        *g += d * o;
                    }
                }
                if wants(*b) {
                    let av = val(*a).data();
                    let g = slot(grads, *b, dy.len());
                    for ((g, d), o) in g.iter_mut().zip(dy).zip(av) {
                        *g += d * o;
                    }
                }
            }
            Op::Scale(x, s) => {
                let g = slot(grads, *x, dy.len());
                for (g, d) in g.iter_mut().zip(dy) {
                    *g += d * s;
                }
            }
            Op::Relu(x) => {
                let xv = val(*x).data();
                let g = slot(grads, *x, dy.len());
                for ((g, d), v) in g.iter_mut().zip(dy).zip(xv) {
                    if *v > 0.0 {
                        *g += d;
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = val(*x).data();
                let g = slot(grads, *x, dy.len());
                for ((g, d), v) in g.iter_mut().zip(dy).zip(xv) {
                    *g += d * kernels::gelu_grad(*v);
                }
            }
            Op::Softmax { x, axis } => {
                let y = &node.value;
                let (outer, len, inner) = axis_layout(y.shape(), *axis).expect("validated in forward");
                let g = slot(grads, *x, dy.len());
                kernels::softmax_axis_backward(y.data(), dy, g, outer, len, inner);
            }
            Op::LogSoftmaxRows(x) => {
                let y = node.value.data();
                let cols = node.value.cols();
                let g = slot(grads, *x, dy.len());
                for ((gr, dr), yr) in g.chunks_mut(cols).zip(dy.chunks(cols)).zip(y.chunks(cols)) {
                    let total = dr.iter().fold(0.0, |a, v| a + v);
                    for ((g, d), y) in gr.iter_mut().zip(dr).zip(yr) {
                        *g += d - y.exp() * total;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let cols = val(*gamma).len();
                let gamma_v = val(*gamma).data().to_vec();
                let mut dx = wants(*x).then(|| vec![0.0; dy.len()]);
                let mut dg = wants(*gamma).then(|| vec![0.0; cols]);
                let mut db = wants(*beta).then(|| vec![0.0; cols]);
                kernels::layer_norm_backward(
                    dy,
                    xhat,
                    rstd,
                    &gamma_v,
                    cols,
                    dx.as_deref_mut(),
                    dg.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (v, d) in [(*x, dx), (*gamma, dg), (*beta, db)] {
                    if let Some(d) = d {
                        add_into(slot(grads, v, d.len()), &d);
                    }
                }
            }
            Op::Transpose(x) => {
                let (m, n) = (node.value.rows(), node.value.cols());
                let t = kernels::transpose(dy, m, n);
                add_into(slot(grads, *x, dy.len()), &t);
            }
            Op::SliceCols { x, start } => {
                let n = val(*x).cols();
                let w = node.value.cols();
                let g = slot(grads, *x, val(*x).len());
                for (r, dr) in dy.chunks(w).enumerate() {
                    add_into(&mut g[r * n + start..r * n + start + w], dr);
                }
            }
            Op::ConcatCols(parts) => {
                let n = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if wants(p) {
                        let g = slot(grads, p, val(p).len());
                        for (r, gr) in g.chunks_mut(w).enumerate() {
                            add_into(gr, &dy[r * n + offset..r * n + offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    if wants(p) {
                        add_into(slot(grads, p, len), &dy[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::GatherRows { x, idx } => {
                let cols = node.value.cols();
                let g = slot(grads, *x, val(*x).len());
                for (dr, &i) in dy.chunks(cols).zip(idx) {
                    add_into(&mut g[i * cols..(i + 1) * cols], dr);
                }
            }
            Op::Pick { x, cols } => {
                let n = val(*x).cols();
                let g = slot(grads, *x, val(*x).len());
                for (r, (&c, d)) in cols.iter().zip(dy).enumerate() {
                    g[r * n + c] += d;
                }
            }
            Op::L2NormalizeRows { x, norms } => {
                let cols = node.value.cols();
                let y = node.value.data();
                let g = slot(grads, *x, dy.len());
                for (r, norm) in norms.iter().enumerate() {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let dr = &dy[r * cols..(r + 1) * cols];
                    let proj = kernels::dot(yr, dr);
                    for c in 0..cols {
                        g[r * cols + c] += (dr[c] - yr[c] * proj) / norm;
                    }
                }
            }
            Op::Sum(x) => {
                let g = slot(grads, *x, val(*x).len());
                g.iter_mut().for_each(|v| *v += dy[0]);
            }
            Op::Mean(x) => {
                let len = val(*x).len();
                let d = dy[0] / len as f64;
                let g = slot(grads, *x, len);
                g.iter_mut().for_each(|v| *v += d);
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1], vec![3.0]).unwrap().with_requires_grad(true));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x), Some(&[6.0][..]));
    }

    #[test]
    fn matmul_sum_gradient_rule() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.0], vec![1.0, 3.0]]).unwrap();
        let mut tape = Tape::new();
        let va = tape.leaf(a.clone().with_requires_grad(true));
        let vb = tape.leaf(b.clone().with_requires_grad(true));
        let c = tape.matmul(va, vb).unwrap();
        let loss = tape.sum(c).unwrap();
        let g = tape.backward(loss).unwrap();
        // dA = 1·Bᵀ: each row of dA is the row sums of B.
        let row_sums: Vec<f64> = (0..3).map(|i| b.row(i).iter().sum()).collect();
        assert_eq!(g.wrt(va).unwrap(), &[row_sums.clone(), row_sums].concat()[..]);
        // dB = Aᵀ·1: each column of dB is the column sums of A.
        let col_sums: Vec<f64> = (0..3).map(|j| a.data()[j] + a.data()[3 + j]).collect();
        let expected: Vec<f64> = col_sums.iter().flat_map(|&s| [s, s]).collect();
        assert_eq!(g.wrt(vb).unwrap(), &expected[..]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]).with_requires_grad(true));
        assert!(matches!(tape.backward(x), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn frozen_inputs_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(&[1, 2], 2.0).with_requires_grad(true));
        let w = tape.constant(Tensor::filled(&[2, 1], 1.0));
        let y = tape.matmul(x, w).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.wrt(w).is_none());
        assert_eq!(g.wrt(x), Some(&[1.0, 1.0][..]));
    }

    #[test]
    fn shared_parameter_accumulates() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::filled(&[1], 2.0).with_requires_grad(true));
        let mut tape = Tape::new();
        let a = tape.param(&store, id);
        let b = tape.param(&store, id);
        assert_eq!(a, b);
        let y = tape.mul(a, b).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        g.accumulate_into(&mut store);
        g.accumulate_into(&mut store);
        assert_eq!(store.get(id).grad(), Some(&[8.0][..]));
    }
}
