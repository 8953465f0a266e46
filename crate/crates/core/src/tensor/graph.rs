use super::kernels;
use super::{shape_err, Tensor, TensorError, LN_EPS};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ConcatLast(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    TransposeLastTwo(Var),
    MeanLast(Var),
    Sum(Var),
    Reshape(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Sigmoid(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only tape. Recording order is a topological order, and backward
/// walks it in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as data; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient populated by the last [`Graph::backward`], if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor; zeros when nothing flowed into `v`.
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let shape = self.shape(v).to_vec();
        match self.grad(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient matches value shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.derived(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.derived(value, Op::Add(a, b), &[a, b]))
    }

    /// Adds a vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.shape().len() != 1 || tb.len() != ta.row_len() {
            return Err(shape_err("add_row", ta.shape(), tb.shape()));
        }
        let w = ta.row_len();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + tb.data()[i % w])
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.derived(value, Op::AddRow(a, bias), &[a, bias]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.derived(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * factor).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.derived(value, Op::Scale(a, factor), &[a])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let neg = self.scale(b, -1.0);
        self.add(a, neg)
    }

    /// `x·w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn concat_last_axis(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or_else(|| TensorError::Invalid {
            op: "concat_last_axis",
            reason: "nothing to concatenate".into(),
        })?;
        let lead = self.shape(*first)[..self.shape(*first).len().saturating_sub(1)].to_vec();
        for p in parts {
            let s = self.shape(*p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(shape_err("concat_last_axis", self.shape(*first), s));
            }
        }
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).row_len()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, data)?;
        Ok(self.derived(value, Op::ConcatLast(parts.to_vec()), parts))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or_else(|| TensorError::Invalid {
            op: "concat_rows",
            reason: "nothing to concatenate".into(),
        })?;
        let cols = self.shape(*first).get(1).copied();
        let mut rows = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != 2 || Some(s[1]) != cols {
                return Err(shape_err("concat_rows", self.shape(*first), s));
            }
            rows += s[0];
        }
        let cols = cols.unwrap_or(0);
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        Ok(self.derived(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Gathers rows of a matrix; indices may repeat.
    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if ta.shape().len() != 2 {
            return Err(shape_err("select_rows", ta.shape(), &[indices.len()]));
        }
        let (rows, w) = (ta.shape()[0], ta.shape()[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Invalid {
                op: "select_rows",
                reason: format!("row {bad} out of range for {rows} rows"),
            });
        }
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend_from_slice(ta.row(i));
        }
        let value = Tensor::new(vec![indices.len(), w], data)?;
        Ok(self.derived(value, Op::SelectRows(a, indices.to_vec()), &[a]))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let idx: Vec<usize> = (start..start + len).collect();
        self.select_rows(a, &idx)
    }

    pub fn transpose_last_two(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let s = ta.shape();
        if s.len() < 2 {
            return Err(shape_err("transpose_last_two", s, &[]));
        }
        let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
        let batch = ta.len() / (m * n).max(1);
        let mut data = vec![0.0; ta.len()];
        for b in 0..batch {
            let off = b * m * n;
            for i in 0..m {
                for j in 0..n {
                    data[off + j * m + i] = ta.data()[off + i * n + j];
                }
            }
        }
        let mut shape = s.to_vec();
        let r = shape.len();
        shape.swap(r - 2, r - 1);
        let value = Tensor::new(shape, data)?;
        Ok(self.derived(value, Op::TransposeLastTwo(a), &[a]))
    }

    pub fn mean_last_axis(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let s = ta.shape();
        if s.is_empty() || s[s.len() - 1] == 0 {
            return Err(shape_err("mean_last_axis", s, &[]));
        }
        let w = ta.row_len();
        let data = ta
            .data()
            .chunks(w)
            .map(|row| row.iter().sum::<f64>() / w as f64)
            .collect();
        let value = Tensor::new(s[..s.len() - 1].to_vec(), data)?;
        Ok(self.derived(value, Op::MeanLast(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        self.derived(Tensor::scalar(total), Op::Sum(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if shape.iter().product::<usize>() != ta.len() {
            return Err(shape_err("reshape", ta.shape(), shape));
        }
        let value = Tensor::new(shape.to_vec(), ta.data().to_vec())?;
        Ok(self.derived(value, Op::Reshape(a), &[a]))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let w = ta.row_len();
        let mut data = vec![0.0; ta.len()];
        for (row, out) in ta.data().chunks(w).zip(data.chunks_mut(w)) {
            kernels::softmax_row(row, out);
        }
        let value = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.derived(value, Op::SoftmaxRows(a), &[a])
    }

    /// Normalizes each row by its mean and (population) standard deviation,
    /// then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let w = tx.row_len();
        for p in [gamma, beta] {
            let s = self.shape(p);
            if s.len() != 1 || s[0] != w {
                return Err(shape_err("layer_norm", tx.shape(), s));
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = tx.rows();
        let mut xhat = vec![0.0; tx.len()];
        let mut rstd = Vec::with_capacity(rows);
        let mut data = vec![0.0; tx.len()];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(rs);
            for j in 0..w {
                let h = (row[j] - mean) * rs;
                xhat[r * w + j] = h;
                data[r * w + j] = g[j] * h + b[j];
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.derived(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| kernels::gelu(x)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.derived(value, Op::Gelu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| kernels::sigmoid(x)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.derived(value, Op::Sigmoid(a), &[a])
    }

    /// Mean softmax cross-entropy over rows of `logits` (a vector counts as
    /// one row).
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(logits);
        let classes = t.row_len();
        if t.shape().is_empty() || t.shape().len() > 2 || t.rows() != labels.len() {
            return Err(shape_err("cross_entropy", t.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(TensorError::Invalid {
                op: "cross_entropy",
                reason: format!("label {bad} out of range for {classes} classes"),
            });
        }
        let mut probs = vec![0.0; t.len()];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = t.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            kernels::softmax_row(row, &mut probs[r * classes..(r + 1) * classes]);
        }
        let value = Tensor::scalar(loss / labels.len() as f64);
        Ok(self.derived(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse-mode accumulation of `∂loss/∂v` for every recorded `v` that
    /// requires a gradient. Previous gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Invalid {
                op: "backward",
                reason: format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            });
        }
        let Graph { nodes, grads } = self;
        grads.clear();
        grads.resize(nodes.len(), None);
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = Some(g);
                continue;
            }
            propagate(nodes, grads, id, &g)?;
            grads[id] = Some(g);
        }
        Ok(())
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], target: Var, from: usize, f: impl FnOnce(&mut [f64])) -> Result<(), TensorError> {
    if target.0 >= from {
        return Err(TensorError::Internal(format!("node {from} depends on later node {}", target.0)));
    }
    let node = &nodes[target.0];
    if !node.requires_grad {
        return Ok(());
    }
    let buf = grads[target.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
    f(buf);
    Ok(())
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, g: &[f64]) -> Result<(), TensorError> {
    let node = &nodes[id];
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
            accumulate(nodes, grads, *a, id, |buf| kernels::matmul_nt_acc(g, tb.data(), m, k, n, buf))?;
            accumulate(nodes, grads, *b, id, |buf| kernels::matmul_tn_acc(ta.data(), g, m, k, n, buf))?;
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                accumulate(nodes, grads, *v, id, |buf| buf.iter_mut().zip(g).for_each(|(o, x)| *o += x))?;
            }
        }
        Op::AddRow(a, bias) => {
            accumulate(nodes, grads, *a, id, |buf| buf.iter_mut().zip(g).for_each(|(o, x)| *o += x))?;
            let w = val(*bias).len();
            accumulate(nodes, grads, *bias, id, |buf| {
                for row in g.chunks(w) {
                    buf.iter_mut().zip(row).for_each(|(o, x)| *o += x);
                }
            })?;
        }
        Op::Mul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            accumulate(nodes, grads, *a, id, |buf| {
                for ((o, x), y) in buf.iter_mut().zip(g).zip(tb.data()) {
                    *o += x * y;
                }
            })?;
            accumulate(nodes, grads, *b, id, |buf| {
                for ((o, x), y) in buf.iter_mut().zip(g).zip(ta.data()) {
                    *o += x * y;
                }
            })?;
        }
        Op::Scale(a, factor) => {
            accumulate(nodes, grads, *a, id, |buf| buf.iter_mut().zip(g).for_each(|(o, x)| *o += factor * x))?;
        }
        Op::ConcatLast(parts) => {
            let total = node.value.row_len();
            let mut offset = 0;
            for p in parts {
                let w = val(*p).row_len();
                accumulate(nodes, grads, *p, id, |buf| {
                    for (r, out_row) in buf.chunks_mut(w).enumerate() {
                        let src = &g[r * total + offset..r * total + offset + w];
                        out_row.iter_mut().zip(src).for_each(|(o, x)| *o += x);
                    }
                })?;
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for p in parts {
                let len = val(*p).len();
                accumulate(nodes, grads, *p, id, |buf| {
                    buf.iter_mut().zip(&g[offset..offset + len]).for_each(|(o, x)| *o += x)
                })?;
                offset += len;
            }
        }
        Op::SelectRows(a, indices) => {
            let w = val(*a).row_len();
            accumulate(nodes, grads, *a, id, |buf| {
                for (r, &src) in indices.iter().enumerate() {
                    let dst = &mut buf[src * w..(src + 1) * w];
                    dst.iter_mut().zip(&g[r * w..(r + 1) * w]).for_each(|(o, x)| *o += x);
                }
            })?;
        }
        Op::TransposeLastTwo(a) => {
            let s = val(*a).shape();
            let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
            accumulate(nodes, grads, *a, id, |buf| {
                let batch = buf.len() / (m * n).max(1);
                for b in 0..batch {
                    let off = b * m * n;
                    for i in 0..m {
                        for j in 0..n {
                            buf[off + i * n + j] += g[off + j * m + i];
                        }
                    }
                }
            })?;
        }
        Op::MeanLast(a) => {
            let w = val(*a).row_len();
            accumulate(nodes, grads, *a, id, |buf| {
                for (r, row) in buf.chunks_mut(w).enumerate() {
                    let share = g[r] / w as f64;
                    row.iter_mut().for_each(|o| *o += share);
                }
            })?;
        }
        Op::Sum(a) => {
            accumulate(nodes, grads, *a, id, |buf| buf.iter_mut().for_each(|o| *o += g[0]))?;
        }
        Op::Reshape(a) => {
            accumulate(nodes, grads, *a, id, |buf| buf.iter_mut().zip(g).for_each(|(o, x)| *o += x))?;
        }
        Op::SoftmaxRows(a) => {
            let y = node.value.data();
            let w = node.value.row_len();
            accumulate(nodes, grads, *a, id, |buf| {
                for ((out, yr), gr) in buf.chunks_mut(w).zip(y.chunks(w)).zip(g.chunks(w)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..w {
                        out[j] += yr[j] * (gr[j] - dot);
                    }
                }
            })?;
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let w = node.value.row_len();
            let gam = val(*gamma).data();
            accumulate(nodes, grads, *x, id, |buf| {
                let mut dxhat = vec![0.0; w];
                for (r, out) in buf.chunks_mut(w).enumerate() {
                    let gr = &g[r * w..(r + 1) * w];
                    let hr = &xhat[r * w..(r + 1) * w];
                    for j in 0..w {
                        dxhat[j] = gr[j] * gam[j];
                    }
                    let sum_d: f64 = dxhat.iter().sum();
                    let sum_dh: f64 = dxhat.iter().zip(hr).map(|(d, h)| d * h).sum();
                    let scale = rstd[r] / w as f64;
                    for j in 0..w {
                        out[j] += scale * (w as f64 * dxhat[j] - sum_d - hr[j] * sum_dh);
                    }
                }
            })?;
            accumulate(nodes, grads, *gamma, id, |buf| {
                for (gr, hr) in g.chunks(w).zip(xhat.chunks(w)) {
                    for j in 0..w {
                        buf[j] += gr[j] * hr[j];
                    }
                }
            })?;
            accumulate(nodes, grads, *beta, id, |buf| {
                for gr in g.chunks(w) {
                    buf.iter_mut().zip(gr).for_each(|(o, x)| *o += x);
                }
            })?;
        }
        Op::Gelu(a) => {
            let x = val(*a).data();
            accumulate(nodes, grads, *a, id, |buf| {
                for ((o, gi), &xi) in buf.iter_mut().zip(g).zip(x) {
                    *o += gi * kernels::gelu_grad(xi);
                }
            })?;
        }
        Op::Sigmoid(a) => {
            let y = node.value.data();
            accumulate(nodes, grads, *a, id, |buf| {
                for ((o, gi), &yi) in buf.iter_mut().zip(g).zip(y) {
                    *o += gi * yi * (1.0 - yi);
                }
            })?;
        }
        Op::CrossEntropy { logits, labels, probs } => {
            let classes = val(*logits).row_len();
            let share = g[0] / labels.len() as f64;
            accumulate(nodes, grads, *logits, id, |buf| {
                for (r, &label) in labels.iter().enumerate() {
                    for c in 0..classes {
                        let onehot = if c == label { 1.0 } else { 0.0 };
                        buf[r * classes + c] += share * (probs[r * classes + c] - onehot);
                    }
                }
            })?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(g: &mut Graph, rows: usize, cols: usize, data: &[f64]) -> Var {
        g.param(Tensor::new(vec![rows, cols], data.to_vec()).unwrap())
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let x = mat(&mut g, 1, 2, &[0.0, 0.0]);
        let y = g.softmax_rows(x);
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_is_shift_invariant_and_normalized() {
        let mut g = Graph::new();
        let x = mat(&mut g, 2, 3, &[1.0, -2.0, 700.0, 3.0, 3.5, -1.0]);
        let shifted = mat(&mut g, 2, 3, &[11.0, 8.0, 710.0, 3.0, 3.5, -1.0]);
        let (a, b) = (g.softmax_rows(x), g.softmax_rows(shifted));
        for r in 0..2 {
            assert!((g.value(a).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(g.value(a).max_abs_diff(g.value(b)) < 1e-15);
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let mut g = Graph::new();
        let x = mat(&mut g, 1, 4, &[3.0; 4]);
        let gamma = g.param(Tensor::filled(&[4], 1.0));
        let beta = g.param(Tensor::zeros(&[4]));
        let y = g.layer_norm(x, gamma, beta).unwrap();
        assert!(g.value(y).data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = mat(&mut g, 2, 2, &[1.0, -4.0, 0.5, 2.0]);
        let loss = g.sum(x);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn dot_with_self_has_gradient_two_x() {
        let mut g = Graph::new();
        let data = [1.5, -2.0, 0.25];
        let x = g.param(Tensor::vector(data.to_vec()));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        let expected: Vec<f64> = data.iter().map(|v| 2.0 * v).collect();
        assert_eq!(g.grad(x).unwrap(), &expected[..]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let p = g.param(Tensor::vector(vec![3.0, 4.0]));
        let prod = g.mul(c, p).unwrap();
        let loss = g.sum(prod);
        g.backward(loss).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(p).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut g = Graph::new();
        let a = mat(&mut g, 2, 3, &[0.0; 6]);
        let b = mat(&mut g, 2, 3, &[0.0; 6]);
        match g.matmul(a, b) {
            Err(TensorError::Shape { op, left, right }) => {
                assert_eq!(op, "matmul");
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
        let v = g.param(Tensor::vector(vec![0.0; 2]));
        assert!(g.add(a, v).is_err());
        assert!(g.add_row(a, v).is_err());
        assert!(g.concat_rows(&[a, v]).is_err());
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::new();
        let a = mat(&mut g, 1, 2, &[1.0, 2.0]);
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![0.0; 4]));
        let loss = g.cross_entropy(x, &[2]).unwrap();
        assert!((g.value(loss).data()[0] - 4f64.ln()).abs() < 1e-15);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.25, 0.25, -0.75, 0.25]);
        assert!(g.cross_entropy(x, &[4]).is_err());
    }

    #[test]
    fn concat_and_select_shapes() {
        let mut g = Graph::new();
        let a = mat(&mut g, 2, 1, &[1.0, 2.0]);
        let b = mat(&mut g, 2, 2, &[3.0, 4.0, 5.0, 6.0]);
        let c = g.concat_last_axis(&[a, b]).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let t = g.transpose_last_two(b).unwrap();
        assert_eq!(g.value(t).data(), &[3.0, 5.0, 4.0, 6.0]);
        let s = g.select_rows(c, &[1, 1]).unwrap();
        assert_eq!(g.shape(s), &[2, 3]);
        let m = g.mean_last_axis(c).unwrap();
        assert_eq!(g.value(m).data(), &[8.0 / 3.0, 13.0 / 3.0]);
    }
}
