//! Dynamic reverse-mode tape.
//!
//! Every differentiable kernel records a node holding its output value and
//! whatever it needs to run its adjoint. Nodes are appended in evaluation
//! order, so the node vector is already topologically sorted and `backward`
//! simply walks it in reverse.

use rand::Rng;

use super::linalg::{gemm, Transpose};
use super::{NumericsError, ParamId, ParamStore, Tensor, PROB_FLOOR};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Stack along the leading (row) axis of 2-D inputs.
    Rows,
    /// Join along the last axis.
    Last,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Gather(Var, Vec<usize>),
    Unfold(Var, usize),
    MaxRows(Var, Vec<usize>),
    MeanRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat(Vec<Var>, Axis),
    SliceLast(Var, usize),
    Softmax(Var, f64),
    CrossEntropy(Var, Vec<usize>),
    KlDiv(Var, Tensor),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

#[derive(Debug)]
enum Value {
    Owned(Tensor),
    Param(ParamId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Value,
    requires_grad: bool,
}

/// Single-threaded computation record. Parameters are read in place from the
/// borrowed store and receive their gradients there on [`Tape::backward`].
pub struct Tape<'p> {
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::detached()
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    /// A tape with no parameter store; only inputs and constants can be leaves.
    pub fn detached() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self
                .params
                .expect("param node on a detached tape")
                .get(*id)
                .value(),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Value::Owned(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf that is not a parameter.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        assert!(self.params.is_some(), "param leaf on a detached tape");
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Value::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize), NumericsError> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(NumericsError::Rank {
                op,
                expected: 2,
                shape: s.to_vec(),
            }),
        }
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> NumericsError {
        NumericsError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            Transpose::No,
            self.value(b).data(),
            Transpose::No,
            &mut out,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims2(a, "transpose")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Op::Transpose(a), Tensor::new(vec![n, m], out)?, rg))
    }

    fn zip_with(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(self.mismatch(op, a, b));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), out, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), out, rg))
    }

    /// Adds a vector of length `last_dim(a)` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let tb = self.value(b);
        let c = ta.last_dim();
        if tb.len() != c || ta.rank() == 0 {
            return Err(self.mismatch("add_row", a, b));
        }
        let bias = tb.data();
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(c) {
            for (x, y) in row.iter_mut().zip(bias) {
                *x += y;
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::AddRow(a, b), out, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let out = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x * c).collect())?;
        let rg = self.rg(a);
        Ok(self.push(Op::Scale(a, c), out, rg))
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Result<Tensor, NumericsError> {
        let ta = self.value(a);
        Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = self.map(a, f64::tanh)?;
        let rg = self.rg(a);
        Ok(self.push(Op::Tanh(a), out, rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = self.map(a, |x| x.max(0.0))?;
        let rg = self.rg(a);
        Ok(self.push(Op::Relu(a), out, rg))
    }

    /// Row lookup: `out[k] = a[rows[k]]`. With a parameter table this is an
    /// embedding lookup; its gradient is a scatter-add.
    pub fn gather(&mut self, a: Var, rows: &[usize]) -> Result<Var, NumericsError> {
        let (n, d) = self.dims2(a, "gather")?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(NumericsError::IndexOutOfRange { index: bad, len: n });
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            out.extend_from_slice(&src[r * d..(r + 1) * d]);
        }
        let out = Tensor::new(vec![rows.len(), d], out)?;
        let rg = self.rg(a);
        Ok(self.push(Op::Gather(a, rows.to_vec()), out, rg))
    }

    /// Sliding windows of `width` consecutive rows, each flattened into one
    /// row: `[L, d] -> [L - width + 1, width * d]`.
    pub fn unfold(&mut self, a: Var, width: usize) -> Result<Var, NumericsError> {
        let (l, d) = self.dims2(a, "unfold")?;
        if width == 0 || width > l {
            return Err(NumericsError::Window { width, len: l });
        }
        let src = self.value(a).data();
        let t = l - width + 1;
        let mut out = Vec::with_capacity(t * width * d);
        for start in 0..t {
            out.extend_from_slice(&src[start * d..(start + width) * d]);
        }
        let out = Tensor::new(vec![t, width * d], out)?;
        let rg = self.rg(a);
        Ok(self.push(Op::Unfold(a, width), out, rg))
    }

    /// Column-wise max over rows: `[m, n] -> [n]`.
    pub fn max_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims2(a, "max_rows")?;
        if m == 0 {
            return Err(NumericsError::Empty("max_rows"));
        }
        let src = self.value(a).data();
        let mut arg = vec![0usize; n];
        let mut out = src[..n].to_vec();
        for i in 1..m {
            for j in 0..n {
                let x = src[i * n + j];
                if x > out[j] {
                    out[j] = x;
                    arg[j] = i;
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Op::MaxRows(a, arg), Tensor::vector(out), rg))
    }

    /// Column-wise mean over rows: `[m, n] -> [n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims2(a, "mean_rows")?;
        if m == 0 {
            return Err(NumericsError::Empty("mean_rows"));
        }
        let src = self.value(a).data();
        let mut out = vec![0.0; n];
        for row in src.chunks(n) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let rg = self.rg(a);
        Ok(self.push(Op::MeanRows(a), Tensor::vector(out), rg))
    }

    /// Per-row normalisation over the last axis followed by an affine map.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, NumericsError> {
        let tx = self.value(x);
        let n = tx.last_dim();
        if self.value(gamma).len() != n {
            return Err(self.mismatch("layer_norm", x, gamma));
        }
        if self.value(beta).len() != n {
            return Err(self.mismatch("layer_norm", x, beta));
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = tx.outer_len();
        let mut xhat = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            out,
            rg,
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var, NumericsError> {
        let first = *parts.first().ok_or(NumericsError::Empty("concat"))?;
        let out = match axis {
            Axis::Rows => {
                let (_, c) = self.dims2(first, "concat")?;
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let (r, c2) = self.dims2(p, "concat")?;
                    if c2 != c {
                        return Err(self.mismatch("concat", first, p));
                    }
                    rows += r;
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::new(vec![rows, c], data)?
            }
            Axis::Last => {
                let lead = self.value(first).outer_len();
                let lead_shape = {
                    let s = self.shape(first);
                    s[..s.len().saturating_sub(1)].to_vec()
                };
                let mut total = 0;
                for &p in parts {
                    let s = self.shape(p);
                    if s.len() != lead_shape.len() + 1 || s[..s.len() - 1] != lead_shape[..] {
                        return Err(self.mismatch("concat", first, p));
                    }
                    total += s[s.len() - 1];
                }
                let mut data = Vec::with_capacity(lead * total);
                for r in 0..lead {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(r));
                    }
                }
                let mut shape = lead_shape;
                shape.push(total);
                Tensor::new(shape, data)?
            }
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::Concat(parts.to_vec(), axis), out, rg))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let c = ta.last_dim();
        if ta.rank() == 0 || start + len > c {
            return Err(NumericsError::IndexOutOfRange {
                index: start + len,
                len: c,
            });
        }
        let mut data = Vec::with_capacity(ta.outer_len() * len);
        for r in 0..ta.outer_len() {
            data.extend_from_slice(&ta.row(r)[start..start + len]);
        }
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().expect("rank checked") = len;
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(a);
        Ok(self.push(Op::SliceLast(a, start), out, rg))
    }

    /// Temperature softmax over the last axis, `exp(o_k / T) / sum_j exp(o_j / T)`.
    pub fn softmax_t(&mut self, a: Var, temperature: f64) -> Result<Var, NumericsError> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(NumericsError::Temperature(temperature));
        }
        let out = softmax_rows(self.value(a), temperature);
        let rg = self.rg(a);
        Ok(self.push(Op::Softmax(a, temperature), out, rg))
    }

    /// Mean over the batch of `-ln probs[i, label_i]`. Probabilities below
    /// [`PROB_FLOOR`] are clamped to it and pass no gradient.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var, NumericsError> {
        let (b, c) = self.dims2(probs, "cross_entropy")?;
        if labels.len() != b {
            return Err(NumericsError::LabelCount {
                rows: b,
                labels: labels.len(),
            });
        }
        if b == 0 {
            return Err(NumericsError::Empty("cross_entropy"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(NumericsError::Label { label: bad, classes: c });
        }
        let p = self.value(probs).data();
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -p[i * c + y].max(PROB_FLOOR).ln())
            .sum::<f64>()
            / b as f64;
        let rg = self.rg(probs);
        Ok(self.push(Op::CrossEntropy(probs, labels.to_vec()), Tensor::scalar(loss), rg))
    }

    /// Mean over the batch of `sum_k q_k (ln q_k - ln p_k)`. `q` is a fixed
    /// target; gradient flows into `p` only.
    pub fn kl_div(&mut self, p: Var, q: &Tensor) -> Result<Var, NumericsError> {
        let (b, c) = self.dims2(p, "kl_div")?;
        let tp = self.value(p);
        if q.shape() != tp.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "kl_div",
                left: tp.shape().to_vec(),
                right: q.shape().to_vec(),
            });
        }
        if b == 0 {
            return Err(NumericsError::Empty("kl_div"));
        }
        check_stochastic(tp)?;
        check_stochastic(q)?;
        let loss = kl_rows(tp.data(), q.data(), c) / b as f64;
        let rg = self.rg(p);
        Ok(self.push(Op::KlDiv(p, q.clone()), Tensor::scalar(loss), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        Ok(self.push(Op::Sum(a), Tensor::scalar(s), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(NumericsError::Empty("mean"));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        Ok(self.push(Op::Mean(a), Tensor::scalar(s), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, NumericsError> {
        let out = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(Op::Reshape(a), out, rg))
    }

    /// `x . w + b` for `x: [m, k]`, `w: [k, n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// 1-D convolution over a `[L, d]` sequence with `w: [width * d, f]`,
    /// `b: [f]`, valid padding. Output is `[L - width + 1, f]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, width: usize) -> Result<Var, NumericsError> {
        let windows = self.unfold(x, width)?;
        self.linear(windows, w, b)
    }

    /// Inverted dropout with keep-probability `1 - rate`.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var, NumericsError> {
        if rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let shape = self.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = self.constant(Tensor::new(shape, mask)?);
        self.mul(x, m)
    }

    /// Reverse pass from a scalar `loss`. Node gradients are recomputed from
    /// scratch; parameter gradients accumulate into the store.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g)?;
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var) -> Option<&mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.value(v).len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn acc_with(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if let Some(buf) = self.acc(v) {
            f(buf);
        }
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) -> Result<(), NumericsError> {
        // The op is temporarily swapped out so its payload can be read while
        // the gradient buffers are mutated.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let result = self.backprop_op(i, &op, g);
        self.nodes[i].op = op;
        result
    }

    fn backprop_op(&mut self, i: usize, op: &Op, g: &[f64]) -> Result<(), NumericsError> {
        match op {
            Op::Leaf => {}
            Op::Param(id) => {
                if let Some(store) = self.params {
                    store.accumulate(*id, g);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a, "matmul")?;
                let n = self.shape(*b)[1];
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, Transpose::No, self.value(*b).data(), Transpose::Yes, &mut da);
                    self.acc_with(*a, |buf| add_into(buf, &da));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), Transpose::Yes, g, Transpose::No, &mut db);
                    self.acc_with(*b, |buf| add_into(buf, &db));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims2(*a, "transpose")?;
                self.acc_with(*a, |buf| {
                    for r in 0..m {
                        for c in 0..n {
                            buf[r * n + c] += g[c * m + r];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc_with(*a, |buf| add_into(buf, g));
                self.acc_with(*b, |buf| add_into(buf, g));
            }
            Op::AddRow(a, b) => {
                self.acc_with(*a, |buf| add_into(buf, g));
                let c = self.value(*b).len();
                self.acc_with(*b, |buf| {
                    for row in g.chunks(c) {
                        add_into(buf, row);
                    }
                });
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let d: Vec<f64> = g.iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect();
                    self.acc_with(*a, |buf| add_into(buf, &d));
                }
                if self.rg(*b) {
                    let d: Vec<f64> = g.iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect();
                    self.acc_with(*b, |buf| add_into(buf, &d));
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.acc_with(*a, |buf| {
                    for (b, x) in buf.iter_mut().zip(g) {
                        *b += c * x;
                    }
                });
            }
            Op::Tanh(a) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(self.value(Var(i)).data())
                    .map(|(x, y)| x * (1.0 - y * y))
                    .collect();
                self.acc_with(*a, |buf| add_into(buf, &d));
            }
            Op::Relu(a) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(self.value(Var(i)).data())
                    .map(|(x, y)| if *y > 0.0 { *x } else { 0.0 })
                    .collect();
                self.acc_with(*a, |buf| add_into(buf, &d));
            }
            Op::Gather(a, rows) => {
                let d = self.shape(*a)[1];
                if let (Op::Param(id), Some(store)) = (&self.nodes[a.0].op, self.params) {
                    // Sparse update straight into the parameter's buffer.
                    store.accumulate_rows(*id, rows, d, g);
                } else {
                    self.acc_with(*a, |buf| {
                        for (k, &r) in rows.iter().enumerate() {
                            add_into(&mut buf[r * d..(r + 1) * d], &g[k * d..(k + 1) * d]);
                        }
                    });
                }
            }
            Op::Unfold(a, width) => {
                let d = self.shape(*a)[1];
                let row = width * d;
                let t = g.len() / row.max(1);
                self.acc_with(*a, |buf| {
                    for start in 0..t {
                        add_into(&mut buf[start * d..(start + width) * d], &g[start * row..(start + 1) * row]);
                    }
                });
            }
            Op::MaxRows(a, arg) => {
                let n = arg.len();
                self.acc_with(*a, |buf| {
                    for (j, &r) in arg.iter().enumerate() {
                        buf[r * n + j] += g[j];
                    }
                });
            }
            Op::MeanRows(a) => {
                let (m, n) = self.dims2(*a, "mean_rows")?;
                let inv = 1.0 / m as f64;
                self.acc_with(*a, |buf| {
                    for row in buf.chunks_mut(n) {
                        for (b, x) in row.iter_mut().zip(g) {
                            *b += x * inv;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = self.value(*gamma).len();
                let gam = self.value(*gamma).data().to_vec();
                if self.rg(*gamma) {
                    let mut dg = vec![0.0; n];
                    for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                    self.acc_with(*gamma, |buf| add_into(buf, &dg));
                }
                self.acc_with(*beta, |buf| {
                    for row in g.chunks(n) {
                        add_into(buf, row);
                    }
                });
                if self.rg(*x) {
                    let mut dx = vec![0.0; g.len()];
                    let nf = n as f64;
                    for r in 0..inv_std.len() {
                        let grow = &g[r * n..(r + 1) * n];
                        let hrow = &xhat[r * n..(r + 1) * n];
                        let dh: Vec<f64> = grow.iter().zip(&gam).map(|(a, b)| a * b).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(hrow).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dx[r * n + j] = inv_std[r] / nf * (nf * dh[j] - sum_dh - hrow[j] * sum_dh_h);
                        }
                    }
                    self.acc_with(*x, |buf| add_into(buf, &dx));
                }
            }
            Op::Concat(parts, axis) => match axis {
                Axis::Rows => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        self.acc_with(p, |buf| add_into(buf, &g[offset..offset + len]));
                        offset += len;
                    }
                }
                Axis::Last => {
                    let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).last_dim()).collect();
                    let total: usize = widths.iter().sum();
                    let mut col = 0;
                    for (&p, &w) in parts.iter().zip(&widths) {
                        self.acc_with(p, |buf| {
                            for (r, dst) in buf.chunks_mut(w).enumerate() {
                                add_into(dst, &g[r * total + col..r * total + col + w]);
                            }
                        });
                        col += w;
                    }
                }
            },
            Op::SliceLast(a, start) => {
                let c = self.value(*a).last_dim();
                let len = self.value(Var(i)).last_dim();
                let start = *start;
                self.acc_with(*a, |buf| {
                    for (r, src) in g.chunks(len).enumerate() {
                        add_into(&mut buf[r * c + start..r * c + start + len], src);
                    }
                });
            }
            Op::Softmax(a, t) => {
                let y = self.value(Var(i));
                let c = y.last_dim();
                let mut d = vec![0.0; g.len()];
                for (r, (yrow, grow)) in y.data().chunks(c).zip(g.chunks(c)).enumerate() {
                    let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        d[r * c + j] = yrow[j] * (grow[j] - dot) / t;
                    }
                }
                self.acc_with(*a, |buf| add_into(buf, &d));
            }
            Op::CrossEntropy(p, labels) => {
                let c = self.value(*p).last_dim();
                let b = labels.len() as f64;
                let probs = self.value(*p).data().to_vec();
                let up = g[0];
                self.acc_with(*p, |buf| {
                    for (r, &y) in labels.iter().enumerate() {
                        let v = probs[r * c + y];
                        if v > PROB_FLOOR {
                            buf[r * c + y] -= up / (b * v);
                        }
                    }
                });
            }
            Op::KlDiv(p, q) => {
                let probs = self.value(*p).data().to_vec();
                let b = self.value(*p).outer_len() as f64;
                let up = g[0];
                self.acc_with(*p, |buf| {
                    for ((dst, &pk), &qk) in buf.iter_mut().zip(&probs).zip(q.data()) {
                        if qk > 0.0 && pk > PROB_FLOOR {
                            *dst -= up * qk / (b * pk);
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let up = g[0];
                self.acc_with(*a, |buf| buf.iter_mut().for_each(|b| *b += up));
            }
            Op::Mean(a) => {
                let up = g[0] / self.value(*a).len() as f64;
                self.acc_with(*a, |buf| buf.iter_mut().for_each(|b| *b += up));
            }
            Op::Reshape(a) => {
                self.acc_with(*a, |buf| add_into(buf, g));
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Row-wise temperature softmax over the last axis with max subtraction.
pub fn softmax_rows(t: &Tensor, temperature: f64) -> Tensor {
    let c = t.last_dim();
    let mut out = t.data().to_vec();
    if c > 0 {
        for row in out.chunks_mut(c) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = ((*x - max) / temperature).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("shape preserved")
}

fn kl_rows(p: &[f64], q: &[f64], _c: usize) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(_, &qk)| qk > 0.0)
        .map(|(&pk, &qk)| qk * (qk.max(PROB_FLOOR).ln() - pk.max(PROB_FLOOR).ln()))
        .sum()
}

fn check_stochastic(t: &Tensor) -> Result<(), NumericsError> {
    let c = t.last_dim();
    for r in 0..t.outer_len() {
        let row = &t.data()[r * c..(r + 1) * c];
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&x| x < 0.0) {
            return Err(NumericsError::NotStochastic { row: r, sum: s });
        }
    }
    Ok(())
}
