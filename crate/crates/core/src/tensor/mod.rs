//! Reverse-mode automatic differentiation on a recording tape.
//!
//! A [`Tape`] owns every tensor created during one forward pass and records
//! each operation together with the backward rule needed to propagate
//! gradients. Calling [`Tape::backward`] replays the recorded operations in
//! exact reverse order, accumulating gradients into every tensor that
//! requires them. A tape and its tensors form a single-threaded unit of
//! work; independent tapes may run on parallel threads.
//!
//! All math is 64-bit and row-major.

mod init;
mod optim;
mod regularize;

pub use init::he_init;
pub use optim::{optimizer_step, OptimizerConfig, OptimizerKind, OptimizerState};
pub use regularize::{early_stop_check, EarlyStop, RegularizerConfig};

use crate::error::{Error, Result};
use rand::Rng;

/// Dense n-dimensional array with an optional gradient slot.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || numel != values.len() {
            return Err(Error::Dimension {
                op: "tensor",
                lhs: shape,
                rhs: vec![values.len()],
            });
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; numel],
            grad: None,
        }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![x],
            grad: None,
        }
    }

    /// 1-D tensor, used for biases and other vectors.
    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            values,
            grad: None,
        }
    }

    /// 2-D row vector of shape `[1, n]`.
    pub fn row(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            values,
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    fn accumulate(&mut self, delta: &[f64]) {
        match &mut self.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => self.grad = Some(delta.to_vec()),
        }
    }
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Dropout behaviour switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Backward rule for one recorded operation. Any metadata the rule needs
/// (masks, argmax positions, target classes) is captured at record time.
#[derive(Debug)]
enum Rule {
    Matmul,
    Add { broadcast: Broadcast },
    Sub,
    Mul { broadcast: Broadcast },
    Scale { factor: f64 },
    AddScalar,
    Tanh,
    Sigmoid,
    Relu,
    Softmax,
    Sum,
    Conv1d { stride: usize, dilation: usize },
    MaxPool1d { argmax: Vec<usize> },
    Dropout { keep: Vec<bool>, scale: f64 },
    Gather { indices: Vec<usize> },
    SelectRow { row: usize },
    StackRows,
    ConcatCols,
    ZeroPadRows { before: usize },
    SliceRows { start: usize },
    Reshape,
    CrossEntropy { targets: Vec<usize> },
    MarginLoss { targets: Vec<usize>, m_plus: f64, m_minus: f64, lambda: f64 },
    SquashRows,
    RowNorms,
    CapsPredict { types: usize, classes: usize },
    CapsWeightedSum,
    CapsAgreement,
}

/// Which operand of a binary elementwise op was trailing-broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    None,
    Lhs,
    Rhs,
}

struct Node {
    tensor: Tensor,
    requires_grad: bool,
}

struct Recorded {
    rule: Rule,
    inputs: Vec<Var>,
    output: Var,
}

/// Recording tape: an arena of tensors plus the ordered operation list.
pub struct Tape {
    nodes: Vec<Node>,
    ops: Vec<Recorded>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Toggle the NaN/Inf guard applied to every op output.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    fn push(&mut self, tensor: Tensor, requires_grad: bool) -> Var {
        if self.check_finite {
            assert!(
                tensor.values.iter().all(|v| v.is_finite()),
                "non-finite value produced on tape"
            );
        }
        self.nodes.push(Node {
            tensor,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, rule: Rule, inputs: Vec<Var>, tensor: Tensor) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let out = self.push(tensor, rg);
        self.ops.push(Recorded {
            rule,
            inputs,
            output: out,
        });
        out
    }

    /// Insert a leaf that gradients will be accumulated into.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, true)
    }

    /// Insert a leaf that takes no gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, false)
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn values(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].tensor.values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].tensor.shape
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].tensor.grad()
    }

    fn dim_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Dimension {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    // ---- linear algebra ------------------------------------------------

    /// Matrix product of `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.dim_err("matmul", a, b));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.values(a), self.values(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += x * brow[j];
                }
            }
        }
        Ok(self.record(Rule::Matmul, vec![a, b], Tensor::new(vec![m, n], out)?))
    }

    // ---- elementwise ---------------------------------------------------

    fn broadcast_pair(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(Broadcast::None)
        } else if sb.len() < sa.len() && sa.ends_with(sb) {
            Ok(Broadcast::Rhs)
        } else if sa.len() < sb.len() && sb.ends_with(sa) {
            Ok(Broadcast::Lhs)
        } else {
            Err(self.dim_err(op, a, b))
        }
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        broadcast: Broadcast,
        f: impl Fn(f64, f64) -> f64,
    ) -> Tensor {
        let (av, bv) = (self.values(a), self.values(b));
        match broadcast {
            Broadcast::None => {
                let out: Vec<f64> = av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect();
                Tensor {
                    shape: self.shape(a).to_vec(),
                    values: out,
                    grad: None,
                }
            }
            Broadcast::Rhs => {
                let out: Vec<f64> = av
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, bv[i % bv.len()]))
                    .collect();
                Tensor {
                    shape: self.shape(a).to_vec(),
                    values: out,
                    grad: None,
                }
            }
            Broadcast::Lhs => {
                let out: Vec<f64> = bv
                    .iter()
                    .enumerate()
                    .map(|(i, &y)| f(av[i % av.len()], y))
                    .collect();
                Tensor {
                    shape: self.shape(b).to_vec(),
                    values: out,
                    grad: None,
                }
            }
        }
    }

    /// Elementwise sum; the smaller operand may be trailing-broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.broadcast_pair("add", a, b)?;
        let t = self.binary(a, b, bc, |x, y| x + y);
        Ok(self.record(Rule::Add { broadcast: bc }, vec![a, b], t))
    }

    /// Elementwise difference of equally shaped tensors.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.dim_err("sub", a, b));
        }
        let t = self.binary(a, b, Broadcast::None, |x, y| x - y);
        Ok(self.record(Rule::Sub, vec![a, b], t))
    }

    /// Elementwise product; the smaller operand may be trailing-broadcast.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.broadcast_pair("mul", a, b)?;
        let t = self.binary(a, b, bc, |x, y| x * y);
        Ok(self.record(Rule::Mul { broadcast: bc }, vec![a, b], t))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out: Vec<f64> = self.values(a).iter().map(|&x| x * factor).collect();
        let t = Tensor {
            shape: self.shape(a).to_vec(),
            values: out,
            grad: None,
        };
        self.record(Rule::Scale { factor }, vec![a], t)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.values(a).iter().map(|&x| x + c).collect();
        let t = Tensor {
            shape: self.shape(a).to_vec(),
            values: out,
            grad: None,
        };
        self.record(Rule::AddScalar, vec![a], t)
    }

    fn unary(&mut self, a: Var, rule: Rule, f: impl Fn(f64) -> f64) -> Var {
        let out: Vec<f64> = self.values(a).iter().map(|&x| f(x)).collect();
        let t = Tensor {
            shape: self.shape(a).to_vec(),
            values: out,
            grad: None,
        };
        self.record(rule, vec![a], t)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Rule::Tanh, f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Rule::Sigmoid, sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Rule::Relu, |x| x.max(0.0))
    }

    /// Sum of all entries, yielding a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.values(a).iter().sum();
        self.record(Rule::Sum, vec![a], Tensor::scalar(s))
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let n = *shape.last().expect("softmax on empty shape");
        let av = self.values(a);
        let mut out = vec![0.0; av.len()];
        for r in 0..av.len() / n {
            let row = &av[r * n..(r + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &x) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = (x - max).exp();
                sum += *o;
            }
            for o in &mut out[r * n..(r + 1) * n] {
                *o /= sum;
            }
        }
        let t = Tensor {
            shape,
            values: out,
            grad: None,
        };
        self.record(Rule::Softmax, vec![a], t)
    }

    // ---- sequence ops --------------------------------------------------

    /// Valid cross-correlation of `x: [L, c_in]` with `kernels: [k, c_in, c_out]`.
    pub fn conv1d(&mut self, x: Var, kernels: Var, stride: usize, dilation: usize) -> Result<Var> {
        let (sx, sk) = (self.shape(x), self.shape(kernels));
        if sx.len() != 2 || sk.len() != 3 || sx[1] != sk[1] {
            return Err(self.dim_err("conv1d", x, kernels));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::Config("conv1d stride/dilation must be >= 1".into()));
        }
        let (len, c_in) = (sx[0], sx[1]);
        let (k, c_out) = (sk[0], sk[2]);
        let span = (k - 1) * dilation + 1;
        if len < span {
            return Err(Error::SequenceTooShort {
                len,
                required: span,
            });
        }
        let out_len = (len - span) / stride + 1;
        let (xv, kv) = (self.values(x), self.values(kernels));
        let mut out = vec![0.0; out_len * c_out];
        for p in 0..out_len {
            for j in 0..k {
                let trow = &xv[(p * stride + j * dilation) * c_in..];
                for i in 0..c_in {
                    let xval = trow[i];
                    if xval == 0.0 {
                        continue;
                    }
                    let wrow = &kv[(j * c_in + i) * c_out..(j * c_in + i + 1) * c_out];
                    let orow = &mut out[p * c_out..(p + 1) * c_out];
                    for o in 0..c_out {
                        orow[o] += xval * wrow[o];
                    }
                }
            }
        }
        Ok(self.record(
            Rule::Conv1d { stride, dilation },
            vec![x, kernels],
            Tensor::new(vec![out_len, c_out], out)?,
        ))
    }

    /// Per-channel max over non-overlapping windows; ties go to the first index.
    pub fn maxpool1d(&mut self, x: Var, window: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 {
            return Err(self.dim_err("maxpool1d", x, x));
        }
        let (len, c) = (sx[0], sx[1]);
        if window == 0 || window > len {
            return Err(Error::Pooling { window, len });
        }
        let out_len = len / window;
        let xv = self.values(x);
        let mut out = vec![0.0; out_len * c];
        let mut argmax = vec![0usize; out_len * c];
        for p in 0..out_len {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_t = 0;
                for t in p * window..(p + 1) * window {
                    let v = xv[t * c + ch];
                    if v > best {
                        best = v;
                        best_t = t;
                    }
                }
                out[p * c + ch] = best;
                argmax[p * c + ch] = best_t * c + ch;
            }
        }
        Ok(self.record(
            Rule::MaxPool1d { argmax },
            vec![x],
            Tensor::new(vec![out_len, c], out)?,
        ))
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by `1/(1-p)`.
    /// Eval mode and `p == 0` are the identity.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let scale = 1.0 / (1.0 - p);
        let keep: Vec<bool> = (0..self.values(x).len())
            .map(|_| rng.random::<f64>() >= p)
            .collect();
        let out: Vec<f64> = self
            .values(x)
            .iter()
            .zip(&keep)
            .map(|(&v, &k)| if k { v * scale } else { 0.0 })
            .collect();
        let t = Tensor {
            shape: self.shape(x).to_vec(),
            values: out,
            grad: None,
        };
        Ok(self.record(Rule::Dropout { keep, scale }, vec![x], t))
    }

    /// Row lookup: `table: [V, d]` gathered at `indices` into `[T, d]`.
    /// Backward scatter-adds into the table rows.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(self.dim_err("gather", table, table));
        }
        let (v, d) = (st[0], st[1]);
        if indices.is_empty() {
            return Err(Error::EmptySequence);
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::Label(format!(
                "token id {bad} outside table of {v} rows"
            )));
        }
        let tv = self.values(table);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        Ok(self.record(
            Rule::Gather {
                indices: indices.to_vec(),
            },
            vec![table],
            Tensor::new(vec![indices.len(), d], out)?,
        ))
    }

    /// Extract row `row` of a 2-D tensor as a `[1, c]` row vector.
    pub fn select_row(&mut self, x: Var, row: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 || row >= sx[0] {
            return Err(self.dim_err("select_row", x, x));
        }
        let c = sx[1];
        let out = self.values(x)[row * c..(row + 1) * c].to_vec();
        Ok(self.record(Rule::SelectRow { row }, vec![x], Tensor::row(out)))
    }

    /// Stack `[1, c]` row vectors into an `[n, c]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::EmptySequence);
        }
        let c = match self.shape(rows[0]) {
            [1, c] => *c,
            _ => return Err(self.dim_err("stack_rows", rows[0], rows[0])),
        };
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if self.shape(r) != [1, c] {
                return Err(self.dim_err("stack_rows", rows[0], r));
            }
            out.extend_from_slice(self.values(r));
        }
        Ok(self.record(
            Rule::StackRows,
            rows.to_vec(),
            Tensor::new(vec![rows.len(), c], out)?,
        ))
    }

    /// Concatenate 2-D tensors with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptySequence);
        }
        let rows = self.shape(parts[0])[0];
        let mut total = 0;
        for &p in parts {
            let sp = self.shape(p);
            if sp.len() != 2 || sp[0] != rows {
                return Err(self.dim_err("concat_cols", parts[0], p));
            }
            total += sp[1];
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let c = self.shape(p)[1];
                out.extend_from_slice(&self.values(p)[r * c..(r + 1) * c]);
            }
        }
        Ok(self.record(
            Rule::ConcatCols,
            parts.to_vec(),
            Tensor::new(vec![rows, total], out)?,
        ))
    }

    /// Insert `before`/`after` all-zero rows around a 2-D tensor.
    pub fn zero_pad_rows(&mut self, x: Var, before: usize, after: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 {
            return Err(self.dim_err("zero_pad_rows", x, x));
        }
        let (r, c) = (sx[0], sx[1]);
        let mut out = vec![0.0; (before + r + after) * c];
        out[before * c..(before + r) * c].copy_from_slice(self.values(x));
        Ok(self.record(
            Rule::ZeroPadRows { before },
            vec![x],
            Tensor::new(vec![before + r + after, c], out)?,
        ))
    }

    /// Rows `start..start+len` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 || start + len > sx[0] || len == 0 {
            return Err(self.dim_err("slice_rows", x, x));
        }
        let c = sx[1];
        let out = self.values(x)[start * c..(start + len) * c].to_vec();
        Ok(self.record(
            Rule::SliceRows { start },
            vec![x],
            Tensor::new(vec![len, c], out)?,
        ))
    }

    /// Reinterpret the value buffer under a new shape of equal size.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.values(x).len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape,
            });
        }
        let t = Tensor {
            shape,
            values: self.values(x).to_vec(),
            grad: None,
        };
        Ok(self.record(Rule::Reshape, vec![x], t))
    }

    // ---- losses ----------------------------------------------------------

    /// Mean over the batch of `-log softmax(logits)[target]`.
    /// `targets` holds one-hot rows aligned with the logit rows.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Vec<f64>]) -> Result<Var> {
        let sl = self.shape(logits).to_vec();
        if sl.len() != 2 || sl[0] != targets.len() {
            return Err(Error::Label(format!(
                "logits {:?} do not match {} target rows",
                sl,
                targets.len()
            )));
        }
        let idx = one_hot_indices(targets, sl[1])?;
        let (n, c) = (sl[0], sl[1]);
        let lv = self.values(logits);
        let mut total = 0.0;
        for (r, &t) in idx.iter().enumerate() {
            let row = &lv[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        Ok(self.record(
            Rule::CrossEntropy { targets: idx },
            vec![logits],
            Tensor::scalar(total / n as f64),
        ))
    }

    /// Capsule margin loss, mean over the batch:
    /// `sum_k T_k max(0, m_plus - v_k)^2 + lambda (1 - T_k) max(0, v_k - m_minus)^2`.
    pub fn margin_loss(
        &mut self,
        norms: Var,
        targets: &[Vec<f64>],
        m_plus: f64,
        m_minus: f64,
        lambda: f64,
    ) -> Result<Var> {
        let sl = self.shape(norms).to_vec();
        if sl.len() != 2 || sl[0] != targets.len() {
            return Err(Error::Label(format!(
                "norms {:?} do not match {} target rows",
                sl,
                targets.len()
            )));
        }
        let idx = one_hot_indices(targets, sl[1])?;
        let (n, c) = (sl[0], sl[1]);
        let nv = self.values(norms);
        let mut total = 0.0;
        for (r, &t) in idx.iter().enumerate() {
            for k in 0..c {
                let v = nv[r * c + k];
                if k == t {
                    total += (m_plus - v).max(0.0).powi(2);
                } else {
                    total += lambda * (v - m_minus).max(0.0).powi(2);
                }
            }
        }
        Ok(self.record(
            Rule::MarginLoss {
                targets: idx,
                m_plus,
                m_minus,
                lambda,
            },
            vec![norms],
            Tensor::scalar(total / n as f64),
        ))
    }

    // ---- capsule primitives ----------------------------------------------

    /// Norm-bounding capsule nonlinearity applied to each row:
    /// `v = s * |s| / (1 + |s|^2)`; a zero row stays zero.
    pub fn squash_rows(&mut self, s: Var) -> Result<Var> {
        let sx = self.shape(s);
        if sx.len() != 2 {
            return Err(self.dim_err("squash_rows", s, s));
        }
        let (r, d) = (sx[0], sx[1]);
        let sv = self.values(s);
        let mut out = vec![0.0; r * d];
        for i in 0..r {
            let row = &sv[i * d..(i + 1) * d];
            let norm = l2_norm(row);
            let factor = norm / (1.0 + norm * norm);
            for j in 0..d {
                out[i * d + j] = row[j] * factor;
            }
        }
        Ok(self.record(
            Rule::SquashRows,
            vec![s],
            Tensor::new(vec![r, d], out)?,
        ))
    }

    /// Row-wise Euclidean norms of `[r, d]`, returned as a `[1, r]` row vector.
    pub fn row_norms(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 {
            return Err(self.dim_err("row_norms", x, x));
        }
        let (r, d) = (sx[0], sx[1]);
        let xv = self.values(x);
        let out: Vec<f64> = (0..r).map(|i| l2_norm(&xv[i * d..(i + 1) * d])).collect();
        Ok(self.record(Rule::RowNorms, vec![x], Tensor::row(out)))
    }

    /// Prediction vectors for routing. Input capsules `u: [P*types, d_in]`
    /// (position-major), shared transforms `w: [types*classes, d_in, d_out]`,
    /// output `[P*types, classes, d_out]`.
    pub fn caps_predict(&mut self, u: Var, w: Var, types: usize, classes: usize) -> Result<Var> {
        let (su, sw) = (self.shape(u), self.shape(w));
        if su.len() != 2
            || sw.len() != 3
            || sw[0] != types * classes
            || sw[1] != su[1]
            || su[0] % types != 0
        {
            return Err(self.dim_err("caps_predict", u, w));
        }
        let (i_total, d_in) = (su[0], su[1]);
        let d_out = sw[2];
        let (uv, wv) = (self.values(u), self.values(w));
        let mut out = vec![0.0; i_total * classes * d_out];
        for i in 0..i_total {
            let t = i % types;
            let urow = &uv[i * d_in..(i + 1) * d_in];
            for j in 0..classes {
                let wmat = &wv[(t * classes + j) * d_in * d_out..];
                let orow = &mut out[(i * classes + j) * d_out..(i * classes + j + 1) * d_out];
                for p in 0..d_in {
                    let x = urow[p];
                    if x == 0.0 {
                        continue;
                    }
                    for q in 0..d_out {
                        orow[q] += x * wmat[p * d_out + q];
                    }
                }
            }
        }
        Ok(self.record(
            Rule::CapsPredict { types, classes },
            vec![u, w],
            Tensor::new(vec![i_total, classes, d_out], out)?,
        ))
    }

    /// `s[j] = sum_i c[i, j] * uhat[i, j]` for `uhat: [I, J, D]`, `c: [I, J]`.
    pub fn caps_weighted_sum(&mut self, uhat: Var, c: Var) -> Result<Var> {
        let (su, sc) = (self.shape(uhat), self.shape(c));
        if su.len() != 3 || sc.len() != 2 || sc[0] != su[0] || sc[1] != su[1] {
            return Err(self.dim_err("caps_weighted_sum", uhat, c));
        }
        let (i_total, j_total, d) = (su[0], su[1], su[2]);
        let (uv, cv) = (self.values(uhat), self.values(c));
        let mut out = vec![0.0; j_total * d];
        for i in 0..i_total {
            for j in 0..j_total {
                let w = cv[i * j_total + j];
                let urow = &uv[(i * j_total + j) * d..(i * j_total + j + 1) * d];
                let orow = &mut out[j * d..(j + 1) * d];
                for q in 0..d {
                    orow[q] += w * urow[q];
                }
            }
        }
        Ok(self.record(
            Rule::CapsWeightedSum,
            vec![uhat, c],
            Tensor::new(vec![j_total, d], out)?,
        ))
    }

    /// Agreement `a[i, j] = uhat[i, j] . v[j]` for `uhat: [I, J, D]`, `v: [J, D]`.
    pub fn caps_agreement(&mut self, uhat: Var, v: Var) -> Result<Var> {
        let (su, sv) = (self.shape(uhat), self.shape(v));
        if su.len() != 3 || sv.len() != 2 || sv[0] != su[1] || sv[1] != su[2] {
            return Err(self.dim_err("caps_agreement", uhat, v));
        }
        let (i_total, j_total, d) = (su[0], su[1], su[2]);
        let (uv, vv) = (self.values(uhat), self.values(v));
        let mut out = vec![0.0; i_total * j_total];
        for i in 0..i_total {
            for j in 0..j_total {
                let urow = &uv[(i * j_total + j) * d..(i * j_total + j + 1) * d];
                let vrow = &vv[j * d..(j + 1) * d];
                out[i * j_total + j] = urow.iter().zip(vrow).map(|(&a, &b)| a * b).sum();
            }
        }
        Ok(self.record(
            Rule::CapsAgreement,
            vec![uhat, v],
            Tensor::new(vec![i_total, j_total], out)?,
        ))
    }

    // ---- backward pass -----------------------------------------------------

    /// Replay the tape in reverse from a scalar loss, accumulating gradients
    /// into every tensor that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.values(loss).len() != 1 {
            return Err(Error::Training(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.nodes[loss.0].tensor.grad = Some(vec![1.0]);
        for op_idx in (0..self.ops.len()).rev() {
            self.backward_op(op_idx);
        }
        Ok(())
    }

    fn backward_op(&mut self, op_idx: usize) {
        let (output, needs) = {
            let rec = &self.ops[op_idx];
            let needs = rec.inputs.iter().any(|v| self.nodes[v.0].requires_grad);
            (rec.output, needs)
        };
        if !needs || self.nodes[output.0].tensor.grad.is_none() {
            return;
        }
        let go = self.nodes[output.0].tensor.grad.take().expect("grad present");
        let rec = &self.ops[op_idx];
        let inputs = rec.inputs.clone();

        match &rec.rule {
            Rule::Matmul => {
                let (a, b) = (inputs[0], inputs[1]);
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                let av = self.nodes[a.0].tensor.values.clone();
                let bv = self.nodes[b.0].tensor.values.clone();
                if self.nodes[a.0].requires_grad {
                    // dA = dOut . B^T
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += go[i * n + j] * bv[p * n + j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    self.nodes[a.0].tensor.accumulate(&da);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = A^T . dOut
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += x * go[i * n + j];
                            }
                        }
                    }
                    self.nodes[b.0].tensor.accumulate(&db);
                }
            }
            Rule::Add { broadcast } => {
                let bc = *broadcast;
                self.binary_backward(inputs[0], inputs[1], bc, &go, |_, _, g| (g, g));
            }
            Rule::Sub => {
                if self.nodes[inputs[0].0].requires_grad {
                    self.nodes[inputs[0].0].tensor.accumulate(&go);
                }
                if self.nodes[inputs[1].0].requires_grad {
                    let neg: Vec<f64> = go.iter().map(|&g| -g).collect();
                    self.nodes[inputs[1].0].tensor.accumulate(&neg);
                }
            }
            Rule::Mul { broadcast } => {
                let bc = *broadcast;
                self.binary_backward(inputs[0], inputs[1], bc, &go, |x, y, g| (g * y, g * x));
            }
            Rule::Scale { factor } => {
                let f = *factor;
                if self.nodes[inputs[0].0].requires_grad {
                    let d: Vec<f64> = go.iter().map(|&g| g * f).collect();
                    self.nodes[inputs[0].0].tensor.accumulate(&d);
                }
            }
            Rule::AddScalar => {
                if self.nodes[inputs[0].0].requires_grad {
                    self.nodes[inputs[0].0].tensor.accumulate(&go);
                }
            }
            Rule::Tanh => {
                let y = self.nodes[rec.output.0].tensor.values.clone();
                let d: Vec<f64> = go.iter().zip(&y).map(|(&g, &t)| g * (1.0 - t * t)).collect();
                self.nodes[inputs[0].0].tensor.accumulate(&d);
            }
            Rule::Sigmoid => {
                let y = self.nodes[rec.output.0].tensor.values.clone();
                let d: Vec<f64> = go.iter().zip(&y).map(|(&g, &s)| g * s * (1.0 - s)).collect();
                self.nodes[inputs[0].0].tensor.accumulate(&d);
            }
            Rule::Relu => {
                let x = self.nodes[inputs[0].0].tensor.values.clone();
                let d: Vec<f64> = go
                    .iter()
                    .zip(&x)
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                self.nodes[inputs[0].0].tensor.accumulate(&d);
            }
            Rule::Softmax => {
                let y = self.nodes[rec.output.0].tensor.values.clone();
                let n = *self.shape(rec.output).last().expect("softmax shape");
                let mut d = vec![0.0; y.len()];
                for r in 0..y.len() / n {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &go[r * n..(r + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        d[r * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.nodes[inputs[0].0].tensor.accumulate(&d);
            }
            Rule::Sum => {
                let n = self.nodes[inputs[0].0].tensor.numel();
                self.nodes[inputs[0].0].tensor.accumulate(&vec![go[0]; n]);
            }
            Rule::Conv1d { stride, dilation } => {
                let (stride, dilation) = (*stride, *dilation);
                let (x, kern) = (inputs[0], inputs[1]);
                let (c_in, k, c_out) = (
                    self.shape(x)[1],
                    self.shape(kern)[0],
                    self.shape(kern)[2],
                );
                let out_len = self.shape(rec.output)[0];
                let xv = self.nodes[x.0].tensor.values.clone();
                let kv = self.nodes[kern.0].tensor.values.clone();
                if self.nodes[x.0].requires_grad {
                    let mut dx = vec![0.0; xv.len()];
                    for p in 0..out_len {
                        for j in 0..k {
                            let base = (p * stride + j * dilation) * c_in;
                            for i in 0..c_in {
                                let wrow = &kv[(j * c_in + i) * c_out..(j * c_in + i + 1) * c_out];
                                let grow = &go[p * c_out..(p + 1) * c_out];
                                let mut s = 0.0;
                                for o in 0..c_out {
                                    s += grow[o] * wrow[o];
                                }
                                dx[base + i] += s;
                            }
                        }
                    }
                    self.nodes[x.0].tensor.accumulate(&dx);
                }
                if self.nodes[kern.0].requires_grad {
                    let mut dw = vec![0.0; kv.len()];
                    for p in 0..out_len {
                        for j in 0..k {
                            let base = (p * stride + j * dilation) * c_in;
                            for i in 0..c_in {
                                let xval = xv[base + i];
                                if xval == 0.0 {
                                    continue;
                                }
                                let grow = &go[p * c_out..(p + 1) * c_out];
                                let wrow =
                                    &mut dw[(j * c_in + i) * c_out..(j * c_in + i + 1) * c_out];
                                for o in 0..c_out {
                                    wrow[o] += xval * grow[o];
                                }
                            }
                        }
                    }
                    self.nodes[kern.0].tensor.accumulate(&dw);
                }
            }
            Rule::MaxPool1d { argmax } => {
                let n = self.nodes[inputs[0].0].tensor.numel();
                let mut dx = vec![0.0; n];
                for (o, &src) in argmax.iter().enumerate() {
                    dx[src] += go[o];
                }
                self.nodes[inputs[0].0].tensor.accumulate(&dx);
            }
            Rule::Dropout { keep, scale } => {
                let scale = *scale;
                let d: Vec<f64> = go
                    .iter()
                    .zip(keep)
                    .map(|(&g, &k)| if k { g * scale } else { 0.0 })
                    .collect();
                self.nodes[inputs[0].0].tensor.accumulate(&d);
            }
            Rule::Gather { indices } => {
                let d = self.shape(inputs[0])[1];
                let mut dt = vec![0.0; self.nodes[inputs[0].0].tensor.numel()];
                for (r, &i) in indices.iter().enumerate() {
                    for j in 0..d {
                        dt[i * d + j] += go[r * d + j];
                    }
                }
                self.nodes[inputs[0].0].tensor.accumulate(&dt);
            }
            Rule::SelectRow { row } => {
                let c = self.shape(inputs[0])[1];
                let mut dx = vec![0.0; self.nodes[inputs[0].0].tensor.numel()];
                dx[row * c..(row + 1) * c].copy_from_slice(&go);
                self.nodes[inputs[0].0].tensor.accumulate(&dx);
            }
            Rule::StackRows => {
                let c = self.shape(rec.output)[1];
                for (r, &inp) in inputs.iter().enumerate() {
                    if self.nodes[inp.0].requires_grad {
                        self.nodes[inp.0]
                            .tensor
                            .accumulate(&go[r * c..(r + 1) * c]);
                    }
                }
            }
            Rule::ConcatCols => {
                let rows = self.shape(rec.output)[0];
                let total = self.shape(rec.output)[1];
                let mut offset = 0;
                for &inp in &inputs {
                    let c = self.shape(inp)[1];
                    if self.nodes[inp.0].requires_grad {
                        let mut d = vec![0.0; rows * c];
                        for r in 0..rows {
                            d[r * c..(r + 1) * c]
                                .copy_from_slice(&go[r * total + offset..r * total + offset + c]);
                        }
                        self.nodes[inp.0].tensor.accumulate(&d);
                    }
                    offset += c;
                }
            }
            Rule::ZeroPadRows { before } => {
                let c = self.shape(inputs[0])[1];
                let r = self.shape(inputs[0])[0];
                self.nodes[inputs[0].0]
                    .tensor
                    .accumulate(&go[before * c..(before + r) * c]);
            }
            Rule::SliceRows { start } => {
                let c = self.shape(inputs[0])[1];
                let len = self.shape(rec.output)[0];
                let mut d = vec![0.0; self.nodes[inputs[0].0].tensor.numel()];
                d[start * c..(start + len) * c].copy_from_slice(&go);
                self.nodes[inputs[0].0].tensor.accumulate(&d);
            }
            Rule::Reshape => {
                self.nodes[inputs[0].0].tensor.accumulate(&go);
            }
            Rule::CrossEntropy { targets } => {
                let (n, c) = (self.shape(inputs[0])[0], self.shape(inputs[0])[1]);
                let lv = self.nodes[inputs[0].0].tensor.values.clone();
                let mut d = vec![0.0; n * c];
                for (r, &t) in targets.iter().enumerate() {
                    let row = &lv[r * c..(r + 1) * c];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    for j in 0..c {
                        let p = exps[j] / sum;
                        d[r * c + j] =
                            go[0] * (p - if j == t { 1.0 } else { 0.0 }) / n as f64;
                    }
                }
                self.nodes[inputs[0].0].tensor.accumulate(&d);
            }
            Rule::MarginLoss {
                targets,
                m_plus,
                m_minus,
                lambda,
            } => {
                let (m_plus, m_minus, lambda) = (*m_plus, *m_minus, *lambda);
                let (n, c) = (self.shape(inputs[0])[0], self.shape(inputs[0])[1]);
                let nv = self.nodes[inputs[0].0].tensor.values.clone();
                let mut d = vec![0.0; n * c];
                for (r, &t) in targets.iter().enumerate() {
                    for k in 0..c {
                        let v = nv[r * c + k];
                        let dv = if k == t {
                            -2.0 * (m_plus - v).max(0.0)
                        } else {
                            lambda * 2.0 * (v - m_minus).max(0.0)
                        };
                        d[r * c + k] = go[0] * dv / n as f64;
                    }
                }
                self.nodes[inputs[0].0].tensor.accumulate(&d);
            }
            Rule::SquashRows => {
                let (r, dim) = (self.shape(inputs[0])[0], self.shape(inputs[0])[1]);
                let sv = self.nodes[inputs[0].0].tensor.values.clone();
                let mut d = vec![0.0; r * dim];
                for i in 0..r {
                    let row = &sv[i * dim..(i + 1) * dim];
                    let gr = &go[i * dim..(i + 1) * dim];
                    let norm = l2_norm(row);
                    if norm < 1e-30 {
                        continue;
                    }
                    let denom = 1.0 + norm * norm;
                    let factor = norm / denom;
                    // d factor / d norm
                    let dfac = (1.0 - norm * norm) / (denom * denom);
                    let dot: f64 = gr.iter().zip(row).map(|(&g, &s)| g * s).sum();
                    for j in 0..dim {
                        d[i * dim + j] = factor * gr[j] + dfac * row[j] / norm * dot;
                    }
                }
                self.nodes[inputs[0].0].tensor.accumulate(&d);
            }
            Rule::RowNorms => {
                let (r, dim) = (self.shape(inputs[0])[0], self.shape(inputs[0])[1]);
                let xv = self.nodes[inputs[0].0].tensor.values.clone();
                let mut d = vec![0.0; r * dim];
                for i in 0..r {
                    let row = &xv[i * dim..(i + 1) * dim];
                    let norm = l2_norm(row);
                    if norm < 1e-30 {
                        continue;
                    }
                    for j in 0..dim {
                        d[i * dim + j] = go[i] * row[j] / norm;
                    }
                }
                self.nodes[inputs[0].0].tensor.accumulate(&d);
            }
            Rule::CapsPredict { types, classes } => {
                let (types, classes) = (*types, *classes);
                let (u, w) = (inputs[0], inputs[1]);
                let (i_total, d_in) = (self.shape(u)[0], self.shape(u)[1]);
                let d_out = self.shape(w)[2];
                let uv = self.nodes[u.0].tensor.values.clone();
                let wv = self.nodes[w.0].tensor.values.clone();
                if self.nodes[u.0].requires_grad {
                    let mut du = vec![0.0; uv.len()];
                    for i in 0..i_total {
                        let t = i % types;
                        for j in 0..classes {
                            let wmat = &wv[(t * classes + j) * d_in * d_out..];
                            let gr = &go[(i * classes + j) * d_out..(i * classes + j + 1) * d_out];
                            for p in 0..d_in {
                                let mut s = 0.0;
                                for q in 0..d_out {
                                    s += gr[q] * wmat[p * d_out + q];
                                }
                                du[i * d_in + p] += s;
                            }
                        }
                    }
                    self.nodes[u.0].tensor.accumulate(&du);
                }
                if self.nodes[w.0].requires_grad {
                    let mut dw = vec![0.0; wv.len()];
                    for i in 0..i_total {
                        let t = i % types;
                        let urow = &uv[i * d_in..(i + 1) * d_in];
                        for j in 0..classes {
                            let gr = &go[(i * classes + j) * d_out..(i * classes + j + 1) * d_out];
                            let wmat = &mut dw[(t * classes + j) * d_in * d_out
                                ..(t * classes + j + 1) * d_in * d_out];
                            for p in 0..d_in {
                                let x = urow[p];
                                if x == 0.0 {
                                    continue;
                                }
                                for q in 0..d_out {
                                    wmat[p * d_out + q] += x * gr[q];
                                }
                            }
                        }
                    }
                    self.nodes[w.0].tensor.accumulate(&dw);
                }
            }
            Rule::CapsWeightedSum => {
                let (uhat, c) = (inputs[0], inputs[1]);
                let (i_total, j_total, d) = (
                    self.shape(uhat)[0],
                    self.shape(uhat)[1],
                    self.shape(uhat)[2],
                );
                let uv = self.nodes[uhat.0].tensor.values.clone();
                let cv = self.nodes[c.0].tensor.values.clone();
                if self.nodes[uhat.0].requires_grad {
                    let mut du = vec![0.0; uv.len()];
                    for i in 0..i_total {
                        for j in 0..j_total {
                            let w = cv[i * j_total + j];
                            for q in 0..d {
                                du[(i * j_total + j) * d + q] += w * go[j * d + q];
                            }
                        }
                    }
                    self.nodes[uhat.0].tensor.accumulate(&du);
                }
                if self.nodes[c.0].requires_grad {
                    let mut dc = vec![0.0; cv.len()];
                    for i in 0..i_total {
                        for j in 0..j_total {
                            let mut s = 0.0;
                            for q in 0..d {
                                s += uv[(i * j_total + j) * d + q] * go[j * d + q];
                            }
                            dc[i * j_total + j] = s;
                        }
                    }
                    self.nodes[c.0].tensor.accumulate(&dc);
                }
            }
            Rule::CapsAgreement => {
                let (uhat, v) = (inputs[0], inputs[1]);
                let (i_total, j_total, d) = (
                    self.shape(uhat)[0],
                    self.shape(uhat)[1],
                    self.shape(uhat)[2],
                );
                let uv = self.nodes[uhat.0].tensor.values.clone();
                let vv = self.nodes[v.0].tensor.values.clone();
                if self.nodes[uhat.0].requires_grad {
                    let mut du = vec![0.0; uv.len()];
                    for i in 0..i_total {
                        for j in 0..j_total {
                            let g = go[i * j_total + j];
                            for q in 0..d {
                                du[(i * j_total + j) * d + q] += g * vv[j * d + q];
                            }
                        }
                    }
                    self.nodes[uhat.0].tensor.accumulate(&du);
                }
                if self.nodes[v.0].requires_grad {
                    let mut dv = vec![0.0; vv.len()];
                    for i in 0..i_total {
                        for j in 0..j_total {
                            let g = go[i * j_total + j];
                            for q in 0..d {
                                dv[j * d + q] += g * uv[(i * j_total + j) * d + q];
                            }
                        }
                    }
                    self.nodes[v.0].tensor.accumulate(&dv);
                }
            }
        }
    }

    fn binary_backward(
        &mut self,
        a: Var,
        b: Var,
        broadcast: Broadcast,
        go: &[f64],
        partials: impl Fn(f64, f64, f64) -> (f64, f64),
    ) {
        let av = self.nodes[a.0].tensor.values.clone();
        let bv = self.nodes[b.0].tensor.values.clone();
        let (small_len_a, small_len_b) = (av.len(), bv.len());
        let mut da = vec![0.0; small_len_a];
        let mut db = vec![0.0; small_len_b];
        for (i, &g) in go.iter().enumerate() {
            let (x, y) = match broadcast {
                Broadcast::None => (av[i], bv[i]),
                Broadcast::Rhs => (av[i], bv[i % small_len_b]),
                Broadcast::Lhs => (av[i % small_len_a], bv[i]),
            };
            let (dx, dy) = partials(x, y, g);
            match broadcast {
                Broadcast::None => {
                    da[i] += dx;
                    db[i] += dy;
                }
                Broadcast::Rhs => {
                    da[i] += dx;
                    db[i % small_len_b] += dy;
                }
                Broadcast::Lhs => {
                    da[i % small_len_a] += dx;
                    db[i] += dy;
                }
            }
        }
        if self.nodes[a.0].requires_grad {
            self.nodes[a.0].tensor.accumulate(&da);
        }
        if self.nodes[b.0].requires_grad {
            self.nodes[b.0].tensor.accumulate(&db);
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn l2_norm(row: &[f64]) -> f64 {
    row.iter().map(|&x| x * x).sum::<f64>().sqrt()
}

/// Validate one-hot rows and return the hot index per row.
fn one_hot_indices(targets: &[Vec<f64>], classes: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(targets.len());
    for (r, row) in targets.iter().enumerate() {
        if row.len() != classes {
            return Err(Error::Label(format!(
                "target row {r} has {} entries, expected {classes}",
                row.len()
            )));
        }
        let mut hot = None;
        for (j, &v) in row.iter().enumerate() {
            if v == 1.0 {
                if hot.is_some() {
                    return Err(Error::Label(format!("target row {r} has multiple 1s")));
                }
                hot = Some(j);
            } else if v != 0.0 {
                return Err(Error::Label(format!(
                    "target row {r} has non-binary entry {v}"
                )));
            }
        }
        out.push(hot.ok_or_else(|| Error::Label(format!("target row {r} has no 1")))?);
    }
    Ok(out)
}
