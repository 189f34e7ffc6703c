//! Dense 64-bit tensors and a tape-based reverse-mode gradient engine.
//!
//! The tape records every primitive applied during a forward pass; replaying
//! it backward accumulates vector-Jacobian products into each operand, which
//! yields input gradients for attack crafting and weight gradients for
//! training from the same mechanism. A central finite-difference oracle is
//! included for verifying both.

use thiserror::Error;

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("conv2d: kernel {kernel:?} at stride {stride} does not fit input {input:?}")]
    KernelTooLarge {
        input: Vec<usize>,
        kernel: Vec<usize>,
        stride: usize,
    },
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("tensor: data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
}

/// Shape-tagged dense array of f64, stored row-major.
///
/// Tensors are immutable once constructed; every public constructor rejects
/// non-finite elements and length/shape disagreement.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                len: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "from_vec" });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> Result<f64, TensorError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(TensorError::NotScalar {
                shape: self.shape.clone(),
            })
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: VarId, b: VarId },
    Conv2d { input: VarId, filters: VarId, stride: usize },
    Relu { x: VarId },
    Add { a: VarId, b: VarId },
    Sub { a: VarId, b: VarId },
    Mul { a: VarId, b: VarId },
    Scale { x: VarId, c: f64 },
    Sum { x: VarId },
    Reshape { x: VarId },
    Softmax { x: VarId },
    LogSoftmax { x: VarId },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Ordered record of the primitive operations of one forward pass.
///
/// Construction order is a topological order, so a single reverse sweep
/// visits every recorded operation exactly once. `backward` takes `&self`;
/// the tape is never consumed and can be replayed any number of times.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: VarId) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Record a leaf value (an input, weight, or constant).
    pub fn leaf(&mut self, t: Tensor) -> VarId {
        self.push(Op::Leaf, t)
    }

    fn push(&mut self, op: Op, value: Tensor) -> VarId {
        let id = VarId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    fn checked(&mut self, op_name: &'static str, op: Op, value: Tensor) -> Result<VarId, TensorError> {
        if !value.data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        Ok(self.push(op, value))
    }

    /// Matrix product of `a: [m,k]` and `b: [k,n]`.
    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += ta.data[i * k + p] * tb.data[p * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        let value = Tensor {
            shape: vec![m, n],
            data: out,
        };
        self.checked("matmul", Op::MatMul { a, b }, value)
    }

    /// Valid (no padding) strided cross-correlation of `input: [c,h,w]`
    /// with `filters: [f,c,kh,kw]`.
    pub fn conv2d(&mut self, input: VarId, filters: VarId, stride: usize) -> Result<VarId, TensorError> {
        let (ti, tf) = (self.value(input), self.value(filters));
        let (si, sf) = (ti.shape(), tf.shape());
        if si.len() != 3 || sf.len() != 4 || si[0] != sf[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: si.to_vec(),
                rhs: sf.to_vec(),
            });
        }
        let (c, h, w) = (si[0], si[1], si[2]);
        let (f, kh, kw) = (sf[0], sf[2], sf[3]);
        if stride == 0 || kh > h || kw > w {
            return Err(TensorError::KernelTooLarge {
                input: si.to_vec(),
                kernel: sf.to_vec(),
                stride,
            });
        }
        let oh = (h - kh) / stride + 1;
        let ow = (w - kw) / stride + 1;
        let mut out = vec![0.0; f * oh * ow];
        for fi in 0..f {
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let iv = ti.data[ci * h * w + (oi * stride + u) * w + (oj * stride + v)];
                                let fv = tf.data[((fi * c + ci) * kh + u) * kw + v];
                                acc += iv * fv;
                            }
                        }
                    }
                    out[(fi * oh + oi) * ow + oj] = acc;
                }
            }
        }
        let value = Tensor {
            shape: vec![f, oh, ow],
            data: out,
        };
        self.checked(
            "conv2d",
            Op::Conv2d {
                input,
                filters,
                stride,
            },
            value,
        )
    }

    /// Elementwise max(0, x). The subgradient at exactly 0 is 0.
    pub fn relu(&mut self, x: VarId) -> Result<VarId, TensorError> {
        let t = self.value(x);
        let value = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| v.max(0.0)).collect(),
        };
        self.checked("relu", Op::Relu { x }, value)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        self.zip("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        self.zip("sub", a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        self.zip("mul", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: VarId,
        b: VarId,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(VarId, VarId) -> Op,
    ) -> Result<VarId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(TensorError::ShapeMismatch {
                op: name,
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let value = Tensor {
            shape: ta.shape.clone(),
            data: ta
                .data
                .iter()
                .zip(&tb.data)
                .map(|(&x, &y)| f(x, y))
                .collect(),
        };
        self.checked(name, op(a, b), value)
    }

    /// Multiply every element by the constant `c`.
    pub fn scale(&mut self, x: VarId, c: f64) -> Result<VarId, TensorError> {
        let t = self.value(x);
        let value = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| v * c).collect(),
        };
        self.checked("scale", Op::Scale { x, c }, value)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: VarId) -> Result<VarId, TensorError> {
        let t = self.value(x);
        let value = Tensor::scalar(t.data.iter().sum());
        self.checked("sum", Op::Sum { x }, value)
    }

    pub fn reshape(&mut self, x: VarId, shape: Vec<usize>) -> Result<VarId, TensorError> {
        let t = self.value(x);
        let numel: usize = shape.iter().product();
        if numel != t.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: t.shape.clone(),
                rhs: shape,
            });
        }
        let value = Tensor {
            shape,
            data: t.data.clone(),
        };
        self.checked("reshape", Op::Reshape { x }, value)
    }

    /// Softmax of a 1-D tensor, computed with max subtraction.
    pub fn softmax(&mut self, x: VarId) -> Result<VarId, TensorError> {
        let data = self.softmax_forward("softmax", x)?;
        let shape = self.value(x).shape.clone();
        self.checked("softmax", Op::Softmax { x }, Tensor { shape, data: data.0 })
    }

    /// Log-softmax of a 1-D tensor, computed with max subtraction.
    pub fn log_softmax(&mut self, x: VarId) -> Result<VarId, TensorError> {
        let data = self.softmax_forward("log_softmax", x)?;
        let shape = self.value(x).shape.clone();
        self.checked(
            "log_softmax",
            Op::LogSoftmax { x },
            Tensor { shape, data: data.1 },
        )
    }

    /// Shared stable forward: returns (softmax, log_softmax) of the vector.
    fn softmax_forward(&self, name: &'static str, x: VarId) -> Result<(Vec<f64>, Vec<f64>), TensorError> {
        let t = self.value(x);
        if t.shape.len() != 1 || t.data.is_empty() {
            return Err(TensorError::BadShape {
                op: name,
                expected: "non-empty 1-D tensor",
                got: t.shape.clone(),
            });
        }
        let max = t.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = t.data.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let log_total = total.ln();
        let soft = exps.iter().map(|&e| e / total).collect();
        let log_soft = t.data.iter().map(|&v| v - max - log_total).collect();
        Ok((soft, log_soft))
    }

    /// Reverse sweep from the scalar `loss`, accumulating gradients for every
    /// ancestor node. Multiple consumers of a value sum their contributions.
    pub fn backward(&self, loss: VarId) -> Result<Gradients, TensorError> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: loss_value.shape.clone(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let g = match &grads[id] {
                Some(g) => g.clone(),
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                    {
                        let ga = self.acc(&mut grads, *a);
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[i * n + j] * tb.data[p * n + j];
                                }
                                ga[i * k + p] += acc;
                            }
                        }
                    }
                    {
                        let gb = self.acc(&mut grads, *b);
                        for p in 0..k {
                            for j in 0..n {
                                let mut acc = 0.0;
                                for i in 0..m {
                                    acc += ta.data[i * k + p] * g[i * n + j];
                                }
                                gb[p * n + j] += acc;
                            }
                        }
                    }
                }
                Op::Conv2d {
                    input,
                    filters,
                    stride,
                } => {
                    let (ti, tf) = (&self.nodes[input.0].value, &self.nodes[filters.0].value);
                    let (c, h, w) = (ti.shape[0], ti.shape[1], ti.shape[2]);
                    let (f, kh, kw) = (tf.shape[0], tf.shape[2], tf.shape[3]);
                    let oh = (h - kh) / stride + 1;
                    let ow = (w - kw) / stride + 1;
                    let mut gi = vec![0.0; ti.numel()];
                    let mut gf = vec![0.0; tf.numel()];
                    for fi in 0..f {
                        for oi in 0..oh {
                            for oj in 0..ow {
                                let go = g[(fi * oh + oi) * ow + oj];
                                for ci in 0..c {
                                    for u in 0..kh {
                                        for v in 0..kw {
                                            let ii = ci * h * w + (oi * stride + u) * w + (oj * stride + v);
                                            let ff = ((fi * c + ci) * kh + u) * kw + v;
                                            gi[ii] += go * tf.data[ff];
                                            gf[ff] += go * ti.data[ii];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.add_into(&mut grads, *input, &gi);
                    self.add_into(&mut grads, *filters, &gf);
                }
                Op::Relu { x } => {
                    let tx = &self.nodes[x.0].value;
                    let gx = self.acc(&mut grads, *x);
                    for (i, &v) in tx.data.iter().enumerate() {
                        if v > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                }
                Op::Add { a, b } => {
                    self.add_into(&mut grads, *a, &g);
                    self.add_into(&mut grads, *b, &g);
                }
                Op::Sub { a, b } => {
                    self.add_into(&mut grads, *a, &g);
                    let gb = self.acc(&mut grads, *b);
                    for (out, gi) in gb.iter_mut().zip(&g) {
                        *out -= gi;
                    }
                }
                Op::Mul { a, b } => {
                    let (da, db) = (
                        self.nodes[a.0].value.data.clone(),
                        self.nodes[b.0].value.data.clone(),
                    );
                    {
                        let ga = self.acc(&mut grads, *a);
                        for i in 0..g.len() {
                            ga[i] += g[i] * db[i];
                        }
                    }
                    {
                        let gb = self.acc(&mut grads, *b);
                        for i in 0..g.len() {
                            gb[i] += g[i] * da[i];
                        }
                    }
                }
                Op::Scale { x, c } => {
                    let gx = self.acc(&mut grads, *x);
                    for (out, gi) in gx.iter_mut().zip(&g) {
                        *out += c * gi;
                    }
                }
                Op::Sum { x } => {
                    let gx = self.acc(&mut grads, *x);
                    for out in gx.iter_mut() {
                        *out += g[0];
                    }
                }
                Op::Reshape { x } => {
                    self.add_into(&mut grads, *x, &g);
                }
                Op::Softmax { x } => {
                    let p = &self.nodes[id].value.data;
                    let dot: f64 = g.iter().zip(p).map(|(gi, pi)| gi * pi).sum();
                    let gx = self.acc(&mut grads, *x);
                    for i in 0..g.len() {
                        gx[i] += p[i] * (g[i] - dot);
                    }
                }
                Op::LogSoftmax { x } => {
                    let logp = &self.nodes[id].value.data;
                    let gsum: f64 = g.iter().sum();
                    let gx = self.acc(&mut grads, *x);
                    for i in 0..g.len() {
                        gx[i] += g[i] - logp[i].exp() * gsum;
                    }
                }
            }
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| Tensor {
                    shape: self.nodes[i].value.shape.clone(),
                    data,
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: VarId) -> &'g mut Vec<f64> {
        let numel = self.nodes[v.0].value.numel();
        grads[v.0].get_or_insert_with(|| vec![0.0; numel])
    }

    fn add_into(&self, grads: &mut [Option<Vec<f64>>], v: VarId, contribution: &[f64]) {
        let gx = self.acc(grads, v);
        for (out, c) in gx.iter_mut().zip(contribution) {
            *out += c;
        }
    }
}

/// Gradients of one backward pass, indexed by the tape's variable ids.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if `v` does not feed the loss.
    pub fn wrt(&self, v: VarId) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Gradient of a traced scalar loss with respect to one recorded input,
/// shaped like that input. A disconnected input has zero gradient.
pub fn input_gradient(tape: &Tape, loss: VarId, input: VarId) -> Result<Tensor, TensorError> {
    let grads = tape.backward(loss)?;
    Ok(match grads.wrt(input) {
        Some(g) => g.clone(),
        None => Tensor::zeros(tape.value(input).shape().to_vec()),
    })
}

/// Central finite differences of a scalar-valued function, one coordinate at
/// a time: (f(x + h·e_i) − f(x − h·e_i)) / 2h.
pub fn finite_difference_gradient<F>(mut f: F, x: &Tensor, h: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    assert!(h > 0.0, "finite differences need a positive step");
    let mut grad = vec![0.0; x.numel()];
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data[i] += h;
        let mut minus = x.clone();
        minus.data[i] -= h;
        grad[i] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    Tensor {
        shape: x.shape.clone(),
        data: grad,
    }
}

/// Max relative error between two same-shaped tensors, with the denominator
/// floored at `floor` so near-zero entries compare absolutely.
pub fn max_relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
