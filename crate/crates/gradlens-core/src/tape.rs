//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! A [`Tape`] is an append-only arena of nodes. Each op evaluates eagerly on
//! record (so forward values are always available) and stores whatever the
//! backward pass needs. [`Tape::backward`] walks the records once in reverse,
//! accumulating gradients by addition, so fan-out is handled exactly once per
//! use.
//!
//! The primitive set — matmul, conv2d, maxpool2d, relu, tanh, add-bias,
//! elementwise multiply, softmax-cross-entropy, reduce-sum, scale, plus a
//! zero-cost reshape — is the minimum needed to train the supported
//! architectures and differentiate attack objectives w.r.t. inputs.
//!
//! Determinism: ReLU's subgradient at 0 is 0 and maxpool ties resolve to the
//! first maximum in scan order, so identical tapes produce bit-identical
//! gradients.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvDims, Padding, PoolDims};
use crate::tensor::Tensor;

/// Index of a node on a [`Tape`].
pub type NodeId = usize;

/// Batch reduction applied by [`Tape::softmax_xent`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// Sum of per-example losses. Input gradients of distinct examples stay
    /// independent, which per-example attacks rely on.
    Sum,
    /// Mean of per-example losses — the training loss.
    Mean,
}

/// How add_bias broadcasts its second operand.
#[derive(Debug, Clone, Copy)]
enum Broadcast {
    /// Same shape: plain elementwise addition.
    Full,
    /// x: [N, U], b: [U] — bias per dense unit.
    PerUnit,
    /// x: [N, C, H, W], b: [C] — bias per conv channel.
    PerChannel,
}

enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId, m: usize, k: usize, n: usize },
    Conv2d { x: NodeId, w: NodeId, dims: ConvDims },
    MaxPool2d { x: NodeId, argmax: Vec<usize> },
    Relu { x: NodeId },
    Tanh { x: NodeId },
    AddBias { x: NodeId, b: NodeId, broadcast: Broadcast },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    ReduceSum { x: NodeId },
    SoftmaxXent { logits: NodeId, labels: Vec<usize>, probs: Vec<f64>, scale: f64 },
    Reshape { x: NodeId },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only autodiff tape. Single-threaded during construction and
/// backward; distinct tapes are fully independent.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    fn check(&self, id: NodeId, op: &'static str) -> Result<()> {
        if id >= self.nodes.len() {
            return Err(Error::InvalidParameter {
                name: "node id",
                reason: format!("{id} not on tape (len {}) in {op}", self.nodes.len()),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input node. All leaves receive gradients from
    /// [`Tape::backward`]; leaves the loss does not depend on get zeros.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.push(t.clone(), Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Gradient of the last backward pass w.r.t. node `id`, if backward ran.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id].value.grad.as_deref()
    }

    // ── Primitive ops ───────────────────────────────────────────────────

    /// C[m,n] = A[m,k] · B[k,n].
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a, "matmul")?;
        self.check(b, "matmul")?;
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", "[m,k] x [k,n]", (sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.nodes[a].value.data(), self.nodes[b].value.data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(value, Op::Matmul { a, b, m, k, n }))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, padding: Padding) -> Result<NodeId> {
        self.check(x, "conv2d")?;
        self.check(w, "conv2d")?;
        let dims = ConvDims::resolve(self.nodes[x].value.shape(), self.nodes[w].value.shape(), stride, padding)?;
        let data = kernels::conv2d(self.nodes[x].value.data(), self.nodes[w].value.data(), &dims);
        let value = Tensor::new(dims.out_shape(), data)?;
        Ok(self.push(value, Op::Conv2d { x, w, dims }))
    }

    pub fn maxpool2d(&mut self, x: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        self.check(x, "maxpool2d")?;
        let dims = PoolDims::resolve(self.nodes[x].value.shape(), window, stride)?;
        let (data, argmax) = kernels::maxpool2d(self.nodes[x].value.data(), &dims);
        let value = Tensor::new(dims.out_shape(), data)?;
        Ok(self.push(value, Op::MaxPool2d { x, argmax }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let data = self.nodes[x].value.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let value = Tensor::new(self.nodes[x].value.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Relu { x })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let data = self.nodes[x].value.data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(self.nodes[x].value.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Tanh { x })
    }

    /// x + b, where b is same-shaped, per-unit `[U]` against `[N,U]`, or
    /// per-channel `[C]` against `[N,C,H,W]`.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(x, "add_bias")?;
        self.check(b, "add_bias")?;
        let (sx, sb) = (
            self.nodes[x].value.shape().to_vec(),
            self.nodes[b].value.shape().to_vec(),
        );
        let broadcast = if sx == sb {
            Broadcast::Full
        } else if sx.len() == 2 && sb.len() == 1 && sb[0] == sx[1] {
            Broadcast::PerUnit
        } else if sx.len() == 4 && sb.len() == 1 && sb[0] == sx[1] {
            Broadcast::PerChannel
        } else {
            return Err(Error::shape("add_bias", "matching or broadcastable shapes", (&sx, &sb)));
        };
        let xv = self.nodes[x].value.data();
        let bv = self.nodes[b].value.data();
        let data: Vec<f64> = match broadcast {
            Broadcast::Full => xv.iter().zip(bv).map(|(a, b)| a + b).collect(),
            Broadcast::PerUnit => {
                let u = sb[0];
                xv.iter().enumerate().map(|(i, a)| a + bv[i % u]).collect()
            }
            Broadcast::PerChannel => {
                let (c, hw) = (sx[1], sx[2] * sx[3]);
                xv.iter().enumerate().map(|(i, a)| a + bv[(i / hw) % c]).collect()
            }
        };
        let value = Tensor::new(sx, data)?;
        Ok(self.push(value, Op::AddBias { x, b, broadcast }))
    }

    /// Elementwise product of same-shaped operands.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a, "mul")?;
        self.check(b, "mul")?;
        if self.nodes[a].value.shape() != self.nodes[b].value.shape() {
            return Err(Error::shape(
                "mul",
                self.nodes[a].value.shape(),
                self.nodes[b].value.shape(),
            ));
        }
        let data = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.nodes[a].value.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let data = self.nodes[x].value.data().iter().map(|v| v * c).collect();
        let value = Tensor::new(self.nodes[x].value.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale { x, c })
    }

    /// Sum of all elements, as a scalar node.
    pub fn reduce_sum(&mut self, x: NodeId) -> NodeId {
        let sum: f64 = self.nodes[x].value.data().iter().sum();
        self.push(Tensor::scalar(sum), Op::ReduceSum { x })
    }

    /// Same data under a new shape; gradient passes through unchanged.
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.check(x, "reshape")?;
        let value = self.nodes[x].value.reshaped(shape)?;
        Ok(self.push(value, Op::Reshape { x }))
    }

    /// Numerically stable softmax cross-entropy of `[N, C]` logits against
    /// integer labels, reduced to a scalar.
    pub fn softmax_xent(&mut self, logits: NodeId, labels: &[usize], reduction: Reduction) -> Result<NodeId> {
        self.check(logits, "softmax_xent")?;
        let shape = self.nodes[logits].value.shape();
        if shape.len() != 2 {
            return Err(Error::shape("softmax_xent", "[N, C] logits", shape));
        }
        let (n, c) = (shape[0], shape[1]);
        if labels.len() != n {
            return Err(Error::shape("softmax_xent", format!("{n} labels"), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::LabelOutOfRange { label: bad, classes: c });
        }
        let data = self.nodes[logits].value.data();
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for i in 0..n {
            let row = &data[i * c..(i + 1) * c];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut denom = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                probs[i * c + j] = e;
                denom += e;
            }
            for j in 0..c {
                probs[i * c + j] /= denom;
            }
            total += denom.ln() + max - row[labels[i]];
        }
        let scale = match reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / n as f64,
        };
        let value = Tensor::scalar(total * scale);
        Ok(self.push(value, Op::SoftmaxXent { logits, labels: labels.to_vec(), probs, scale }))
    }

    // ── Composite helpers (expand into primitives) ──────────────────────

    /// a − b for same-shaped operands.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let neg = self.scale(b, -1.0);
        self.add_bias(a, neg)
    }

    /// Σ|x|, via |v| = relu(v) + relu(−v) (subgradient 0 at 0).
    pub fn abs_sum(&mut self, x: NodeId) -> Result<NodeId> {
        let pos = self.relu(x);
        let neg = self.scale(x, -1.0);
        let negr = self.relu(neg);
        let total = self.add_bias(pos, negr)?;
        Ok(self.reduce_sum(total))
    }

    /// Σx², the squared Euclidean norm.
    pub fn sum_of_squares(&mut self, x: NodeId) -> Result<NodeId> {
        let sq = self.mul(x, x)?;
        Ok(self.reduce_sum(sq))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Populates `grad` on every node with d(loss)/d(node). `loss` must be a
    /// scalar node on a nonempty tape.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Empty { what: "tape" });
        }
        self.check(loss, "backward")?;
        if !self.nodes[loss].value.is_scalar() {
            return Err(Error::shape("backward", "scalar loss", self.nodes[loss].value.shape()));
        }

        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        grads[loss][0] = 1.0;

        for id in (0..=loss).rev() {
            // Split off this node's gradient so operand gradients can be
            // accumulated mutably without aliasing.
            let gout = std::mem::take(&mut grads[id]);
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Matmul { a, b, m, k, n } => {
                    let (a, b, m, k, n) = (*a, *b, *m, *k, *n);
                    let da = kernels::matmul_grad_a(&gout, self.nodes[b].value.data(), m, k, n);
                    let db = kernels::matmul_grad_b(self.nodes[a].value.data(), &gout, m, k, n);
                    accumulate(&mut grads[a], &da);
                    accumulate(&mut grads[b], &db);
                }
                Op::Conv2d { x, w, dims } => {
                    let (x, w, dims) = (*x, *w, *dims);
                    let dx = kernels::conv2d_grad_x(&gout, self.nodes[w].value.data(), &dims);
                    let dw = kernels::conv2d_grad_w(self.nodes[x].value.data(), &gout, &dims);
                    accumulate(&mut grads[x], &dx);
                    accumulate(&mut grads[w], &dw);
                }
                Op::MaxPool2d { x, argmax } => {
                    let x = *x;
                    let dx = kernels::maxpool2d_grad(&gout, argmax, self.nodes[x].value.len());
                    accumulate(&mut grads[x], &dx);
                }
                Op::Relu { x } => {
                    let x = *x;
                    let xv = self.nodes[x].value.data();
                    for (i, g) in gout.iter().enumerate() {
                        if xv[i] > 0.0 {
                            grads[x][i] += g;
                        }
                    }
                }
                Op::Tanh { x } => {
                    let x = *x;
                    let yv = self.nodes[id].value.data();
                    for (i, g) in gout.iter().enumerate() {
                        grads[x][i] += g * (1.0 - yv[i] * yv[i]);
                    }
                }
                Op::AddBias { x, b, broadcast } => {
                    let (x, b, broadcast) = (*x, *b, *broadcast);
                    accumulate(&mut grads[x], &gout);
                    match broadcast {
                        Broadcast::Full => accumulate(&mut grads[b], &gout),
                        Broadcast::PerUnit => {
                            let u = self.nodes[b].value.len();
                            for (i, g) in gout.iter().enumerate() {
                                grads[b][i % u] += g;
                            }
                        }
                        Broadcast::PerChannel => {
                            let shape = self.nodes[x].value.shape();
                            let (c, hw) = (shape[1], shape[2] * shape[3]);
                            for (i, g) in gout.iter().enumerate() {
                                grads[b][(i / hw) % c] += g;
                            }
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    // Accumulate da first from b's values, then db from a's.
                    for (i, g) in gout.iter().enumerate() {
                        let bv = self.nodes[b].value.data()[i];
                        grads[a][i] += g * bv;
                    }
                    for (i, g) in gout.iter().enumerate() {
                        let av = self.nodes[a].value.data()[i];
                        grads[b][i] += g * av;
                    }
                }
                Op::Scale { x, c } => {
                    let (x, c) = (*x, *c);
                    for (i, g) in gout.iter().enumerate() {
                        grads[x][i] += g * c;
                    }
                }
                Op::ReduceSum { x } => {
                    let x = *x;
                    let g = gout[0];
                    for v in grads[x].iter_mut() {
                        *v += g;
                    }
                }
                Op::SoftmaxXent { logits, labels, probs, scale } => {
                    let (logits, scale) = (*logits, *scale);
                    let g = gout[0] * scale;
                    let c = probs.len() / labels.len();
                    let dl = &mut grads[logits];
                    for (i, &y) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            dl[i * c + j] += g * (probs[i * c + j] - onehot);
                        }
                    }
                }
                Op::Reshape { x } => {
                    let x = *x;
                    accumulate(&mut grads[x], &gout);
                }
            }
            grads[id] = gout;
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.value.grad = Some(g);
        }
        Ok(())
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Per-example softmax cross-entropy values for `[N, C]` logits — the attack
/// objective bookkeeping helper (no tape involved).
pub fn xent_per_example(logits: &[f64], classes: usize, labels: &[usize]) -> Vec<f64> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let row = &logits[i * classes..(i + 1) * classes];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            denom.ln() + max - row[y]
        })
        .collect()
}

// ── Gradient checking ───────────────────────────────────────────────────

/// Compares the tape gradient of `f` (a scalar-valued function of one leaf)
/// against central finite differences with step `h`.
///
/// Returns the max over coordinates of
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    if h <= 0.0 {
        return Err(Error::InvalidParameter { name: "h", reason: format!("must be > 0, got {h}") });
    }

    let eval = |point: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let id = tape.leaf(point);
        let loss = f(&mut tape, id)?;
        if !tape.value(loss).is_scalar() {
            return Err(Error::shape("grad_check", "scalar loss", tape.value(loss).shape()));
        }
        tape.value(loss).item()
    };

    // Analytic gradient.
    let mut tape = Tape::new();
    let id = tape.leaf(x);
    let loss = f(&mut tape, id)?;
    if !tape.value(loss).is_scalar() {
        return Err(Error::shape("grad_check", "scalar loss", tape.value(loss).shape()));
    }
    tape.backward(loss)?;
    let analytic = tape.grad(id).expect("backward populated").to_vec();

    let mut max_err: f64 = 0.0;
    let mut probe = x.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        if !numeric.is_finite() || !a.is_finite() {
            return Err(Error::NonFinite { context: format!("grad_check coordinate {i}") });
        }
        let denom = 1.0_f64.max(a.abs()).max(numeric.abs());
        max_err = max_err.max((a - numeric).abs() / denom);
    }
    Ok(max_err)
}
