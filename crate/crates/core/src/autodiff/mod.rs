//! Reverse-mode automatic differentiation on a flat tape of nodes.
//!
//! A [`Graph`] owns every intermediate value of one forward computation.
//! Operations append nodes and return [`NodeId`]s; [`Graph::backward`]
//! walks the tape once in reverse creation order, accumulating gradients
//! into each node, and consumes the graph (a second backward, or any new
//! op, is an error). Leaf nodes bound from [`Tensor`]s with
//! `requires_grad` report their gradients via [`Graph::grad`], which the
//! caller copies back onto the tensors for the optimizer.
//!
//! Elementwise `add`/`mul` broadcast in exactly three cases: identical
//! shapes, one operand a scalar, or one operand missing the other's single
//! leading (batch) dimension. Reductions run in ascending index order so
//! results are bit-for-bit reproducible.

mod adam;
mod gradcheck;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, primitive_checks, GradCheckReport, SuiteCheck};
pub use tensor::Tensor;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Matmul(NodeId, NodeId),
    Slice {
        input: NodeId,
        start: usize,
        len: usize,
    },
    Concat(Vec<NodeId>),
    Conv1d {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    },
    Dropout {
        input: NodeId,
        /// Per-element keep mask, already scaled by 1/(1-rate).
        mask: Vec<f64>,
    },
    Sum(NodeId),
    Mean(NodeId),
    Bce {
        pred: NodeId,
        target: NodeId,
    },
    Reshape(NodeId),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// How two elementwise operands line up.
#[derive(Debug, Clone, Copy)]
enum Broadcast {
    Same,
    /// Left operand is a single element repeated over the right's shape.
    LeftScalar,
    RightScalar,
    /// Left operand lacks the right's leading batch dimension.
    LeftBatched,
    RightBatched,
}

/// One forward computation, recorded for a single reverse pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op, needs_grad: bool) -> NodeId {
        let grad = vec![0.0; values.len()];
        self.nodes.push(Node {
            shape,
            values,
            grad,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn open(&self) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        Ok(())
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    /// Binds a tensor as a leaf; it participates in gradients iff the
    /// tensor has `requires_grad`.
    pub fn param(&mut self, t: &Tensor) -> Result<NodeId> {
        self.open()?;
        Ok(self.push(
            t.shape().to_vec(),
            t.values().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        ))
    }

    /// Binds a tensor as a constant leaf, ignoring its `requires_grad`
    /// flag. Used to hold one network fixed while training the other.
    pub fn freeze(&mut self, t: &Tensor) -> Result<NodeId> {
        self.open()?;
        Ok(self.push(t.shape().to_vec(), t.values().to_vec(), Op::Leaf, false))
    }

    /// A constant leaf that never needs gradients.
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<NodeId> {
        self.open()?;
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::shape(format!(
                "constant shape {shape:?} holds {numel} elements but {} values were given",
                values.len()
            )));
        }
        Ok(self.push(shape, values, Op::Leaf, false))
    }

    pub fn scalar(&mut self, v: f64) -> Result<NodeId> {
        self.constant(vec![], vec![v])
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.node(id).values
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.node(id).shape
    }

    /// Gradient of the loss with respect to node `id`; only meaningful
    /// after [`Graph::backward`].
    pub fn grad(&self, id: NodeId) -> Result<&[f64]> {
        if !self.consumed {
            return Err(Error::invalid(
                "gradient read before backward was called on this graph",
            ));
        }
        Ok(&self.node(id).grad)
    }

    fn classify(&self, a: NodeId, b: NodeId, what: &str) -> Result<Broadcast> {
        let sa = &self.node(a).shape;
        let sb = &self.node(b).shape;
        if sa == sb {
            return Ok(Broadcast::Same);
        }
        if self.node(b).values.len() == 1 {
            return Ok(Broadcast::RightScalar);
        }
        if self.node(a).values.len() == 1 {
            return Ok(Broadcast::LeftScalar);
        }
        if sa.len() == sb.len() + 1 && sa[1..] == sb[..] {
            return Ok(Broadcast::RightBatched);
        }
        if sb.len() == sa.len() + 1 && sb[1..] == sa[..] {
            return Ok(Broadcast::LeftBatched);
        }
        Err(Error::shape(format!(
            "{what}: shapes {sa:?} and {sb:?} are not broadcastable"
        )))
    }

    fn elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        self.open()?;
        let how = self.classify(a, b, what)?;
        let (na, nb) = (self.node(a), self.node(b));
        let (out_shape, n) = match how {
            Broadcast::Same | Broadcast::RightScalar | Broadcast::RightBatched => {
                (na.shape.clone(), na.values.len())
            }
            Broadcast::LeftScalar | Broadcast::LeftBatched => {
                (nb.shape.clone(), nb.values.len())
            }
        };
        let (la, lb) = (na.values.len(), nb.values.len());
        let mut values = Vec::with_capacity(n);
        for i in 0..n {
            values.push(f(na.values[i % la], nb.values[i % lb]));
        }
        let needs = na.needs_grad || nb.needs_grad;
        Ok(self.push(out_shape, values, op, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(
        &mut self,
        a: NodeId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        self.open()?;
        let node = self.node(a);
        let values = node.values.iter().map(|v| f(*v)).collect();
        let (shape, needs) = (node.shape.clone(), node.needs_grad);
        Ok(self.push(shape, values, op, needs))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |v| -v, Op::Neg(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.open()?;
        if let Some(bad) = self.node(a).values.iter().find(|v| **v <= 0.0) {
            return Err(Error::domain(format!("log of non-positive value {bad}")));
        }
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(a))
    }

    /// Matrix product of two rank-2 nodes, `[m,k] × [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.open()?;
        let (sa, sb) = (&self.node(a).shape, &self.node(b).shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!(
                "matmul: cannot multiply {sa:?} by {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (va, vb) = (&self.node(a).values, &self.node(b).values);
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += va[i * k + t] * vb[t * n + j];
                }
                values[i * n + j] = acc;
            }
        }
        let needs = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(vec![m, n], values, Op::Matmul(a, b), needs))
    }

    /// Slice `[start, start+len)` along the last axis.
    pub fn slice(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.open()?;
        let node = self.node(input);
        let shape = node.shape.clone();
        if shape.is_empty() {
            return Err(Error::shape("slice: cannot slice a scalar".to_string()));
        }
        let last = shape[shape.len() - 1];
        if len == 0 || start + len > last {
            return Err(Error::shape(format!(
                "slice: [{start}, {}) out of bounds for last axis of {shape:?}",
                start + len
            )));
        }
        let rows = node.values.len() / last;
        let mut values = Vec::with_capacity(rows * len);
        for r in 0..rows {
            values.extend_from_slice(&node.values[r * last + start..r * last + start + len]);
        }
        let mut out_shape = shape.clone();
        *out_shape.last_mut().unwrap() = len;
        let needs = node.needs_grad;
        Ok(self.push(out_shape, values, Op::Slice { input, start, len }, needs))
    }

    /// Concatenate along the last axis; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        self.open()?;
        if inputs.is_empty() {
            return Err(Error::shape("concat: no inputs".to_string()));
        }
        let first = self.node(inputs[0]).shape.clone();
        if first.is_empty() {
            return Err(Error::shape("concat: cannot concat scalars".to_string()));
        }
        let lead = &first[..first.len() - 1];
        let mut total_last = 0;
        for id in inputs {
            let s = &self.node(*id).shape;
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(Error::shape(format!(
                    "concat: shape {s:?} does not line up with {first:?}"
                )));
            }
            total_last += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut values = Vec::with_capacity(rows * total_last);
        for r in 0..rows {
            for id in inputs {
                let node = self.node(*id);
                let last = node.shape[node.shape.len() - 1];
                values.extend_from_slice(&node.values[r * last..(r + 1) * last]);
            }
        }
        let mut out_shape = first.clone();
        *out_shape.last_mut().unwrap() = total_last;
        let needs = inputs.iter().any(|id| self.node(*id).needs_grad);
        Ok(self.push(out_shape, values, Op::Concat(inputs.to_vec()), needs))
    }

    /// 1-D convolution: input `[B,C,L]`, kernel `[O,C,K]`, optional bias
    /// `[O]`, zero padding on both ends, output `[B,O,(L+2p-K)/s+1]`.
    pub fn conv1d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        self.open()?;
        if stride == 0 {
            return Err(Error::invalid("conv1d: stride must be at least 1"));
        }
        let si = self.node(input).shape.clone();
        let sk = self.node(kernel).shape.clone();
        if si.len() != 3 || sk.len() != 3 {
            return Err(Error::shape(format!(
                "conv1d: need input [B,C,L] and kernel [O,C,K], got {si:?} and {sk:?}"
            )));
        }
        let (b, c, l) = (si[0], si[1], si[2]);
        let (o, kc, k) = (sk[0], sk[1], sk[2]);
        if c != kc {
            return Err(Error::shape(format!(
                "conv1d: input has {c} channels but kernel expects {kc}"
            )));
        }
        if l + 2 * padding < k {
            return Err(Error::shape(format!(
                "conv1d: kernel of width {k} does not fit padded length {}",
                l + 2 * padding
            )));
        }
        if let Some(bid) = bias {
            let sbias = &self.node(bid).shape;
            if sbias != &[o] {
                return Err(Error::shape(format!(
                    "conv1d: bias shape {sbias:?} does not match {o} output channels"
                )));
            }
        }
        let lout = (l + 2 * padding - k) / stride + 1;
        let vi = &self.node(input).values;
        let vk = &self.node(kernel).values;
        let mut values = vec![0.0; b * o * lout];
        for bi in 0..b {
            for oi in 0..o {
                let base = bias.map_or(0.0, |bid| self.node(bid).values[oi]);
                for t in 0..lout {
                    let mut acc = base;
                    for ci in 0..c {
                        for ki in 0..k {
                            let pos = (t * stride + ki) as isize - padding as isize;
                            if pos >= 0 && (pos as usize) < l {
                                acc += vi[(bi * c + ci) * l + pos as usize]
                                    * vk[(oi * c + ci) * k + ki];
                            }
                        }
                    }
                    values[(bi * o + oi) * lout + t] = acc;
                }
            }
        }
        let needs = self.node(input).needs_grad
            || self.node(kernel).needs_grad
            || bias.is_some_and(|bid| self.node(bid).needs_grad);
        Ok(self.push(
            vec![b, o, lout],
            values,
            Op::Conv1d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            needs,
        ))
    }

    /// Inverted dropout. In training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`; the
    /// mask comes from `rng` in element order. Outside training (or at
    /// rate 0) this is the identity and records nothing.
    pub fn dropout(
        &mut self,
        input: NodeId,
        rate: f64,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        self.open()?;
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::domain(format!(
                "dropout rate {rate} must be in [0, 1)"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(input);
        }
        let keep = 1.0 / (1.0 - rate);
        let node = self.node(input);
        let mask: Vec<f64> = (0..node.values.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let values: Vec<f64> = node
            .values
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let (shape, needs) = (node.shape.clone(), node.needs_grad);
        Ok(self.push(shape, values, Op::Dropout { input, mask }, needs))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.open()?;
        let node = self.node(a);
        let total = node.values.iter().sum();
        let needs = node.needs_grad;
        Ok(self.push(vec![], vec![total], Op::Sum(a), needs))
    }

    /// Mean of all elements, as a scalar node.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.open()?;
        let node = self.node(a);
        if node.values.is_empty() {
            return Err(Error::shape("mean: node has no elements".to_string()));
        }
        let total: f64 = node.values.iter().sum();
        let (n, needs) = (node.values.len(), node.needs_grad);
        Ok(self.push(vec![], vec![total / n as f64], Op::Mean(a), needs))
    }

    /// Binary cross-entropy of predicted probabilities against targets,
    /// averaged over all elements. Predictions must lie strictly inside
    /// (0,1); targets inside [0,1].
    pub fn bce(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.open()?;
        let (sp, st) = (&self.node(pred).shape, &self.node(target).shape);
        if sp != st {
            return Err(Error::shape(format!(
                "bce: prediction shape {sp:?} does not match target shape {st:?}"
            )));
        }
        let vp = &self.node(pred).values;
        let vt = &self.node(target).values;
        if let Some(bad) = vp.iter().find(|p| !(0.0 < **p && **p < 1.0)) {
            return Err(Error::domain(format!(
                "bce: predicted probability {bad} outside (0, 1)"
            )));
        }
        if let Some(bad) = vt.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::domain(format!(
                "bce: target {bad} outside [0, 1]"
            )));
        }
        let n = vp.len() as f64;
        let mut acc = 0.0;
        for (p, t) in vp.iter().zip(vt) {
            acc -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        }
        let needs = self.node(pred).needs_grad || self.node(target).needs_grad;
        Ok(self.push(vec![], vec![acc / n], Op::Bce { pred, target }, needs))
    }

    /// Reinterprets a node under a new shape with the same element count.
    pub fn reshape(&mut self, input: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.open()?;
        let node = self.node(input);
        let numel: usize = shape.iter().product();
        if numel != node.values.len() {
            return Err(Error::shape(format!(
                "reshape: {:?} has {} elements, target {shape:?} holds {numel}",
                node.shape,
                node.values.len()
            )));
        }
        let (values, needs) = (node.values.clone(), node.needs_grad);
        Ok(self.push(shape, values, Op::Reshape(input), needs))
    }

    fn add_grad(&mut self, id: NodeId, idx: usize, v: f64) {
        self.nodes[id.0].grad[idx] += v;
    }

    /// Runs the reverse pass from a scalar `loss` node, then consumes the
    /// graph: afterwards only `value`, `shape`, and `grad` may be called.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        self.open()?;
        if self.node(loss).values.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        self.consumed = true;
        self.nodes[loss.0].grad[0] = 1.0;

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let g = self.nodes[id].grad.clone();
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    let (la, lb) = (self.node(a).values.len(), self.node(b).values.len());
                    for (i, gi) in g.iter().enumerate() {
                        if self.nodes[a.0].needs_grad {
                            self.add_grad(a, i % la, *gi);
                        }
                        if self.nodes[b.0].needs_grad {
                            self.add_grad(b, i % lb, *gi);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let va = self.node(a).values.clone();
                    let vb = self.node(b).values.clone();
                    let (la, lb) = (va.len(), vb.len());
                    for (i, gi) in g.iter().enumerate() {
                        if self.nodes[a.0].needs_grad {
                            self.add_grad(a, i % la, gi * vb[i % lb]);
                        }
                        if self.nodes[b.0].needs_grad {
                            self.add_grad(b, i % lb, gi * va[i % la]);
                        }
                    }
                }
                Op::Neg(a) => {
                    for (i, gi) in g.iter().enumerate() {
                        self.add_grad(a, i, -gi);
                    }
                }
                Op::Log(a) => {
                    let va = self.node(a).values.clone();
                    for (i, gi) in g.iter().enumerate() {
                        self.add_grad(a, i, gi / va[i]);
                    }
                }
                Op::Exp(a) => {
                    let out = self.nodes[id].values.clone();
                    for (i, gi) in g.iter().enumerate() {
                        self.add_grad(a, i, gi * out[i]);
                    }
                }
                Op::Tanh(a) => {
                    let out = self.nodes[id].values.clone();
                    for (i, gi) in g.iter().enumerate() {
                        self.add_grad(a, i, gi * (1.0 - out[i] * out[i]));
                    }
                }
                Op::Sigmoid(a) => {
                    let out = self.nodes[id].values.clone();
                    for (i, gi) in g.iter().enumerate() {
                        self.add_grad(a, i, gi * out[i] * (1.0 - out[i]));
                    }
                }
                Op::Relu(a) => {
                    // Derivative at exactly zero is taken as zero.
                    let va = self.node(a).values.clone();
                    for (i, gi) in g.iter().enumerate() {
                        if va[i] > 0.0 {
                            self.add_grad(a, i, *gi);
                        }
                    }
                }
                Op::Matmul(a, b) => {
                    let (m, k) = (self.node(a).shape[0], self.node(a).shape[1]);
                    let n = self.node(b).shape[1];
                    let va = self.node(a).values.clone();
                    let vb = self.node(b).values.clone();
                    if self.nodes[a.0].needs_grad {
                        for i in 0..m {
                            for t in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[i * n + j] * vb[t * n + j];
                                }
                                self.add_grad(a, i * k + t, acc);
                            }
                        }
                    }
                    if self.nodes[b.0].needs_grad {
                        for t in 0..k {
                            for j in 0..n {
                                let mut acc = 0.0;
                                for i in 0..m {
                                    acc += va[i * k + t] * g[i * n + j];
                                }
                                self.add_grad(b, t * n + j, acc);
                            }
                        }
                    }
                }
                Op::Slice { input, start, len } => {
                    let last = *self.node(input).shape.last().unwrap();
                    let rows = self.node(input).values.len() / last;
                    for r in 0..rows {
                        for j in 0..len {
                            self.add_grad(input, r * last + start + j, g[r * len + j]);
                        }
                    }
                }
                Op::Concat(inputs) => {
                    let out_last = *self.nodes[id].shape.last().unwrap();
                    let rows = g.len() / out_last;
                    for r in 0..rows {
                        let mut offset = 0;
                        for inp in &inputs {
                            let last = *self.node(*inp).shape.last().unwrap();
                            if self.nodes[inp.0].needs_grad {
                                for j in 0..last {
                                    self.add_grad(
                                        *inp,
                                        r * last + j,
                                        g[r * out_last + offset + j],
                                    );
                                }
                            }
                            offset += last;
                        }
                    }
                }
                Op::Conv1d {
                    input,
                    kernel,
                    bias,
                    stride,
                    padding,
                } => {
                    let (b, c, l) = {
                        let s = &self.node(input).shape;
                        (s[0], s[1], s[2])
                    };
                    let (o, k) = {
                        let s = &self.node(kernel).shape;
                        (s[0], s[2])
                    };
                    let lout = *self.nodes[id].shape.last().unwrap();
                    let vi = self.node(input).values.clone();
                    let vk = self.node(kernel).values.clone();
                    for bi in 0..b {
                        for oi in 0..o {
                            for t in 0..lout {
                                let gi = g[(bi * o + oi) * lout + t];
                                if gi == 0.0 {
                                    continue;
                                }
                                if let Some(bid) = bias {
                                    if self.nodes[bid.0].needs_grad {
                                        self.add_grad(bid, oi, gi);
                                    }
                                }
                                for ci in 0..c {
                                    for ki in 0..k {
                                        let pos =
                                            (t * stride + ki) as isize - padding as isize;
                                        if pos < 0 || pos as usize >= l {
                                            continue;
                                        }
                                        let pos = pos as usize;
                                        if self.nodes[input.0].needs_grad {
                                            self.add_grad(
                                                input,
                                                (bi * c + ci) * l + pos,
                                                gi * vk[(oi * c + ci) * k + ki],
                                            );
                                        }
                                        if self.nodes[kernel.0].needs_grad {
                                            self.add_grad(
                                                kernel,
                                                (oi * c + ci) * k + ki,
                                                gi * vi[(bi * c + ci) * l + pos],
                                            );
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Dropout { input, mask } => {
                    for (i, gi) in g.iter().enumerate() {
                        self.add_grad(input, i, gi * mask[i]);
                    }
                }
                Op::Sum(a) => {
                    let n = self.node(a).values.len();
                    for i in 0..n {
                        self.add_grad(a, i, g[0]);
                    }
                }
                Op::Mean(a) => {
                    let n = self.node(a).values.len();
                    let share = g[0] / n as f64;
                    for i in 0..n {
                        self.add_grad(a, i, share);
                    }
                }
                Op::Bce { pred, target } => {
                    let vp = self.node(pred).values.clone();
                    let vt = self.node(target).values.clone();
                    let n = vp.len() as f64;
                    let scale = g[0] / n;
                    for i in 0..vp.len() {
                        if self.nodes[pred.0].needs_grad {
                            let d = -(vt[i] / vp[i] - (1.0 - vt[i]) / (1.0 - vp[i]));
                            self.add_grad(pred, i, scale * d);
                        }
                        if self.nodes[target.0].needs_grad {
                            let d = -(vp[i].ln() - (1.0 - vp[i]).ln());
                            self.add_grad(target, i, scale * d);
                        }
                    }
                }
                Op::Reshape(a) => {
                    for (i, gi) in g.iter().enumerate() {
                        self.add_grad(a, i, *gi);
                    }
                }
            }
        }
        Ok(())
    }

    /// Copies the gradient of each bound node back onto its tensor.
    ///
    /// `pairs` associates the node handles returned by [`Graph::param`]
    /// with the tensors they were bound from, in any order.
    pub fn write_grads(&self, pairs: &mut [(NodeId, &mut Tensor)]) -> Result<()> {
        for (id, tensor) in pairs.iter_mut() {
            tensor.accumulate_grad(self.grad(*id)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn randn(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        use rand_distr::StandardNormal;
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        Tensor::new(shape, values).unwrap()
    }

    #[test]
    fn forward_values_with_broadcast() {
        let mut g = Graph::new();
        let a = g.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = g.constant(vec![2], vec![10.0, 20.0]).unwrap();
        let s = g.add(a, b).unwrap();
        assert_eq!(g.value(s), &[11.0, 22.0, 13.0, 24.0]);
        let c = g.scalar(2.0).unwrap();
        let m = g.mul(s, c).unwrap();
        assert_eq!(g.value(m), &[22.0, 44.0, 26.0, 48.0]);
        let mean = g.mean(m).unwrap();
        assert_eq!(g.value(mean), &[35.0]);
        assert_eq!(g.shape(mean), &[] as &[usize]);
    }

    #[test]
    fn incompatible_shapes_name_both_sides() {
        let mut g = Graph::new();
        let a = g.constant(vec![2], vec![1.0, 2.0]).unwrap();
        let b = g.constant(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let err = g.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn simple_chain_rule() {
        // loss = (x*w)^2 with x=3, w=2: dloss/dw = 2*(xw)*x = 36.
        let w = Tensor::scalar(2.0).with_requires_grad();
        let mut g = Graph::new();
        let wid = g.param(&w).unwrap();
        let x = g.scalar(3.0).unwrap();
        let xw = g.mul(x, wid).unwrap();
        let sq = g.mul(xw, xw).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.value(loss), &[36.0]);
        assert_eq!(g.grad(wid).unwrap(), &[36.0]);
    }

    #[test]
    fn backward_requires_scalar_and_consumes_graph() {
        let w = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_requires_grad();
        let mut g = Graph::new();
        let wid = g.param(&w).unwrap();
        assert!(matches!(
            g.backward(wid).unwrap_err(),
            Error::ShapeMismatch { .. }
        ));
        let loss = g.sum(wid).unwrap();
        assert!(matches!(
            g.grad(wid).unwrap_err(),
            Error::InvalidData { .. }
        ));
        g.backward(loss).unwrap();
        assert_eq!(g.grad(wid).unwrap(), &[1.0, 1.0]);
        assert!(matches!(g.backward(loss).unwrap_err(), Error::GraphConsumed));
        assert!(matches!(g.sum(wid).unwrap_err(), Error::GraphConsumed));
    }

    #[test]
    fn relu_gradient_is_zero_at_zero() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap().with_requires_grad();
        let mut g = Graph::new();
        let xid = g.param(&x).unwrap();
        let r = g.relu(xid).unwrap();
        assert_eq!(g.value(r), &[0.0, 0.0, 2.0]);
        let loss = g.sum(r).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(xid).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn domain_guards() {
        let mut g = Graph::new();
        let neg = g.constant(vec![1], vec![-1.0]).unwrap();
        assert!(matches!(g.log(neg).unwrap_err(), Error::Domain { .. }));

        let mut g = Graph::new();
        let p = g.constant(vec![1], vec![1.5]).unwrap();
        let t = g.constant(vec![1], vec![1.0]).unwrap();
        assert!(matches!(g.bce(p, t).unwrap_err(), Error::Domain { .. }));

        let mut g = Graph::new();
        let x = g.constant(vec![1], vec![0.5]).unwrap();
        assert!(matches!(
            g.dropout(x, 1.0, true, &mut rng(0)).unwrap_err(),
            Error::Domain { .. }
        ));
    }

    #[test]
    fn dropout_identity_outside_training_and_masked_backward() {
        let x = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap().with_requires_grad();
        // Inference mode: same node comes back, nothing recorded.
        let mut g = Graph::new();
        let xid = g.param(&x).unwrap();
        let y = g.dropout(xid, 0.5, false, &mut rng(0)).unwrap();
        assert_eq!(y, xid);

        // Training mode: gradient equals the scaled keep mask.
        let mut g = Graph::new();
        let xid = g.param(&x).unwrap();
        let y = g.dropout(xid, 0.5, true, &mut rng(7)).unwrap();
        let mask: Vec<f64> = g
            .value(y)
            .iter()
            .zip(x.values())
            .map(|(o, v)| o / v)
            .collect();
        for m in &mask {
            assert!(*m == 0.0 || (*m - 2.0).abs() < 1e-12, "mask entry {m}");
        }
        let loss = g.sum(y).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(xid).unwrap(), mask.as_slice());

        // Same seed, same mask.
        let mut g2 = Graph::new();
        let xid2 = g2.param(&x).unwrap();
        let y2 = g2.dropout(xid2, 0.5, true, &mut rng(7)).unwrap();
        let mut g3 = Graph::new();
        let xid3 = g3.param(&x).unwrap();
        let y3 = g3.dropout(xid3, 0.5, true, &mut rng(7)).unwrap();
        assert_eq!(g2.value(y2), g3.value(y3));
    }

    /// Central finite differences for every primitive, driven through the
    /// public suite on ten seeds each.
    #[test]
    fn primitives_pass_finite_difference_checks() {
        for seed in 0..10u64 {
            let checks = primitive_checks(seed).unwrap();
            assert_eq!(checks.len(), 9);
            for check in checks {
                assert!(
                    check.report.passes(1e-4),
                    "{} seed {seed}: {:?}",
                    check.name,
                    check.report
                );
            }
        }
    }

    /// A random two-layer network end to end, the canonical whole-graph
    /// gradient check.
    #[test]
    fn two_layer_network_passes_finite_difference_check() {
        for seed in 0..10u64 {
            let mut r = rng(seed);
            let x = randn(&mut r, vec![4, 3]);
            let xv = x.values().to_vec();
            let targets: Vec<f64> = (0..4).map(|i| f64::from(i % 2 == 0)).collect();
            let w1 = randn(&mut r, vec![3, 8]).with_requires_grad();
            let b1 = randn(&mut r, vec![8]).with_requires_grad();
            let w2 = randn(&mut r, vec![8, 1]).with_requires_grad();
            let b2 = randn(&mut r, vec![1]).with_requires_grad();
            let report = grad_check(
                &mut [("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)],
                move |g, ids| {
                    let x = g.constant(vec![4, 3], xv.clone())?;
                    let h = g.matmul(x, ids[0])?;
                    let h = g.add(h, ids[1])?;
                    let h = g.tanh(h)?;
                    let o = g.matmul(h, ids[2])?;
                    let o = g.add(o, ids[3])?;
                    let p = g.sigmoid(o)?;
                    let t = g.constant(vec![4, 1], targets.clone())?;
                    g.bce(p, t)
                },
                1e-5,
            )
            .unwrap();
            assert!(
                report.max_rel_err < 1e-4,
                "2-layer net seed {seed}: {report:?}"
            );
        }
    }

    proptest::proptest! {
        #[test]
        fn concat_sum_decomposes(
            seed in 0u64..100,
            na in 1usize..6,
            nb in 1usize..6,
        ) {
            let mut r = rng(seed);
            let a = randn(&mut r, vec![2, na]);
            let b = randn(&mut r, vec![2, nb]);
            let mut g = Graph::new();
            let aid = g.param(&a).unwrap();
            let bid = g.param(&b).unwrap();
            let cat = g.concat(&[aid, bid]).unwrap();
            let total = g.sum(cat).unwrap();
            let sa: f64 = a.values().iter().sum();
            let sb: f64 = b.values().iter().sum();
            proptest::prop_assert!((g.value(total)[0] - (sa + sb)).abs() < 1e-9);
        }
    }
}
