//! Reverse-mode differentiation via an operation tape.
//!
//! Every differentiable computation is built by pushing operations onto a
//! [`Tape`]; each push evaluates the forward value immediately and records
//! enough to replay a reverse pass. [`Tape::backward`] walks the records in
//! exact reverse execution order and accumulates gradients into the
//! [`ParamSet`] leaves, so any composition of the primitives below is
//! differentiable end to end without per-model hand chaining.

use std::collections::HashMap;

use super::tensor::{ParamId, ParamSet, Tensor};
use super::DiffError;

/// Index of a value node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Componentwise scalar functions with exact backward rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// 1 / (1 + e^-x); derivative y(1-y).
    Sigmoid,
    /// tanh(x); derivative 1 - y^2.
    Tanh,
    /// max(0, x); derivative 1 for x > 0, else 0.
    Rectifier,
    /// (1 + x)^2; derivative 2(1 + x).
    SquareShift,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Rectifier => x.max(0.0),
            Activation::SquareShift => (1.0 + x) * (1.0 + x),
        }
    }

    /// Derivative given the input `x` and the already-computed output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Rectifier => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::SquareShift => 2.0 * (1.0 + x),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x), evaluated without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug, Clone)]
enum Op {
    /// External input; `param` is set when the leaf snapshots a parameter.
    Leaf { param: Option<ParamId> },
    /// Matrix-vector product.
    MatVec { w: NodeId, x: NodeId },
    /// Inner product of two equal-length vectors; scalar output.
    Dot { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    /// Componentwise (Hadamard) product.
    Mul { a: NodeId, b: NodeId },
    /// n-ary sum of same-shape nodes.
    SumN { terms: Vec<NodeId> },
    /// Multiply by a compile-time constant.
    Scale { x: NodeId, k: f64 },
    /// Add a compile-time constant to every component.
    Offset { x: NodeId },
    /// Multiply a vector by a scalar node.
    ScaleBy { x: NodeId, s: NodeId },
    Apply { kind: Activation, x: NodeId },
    /// L2 norm; scalar output. Subgradient 0 at the zero vector.
    Norm2 { x: NodeId },
    /// Componentwise reciprocal.
    Recip { x: NodeId },
    /// Binary cross-entropy from a pre-logistic score: softplus(s) - y*s.
    BceFromScore { score: NodeId, target: f64 },
    /// Concatenation of vectors.
    Concat { parts: Vec<NodeId> },
    /// Componentwise maximum over same-shape nodes; ties route the gradient
    /// to the first maximal term.
    MaxN { terms: Vec<NodeId> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// The recorded program of one forward computation.
///
/// A tape and the `ParamSet` it reads form a single-writer unit; build the
/// graph, call [`Tape::backward`] on a scalar root, then drop the tape.
/// Parameter values are snapshotted into leaves at insertion, so later
/// parameter mutation cannot corrupt a replay.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, NodeId>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<NodeId, DiffError> {
        value.check_finite(op_name(&op))?;
        self.nodes.push(Node { value, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Insert a non-parameter input. No gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId, DiffError> {
        self.push(value, Op::Leaf { param: None })
    }

    pub fn scalar(&mut self, x: f64) -> Result<NodeId, DiffError> {
        let t = Tensor::scalar(x)?;
        self.constant(t)
    }

    /// Insert a parameter leaf, snapshotting its current value. Repeated
    /// insertion of the same parameter reuses the existing leaf.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Result<NodeId, DiffError> {
        if let Some(&node) = self.param_leaves.get(&id) {
            return Ok(node);
        }
        let node = self.push(params.get(id).value.clone(), Op::Leaf { param: Some(id) })?;
        self.param_leaves.insert(id, node);
        Ok(node)
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId, DiffError> {
        let (rows, cols) = self.value(w).matrix_dims()?;
        let xv = self.value(x);
        if xv.shape().len() != 1 || xv.len() != cols {
            return Err(DiffError::Shape {
                op: "matvec",
                detail: format!("matrix {:?} × vector {:?}", self.value(w).shape(), xv.shape()),
            });
        }
        let wd = self.value(w).data();
        let xd = self.value(x).data();
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let row = &wd[r * cols..(r + 1) * cols];
            out[r] = row.iter().zip(xd).map(|(a, b)| a * b).sum();
        }
        self.push(Tensor::vector(out)?, Op::MatVec { w, x })
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.check_same_shape("dot", a, b)?;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .sum();
        self.push(Tensor::scalar(s)?, Op::Dot { a, b })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.check_same_shape("add", a, b)?;
        let out = self.zip(a, b, |x, y| x + y);
        self.push(out?, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.check_same_shape("sub", a, b)?;
        let out = self.zip(a, b, |x, y| x - y);
        self.push(out?, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.check_same_shape("mul", a, b)?;
        let out = self.zip(a, b, |x, y| x * y);
        self.push(out?, Op::Mul { a, b })
    }

    pub fn sum(&mut self, terms: &[NodeId]) -> Result<NodeId, DiffError> {
        let first = *terms.first().ok_or(DiffError::EmptySequence { op: "sum" })?;
        for &t in &terms[1..] {
            self.check_same_shape("sum", first, t)?;
        }
        let mut out = self.value(first).data().to_vec();
        for &t in &terms[1..] {
            for (o, x) in out.iter_mut().zip(self.value(t).data()) {
                *o += x;
            }
        }
        let shape = self.value(first).shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::SumN { terms: terms.to_vec() })
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> Result<NodeId, DiffError> {
        let out = self.map(x, |v| k * v)?;
        self.push(out, Op::Scale { x, k })
    }

    pub fn offset(&mut self, x: NodeId, k: f64) -> Result<NodeId, DiffError> {
        let out = self.map(x, |v| v + k)?;
        self.push(out, Op::Offset { x })
    }

    /// Multiply every component of `x` by the value of scalar node `s`.
    pub fn scale_by(&mut self, x: NodeId, s: NodeId) -> Result<NodeId, DiffError> {
        let sv = self.value(s).as_scalar()?;
        let out = self.map(x, |v| sv * v)?;
        self.push(out, Op::ScaleBy { x, s })
    }

    pub fn apply(&mut self, kind: Activation, x: NodeId) -> Result<NodeId, DiffError> {
        let out = self.map(x, |v| kind.apply(v))?;
        self.push(out, Op::Apply { kind, x })
    }

    pub fn norm2(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        let n = self.value(x).norm2();
        self.push(Tensor::scalar(n)?, Op::Norm2 { x })
    }

    pub fn recip(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        let out = self.map(x, |v| 1.0 / v)?;
        self.push(out, Op::Recip { x })
    }

    /// Negative log-likelihood of a binary `target` under the logistic of a
    /// scalar score node, in the overflow-free softplus form.
    pub fn bce_from_score(&mut self, score: NodeId, target: f64) -> Result<NodeId, DiffError> {
        let s = self.value(score).as_scalar()?;
        let loss = softplus(s) - target * s;
        self.push(Tensor::scalar(loss)?, Op::BceFromScore { score, target })
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, DiffError> {
        if parts.is_empty() {
            return Err(DiffError::EmptySequence { op: "concat" });
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        self.push(Tensor::vector(out)?, Op::Concat { parts: parts.to_vec() })
    }

    pub fn max(&mut self, terms: &[NodeId]) -> Result<NodeId, DiffError> {
        let first = *terms.first().ok_or(DiffError::EmptySequence { op: "max" })?;
        for &t in &terms[1..] {
            self.check_same_shape("max", first, t)?;
        }
        let mut out = self.value(first).data().to_vec();
        for &t in &terms[1..] {
            for (o, x) in out.iter_mut().zip(self.value(t).data()) {
                if *x > *o {
                    *o = *x;
                }
            }
        }
        let shape = self.value(first).shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::MaxN { terms: terms.to_vec() })
    }

    /// Reverse pass from a scalar `root`, accumulating into `params.grad`.
    ///
    /// Gradients add onto whatever the gradient buffers already hold; call
    /// [`ParamSet::zero_grads`] first for a fresh gradient. Running backward
    /// twice on the same tape therefore contributes exactly twice.
    pub fn backward(&mut self, root: NodeId, params: &mut ParamSet) -> Result<(), DiffError> {
        self.value(root).as_scalar()?;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !g.iter().all(|x| x.is_finite()) {
                return Err(DiffError::NonFinite { op: op_name(&self.nodes[i].op) });
            }
            // Each arm computes input contributions from the output gradient
            // `g` and the recorded input values.
            match self.nodes[i].op.clone() {
                Op::Leaf { param } => {
                    if let Some(id) = param {
                        let buf = params.get_mut(id).grad.data_mut();
                        for (dst, src) in buf.iter_mut().zip(&g) {
                            *dst += src;
                        }
                    }
                }
                Op::MatVec { w, x } => {
                    let (rows, cols) = self.value(w).matrix_dims()?;
                    let xd = self.value(x).data().to_vec();
                    let wd = self.value(w).data().to_vec();
                    // grad_W += g · xᵀ
                    {
                        let gw = self.grad_buf(&mut grads, w);
                        for r in 0..rows {
                            for c in 0..cols {
                                gw[r * cols + c] += g[r] * xd[c];
                            }
                        }
                    }
                    // grad_x += Wᵀ · g
                    {
                        let gx = self.grad_buf(&mut grads, x);
                        for r in 0..rows {
                            for c in 0..cols {
                                gx[c] += wd[r * cols + c] * g[r];
                            }
                        }
                    }
                }
                Op::Dot { a, b } => {
                    let av = self.value(a).data().to_vec();
                    let bv = self.value(b).data().to_vec();
                    let g0 = g[0];
                    let ga = self.grad_buf(&mut grads, a);
                    for (dst, x) in ga.iter_mut().zip(&bv) {
                        *dst += g0 * x;
                    }
                    let gb = self.grad_buf(&mut grads, b);
                    for (dst, x) in gb.iter_mut().zip(&av) {
                        *dst += g0 * x;
                    }
                }
                Op::Add { a, b } => {
                    self.accumulate(&mut grads, a, &g, 1.0);
                    self.accumulate(&mut grads, b, &g, 1.0);
                }
                Op::Sub { a, b } => {
                    self.accumulate(&mut grads, a, &g, 1.0);
                    self.accumulate(&mut grads, b, &g, -1.0);
                }
                Op::Mul { a, b } => {
                    let av = self.value(a).data().to_vec();
                    let bv = self.value(b).data().to_vec();
                    let ga = self.grad_buf(&mut grads, a);
                    for ((dst, gi), x) in ga.iter_mut().zip(&g).zip(&bv) {
                        *dst += gi * x;
                    }
                    let gb = self.grad_buf(&mut grads, b);
                    for ((dst, gi), x) in gb.iter_mut().zip(&g).zip(&av) {
                        *dst += gi * x;
                    }
                }
                Op::SumN { terms } => {
                    for t in terms {
                        self.accumulate(&mut grads, t, &g, 1.0);
                    }
                }
                Op::Scale { x, k } => {
                    self.accumulate(&mut grads, x, &g, k);
                }
                Op::Offset { x } => {
                    self.accumulate(&mut grads, x, &g, 1.0);
                }
                Op::ScaleBy { x, s } => {
                    let sv = self.value(s).data()[0];
                    let xv = self.value(x).data().to_vec();
                    self.accumulate(&mut grads, x, &g, sv);
                    let gs = self.grad_buf(&mut grads, s);
                    gs[0] += g.iter().zip(&xv).map(|(gi, xi)| gi * xi).sum::<f64>();
                }
                Op::Apply { kind, x } => {
                    let xv = self.value(x).data().to_vec();
                    let yv = self.nodes[i].value.data().to_vec();
                    let gx = self.grad_buf(&mut grads, x);
                    for k in 0..gx.len() {
                        gx[k] += g[k] * kind.derivative(xv[k], yv[k]);
                    }
                }
                Op::Norm2 { x } => {
                    let n = self.nodes[i].value.data()[0];
                    if n > 0.0 {
                        let xv = self.value(x).data().to_vec();
                        let g0 = g[0];
                        let gx = self.grad_buf(&mut grads, x);
                        for (dst, xi) in gx.iter_mut().zip(&xv) {
                            *dst += g0 * xi / n;
                        }
                    }
                    // n == 0: subgradient 0.
                }
                Op::Recip { x } => {
                    let yv = self.nodes[i].value.data().to_vec();
                    let gx = self.grad_buf(&mut grads, x);
                    for ((dst, gi), yi) in gx.iter_mut().zip(&g).zip(&yv) {
                        *dst -= gi * yi * yi;
                    }
                }
                Op::BceFromScore { score, target } => {
                    let s = self.value(score).data()[0];
                    let gs = self.grad_buf(&mut grads, score);
                    gs[0] += g[0] * (sigmoid(s) - target);
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(p).len();
                        let gp = self.grad_buf(&mut grads, p);
                        for k in 0..n {
                            gp[k] += g[offset + k];
                        }
                        offset += n;
                    }
                }
                Op::MaxN { terms } => {
                    let out = self.nodes[i].value.data().to_vec();
                    let mut routed = vec![false; out.len()];
                    for t in terms {
                        let tv = self.value(t).data().to_vec();
                        let gt = self.grad_buf(&mut grads, t);
                        for k in 0..out.len() {
                            if !routed[k] && tv[k] == out[k] {
                                routed[k] = true;
                                gt[k] += g[k];
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn grad_buf<'a>(&self, grads: &'a mut [Option<Vec<f64>>], id: NodeId) -> &'a mut Vec<f64> {
        grads[id.0].get_or_insert_with(|| vec![0.0; self.nodes[id.0].value.len()])
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, g: &[f64], k: f64) {
        let buf = self.grad_buf(grads, id);
        for (dst, src) in buf.iter_mut().zip(g) {
            *dst += k * src;
        }
    }

    fn check_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), DiffError> {
        if self.value(a).shape() == self.value(b).shape() {
            Ok(())
        } else {
            Err(DiffError::Shape {
                op,
                detail: format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            })
        }
    }

    fn map(&self, x: NodeId, f: impl Fn(f64) -> f64) -> Result<Tensor, DiffError> {
        let v = self.value(x);
        Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| f(a)).collect())
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, DiffError> {
        let av = self.value(a);
        let bv = self.value(b);
        Tensor::new(
            av.shape().to_vec(),
            av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
        )
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf { .. } => "leaf",
        Op::MatVec { .. } => "matvec",
        Op::Dot { .. } => "dot",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::SumN { .. } => "sum",
        Op::Scale { .. } => "scale",
        Op::Offset { .. } => "offset",
        Op::ScaleBy { .. } => "scale_by",
        Op::Apply { .. } => "apply",
        Op::Norm2 { .. } => "norm2",
        Op::Recip { .. } => "recip",
        Op::BceFromScore { .. } => "bce_from_score",
        Op::Concat { .. } => "concat",
        Op::MaxN { .. } => "max",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_param(ps: &mut ParamSet, name: &str, data: Vec<f64>) -> ParamId {
        ps.add(name, Tensor::vector(data).unwrap())
    }

    #[test]
    fn matvec_identity() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let mut tape = Tape::new();
        let wn = tape.param(&ps, w).unwrap();
        let x = tape.constant(Tensor::vector(vec![5.0, 7.0]).unwrap()).unwrap();
        let y = tape.matvec(wn, x).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0, 7.0]);
    }

    #[test]
    fn matvec_hand_evaluated() {
        // [[1,2],[3,4]] · (1,1) = (3,7)
        let mut tape = Tape::new();
        let w = tape
            .constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let x = tape.constant(Tensor::vector(vec![1.0, 1.0]).unwrap()).unwrap();
        let y = tape.matvec(w, x).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matvec_zero_matrix() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap()).unwrap();
        let x = tape.constant(Tensor::vector(vec![3.0, -1.0]).unwrap()).unwrap();
        let y = tape.matvec(w, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn matvec_dimension_mismatch_names_shapes() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap()).unwrap();
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        let err = tape.matvec(w, x).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");
    }

    #[test]
    fn matvec_backward_rules() {
        // y = W·x, loss = y·u. grad_W = u·xᵀ, grad_x = Wᵀ·u.
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let x = vec_param(&mut ps, "x", vec![5.0, 6.0]);
        let mut tape = Tape::new();
        let wn = tape.param(&ps, w).unwrap();
        let xn = tape.param(&ps, x).unwrap();
        let y = tape.matvec(wn, xn).unwrap();
        let u = tape.constant(Tensor::vector(vec![10.0, 100.0]).unwrap()).unwrap();
        let loss = tape.dot(y, u).unwrap();
        tape.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.get(w).grad.data(), &[50.0, 60.0, 500.0, 600.0]);
        assert_eq!(ps.get(x).grad.data(), &[10.0 + 300.0, 20.0 + 400.0]);
    }

    #[test]
    fn elementwise_known_points() {
        let mut tape = Tape::new();
        let x = tape
            .constant(Tensor::vector(vec![0.0, -2.0, 0.5]).unwrap())
            .unwrap();
        let sig = tape.apply(Activation::Sigmoid, x).unwrap();
        assert_eq!(tape.value(sig).data()[0], 0.5);
        let rect = tape.apply(Activation::Rectifier, x).unwrap();
        assert_eq!(tape.value(rect).data()[1], 0.0);
        let sq = tape.apply(Activation::SquareShift, x).unwrap();
        assert_eq!(tape.value(sq).data()[2], 2.25);
    }

    #[test]
    fn gradient_accumulates_additively() {
        let mut ps = ParamSet::new();
        let x = vec_param(&mut ps, "x", vec![3.0]);
        let mut tape = Tape::new();
        let xn = tape.param(&ps, x).unwrap();
        let loss = tape.mul(xn, xn).unwrap();
        tape.backward(loss, &mut ps).unwrap();
        let once = ps.get(x).grad.data()[0];
        assert_eq!(once, 6.0);
        tape.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.get(x).grad.data()[0], 2.0 * once);
    }

    #[test]
    fn replay_is_deterministic() {
        let run = || {
            let mut ps = ParamSet::new();
            let x = vec_param(&mut ps, "x", vec![0.3, -0.7, 1.1]);
            let mut tape = Tape::new();
            let xn = tape.param(&ps, x).unwrap();
            let t = tape.apply(Activation::Tanh, xn).unwrap();
            let loss = tape.dot(t, xn).unwrap();
            tape.backward(loss, &mut ps).unwrap();
            (
                tape.value(loss).data()[0].to_bits(),
                ps.get(x).grad.data().iter().map(|g| g.to_bits()).collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn unused_param_gets_zero_grad() {
        let mut ps = ParamSet::new();
        let x = vec_param(&mut ps, "x", vec![2.0]);
        let unused = vec_param(&mut ps, "u", vec![9.0]);
        let mut tape = Tape::new();
        let xn = tape.param(&ps, x).unwrap();
        let loss = tape.mul(xn, xn).unwrap();
        tape.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.get(unused).grad.data(), &[0.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut ps = ParamSet::new();
        let x = vec_param(&mut ps, "x", vec![1.0, 2.0]);
        let mut tape = Tape::new();
        let xn = tape.param(&ps, x).unwrap();
        assert!(matches!(
            tape.backward(xn, &mut ps).unwrap_err(),
            DiffError::NotScalar { .. }
        ));
    }

    #[test]
    fn max_routes_gradient_to_first_winner() {
        let mut ps = ParamSet::new();
        let a = vec_param(&mut ps, "a", vec![2.0]);
        let b = vec_param(&mut ps, "b", vec![2.0]);
        let mut tape = Tape::new();
        let an = tape.param(&ps, a).unwrap();
        let bn = tape.param(&ps, b).unwrap();
        let m = tape.max(&[an, bn]).unwrap();
        let loss = tape.mul(m, m).unwrap();
        tape.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.get(a).grad.data(), &[4.0]);
        assert_eq!(ps.get(b).grad.data(), &[0.0]);
    }

    #[test]
    fn bce_matches_direct_formula() {
        let mut tape = Tape::new();
        let s = tape.scalar(0.0).unwrap();
        let loss = tape.bce_from_score(s, 1.0).unwrap();
        assert!((tape.value(loss).data()[0] - 2.0f64.ln()).abs() < 1e-15);
        // Large positive score with target 1: loss tends to 0.
        let mut tape = Tape::new();
        let s = tape.scalar(50.0).unwrap();
        let loss = tape.bce_from_score(s, 1.0).unwrap();
        assert!(tape.value(loss).data()[0] < 1e-20);
    }
}
