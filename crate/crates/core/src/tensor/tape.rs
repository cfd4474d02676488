//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! Every [`Var`] belongs to exactly one [`Tape`]. Recording appends a node
//! holding the op kind, parent ids and the forward value; [`Tape::backward`]
//! walks the nodes once in reverse creation order (which is a topological
//! order by construction) accumulating vector-Jacobian products.
//!
//! Elementwise binary ops allow the smaller operand to expand along leading
//! axes of extent 1 (a `[1, f]` bias against an `[n, f]` activation); any
//! other expansion must go through the explicit [`Var::broadcast`] op.

use std::cell::RefCell;
use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Sqrt(usize),
    Scale(usize, f64),
    Softmax(usize, usize),
    Concat(Vec<usize>, usize),
    Slice {
        input: usize,
        axis: usize,
        start: usize,
        end: usize,
    },
    Transpose(usize),
    ReduceSum(usize, Option<usize>),
    ReduceMean(usize, Option<usize>),
    Broadcast(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
struct TapeInner {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Tensor>>>,
}

/// Recording context for one differentiable computation. Cloning yields a
/// handle to the same tape.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<TapeInner>,
}

/// A tensor tracked on a tape. Cloning is cheap (an id plus a handle).
#[derive(Clone)]
pub struct Var {
    tape: Rc<TapeInner>,
    id: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(TapeInner::default()),
        }
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let mut nodes = self.inner.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: Rc::clone(&self.inner),
            id: nodes.len() - 1,
        }
    }

    /// Record a trainable input; its gradient is retrievable after backward.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Record a constant input; backward never propagates into it.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Gradient of the last backward root with respect to `var`; zeros for
    /// tensors the root does not reach.
    pub fn grad(&self, var: &Var) -> Tensor {
        assert!(
            Rc::ptr_eq(&self.inner, &var.tape),
            "grad queried on a foreign tape"
        );
        let grads = self.inner.grads.borrow();
        let nodes = self.inner.nodes.borrow();
        match grads.get(var.id).and_then(|g| g.clone()) {
            Some(g) => g,
            None => Tensor::zeros(nodes[var.id].value.shape()),
        }
    }

    /// Accumulate d(root)/d(node) for every node on the tape.
    ///
    /// `root` must be scalar-shaped (all extents 1). Each node is visited
    /// exactly once, in reverse recording order; contributions to shared
    /// parents accumulate additively.
    pub fn backward(&self, root: &Var) -> Result<()> {
        if !Rc::ptr_eq(&self.inner, &root.tape) {
            return Err(Error::Contract(
                "backward root belongs to a different tape".into(),
            ));
        }
        let nodes = self.inner.nodes.borrow();
        if !nodes[root.id].value.is_scalar_shaped() {
            return Err(Error::Contract(format!(
                "backward requires a scalar-shaped root, got shape {:?}",
                nodes[root.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Tensor::ones(nodes[root.id].value.shape()));

        for id in (0..=root.id).rev() {
            if !nodes[id].needs_grad {
                continue;
            }
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            accumulate_parents(&nodes, &mut grads, id, &g);
            grads[id] = Some(g);
        }
        *self.inner.grads.borrow_mut() = grads;
        Ok(())
    }
}

fn add_into(slot: &mut Option<Tensor>, contribution: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&contribution),
        None => *slot = Some(contribution),
    }
}

/// Fold a gradient of the output shape back onto a leading-broadcast operand:
/// the operand's buffer was tiled `out.numel()/small_len` times, so the
/// pulled-back gradient sums the tiles.
fn fold_to(small_shape: &[usize], small_len: usize, g: &[f64]) -> Tensor {
    let mut out = vec![0.0; small_len];
    for (i, &v) in g.iter().enumerate() {
        out[i % small_len] += v;
    }
    Tensor::from_raw(small_shape.to_vec(), out)
}

fn accumulate_parents(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, g: &Tensor) {
    let wants = |p: usize| nodes[p].needs_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            if wants(*a) {
                let contrib = g.matmul(&vb.transpose().unwrap()).unwrap();
                add_into(&mut grads[*a], contrib);
            }
            if wants(*b) {
                let contrib = va.transpose().unwrap().matmul(g).unwrap();
                add_into(&mut grads[*b], contrib);
            }
        }
        Op::Add(a, b) => {
            binary_linear_backward(nodes, grads, *a, *b, g, 1.0, 1.0);
        }
        Op::Sub(a, b) => {
            binary_linear_backward(nodes, grads, *a, *b, g, 1.0, -1.0);
        }
        Op::Mul(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let (da, db) = (va.data(), vb.data());
            let (la, lb) = (da.len(), db.len());
            if wants(*a) {
                let mut out = vec![0.0; la];
                for (i, &gv) in g.data().iter().enumerate() {
                    out[i % la] += gv * db[i % lb];
                }
                add_into(&mut grads[*a], Tensor::from_raw(va.shape().to_vec(), out));
            }
            if wants(*b) {
                let mut out = vec![0.0; lb];
                for (i, &gv) in g.data().iter().enumerate() {
                    out[i % lb] += gv * da[i % la];
                }
                add_into(&mut grads[*b], Tensor::from_raw(vb.shape().to_vec(), out));
            }
        }
        Op::Div(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let (da, db) = (va.data(), vb.data());
            let (la, lb) = (da.len(), db.len());
            if wants(*a) {
                let mut out = vec![0.0; la];
                for (i, &gv) in g.data().iter().enumerate() {
                    out[i % la] += gv / db[i % lb];
                }
                add_into(&mut grads[*a], Tensor::from_raw(va.shape().to_vec(), out));
            }
            if wants(*b) {
                let mut out = vec![0.0; lb];
                for (i, &gv) in g.data().iter().enumerate() {
                    let bi = db[i % lb];
                    out[i % lb] -= gv * da[i % la] / (bi * bi);
                }
                add_into(&mut grads[*b], Tensor::from_raw(vb.shape().to_vec(), out));
            }
        }
        Op::Tanh(a) => {
            if wants(*a) {
                let y = &nodes[id].value;
                let contrib = g.zip(y, |gv, yv| gv * (1.0 - yv * yv));
                add_into(&mut grads[*a], contrib);
            }
        }
        Op::Sigmoid(a) => {
            if wants(*a) {
                let y = &nodes[id].value;
                let contrib = g.zip(y, |gv, yv| gv * yv * (1.0 - yv));
                add_into(&mut grads[*a], contrib);
            }
        }
        Op::Relu(a) => {
            if wants(*a) {
                let x = &nodes[*a].value;
                let contrib = g.zip(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                add_into(&mut grads[*a], contrib);
            }
        }
        Op::LeakyRelu(a, slope) => {
            if wants(*a) {
                let x = &nodes[*a].value;
                let s = *slope;
                let contrib = g.zip(x, |gv, xv| if xv > 0.0 { gv } else { gv * s });
                add_into(&mut grads[*a], contrib);
            }
        }
        Op::Sqrt(a) => {
            if wants(*a) {
                let y = &nodes[id].value;
                let contrib = g.zip(y, |gv, yv| if yv == 0.0 { 0.0 } else { 0.5 * gv / yv });
                add_into(&mut grads[*a], contrib);
            }
        }
        Op::Scale(a, c) => {
            if wants(*a) {
                let c = *c;
                add_into(&mut grads[*a], g.map(|gv| gv * c));
            }
        }
        Op::Softmax(a, axis) => {
            if wants(*a) {
                let y = &nodes[id].value;
                let (outer, len, inner) = lane_dims(y.shape(), *axis);
                let mut out = vec![0.0; y.numel()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let mut dot = 0.0;
                        for j in 0..len {
                            dot += g.data()[idx(j)] * y.data()[idx(j)];
                        }
                        for j in 0..len {
                            let k = idx(j);
                            out[k] = y.data()[k] * (g.data()[k] - dot);
                        }
                    }
                }
                add_into(&mut grads[*a], Tensor::from_raw(y.shape().to_vec(), out));
            }
        }
        Op::Concat(parts, axis) => {
            let shape = nodes[id].value.shape();
            let (outer, _, inner) = lane_dims(shape, *axis);
            let total_len = shape[*axis];
            let mut offset = 0;
            for &p in parts {
                let pshape = nodes[p].value.shape().to_vec();
                let plen = pshape[*axis];
                if wants(p) {
                    let mut out = vec![0.0; nodes[p].value.numel()];
                    for o in 0..outer {
                        for j in 0..plen {
                            let src = (o * total_len + offset + j) * inner;
                            let dst = (o * plen + j) * inner;
                            out[dst..dst + inner].copy_from_slice(&g.data()[src..src + inner]);
                        }
                    }
                    add_into(&mut grads[p], Tensor::from_raw(pshape, out));
                }
                offset += plen;
            }
        }
        Op::Slice {
            input,
            axis,
            start,
            end,
        } => {
            if wants(*input) {
                let ishape = nodes[*input].value.shape().to_vec();
                let (outer, len, inner) = lane_dims(&ishape, *axis);
                let slen = end - start;
                let mut out = vec![0.0; nodes[*input].value.numel()];
                for o in 0..outer {
                    for j in 0..slen {
                        let dst = (o * len + start + j) * inner;
                        let src = (o * slen + j) * inner;
                        out[dst..dst + inner].copy_from_slice(&g.data()[src..src + inner]);
                    }
                }
                add_into(&mut grads[*input], Tensor::from_raw(ishape, out));
            }
        }
        Op::Transpose(a) => {
            if wants(*a) {
                add_into(&mut grads[*a], g.transpose().unwrap());
            }
        }
        Op::ReduceSum(a, axis) => {
            if wants(*a) {
                let ishape = nodes[*a].value.shape().to_vec();
                add_into(&mut grads[*a], expand_reduced(&ishape, *axis, g, 1.0));
            }
        }
        Op::ReduceMean(a, axis) => {
            if wants(*a) {
                let ishape = nodes[*a].value.shape().to_vec();
                let count = match axis {
                    Some(ax) => ishape[*ax] as f64,
                    None => ishape.iter().product::<usize>() as f64,
                };
                add_into(&mut grads[*a], expand_reduced(&ishape, *axis, g, 1.0 / count));
            }
        }
        Op::Broadcast(a) => {
            if wants(*a) {
                let ishape = nodes[*a].value.shape().to_vec();
                let contrib = reduce_broadcast_grad(&ishape, nodes[id].value.shape(), g);
                add_into(&mut grads[*a], contrib);
            }
        }
    }
}

/// Shared backward for Add/Sub where both parents receive `g` times a sign.
fn binary_linear_backward(
    nodes: &[Node],
    grads: &mut [Option<Tensor>],
    a: usize,
    b: usize,
    g: &Tensor,
    sign_a: f64,
    sign_b: f64,
) {
    for (p, sign) in [(a, sign_a), (b, sign_b)] {
        if !nodes[p].needs_grad {
            continue;
        }
        let pv = &nodes[p].value;
        let contrib = if pv.numel() == g.numel() {
            if sign == 1.0 {
                g.clone()
            } else {
                g.map(|v| v * sign)
            }
        } else {
            let folded = fold_to(pv.shape(), pv.numel(), g.data());
            if sign == 1.0 {
                folded
            } else {
                folded.map(|v| v * sign)
            }
        };
        add_into(&mut grads[p], contrib);
    }
}

fn lane_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// Expand a keep-dims reduced gradient back to the input shape, scaling
/// every copy by `scale`.
fn expand_reduced(ishape: &[usize], axis: Option<usize>, g: &Tensor, scale: f64) -> Tensor {
    match axis {
        None => {
            let v = g.data()[0] * scale;
            let numel = ishape.iter().product();
            Tensor::from_raw(ishape.to_vec(), vec![v; numel])
        }
        Some(ax) => {
            let (outer, len, inner) = lane_dims(ishape, ax);
            let mut out = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let v = g.data()[o * inner + i] * scale;
                    for j in 0..len {
                        out[(o * len + j) * inner + i] = v;
                    }
                }
            }
            Tensor::from_raw(ishape.to_vec(), out)
        }
    }
}

/// Left-pad a shape with 1s to a target rank.
fn pad_shape(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut padded = vec![1; rank - shape.len()];
    padded.extend_from_slice(shape);
    padded
}

/// Sum a broadcast-output gradient over the expanded axes of the source.
fn reduce_broadcast_grad(ishape: &[usize], oshape: &[usize], g: &Tensor) -> Tensor {
    let rank = oshape.len();
    let padded = pad_shape(ishape, rank);
    let mut src_strides = vec![0usize; rank];
    let mut acc = 1usize;
    for ax in (0..rank).rev() {
        if padded[ax] != 1 {
            src_strides[ax] = acc;
            acc *= padded[ax];
        }
    }
    let in_numel: usize = ishape.iter().product();
    let mut out = vec![0.0; in_numel];
    let mut idx = vec![0usize; rank];
    for &gv in g.data() {
        let mut src = 0usize;
        for ax in 0..rank {
            src += idx[ax] * src_strides[ax];
        }
        out[src] += gv;
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < oshape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor::from_raw(ishape.to_vec(), out)
}

/// True when `small` can expand to `big` by tiling whole-buffer repeats,
/// i.e. after left-padding with 1s the non-matching prefix is all 1s.
fn leading_expandable(small: &[usize], big: &[usize]) -> bool {
    if small.len() > big.len() {
        return false;
    }
    let padded = pad_shape(small, big.len());
    let mut suffix_started = false;
    for ax in 0..big.len() {
        if padded[ax] == big[ax] {
            suffix_started = true;
        } else if padded[ax] == 1 && !suffix_started {
            continue;
        } else {
            return false;
        }
    }
    true
}

impl Var {
    fn same_tape(&self, other: &Var, op: &'static str) -> Result<()> {
        if Rc::ptr_eq(&self.tape, &other.tape) {
            Ok(())
        } else {
            Err(Error::Contract(format!("{op}: operands on different tapes")))
        }
    }

    fn node_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        let nodes = self.tape.nodes.borrow();
        f(&nodes[self.id].value)
    }

    fn needs_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let mut nodes = self.tape.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: Rc::clone(&self.tape),
            id: nodes.len() - 1,
        }
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor {
        self.node_value(|t| t.clone())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node_value(|t| t.shape().to_vec())
    }

    /// Gradient accumulated by the owning tape's last backward pass.
    pub fn grad(&self) -> Tensor {
        let grads = self.tape.grads.borrow();
        match grads.get(self.id).and_then(|g| g.clone()) {
            Some(g) => g,
            None => Tensor::zeros(&self.shape()),
        }
    }

    fn binary(
        &self,
        rhs: &Var,
        name: &'static str,
        make: impl Fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        self.same_tape(rhs, name)?;
        let (value, _flip) = {
            let nodes = self.tape.nodes.borrow();
            let (va, vb) = (&nodes[self.id].value, &nodes[rhs.id].value);
            if va.shape() == vb.shape() {
                (va.zip(vb, &f), false)
            } else if leading_expandable(vb.shape(), va.shape()) {
                let lb = vb.numel();
                let data = va
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| f(a, vb.data()[i % lb]))
                    .collect();
                (Tensor::from_raw(va.shape().to_vec(), data), false)
            } else if leading_expandable(va.shape(), vb.shape()) {
                let la = va.numel();
                let data = vb
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &b)| f(va.data()[i % la], b))
                    .collect();
                (Tensor::from_raw(vb.shape().to_vec(), data), true)
            } else {
                return Err(Error::shape(
                    name,
                    format!("{:?} vs {:?}", va.shape(), vb.shape()),
                ));
            }
        };
        let needs = self.needs_grad() || rhs.needs_grad();
        Ok(self.push(value, make(self.id, rhs.id), needs))
    }

    pub fn add(&self, rhs: &Var) -> Result<Var> {
        self.binary(rhs, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Var) -> Result<Var> {
        self.binary(rhs, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, rhs: &Var) -> Result<Var> {
        self.binary(rhs, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, rhs: &Var) -> Result<Var> {
        let has_zero = rhs.node_value(|t| t.data().iter().any(|&v| v == 0.0));
        if has_zero {
            return Err(Error::Numerical("division by zero in div".into()));
        }
        self.binary(rhs, "div", Op::Div, |a, b| a / b)
    }

    pub fn matmul(&self, rhs: &Var) -> Result<Var> {
        self.same_tape(rhs, "matmul")?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.matmul(&nodes[rhs.id].value)?
        };
        let needs = self.needs_grad() || rhs.needs_grad();
        Ok(self.push(value, Op::Matmul(self.id, rhs.id), needs))
    }

    fn unary(&self, make: impl Fn(usize) -> Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.node_value(|t| t.map(&f));
        self.push(value, make(self.id), self.needs_grad())
    }

    pub fn tanh(&self) -> Var {
        self.unary(Op::Tanh, f64::tanh)
    }

    pub fn sigmoid(&self) -> Var {
        self.unary(Op::Sigmoid, |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn relu(&self) -> Var {
        self.unary(Op::Relu, |v| v.max(0.0))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        self.unary(
            |a| Op::LeakyRelu(a, slope),
            move |v| if v > 0.0 { v } else { slope * v },
        )
    }

    pub fn sqrt(&self) -> Result<Var> {
        let has_negative = self.node_value(|t| t.data().iter().any(|&v| v < 0.0));
        if has_negative {
            return Err(Error::Numerical("sqrt of a negative value".into()));
        }
        Ok(self.unary(Op::Sqrt, f64::sqrt))
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&self, c: f64) -> Var {
        self.unary(|a| Op::Scale(a, c), move |v| v * c)
    }

    /// |x| composed from the recorded primitives: relu(x) + relu(-x).
    pub fn abs(&self) -> Result<Var> {
        self.relu().add(&self.scale(-1.0).relu())
    }

    /// Numerically stable softmax along `axis`; lanes sum to 1.
    pub fn softmax(&self, axis: usize) -> Result<Var> {
        let value = self.node_value(|t| {
            if axis >= t.shape().len() {
                return Err(Error::shape(
                    "softmax",
                    format!("axis {axis} out of range for {:?}", t.shape()),
                ));
            }
            let (outer, len, inner) = lane_dims(t.shape(), axis);
            let mut out = vec![0.0; t.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * len + j) * inner + i;
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..len {
                        max = max.max(t.data()[idx(j)]);
                    }
                    let mut sum = 0.0;
                    for j in 0..len {
                        let e = (t.data()[idx(j)] - max).exp();
                        out[idx(j)] = e;
                        sum += e;
                    }
                    for j in 0..len {
                        out[idx(j)] /= sum;
                    }
                }
            }
            Ok(Tensor::from_raw(t.shape().to_vec(), out))
        })?;
        Ok(self.push(value, Op::Softmax(self.id, axis), self.needs_grad()))
    }

    /// Concatenate along `axis`; all parts must agree on the other extents.
    pub fn concat(parts: &[&Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        for p in parts.iter().skip(1) {
            first.same_tape(p, "concat")?;
        }
        let value = {
            let nodes = first.tape.nodes.borrow();
            let base = nodes[first.id].value.shape().to_vec();
            if axis >= base.len() {
                return Err(Error::shape(
                    "concat",
                    format!("axis {axis} out of range for {base:?}"),
                ));
            }
            let mut total = 0usize;
            for p in parts {
                let s = nodes[p.id].value.shape();
                if s.len() != base.len()
                    || s.iter()
                        .zip(base.iter())
                        .enumerate()
                        .any(|(ax, (a, b))| ax != axis && a != b)
                {
                    return Err(Error::shape(
                        "concat",
                        format!("{s:?} incompatible with {base:?} along axis {axis}"),
                    ));
                }
                total += s[axis];
            }
            let mut oshape = base.clone();
            oshape[axis] = total;
            let (outer, _, inner) = lane_dims(&oshape, axis);
            let mut out = vec![0.0; oshape.iter().product()];
            let mut offset = 0usize;
            for p in parts {
                let pv = &nodes[p.id].value;
                let plen = pv.shape()[axis];
                for o in 0..outer {
                    for j in 0..plen {
                        let dst = (o * total + offset + j) * inner;
                        let src = (o * plen + j) * inner;
                        out[dst..dst + inner].copy_from_slice(&pv.data()[src..src + inner]);
                    }
                }
                offset += plen;
            }
            Tensor::from_raw(oshape, out)
        };
        let needs = parts.iter().any(|p| p.needs_grad());
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(first.push(value, Op::Concat(ids, axis), needs))
    }

    /// Take `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var> {
        let value = self.node_value(|t| {
            let shape = t.shape();
            if axis >= shape.len() || start >= end || end > shape[axis] {
                return Err(Error::shape(
                    "slice",
                    format!("[{start}, {end}) along axis {axis} of {shape:?}"),
                ));
            }
            let (outer, len, inner) = lane_dims(shape, axis);
            let slen = end - start;
            let mut oshape = shape.to_vec();
            oshape[axis] = slen;
            let mut out = vec![0.0; outer * slen * inner];
            for o in 0..outer {
                for j in 0..slen {
                    let src = (o * len + start + j) * inner;
                    let dst = (o * slen + j) * inner;
                    out[dst..dst + inner].copy_from_slice(&t.data()[src..src + inner]);
                }
            }
            Ok(Tensor::from_raw(oshape, out))
        })?;
        Ok(self.push(
            value,
            Op::Slice {
                input: self.id,
                axis,
                start,
                end,
            },
            self.needs_grad(),
        ))
    }

    pub fn transpose(&self) -> Result<Var> {
        let value = self.node_value(|t| t.transpose())?;
        Ok(self.push(value, Op::Transpose(self.id), self.needs_grad()))
    }

    fn reduce(&self, axis: Option<usize>, mean: bool, name: &'static str) -> Result<Var> {
        let value = self.node_value(|t| {
            let shape = t.shape();
            match axis {
                None => {
                    let mut sum = 0.0;
                    for &v in t.data() {
                        sum += v;
                    }
                    if mean {
                        sum /= t.numel() as f64;
                    }
                    Ok(Tensor::from_raw(vec![1], vec![sum]))
                }
                Some(ax) => {
                    if ax >= shape.len() {
                        return Err(Error::shape(
                            name,
                            format!("axis {ax} out of range for {shape:?}"),
                        ));
                    }
                    let (outer, len, inner) = lane_dims(shape, ax);
                    let mut oshape = shape.to_vec();
                    oshape[ax] = 1;
                    let mut out = vec![0.0; outer * inner];
                    for o in 0..outer {
                        for j in 0..len {
                            for i in 0..inner {
                                out[o * inner + i] += t.data()[(o * len + j) * inner + i];
                            }
                        }
                    }
                    if mean {
                        for v in &mut out {
                            *v /= len as f64;
                        }
                    }
                    Ok(Tensor::from_raw(oshape, out))
                }
            }
        })?;
        let op = if mean {
            Op::ReduceMean(self.id, axis)
        } else {
            Op::ReduceSum(self.id, axis)
        };
        Ok(self.push(value, op, self.needs_grad()))
    }

    /// Sum along `axis` (extent kept as 1), or over everything when `None`.
    pub fn reduce_sum(&self, axis: Option<usize>) -> Result<Var> {
        self.reduce(axis, false, "reduce_sum")
    }

    /// Mean along `axis` (extent kept as 1), or over everything when `None`.
    pub fn reduce_mean(&self, axis: Option<usize>) -> Result<Var> {
        self.reduce(axis, true, "reduce_mean")
    }

    /// Expand to `target`: after left-padding with 1s, every axis must match
    /// or have extent 1.
    pub fn broadcast(&self, target: &[usize]) -> Result<Var> {
        let value = self.node_value(|t| {
            let shape = t.shape();
            if shape.len() > target.len() {
                return Err(Error::shape(
                    "broadcast",
                    format!("{shape:?} has higher rank than target {target:?}"),
                ));
            }
            let rank = target.len();
            let padded = pad_shape(shape, rank);
            for ax in 0..rank {
                if padded[ax] != target[ax] && padded[ax] != 1 {
                    return Err(Error::shape(
                        "broadcast",
                        format!("{shape:?} cannot expand to {target:?}"),
                    ));
                }
            }
            let mut src_strides = vec![0usize; rank];
            let mut acc = 1usize;
            for ax in (0..rank).rev() {
                if padded[ax] != 1 {
                    src_strides[ax] = acc;
                    acc *= padded[ax];
                }
            }
            let numel: usize = target.iter().product();
            let mut out = vec![0.0; numel];
            let mut idx = vec![0usize; rank];
            for slot in out.iter_mut() {
                let mut src = 0usize;
                for ax in 0..rank {
                    src += idx[ax] * src_strides[ax];
                }
                *slot = t.data()[src];
                for ax in (0..rank).rev() {
                    idx[ax] += 1;
                    if idx[ax] < target[ax] {
                        break;
                    }
                    idx[ax] = 0;
                }
            }
            Ok(Tensor::from_raw(target.to_vec(), out))
        })?;
        Ok(self.push(value, Op::Broadcast(self.id), self.needs_grad()))
    }
}
