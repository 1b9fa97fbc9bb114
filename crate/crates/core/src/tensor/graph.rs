use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::fmt;

use super::conv;
use super::ops;
use super::{Result, Tensor, TensorError};

pub type NodeId = usize;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;
const DIV_FAULT_THRESHOLD: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Exp,
    Log,
    Relu,
    /// Tanh approximation of GELU.
    Gelu,
    Sigmoid,
    Tanh,
    Softplus,
    Sqrt,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Relu => x.max(0.0),
            Unary::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
        }
    }

    /// dy/dx given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Gelu => {
                let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Softplus => sigmoid(x),
            Unary::Sqrt => 0.5 / y,
            Unary::Square => 2.0 * x,
        }
    }
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }
}

/// A differentiable operation implemented outside the graph. The op keeps
/// whatever intermediates it needs; `backward` returns one entry per input.
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn backward(&self, grad_output: &Tensor) -> Result<Vec<Option<Tensor>>>;
}

/// Numerical hazards observed while building the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum Fault {
    SmallDivisor { node: NodeId, magnitude: f64 },
}

enum Op {
    Leaf,
    Unary(Unary, NodeId),
    Binary(Binary, NodeId, NodeId),
    Scale(NodeId, f64),
    Shift(NodeId),
    MatMul(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumLast(NodeId),
    Reshape(NodeId),
    Select {
        input: NodeId,
        axis: usize,
        index: usize,
    },
    Stack {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    SliceLast {
        input: NodeId,
        start: usize,
    },
    ConcatLast(Vec<NodeId>),
    CausalConv {
        u: NodeId,
        k: NodeId,
    },
    Custom {
        inputs: Vec<NodeId>,
        op: Box<dyn CustomOp>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Unary(_, a)
            | Op::Scale(a, _)
            | Op::Shift(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumLast(a)
            | Op::Reshape(a) => vec![*a],
            Op::Select { input, .. } | Op::SliceLast { input, .. } => vec![*input],
            Op::Binary(_, a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::CausalConv { u, k } => vec![*u, *k],
            Op::Stack { inputs, .. } | Op::ConcatLast(inputs) | Op::Custom { inputs, .. } => {
                inputs.clone()
            }
        }
    }
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Append-only record of a forward computation. Confined to one thread.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    faults: RefCell<Vec<Fault>>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Graph({} nodes)", self.nodes.borrow().len())
    }
}

/// Handle to a graph node.
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Var#{} {:?}",
            self.id,
            self.graph.nodes.borrow()[self.id].value
        )
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn faults(&self) -> Vec<Fault> {
        self.faults.borrow().clone()
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, false)
    }

    fn push_leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.inputs().iter().any(|&i| nodes[i].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: NodeId) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    /// Records the result of an externally computed op.
    pub fn custom<'g>(
        &'g self,
        inputs: &[Var<'g>],
        output: Tensor,
        op: Box<dyn CustomOp>,
    ) -> Var<'g> {
        self.push(
            output,
            Op::Custom {
                inputs: inputs.iter().map(|v| v.id).collect(),
                op,
            },
        )
    }

    /// Reverse pass from a scalar root. Every gradient-requiring leaf gets an
    /// entry with the leaf's shape, zero if unreachable from the root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if root_value.numel() != 1 {
            return Err(TensorError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.id + 1];
        grads[root.id] = Some(Tensor::ones(root_value.shape()));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (input, gi) in self.input_grads(&nodes, id, &g)? {
                if input >= id {
                    return Err(TensorError::Internal(format!(
                        "node {id} references later node {input}"
                    )));
                }
                if !nodes[input].requires_grad {
                    continue;
                }
                if gi.shape() != nodes[input].value.shape() {
                    return Err(TensorError::Internal(format!(
                        "gradient shape {:?} for node {input} of shape {:?}",
                        gi.shape(),
                        nodes[input].value.shape()
                    )));
                }
                grads[input] = Some(match grads[input].take() {
                    Some(acc) => acc.zip_same(&gi, |a, b| a + b),
                    None => gi,
                });
            }
        }

        let mut out = HashMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                let g = grads
                    .get_mut(id)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros_like(&node.value));
                out.insert(id, g);
            }
        }
        Ok(Gradients { grads: out })
    }

    fn input_grads(
        &self,
        nodes: &Ref<'_, Vec<Node>>,
        id: NodeId,
        g: &Tensor,
    ) -> Result<Vec<(NodeId, Tensor)>> {
        let node = &nodes[id];
        let val = |i: NodeId| &nodes[i].value;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Unary(kind, a) => {
                let x = val(*a);
                let y = &node.value;
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(y.data()))
                    .map(|(&gg, (&xx, &yy))| gg * kind.derivative(xx, yy))
                    .collect();
                vec![(*a, Tensor::new(x.shape().to_vec(), d)?)]
            }
            Op::Binary(kind, a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (ga, gb) = match kind {
                    Binary::Add => (g.clone(), g.clone()),
                    Binary::Sub => (g.clone(), g.map(|x| -x)),
                    Binary::Mul => (
                        ops::broadcast_binary("mul_grad", g, bv, |x, y| x * y)?,
                        ops::broadcast_binary("mul_grad", g, av, |x, y| x * y)?,
                    ),
                    Binary::Div => {
                        let ga = ops::broadcast_binary("div_grad", g, bv, |x, y| x / y)?;
                        let q = ops::broadcast_binary("div_grad", av, bv, |x, y| x / (y * y))?;
                        let gb = ops::broadcast_binary("div_grad", g, &q, |x, y| -x * y)?;
                        (ga, gb)
                    }
                };
                vec![
                    (*a, ops::reduce_to_shape(&ga, av.shape())),
                    (*b, ops::reduce_to_shape(&gb, bv.shape())),
                ]
            }
            Op::Scale(a, s) => vec![(*a, g.map(|x| x * s))],
            Op::Shift(a) => vec![(*a, g.clone())],
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let ga = ops::matmul_uncounted(g, &ops::transpose_last2(bv))?;
                let gb = ops::matmul_uncounted(&ops::transpose_last2(av), g)?;
                vec![
                    (*a, ops::reduce_to_shape(&ga, av.shape())),
                    (*b, ops::reduce_to_shape(&gb, bv.shape())),
                ]
            }
            Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.data()[0]))],
            Op::Mean(a) => {
                let n = val(*a).numel().max(1) as f64;
                vec![(*a, Tensor::full(val(*a).shape(), g.data()[0] / n))]
            }
            Op::SumLast(a) => {
                let shape = val(*a).shape();
                let n = *shape.last().unwrap_or(&1);
                let gd = g.data();
                let d: Vec<f64> = (0..val(*a).numel()).map(|i| gd[i / n.max(1)]).collect();
                vec![(*a, Tensor::new(shape.to_vec(), d)?)]
            }
            Op::Reshape(a) => vec![(*a, g.reshape(val(*a).shape())?)],
            Op::Select { input, axis, index } => {
                let shape = val(*input).shape();
                let outer: usize = shape[..*axis].iter().product();
                let len = shape[*axis];
                let inner: usize = shape[*axis + 1..].iter().product();
                let mut d = vec![0.0; val(*input).numel()];
                for o in 0..outer {
                    let base = (o * len + index) * inner;
                    d[base..base + inner].copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                }
                vec![(*input, Tensor::new(shape.to_vec(), d)?)]
            }
            Op::Stack { inputs, axis } => inputs
                .iter()
                .enumerate()
                .map(|(i, &inp)| Ok((inp, ops::select(g, *axis, i)?)))
                .collect::<Result<_>>()?,
            Op::SliceLast { input, start } => {
                let shape = val(*input).shape();
                let n = *shape.last().unwrap();
                let w = *g.shape().last().unwrap();
                let rows = val(*input).numel() / n.max(1);
                let mut d = vec![0.0; val(*input).numel()];
                for r in 0..rows {
                    d[r * n + start..r * n + start + w]
                        .copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                vec![(*input, Tensor::new(shape.to_vec(), d)?)]
            }
            Op::ConcatLast(inputs) => {
                let mut start = 0;
                let mut out = Vec::with_capacity(inputs.len());
                for &inp in inputs {
                    let w = *val(inp).shape().last().unwrap();
                    out.push((inp, ops::slice_last(g, start, w)?));
                    start += w;
                }
                out
            }
            Op::CausalConv { u, k } => {
                let (gu, gk) = conv::causal_conv_channels_backward(val(*u), val(*k), g)?;
                vec![(*u, gu), (*k, gk)]
            }
            Op::Custom { inputs, op } => {
                let gs = op.backward(g)?;
                if gs.len() != inputs.len() {
                    return Err(TensorError::Internal(format!(
                        "custom op {} returned {} gradients for {} inputs",
                        op.name(),
                        gs.len(),
                        inputs.len()
                    )));
                }
                inputs
                    .iter()
                    .zip(gs)
                    .filter_map(|(&i, g)| g.map(|g| (i, g)))
                    .collect()
            }
        })
    }
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: &Var<'_>) -> Option<&Tensor> {
        self.grads.get(&v.id)
    }

    pub fn by_id(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Tensor {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    pub fn unary(self, kind: Unary) -> Var<'g> {
        let v = self.value().map(|x| kind.apply(x));
        self.graph.push(v, Op::Unary(kind, self.id))
    }

    pub fn binary(self, kind: Binary, other: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        let v = match kind {
            Binary::Add => ops::broadcast_binary(kind.name(), &a, &b, |x, y| x + y)?,
            Binary::Sub => ops::broadcast_binary(kind.name(), &a, &b, |x, y| x - y)?,
            Binary::Mul => ops::broadcast_binary(kind.name(), &a, &b, |x, y| x * y)?,
            Binary::Div => {
                let smallest = b.data().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
                let v = ops::broadcast_binary(kind.name(), &a, &b, |x, y| x / y)?;
                if smallest < DIV_FAULT_THRESHOLD {
                    self.graph.faults.borrow_mut().push(Fault::SmallDivisor {
                        node: self.graph.len(),
                        magnitude: smallest,
                    });
                }
                v
            }
        };
        Ok(self.graph.push(v, Op::Binary(kind, self.id, other.id)))
    }

    // fallible, so not the operator traits
    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(Binary::Add, other)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(Binary::Sub, other)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(Binary::Mul, other)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn div(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(Binary::Div, other)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(self) -> Var<'g> {
        self.unary(Unary::Neg)
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(Unary::Exp)
    }

    pub fn ln(self) -> Var<'g> {
        self.unary(Unary::Log)
    }

    pub fn relu(self) -> Var<'g> {
        self.unary(Unary::Relu)
    }

    pub fn gelu(self) -> Var<'g> {
        self.unary(Unary::Gelu)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(Unary::Sigmoid)
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(Unary::Tanh)
    }

    pub fn softplus(self) -> Var<'g> {
        self.unary(Unary::Softplus)
    }

    pub fn sqrt(self) -> Var<'g> {
        self.unary(Unary::Sqrt)
    }

    pub fn square(self) -> Var<'g> {
        self.unary(Unary::Square)
    }

    pub fn scale(self, s: f64) -> Var<'g> {
        let v = self.value().map(|x| x * s);
        self.graph.push(v, Op::Scale(self.id, s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'g> {
        let v = self.value().map(|x| x + s);
        self.graph.push(v, Op::Shift(self.id))
    }

    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        let v = ops::matmul(&self.value(), &other.value())?;
        Ok(self.graph.push(v, Op::MatMul(self.id, other.id)))
    }

    pub fn sum(self) -> Var<'g> {
        let v = Tensor::scalar(self.value().sum_all());
        self.graph.push(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'g> {
        let t = self.value();
        let v = Tensor::scalar(t.sum_all() / t.numel().max(1) as f64);
        self.graph.push(v, Op::Mean(self.id))
    }

    /// Sum over the last axis, kept with size 1.
    pub fn sum_last(self) -> Var<'g> {
        let v = ops::sum_last(&self.value());
        self.graph.push(v, Op::SumLast(self.id))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let v = self.value().reshape(shape)?;
        Ok(self.graph.push(v, Op::Reshape(self.id)))
    }

    pub fn select(self, axis: usize, index: usize) -> Result<Var<'g>> {
        let v = ops::select(&self.value(), axis, index)?;
        Ok(self.graph.push(
            v,
            Op::Select {
                input: self.id,
                axis,
                index,
            },
        ))
    }

    pub fn stack(vars: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let first = vars.first().ok_or_else(|| TensorError::Invalid {
            op: "stack",
            msg: "no inputs".into(),
        })?;
        let values: Vec<Tensor> = vars.iter().map(|v| v.value()).collect();
        let v = ops::stack(&values, axis)?;
        Ok(first.graph.push(
            v,
            Op::Stack {
                inputs: vars.iter().map(|v| v.id).collect(),
                axis,
            },
        ))
    }

    pub fn slice_last(self, start: usize, len: usize) -> Result<Var<'g>> {
        let v = ops::slice_last(&self.value(), start, len)?;
        Ok(self.graph.push(
            v,
            Op::SliceLast {
                input: self.id,
                start,
            },
        ))
    }

    pub fn concat_last(vars: &[Var<'g>]) -> Result<Var<'g>> {
        let first = vars.first().ok_or_else(|| TensorError::Invalid {
            op: "concat_last",
            msg: "no inputs".into(),
        })?;
        let values: Vec<Tensor> = vars.iter().map(|v| v.value()).collect();
        let v = ops::concat_last(&values)?;
        Ok(first
            .graph
            .push(v, Op::ConcatLast(vars.iter().map(|v| v.id).collect())))
    }

    /// Channelwise causal convolution of `self: [B, L, H]` with `kernel: [H, L]`.
    pub fn causal_conv(self, kernel: Var<'g>) -> Result<Var<'g>> {
        let v = conv::causal_conv_channels(&self.value(), &kernel.value())?;
        Ok(self.graph.push(
            v,
            Op::CausalConv {
                u: self.id,
                k: kernel.id,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn add_and_mul_examples() {
        let g = Graph::new();
        let a = g.constant(vec_t(&[1., 2.]));
        let b = g.constant(vec_t(&[3., 4.]));
        assert_eq!(a.add(b).unwrap().value().data(), &[4., 6.]);
        let ones = g.constant(Tensor::ones(&[2]));
        assert_eq!(a.mul(ones).unwrap().value(), a.value());
        let r = g.constant(vec_t(&[-1.5, 0.0, 2.5])).relu();
        assert_eq!(r.value().data(), &[0.0, 0.0, 2.5]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2]));
        let err = a.add(b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");
    }

    #[test]
    fn tiny_divisor_records_fault() {
        let g = Graph::new();
        let a = g.constant(vec_t(&[1.0]));
        let b = g.constant(vec_t(&[1e-301]));
        let _ = a.div(b).unwrap();
        assert_eq!(g.faults().len(), 1);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let g = Graph::new();
        let x = g.param(vec_t(&[1., 2., 3.]));
        let grads = g.backward(x.sum()).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[1., 1., 1.]);
    }

    #[test]
    fn square_sum_gradient() {
        let g = Graph::new();
        let x = g.param(vec_t(&[2., -3.]));
        let root = x.mul(x).unwrap().sum();
        let grads = g.backward(root).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[4., -6.]);
    }

    #[test]
    fn root_gradient_is_one_and_non_scalar_rejected() {
        let g = Graph::new();
        let x = g.param(vec_t(&[1., 2.]));
        assert!(matches!(g.backward(x), Err(TensorError::NonScalarRoot(_))));
        let s = g.param(Tensor::scalar(3.0));
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(&s).unwrap().data(), &[1.0]);
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let g = Graph::new();
        let x = g.param(vec_t(&[1., 2.]));
        let y = g.param(Tensor::zeros(&[3, 2]));
        let grads = g.backward(x.sum()).unwrap();
        assert_eq!(grads.get(&y).unwrap(), &Tensor::zeros(&[3, 2]));
    }

    #[test]
    fn matmul_gradient_dot_product() {
        // d/da sum([[a, b]] . [[c], [d]]) = c
        let g = Graph::new();
        let row = g.param(Tensor::new(vec![1, 2], vec![0.7, -1.1]).unwrap());
        let col = g.param(Tensor::new(vec![2, 1], vec![2.5, 0.3]).unwrap());
        let root = row.matmul(col).unwrap().sum();
        let grads = g.backward(root).unwrap();
        assert_eq!(grads.get(&row).unwrap().data(), &[2.5, 0.3]);
        assert_eq!(grads.get(&col).unwrap().data(), &[0.7, -1.1]);
    }

    #[test]
    fn broadcast_gradient_reduces() {
        let g = Graph::new();
        let x = g.param(Tensor::new(vec![2, 3], vec![1.; 6]).unwrap());
        let b = g.param(vec_t(&[1., 2., 3.]));
        let root = x.mul(b).unwrap().sum();
        let grads = g.backward(root).unwrap();
        assert_eq!(grads.get(&b).unwrap().data(), &[2., 2., 2.]);
        assert_eq!(grads.get(&x).unwrap().data(), &[1., 2., 3., 1., 2., 3.]);
    }

    #[test]
    fn constants_are_not_recorded() {
        let g = Graph::new();
        let a = g.constant(vec_t(&[1.0]));
        let b = a.exp().tanh();
        assert!(!b.requires_grad());
    }
}
