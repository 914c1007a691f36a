use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels;
use super::{Result, Tensor, TensorError};

/// Primitive operation kinds understood by [`Graph::apply`].
///
/// Shape rules (`a`, `b` are the first and second inputs):
///
/// | kind | inputs | output |
/// |------|--------|--------|
/// | `matmul` | `[m,k]`, `[k,n]` | `[m,n]` |
/// | `add`/`sub`/`mul`/`div` | broadcast-compatible | broadcast shape |
/// | `scale` | any | same, times `attrs.value` |
/// | `transpose` | `[m,n]` | `[n,m]` |
/// | `reshape` | any | `attrs.shape` (same element count) |
/// | `concat` | equal except on `attrs.axis` | summed along axis |
/// | `slice` | any | `attrs.start..attrs.end` along `attrs.axis` |
/// | `softmax`/`log_softmax` | any | same, normalized along the last axis |
/// | elementwise unary | any | same |
/// | `layer_norm` | `[..,n]` (+ gain `[n]`, bias `[n]`) | same |
/// | `conv1d` | `[T,c_in]`, `[k,c_in,c_out]` | `[ceil(T/stride), c_out]`, zero same-padding |
/// | `masked_fill` | any | same, masked entries set to `attrs.value` |
/// | `sum`/`mean` | any | `[1]`, or the axis removed when `attrs.axis` is set |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    Scale,
    Transpose,
    Reshape,
    Concat,
    Slice,
    Softmax,
    LogSoftmax,
    Sigmoid,
    Gelu,
    Relu,
    Tanh,
    Abs,
    Exp,
    Log,
    LayerNorm,
    Conv1d,
    MaskedFill,
    Sum,
    Mean,
}

impl OpKind {
    pub const ALL: [OpKind; 24] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Scale,
        OpKind::Transpose,
        OpKind::Reshape,
        OpKind::Concat,
        OpKind::Slice,
        OpKind::Softmax,
        OpKind::LogSoftmax,
        OpKind::Sigmoid,
        OpKind::Gelu,
        OpKind::Relu,
        OpKind::Tanh,
        OpKind::Abs,
        OpKind::Exp,
        OpKind::Log,
        OpKind::LayerNorm,
        OpKind::Conv1d,
        OpKind::MaskedFill,
        OpKind::Sum,
        OpKind::Mean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Scale => "scale",
            OpKind::Transpose => "transpose",
            OpKind::Reshape => "reshape",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::Softmax => "softmax",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Gelu => "gelu",
            OpKind::Relu => "relu",
            OpKind::Tanh => "tanh",
            OpKind::Abs => "abs",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Conv1d => "conv1d",
            OpKind::MaskedFill => "masked_fill",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| TensorError::UnknownKind(s.to_string()))
    }
}

/// Per-operation attributes. Fields irrelevant to a kind are ignored.
#[derive(Clone, Debug, Default)]
pub struct Attrs {
    pub axis: Option<usize>,
    pub start: usize,
    pub end: usize,
    pub value: f64,
    pub stride: usize,
    pub shape: Vec<usize>,
    pub mask: Option<Arc<Vec<bool>>>,
    pub eps: f64,
}

impl Attrs {
    pub fn axis(axis: usize) -> Self {
        Attrs {
            axis: Some(axis),
            ..Attrs::default()
        }
    }

    pub fn value(value: f64) -> Self {
        Attrs {
            value,
            ..Attrs::default()
        }
    }
}

/// A differentiable operation implemented outside the primitive set.
///
/// The caller computes the forward value; the graph calls `backward` with
/// the upstream gradient of the output and expects one optional gradient
/// buffer per input, shaped like that input.
pub trait CustomOp: fmt::Debug {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &[f64])
        -> Vec<Option<Vec<f64>>>;
}

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum NodeOp {
    Leaf,
    Prim(OpKind, Attrs, Vec<f64>),
    Custom(Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: NodeOp,
    inputs: Vec<usize>,
    requires_grad: bool,
}

/// Eagerly evaluated computation graph. Node order is creation order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    dropout: Option<ChaCha8Rng>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// A graph on which [`Graph::dropout`] is active, with masks drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            dropout: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, NodeOp::Leaf, Vec::new(), true)
    }

    /// Input that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, NodeOp::Leaf, Vec::new(), false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: NodeOp, inputs: Vec<usize>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Evaluate `kind` on `inputs` and record the result.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var], attrs: Attrs) -> Result<Var> {
        let (value, saved) = {
            let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            kernels::forward(kind, &values, &attrs)?
        };
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(
            value,
            NodeOp::Prim(kind, attrs, saved),
            inputs.iter().map(|v| v.0).collect(),
            requires_grad,
        ))
    }

    /// Record a custom operation whose forward value was computed by the caller.
    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var], output: Tensor) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(
            output,
            NodeOp::Custom(op),
            inputs.iter().map(|v| v.0).collect(),
            requires_grad,
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b], Attrs::default())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b], Attrs::default())
    }

    /// Inverted dropout: zero each entry with probability `rate` and scale
    /// survivors by `1 / (1 - rate)`. The identity unless built with
    /// [`Graph::training`].
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var> {
        let Some(rng) = self.dropout.as_mut() else {
            return Ok(a);
        };
        if rate <= 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let shape = self.nodes[a.0].value.shape().to_vec();
        let n = shape.iter().product();
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mask = self.constant(Tensor::new(shape, mask)?);
        self.mul(a, mask)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Sub, &[a, b], Attrs::default())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b], Attrs::default())
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Div, &[a, b], Attrs::default())
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.apply(OpKind::Scale, &[a], Attrs::value(factor))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Transpose, &[a], Attrs::default())
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.apply(
            OpKind::Reshape,
            &[a],
            Attrs {
                shape,
                ..Attrs::default()
            },
        )
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.apply(OpKind::Concat, parts, Attrs::axis(axis))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.apply(
            OpKind::Slice,
            &[a],
            Attrs {
                axis: Some(axis),
                start,
                end,
                ..Attrs::default()
            },
        )
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Softmax, &[a], Attrs::default())
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::LogSoftmax, &[a], Attrs::default())
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sigmoid, &[a], Attrs::default())
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Gelu, &[a], Attrs::default())
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Relu, &[a], Attrs::default())
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Tanh, &[a], Attrs::default())
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Abs, &[a], Attrs::default())
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Exp, &[a], Attrs::default())
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Log, &[a], Attrs::default())
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        self.apply(
            OpKind::LayerNorm,
            &[x, gain, bias],
            Attrs {
                eps,
                ..Attrs::default()
            },
        )
    }

    pub fn conv1d(&mut self, x: Var, weight: Var, stride: usize) -> Result<Var> {
        self.apply(
            OpKind::Conv1d,
            &[x, weight],
            Attrs {
                stride,
                ..Attrs::default()
            },
        )
    }

    pub fn masked_fill(&mut self, a: Var, mask: Arc<Vec<bool>>, value: f64) -> Result<Var> {
        self.apply(
            OpKind::MaskedFill,
            &[a],
            Attrs {
                mask: Some(mask),
                value,
                ..Attrs::default()
            },
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sum, &[a], Attrs::default())
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(OpKind::Sum, &[a], Attrs::axis(axis))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Mean, &[a], Attrs::default())
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(OpKind::Mean, &[a], Attrs::axis(axis))
    }

    /// `x W + b` for `x: [n, d_in]`, `W: [d_in, d_out]`, `b: [d_out]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        match bias {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.nodes[loss.0].value.shape();
        if shape != [1] {
            return Err(TensorError::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || node.inputs.is_empty() {
                continue;
            }
            let Some(g_out) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&i| self.nodes[i].requires_grad)
                .collect();
            let input_grads = match &node.op {
                NodeOp::Leaf => unreachable!("leaf nodes have no inputs"),
                NodeOp::Prim(kind, attrs, saved) => {
                    kernels::backward(*kind, attrs, &inputs, &node.value, saved, &g_out, &needs)
                }
                NodeOp::Custom(op) => op.backward(&inputs, &node.value, &g_out),
            };
            for ((&input, grad), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let Some(grad) = grad else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(grad.len(), self.nodes[input].value.len());
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                    slot @ None => *slot = Some(grad),
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
///
/// Only leaf gradients (from [`Graph::param`]) are retained; intermediate
/// buffers are released during the sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zero when `v` is unreachable.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Borrowed gradient buffer, `None` when unreachable.
    pub fn raw(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads[v.0].take()
    }
}
