use std::sync::Arc;

use crate::scalar::Real;

use super::sparse::CsrMatrix;
use super::{GraphError, Tensor};

/// Handle of a node inside the graph under construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryFn {
    /// `max(x, 0)`; derivative 1 at `x = 0` (taken from the right).
    Relu,
    Exp,
    Log,
    /// sRGB transfer curve decoding to linear light.
    SrgbToLinear,
    /// CIELAB companding `f(t)`: cube root above `(6/29)³`, linear below.
    LabF,
}

const SRGB_KNEE: f64 = 0.04045;
const LAB_DELTA: f64 = 6.0 / 29.0;

impl UnaryFn {
    pub fn name(self) -> &'static str {
        match self {
            UnaryFn::Relu => "relu",
            UnaryFn::Exp => "exp",
            UnaryFn::Log => "log",
            UnaryFn::SrgbToLinear => "srgb_to_linear",
            UnaryFn::LabF => "lab_f",
        }
    }

    #[inline]
    pub fn apply<S: Real>(self, x: S) -> S {
        match self {
            UnaryFn::Relu => x.max(S::zero()),
            UnaryFn::Exp => x.exp(),
            UnaryFn::Log => x.ln(),
            UnaryFn::SrgbToLinear => {
                if x <= S::from_f64_lossy(SRGB_KNEE) {
                    x / S::from_f64_lossy(12.92)
                } else {
                    ((x + S::from_f64_lossy(0.055)) / S::from_f64_lossy(1.055))
                        .powf(S::from_f64_lossy(2.4))
                }
            }
            UnaryFn::LabF => {
                let d = S::from_f64_lossy(LAB_DELTA);
                if x > d * d * d {
                    x.cbrt()
                } else {
                    x / (S::from_f64_lossy(3.0) * d * d) + S::from_f64_lossy(4.0 / 29.0)
                }
            }
        }
    }

    /// Derivative at `x`, given the forward value `y = f(x)`.
    #[inline]
    pub fn derivative<S: Real>(self, x: S, y: S) -> S {
        match self {
            UnaryFn::Relu => {
                if x >= S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            UnaryFn::Exp => y,
            UnaryFn::Log => x.recip(),
            UnaryFn::SrgbToLinear => {
                if x <= S::from_f64_lossy(SRGB_KNEE) {
                    S::from_f64_lossy(1.0 / 12.92)
                } else {
                    S::from_f64_lossy(2.4 / 1.055)
                        * ((x + S::from_f64_lossy(0.055)) / S::from_f64_lossy(1.055))
                            .powf(S::from_f64_lossy(1.4))
                }
            }
            UnaryFn::LabF => {
                let d = S::from_f64_lossy(LAB_DELTA);
                if x > d * d * d {
                    S::from_f64_lossy(1.0 / 3.0) / (y * y)
                } else {
                    (S::from_f64_lossy(3.0) * d * d).recip()
                }
            }
        }
    }
}

/// Fixed bilinear resampling pattern: for every output pixel, the (row, col)
/// position in the source image it pulls from. Sample positions outside the
/// source read `fill`.
#[derive(Clone, Debug)]
pub struct SampleGrid<S> {
    pub height: usize,
    pub width: usize,
    pub coords: Vec<(S, S)>,
    pub fill: S,
}

#[derive(Clone, Debug)]
pub enum Op<S> {
    Input(String),
    Constant(Arc<Tensor<S>>),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, S),
    Offset(NodeId, S),
    MatMul(NodeId, NodeId),
    SparseMatVec(NodeId, Arc<CsrMatrix<S>>),
    BilinearSample(NodeId, Arc<SampleGrid<S>>),
    Unary(NodeId, UnaryFn),
    /// Clamp to `[lo, hi]`; derivative 1 on the closed interval.
    Clamp(NodeId, S, S),
    /// `x^p`; derivative taken as 0 at `x = 0` when `p < 1`.
    Power(NodeId, S),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
    },
    MaxPool2(NodeId),
    LogSoftmax(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Reshape(NodeId),
}

impl<S> Op<S> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Constant(_) => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::MatMul(..) => "matmul",
            Op::SparseMatVec(..) => "sparse_matvec",
            Op::BilinearSample(..) => "bilinear_sample",
            Op::Unary(_, f) => f.name(),
            Op::Clamp(..) => "clamp",
            Op::Power(..) => "power",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2(_) => "maxpool2",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Reshape(_) => "reshape",
        }
    }

    pub(crate) fn parents(&self) -> Vec<NodeId> {
        match *self {
            Op::Input(_) | Op::Constant(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![a, b],
            Op::Conv2d {
                input,
                kernel,
                bias,
            } => vec![input, kernel, bias],
            Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::SparseMatVec(a, _)
            | Op::BilinearSample(a, _)
            | Op::Unary(a, _)
            | Op::Clamp(a, ..)
            | Op::Power(a, _)
            | Op::MaxPool2(a)
            | Op::LogSoftmax(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a) => vec![a],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node<S> {
    pub op: Op<S>,
    pub shape: Vec<usize>,
    pub label: Option<String>,
}

/// Immutable computation graph. Nodes are stored in a valid topological
/// order: every node refers only to earlier nodes.
#[derive(Clone, Debug)]
pub struct Graph<S> {
    pub(crate) nodes: Vec<Node<S>>,
    pub(crate) inputs: Vec<(String, NodeId)>,
    pub(crate) outputs: Vec<(String, NodeId)>,
}

impl<S: Real> Graph<S> {
    pub fn nodes(&self) -> &[Node<S>] {
        &self.nodes
    }

    pub fn input_names(&self) -> impl Iterator<Item = &str> {
        self.inputs.iter().map(|(n, _)| n.as_str())
    }

    pub fn output_names(&self) -> impl Iterator<Item = &str> {
        self.outputs.iter().map(|(n, _)| n.as_str())
    }

    pub(crate) fn input_node(&self, name: &str) -> Option<NodeId> {
        self.inputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, id)| id)
    }

    pub(crate) fn output_node(&self, name: &str) -> Result<NodeId, GraphError> {
        self.outputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, id)| id)
            .ok_or_else(|| GraphError::UnknownOutput(name.to_string()))
    }

    pub fn output_shape(&self, name: &str) -> Result<&[usize], GraphError> {
        let id = self.output_node(name)?;
        Ok(&self.nodes[id.0].shape)
    }

    pub(crate) fn describe(&self, id: NodeId) -> String {
        let node = &self.nodes[id.0];
        match &node.label {
            Some(l) => format!("#{} {} ({l})", id.0, node.op.name()),
            None => format!("#{} {}", id.0, node.op.name()),
        }
    }
}

/// Incremental graph construction with shape inference.
#[derive(Debug, Default)]
pub struct GraphBuilder<S> {
    nodes: Vec<Node<S>>,
    inputs: Vec<(String, NodeId)>,
    outputs: Vec<(String, NodeId)>,
}

impl<S: Real> GraphBuilder<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn build(self) -> Graph<S> {
        Graph {
            nodes: self.nodes,
            inputs: self.inputs,
            outputs: self.outputs,
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    fn push(&mut self, op: Op<S>, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node {
            op,
            shape,
            label: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn mismatch(&self, op: &str, detail: String) -> GraphError {
        GraphError::ShapeMismatch {
            node: format!("#{} {op}", self.nodes.len()),
            detail,
        }
    }

    /// Attaches a human-readable label used in error messages.
    pub fn label(&mut self, id: NodeId, label: impl Into<String>) -> NodeId {
        self.nodes[id.0].label = Some(label.into());
        id
    }

    /// Declares a named input. Panics if the name is already bound.
    pub fn input(&mut self, name: &str, shape: impl Into<Vec<usize>>) -> NodeId {
        assert!(
            self.inputs.iter().all(|(n, _)| n != name),
            "duplicate graph input {name}"
        );
        let id = self.push(Op::Input(name.to_string()), shape.into());
        self.inputs.push((name.to_string(), id));
        id
    }

    pub fn constant(&mut self, value: impl Into<Arc<Tensor<S>>>) -> NodeId {
        let value = value.into();
        let shape = value.shape().to_vec();
        self.push(Op::Constant(value), shape)
    }

    pub fn output(&mut self, name: &str, id: NodeId) {
        self.outputs.retain(|(n, _)| n != name);
        self.outputs.push((name.to_string(), id));
    }

    fn same_shape(&mut self, op: &str, a: NodeId, b: NodeId) -> Result<Vec<usize>, GraphError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(self.mismatch(op, format!("operands {sa:?} and {sb:?}")));
        }
        Ok(sa.to_vec())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.same_shape("add", a, b)?;
        Ok(self.push(Op::Add(a, b), shape))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.same_shape("sub", a, b)?;
        Ok(self.push(Op::Sub(a, b), shape))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.same_shape("mul", a, b)?;
        Ok(self.push(Op::Mul(a, b), shape))
    }

    pub fn scale(&mut self, a: NodeId, factor: S) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::Scale(a, factor), shape)
    }

    pub fn offset(&mut self, a: NodeId, shift: S) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::Offset(a, shift), shape)
    }

    /// `[m, k] × [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.mismatch("matmul", format!("operands {sa:?} and {sb:?}")));
        }
        Ok(self.push(Op::MatMul(a, b), vec![sa[0], sb[1]]))
    }

    /// Applies `matrix` to the rows of `input` viewed as `[cols, width]`,
    /// where `width` is the last input dimension; the result is reshaped to
    /// `out_shape`, whose last dimension must also be `width`.
    pub fn sparse_matvec(
        &mut self,
        input: NodeId,
        matrix: Arc<CsrMatrix<S>>,
        out_shape: impl Into<Vec<usize>>,
    ) -> Result<NodeId, GraphError> {
        let out_shape = out_shape.into();
        let si = self.shape(input).to_vec();
        let width = *si.last().unwrap_or(&1);
        let in_rows = si.iter().product::<usize>() / width.max(1);
        let out_width = *out_shape.last().unwrap_or(&1);
        let out_rows = out_shape.iter().product::<usize>() / out_width.max(1);
        if in_rows != matrix.cols() || out_rows != matrix.rows() || out_width != width {
            return Err(self.mismatch(
                "sparse_matvec",
                format!(
                    "{}x{} matrix cannot map {si:?} to {out_shape:?}",
                    matrix.rows(),
                    matrix.cols()
                ),
            ));
        }
        Ok(self.push(Op::SparseMatVec(input, matrix), out_shape))
    }

    /// Bilinear resampling of a `[H, W, C]` input on a fixed grid.
    pub fn bilinear_sample(
        &mut self,
        input: NodeId,
        grid: Arc<SampleGrid<S>>,
    ) -> Result<NodeId, GraphError> {
        let si = self.shape(input).to_vec();
        if si.len() != 3 || grid.coords.len() != grid.height * grid.width {
            return Err(self.mismatch(
                "bilinear_sample",
                format!(
                    "input {si:?} with a {}x{} grid of {} coordinates",
                    grid.height,
                    grid.width,
                    grid.coords.len()
                ),
            ));
        }
        let shape = vec![grid.height, grid.width, si[2]];
        Ok(self.push(Op::BilinearSample(input, grid), shape))
    }

    pub fn unary(&mut self, a: NodeId, f: UnaryFn) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::Unary(a, f), shape)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, UnaryFn::Relu)
    }

    pub fn clamp(&mut self, a: NodeId, lo: S, hi: S) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::Clamp(a, lo, hi), shape)
    }

    pub fn power(&mut self, a: NodeId, exponent: S) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::Power(a, exponent), shape)
    }

    /// Valid (unpadded), stride-1 convolution. Input `[H, W, Cin]`, kernel
    /// `[K, K, Cin, Cout]`, bias `[Cout]`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, GraphError> {
        let (si, sk, sb) = (
            self.shape(input).to_vec(),
            self.shape(kernel).to_vec(),
            self.shape(bias).to_vec(),
        );
        let ok = si.len() == 3
            && sk.len() == 4
            && sb.len() == 1
            && sk[2] == si[2]
            && sb[0] == sk[3]
            && sk[0] <= si[0]
            && sk[1] <= si[1];
        if !ok {
            return Err(self.mismatch(
                "conv2d",
                format!("input {si:?}, kernel {sk:?}, bias {sb:?}"),
            ));
        }
        let shape = vec![si[0] - sk[0] + 1, si[1] - sk[1] + 1, sk[3]];
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
            },
            shape,
        ))
    }

    /// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn maxpool2(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || s[0] < 2 || s[1] < 2 {
            return Err(self.mismatch("maxpool2", format!("input {s:?}")));
        }
        Ok(self.push(Op::MaxPool2(a), vec![s[0] / 2, s[1] / 2, s[2]]))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let s = self.shape(a).to_vec();
        if s.len() != 1 || s[0] == 0 {
            return Err(self.mismatch("log_softmax", format!("input {s:?} is not a vector")));
        }
        Ok(self.push(Op::LogSoftmax(a), s))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), vec![])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a), vec![])
    }

    pub fn reshape(
        &mut self,
        a: NodeId,
        shape: impl Into<Vec<usize>>,
    ) -> Result<NodeId, GraphError> {
        let shape = shape.into();
        let from = self.shape(a).to_vec();
        if from.iter().product::<usize>() != shape.iter().product::<usize>() {
            return Err(self.mismatch("reshape", format!("{from:?} to {shape:?}")));
        }
        Ok(self.push(Op::Reshape(a), shape))
    }

    /// Euclidean norm of all entries, as `sqrt(sum(a²))`.
    pub fn l2_norm(&mut self, a: NodeId) -> NodeId {
        let sq = self.power(a, S::from_f64_lossy(2.0));
        let total = self.sum(sq);
        self.power(total, S::from_f64_lossy(0.5))
    }

    /// Dense layer on a flattened input: `x·W + b` with `W: [n, m]`, `b: [m]`.
    pub fn dense(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, GraphError> {
        let n = self.shape(input).iter().product::<usize>();
        let row = self.reshape(input, [1, n])?;
        let prod = self.matmul(row, weight)?;
        let m = self.shape(prod)[1];
        let flat = self.reshape(prod, [m])?;
        self.add(flat, bias)
    }
}
