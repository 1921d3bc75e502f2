//! Static computation graphs over batched tensors with reverse-mode
//! differentiation.
//!
//! Every non-parameter node carries a leading batch dimension that is not
//! part of its declared shape. Parameters are unbatched. Nodes are stored in
//! creation order, which is a topological order.

use rand::Rng;

use crate::engine::tensor::{gemm, MatView, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

/// How gradients pass through rectifiers during the backward sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackwardMode {
    #[default]
    Standard,
    /// At every ReLU, pass the upstream gradient only where the forward
    /// input was positive and the upstream gradient is non-negative.
    Guided,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Op {
    Input,
    Param(usize),
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    OneMinus(NodeId),
    Scale(NodeId, f32),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Conv1d {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    },
    MaxPool1d {
        input: NodeId,
        size: usize,
        stride: usize,
    },
    Flatten(NodeId),
    Step {
        input: NodeId,
        index: usize,
    },
    SliceCols {
        input: NodeId,
        start: usize,
        len: usize,
    },
    Dropout {
        input: NodeId,
        rate: f32,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    /// Per-sample shape for batched nodes, full shape for parameters.
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<Param>,
    output: NodeId,
}

pub struct GraphBuilder {
    nodes: Vec<Node>,
    params: Vec<Param>,
}

impl GraphBuilder {
    /// Starts a graph whose input node (id 0) has per-sample `input_shape`.
    pub fn new(input_shape: &[usize]) -> Self {
        GraphBuilder {
            nodes: vec![Node {
                op: Op::Input,
                shape: input_shape.to_vec(),
            }],
            params: Vec::new(),
        }
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node { op, shape });
        self.nodes.len() - 1
    }

    fn is_param(&self, id: NodeId) -> bool {
        matches!(self.nodes[id].op, Op::Param(_))
    }

    fn batched(&self, id: NodeId, what: &str) -> Result<&[usize]> {
        if id >= self.nodes.len() {
            return Err(Error::Shape(format!("{what}: unknown node {id}")));
        }
        if self.is_param(id) {
            return Err(Error::Shape(format!("{what}: expected a batched node, got a parameter")));
        }
        Ok(&self.nodes[id].shape)
    }

    fn param_shape(&self, id: NodeId, what: &str) -> Result<&[usize]> {
        if id >= self.nodes.len() || !self.is_param(id) {
            return Err(Error::Shape(format!("{what}: expected a parameter node")));
        }
        Ok(&self.nodes[id].shape)
    }

    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.params.push(Param {
            name: name.into(),
            value,
        });
        let idx = self.params.len() - 1;
        self.push(Op::Param(idx), shape)
    }

    /// `[N, K] · [K, M]` with a parameter right-hand side.
    pub fn matmul(&mut self, a: NodeId, w: NodeId) -> Result<NodeId> {
        let sa = self.batched(a, "matmul")?.to_vec();
        let sw = self.param_shape(w, "matmul")?.to_vec();
        if sa.len() != 1 || sw.len() != 2 || sa[0] != sw[0] {
            return Err(Error::Shape(format!("matmul: {sa:?} × {sw:?}")));
        }
        Ok(self.push(Op::MatMul(a, w), vec![sw[1]]))
    }

    /// Adds a parameter vector along the last axis.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let sa = self.batched(a, "add_bias")?.to_vec();
        let sb = self.param_shape(bias, "add_bias")?;
        if sb.len() != 1 || sa.last() != Some(&sb[0]) {
            return Err(Error::Shape(format!("add_bias: {sa:?} + {sb:?}")));
        }
        Ok(self.push(Op::AddBias(a, bias), sa))
    }

    /// Affine layer `a · w + b`.
    pub fn dense(&mut self, a: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let h = self.matmul(a, w)?;
        self.add_bias(h, b)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<Vec<usize>> {
        let sa = self.batched(a, what)?;
        let sb = self.batched(b, what)?;
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(sa.to_vec())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape(a, b, "add")?;
        Ok(self.push(Op::Add(a, b), s))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape(a, b, "sub")?;
        Ok(self.push(Op::Sub(a, b), s))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape(a, b, "mul")?;
        Ok(self.push(Op::Mul(a, b), s))
    }

    pub fn one_minus(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.batched(a, "one_minus")?.to_vec();
        Ok(self.push(Op::OneMinus(a), s))
    }

    pub fn scale(&mut self, a: NodeId, factor: f32) -> Result<NodeId> {
        let s = self.batched(a, "scale")?.to_vec();
        Ok(self.push(Op::Scale(a, factor), s))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.batched(a, "relu")?.to_vec();
        Ok(self.push(Op::Relu(a), s))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.batched(a, "tanh")?.to_vec();
        Ok(self.push(Op::Tanh(a), s))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.batched(a, "sigmoid")?.to_vec();
        Ok(self.push(Op::Sigmoid(a), s))
    }

    /// Channels-last 1-D convolution: input `[T, C_in]`, weight
    /// `[K, C_in, C_out]`, optional bias `[C_out]`.
    pub fn conv1d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let si = self.batched(input, "conv1d")?.to_vec();
        let sw = self.param_shape(weight, "conv1d")?.to_vec();
        if si.len() != 2 || sw.len() != 3 || sw[1] != si[1] {
            return Err(Error::Shape(format!("conv1d: input {si:?}, weight {sw:?}")));
        }
        if let Some(b) = bias {
            let sb = self.param_shape(b, "conv1d bias")?;
            if sb != [sw[2]] {
                return Err(Error::Shape(format!("conv1d bias {sb:?} for {} channels", sw[2])));
            }
        }
        if stride == 0 {
            return Err(Error::Shape("conv1d: stride must be positive".into()));
        }
        let padded = si[0] + 2 * padding;
        if sw[0] == 0 || sw[0] > padded {
            return Err(Error::Shape(format!(
                "conv1d: kernel {} longer than padded input {padded}",
                sw[0]
            )));
        }
        let t_out = (padded - sw[0]) / stride + 1;
        Ok(self.push(
            Op::Conv1d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            vec![t_out, sw[2]],
        ))
    }

    /// Max pooling along the first per-sample axis of `[T, C]`.
    pub fn max_pool1d(&mut self, input: NodeId, size: usize, stride: usize) -> Result<NodeId> {
        let si = self.batched(input, "max_pool1d")?.to_vec();
        if si.len() != 2 || size == 0 || stride == 0 || size > si[0] {
            return Err(Error::Shape(format!(
                "max_pool1d: size {size}, stride {stride} on {si:?}"
            )));
        }
        let t_out = (si[0] - size) / stride + 1;
        Ok(self.push(Op::MaxPool1d { input, size, stride }, vec![t_out, si[1]]))
    }

    pub fn flatten(&mut self, input: NodeId) -> Result<NodeId> {
        let si = self.batched(input, "flatten")?;
        let n = si.iter().product();
        Ok(self.push(Op::Flatten(input), vec![n]))
    }

    /// Row `index` of a `[T, B]` input, giving `[B]`.
    pub fn step(&mut self, input: NodeId, index: usize) -> Result<NodeId> {
        let si = self.batched(input, "step")?.to_vec();
        if si.len() != 2 || index >= si[0] {
            return Err(Error::Shape(format!("step {index} of {si:?}")));
        }
        Ok(self.push(Op::Step { input, index }, vec![si[1]]))
    }

    pub fn slice_cols(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let si = self.batched(input, "slice_cols")?.to_vec();
        if si.len() != 1 || start + len > si[0] || len == 0 {
            return Err(Error::Shape(format!("slice [{start}, {}) of {si:?}", start + len)));
        }
        Ok(self.push(Op::SliceCols { input, start, len }, vec![len]))
    }

    /// Inverted dropout; identity outside training passes.
    pub fn dropout(&mut self, input: NodeId, rate: f32) -> Result<NodeId> {
        let si = self.batched(input, "dropout")?.to_vec();
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Shape(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(input);
        }
        Ok(self.push(Op::Dropout { input, rate }, si))
    }

    pub fn finish(self, output: NodeId) -> Result<Graph> {
        self.batched(output, "output")?;
        Ok(Graph {
            nodes: self.nodes,
            params: self.params,
            output,
        })
    }
}

/// Selects the scalar to differentiate.
#[derive(Debug, Clone, Copy)]
pub enum Selector<'a> {
    /// Sum over rows of `output[row, columns[row]]` for a `[N, M]` output.
    Columns(&'a [usize]),
    /// An explicit upstream gradient with the output's full shape.
    Upstream(&'a Tensor),
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub input: Tensor,
    /// One entry per parameter, in declaration order.
    pub params: Vec<Tensor>,
}

/// Cached activations of one forward pass.
#[derive(Debug)]
pub struct Activations<'g> {
    graph: &'g Graph,
    batch: usize,
    values: Vec<Option<Tensor>>,
    masks: Vec<Option<Vec<f32>>>,
}

impl Graph {
    pub fn input_shape(&self) -> &[usize] {
        &self.nodes[0].shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.nodes[self.output].shape
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn contains_relu(&self) -> bool {
        self.nodes.iter().any(|n| matches!(n.op, Op::Relu(_)))
    }

    /// Evaluation-mode forward pass (dropout disabled).
    pub fn forward(&self, x: &Tensor) -> Result<Activations<'_>> {
        self.run(x, None::<&mut rand_chacha::ChaCha8Rng>)
    }

    /// Training-mode forward pass; dropout masks are drawn from `rng`.
    pub fn forward_train<R: Rng>(&self, x: &Tensor, rng: &mut R) -> Result<Activations<'_>> {
        self.run(x, Some(rng))
    }

    /// Convenience: forward pass returning only the output.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut acts = self.forward(x)?;
        Ok(acts.values[self.output].take().expect("output computed"))
    }

    fn run<R: Rng>(&self, x: &Tensor, mut rng: Option<&mut R>) -> Result<Activations<'_>> {
        let in_shape = self.input_shape();
        if x.shape().len() != in_shape.len() + 1 || &x.shape()[1..] != in_shape {
            return Err(Error::Shape(format!(
                "input {:?} does not match [N, {}]",
                x.shape(),
                in_shape
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        let n = x.rows();
        let mut values: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        let mut masks: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];

        for (id, node) in self.nodes.iter().enumerate() {
            let get = |i: NodeId| -> &Tensor {
                match self.nodes[i].op {
                    Op::Param(p) => &self.params[p].value,
                    _ => values[i].as_ref().expect("topological order"),
                }
            };
            let mut out_shape = Vec::with_capacity(node.shape.len() + 1);
            out_shape.push(n);
            out_shape.extend_from_slice(&node.shape);

            let out = match node.op {
                Op::Input => Some(x.clone()),
                Op::Param(_) => None,
                Op::MatMul(a, w) => {
                    let (a, w) = (get(a), get(w));
                    let (k, m) = (w.shape()[0], w.shape()[1]);
                    let mut out = Tensor::zeros(&out_shape);
                    gemm(
                        MatView::new(a.data(), n, k),
                        MatView::new(w.data(), k, m),
                        out.data_mut(),
                        0.0,
                    );
                    Some(out)
                }
                Op::AddBias(a, b) => {
                    let (a, b) = (get(a), get(b));
                    let f = b.len();
                    let mut out = a.clone();
                    for row in out.data_mut().chunks_exact_mut(f) {
                        for (v, bb) in row.iter_mut().zip(b.data()) {
                            *v += bb;
                        }
                    }
                    Some(out)
                }
                Op::Add(a, b) => Some(zip_map(get(a), get(b), |x, y| x + y)),
                Op::Sub(a, b) => Some(zip_map(get(a), get(b), |x, y| x - y)),
                Op::Mul(a, b) => Some(zip_map(get(a), get(b), |x, y| x * y)),
                Op::OneMinus(a) => Some(map(get(a), |v| 1.0 - v)),
                Op::Scale(a, s) => Some(map(get(a), |v| v * s)),
                Op::Relu(a) => Some(map(get(a), |v| v.max(0.0))),
                Op::Tanh(a) => Some(map(get(a), f32::tanh)),
                Op::Sigmoid(a) => Some(map(get(a), sigmoid)),
                Op::Conv1d {
                    input,
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let x = get(input);
                    let w = get(weight);
                    let geo = ConvGeometry::new(x.shape(), w.shape(), stride, padding);
                    let cols = geo.im2col(x.data());
                    let mut out = Tensor::zeros(&out_shape);
                    gemm(
                        MatView::new(&cols, n * geo.t_out, geo.k * geo.c_in),
                        MatView::new(w.data(), geo.k * geo.c_in, geo.c_out),
                        out.data_mut(),
                        0.0,
                    );
                    if let Some(b) = bias {
                        let b = get(b);
                        for row in out.data_mut().chunks_exact_mut(geo.c_out) {
                            for (v, bb) in row.iter_mut().zip(b.data()) {
                                *v += bb;
                            }
                        }
                    }
                    Some(out)
                }
                Op::MaxPool1d {
                    input,
                    size,
                    stride,
                } => {
                    let x = get(input);
                    let (t, c) = (x.shape()[1], x.shape()[2]);
                    let t_out = node.shape[0];
                    let mut out = Tensor::zeros(&out_shape);
                    let od = out.data_mut();
                    for s in 0..n {
                        for to in 0..t_out {
                            for ch in 0..c {
                                let mut best = f32::NEG_INFINITY;
                                for k in 0..size {
                                    best = best.max(x.data()[(s * t + to * stride + k) * c + ch]);
                                }
                                od[(s * t_out + to) * c + ch] = best;
                            }
                        }
                    }
                    Some(out)
                }
                Op::Flatten(a) => Some(get(a).clone().reshaped(out_shape)?),
                Op::Step { input, index } => {
                    let x = get(input);
                    let (t, b) = (x.shape()[1], x.shape()[2]);
                    let mut data = Vec::with_capacity(n * b);
                    for s in 0..n {
                        let off = (s * t + index) * b;
                        data.extend_from_slice(&x.data()[off..off + b]);
                    }
                    Some(Tensor::new(out_shape, data)?)
                }
                Op::SliceCols { input, start, len } => {
                    let x = get(input);
                    let f = x.shape()[1];
                    let mut data = Vec::with_capacity(n * len);
                    for row in x.data().chunks_exact(f) {
                        data.extend_from_slice(&row[start..start + len]);
                    }
                    Some(Tensor::new(out_shape, data)?)
                }
                Op::Dropout { input, rate } => {
                    let x = get(input);
                    match rng.as_deref_mut() {
                        Some(rng) => {
                            let keep = 1.0 - rate;
                            let mask: Vec<f32> = (0..x.len())
                                .map(|_| {
                                    if rng.random::<f32>() < keep {
                                        1.0 / keep
                                    } else {
                                        0.0
                                    }
                                })
                                .collect();
                            let out = Tensor::new(
                                out_shape,
                                x.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
                            )?;
                            masks[id] = Some(mask);
                            Some(out)
                        }
                        None => Some(x.clone()),
                    }
                }
            };
            values.push(out);
        }

        Ok(Activations {
            graph: self,
            batch: n,
            values,
            masks,
        })
    }
}

fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn map(a: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|&v| f(v)).collect())
        .expect("same shape")
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("same shape")
}

struct ConvGeometry {
    n: usize,
    t: usize,
    c_in: usize,
    k: usize,
    c_out: usize,
    t_out: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeometry {
    fn new(x_shape: &[usize], w_shape: &[usize], stride: usize, padding: usize) -> Self {
        let (n, t, c_in) = (x_shape[0], x_shape[1], x_shape[2]);
        let (k, c_out) = (w_shape[0], w_shape[2]);
        let t_out = (t + 2 * padding - k) / stride + 1;
        ConvGeometry {
            n,
            t,
            c_in,
            k,
            c_out,
            t_out,
            stride,
            padding,
        }
    }

    /// Source time index for output step `to` and tap `k`, if inside the input.
    fn source(&self, to: usize, k: usize) -> Option<usize> {
        (to * self.stride + k)
            .checked_sub(self.padding)
            .filter(|&ti| ti < self.t)
    }

    /// `[N·T_out, K·C_in]` patch matrix.
    fn im2col(&self, x: &[f32]) -> Vec<f32> {
        let width = self.k * self.c_in;
        let mut cols = vec![0.0; self.n * self.t_out * width];
        for s in 0..self.n {
            for to in 0..self.t_out {
                let row = (s * self.t_out + to) * width;
                for k in 0..self.k {
                    if let Some(ti) = self.source(to, k) {
                        let src = (s * self.t + ti) * self.c_in;
                        cols[row + k * self.c_in..row + (k + 1) * self.c_in]
                            .copy_from_slice(&x[src..src + self.c_in]);
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32], dx: &mut [f32]) {
        let width = self.k * self.c_in;
        for s in 0..self.n {
            for to in 0..self.t_out {
                let row = (s * self.t_out + to) * width;
                for k in 0..self.k {
                    if let Some(ti) = self.source(to, k) {
                        let dst = (s * self.t + ti) * self.c_in;
                        for c in 0..self.c_in {
                            dx[dst + c] += cols[row + k * self.c_in + c];
                        }
                    }
                }
            }
        }
    }
}

impl Activations<'_> {
    pub fn output(&self) -> &Tensor {
        self.values[self.graph.output].as_ref().expect("output computed")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Gradients of the selected scalar with respect to the input and every
    /// parameter.
    pub fn backward(&self, selector: Selector<'_>, mode: BackwardMode) -> Result<Gradients> {
        let (input, params) = self.sweep(selector, mode, true)?;
        Ok(Gradients {
            input,
            params: params.expect("parameter gradients requested"),
        })
    }

    /// Gradient of the selected scalar with respect to the input only.
    pub fn input_gradient(&self, selector: Selector<'_>, mode: BackwardMode) -> Result<Tensor> {
        Ok(self.sweep(selector, mode, false)?.0)
    }

    fn seed(&self, selector: Selector<'_>) -> Result<Tensor> {
        let out = self.output();
        match selector {
            Selector::Upstream(g) => {
                if g.shape() != out.shape() {
                    return Err(Error::Shape(format!(
                        "upstream gradient {:?} for output {:?}",
                        g.shape(),
                        out.shape()
                    )));
                }
                Ok(g.clone())
            }
            Selector::Columns(cols) => {
                if out.shape().len() != 2 {
                    return Err(Error::Shape(format!(
                        "column selection needs a [N, M] output, got {:?}",
                        out.shape()
                    )));
                }
                let m = out.shape()[1];
                if cols.len() != self.batch || cols.iter().any(|&c| c >= m) {
                    return Err(Error::Shape(format!(
                        "selection must name one of {m} columns for each of {} rows",
                        self.batch
                    )));
                }
                let mut seed = Tensor::zeros(out.shape());
                for (r, &c) in cols.iter().enumerate() {
                    seed.data_mut()[r * m + c] = 1.0;
                }
                Ok(seed)
            }
        }
    }

    fn sweep(
        &self,
        selector: Selector<'_>,
        mode: BackwardMode,
        want_params: bool,
    ) -> Result<(Tensor, Option<Vec<Tensor>>)> {
        let graph = self.graph;
        let n = self.batch;
        let mut grads: Vec<Option<Tensor>> = vec![None; graph.nodes.len()];
        let mut param_grads: Option<Vec<Tensor>> = want_params.then(|| {
            graph
                .params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect()
        });
        grads[graph.output] = Some(self.seed(selector)?);

        let value = |i: NodeId| -> &Tensor {
            match graph.nodes[i].op {
                Op::Param(p) => &graph.params[p].value,
                _ => self.values[i].as_ref().expect("forward executed"),
            }
        };
        let needs = |i: NodeId| want_params || !matches!(graph.nodes[i].op, Op::Param(_));

        for id in (0..graph.nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &graph.nodes[id];
            let mut push = |target: NodeId, t: Tensor, grads: &mut Vec<Option<Tensor>>| {
                match graph.nodes[target].op {
                    Op::Param(p) => {
                        if let Some(pg) = param_grads.as_mut() {
                            pg[p].add_assign(&t);
                        }
                    }
                    _ => match grads[target].as_mut() {
                        Some(acc) => acc.add_assign(&t),
                        None => grads[target] = Some(t),
                    },
                }
            };
            match node.op {
                Op::Input => {
                    grads[id] = Some(g);
                    break;
                }
                Op::Param(_) => {}
                Op::MatMul(a, w) => {
                    let wv = value(w);
                    let (k, m) = (wv.shape()[0], wv.shape()[1]);
                    let mut da = Tensor::zeros(value(a).shape());
                    gemm(
                        MatView::new(g.data(), n, m),
                        MatView::new(wv.data(), k, m).t(),
                        da.data_mut(),
                        0.0,
                    );
                    if needs(w) {
                        let mut dw = Tensor::zeros(wv.shape());
                        gemm(
                            MatView::new(value(a).data(), n, k).t(),
                            MatView::new(g.data(), n, m),
                            dw.data_mut(),
                            0.0,
                        );
                        push(w, dw, &mut grads);
                    }
                    push(a, da, &mut grads);
                }
                Op::AddBias(a, b) => {
                    if needs(b) {
                        let f = value(b).len();
                        let mut db = Tensor::zeros(&[f]);
                        for row in g.data().chunks_exact(f) {
                            for (d, v) in db.data_mut().iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        push(b, db, &mut grads);
                    }
                    push(a, g, &mut grads);
                }
                Op::Add(a, b) => {
                    push(b, g.clone(), &mut grads);
                    push(a, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    push(b, map(&g, |v| -v), &mut grads);
                    push(a, g, &mut grads);
                }
                Op::Mul(a, b) => {
                    push(a, zip_map(&g, value(b), |x, y| x * y), &mut grads);
                    push(b, zip_map(&g, value(a), |x, y| x * y), &mut grads);
                }
                Op::OneMinus(a) => push(a, map(&g, |v| -v), &mut grads),
                Op::Scale(a, s) => push(a, map(&g, |v| v * s), &mut grads),
                Op::Relu(a) => {
                    let x = value(a);
                    let dx = match mode {
                        BackwardMode::Standard => {
                            zip_map(&g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 })
                        }
                        BackwardMode::Guided => zip_map(&g, x, |gv, xv| {
                            if xv > 0.0 && gv > 0.0 {
                                gv
                            } else {
                                0.0
                            }
                        }),
                    };
                    push(a, dx, &mut grads);
                }
                Op::Tanh(a) => {
                    let y = self.values[id].as_ref().expect("forward executed");
                    push(a, zip_map(&g, y, |gv, yv| gv * (1.0 - yv * yv)), &mut grads);
                }
                Op::Sigmoid(a) => {
                    let y = self.values[id].as_ref().expect("forward executed");
                    push(a, zip_map(&g, y, |gv, yv| gv * yv * (1.0 - yv)), &mut grads);
                }
                Op::Conv1d {
                    input,
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let x = value(input);
                    let w = value(weight);
                    let geo = ConvGeometry::new(x.shape(), w.shape(), stride, padding);
                    let rows = n * geo.t_out;
                    let width = geo.k * geo.c_in;
                    if let Some(b) = bias.filter(|&b| needs(b)) {
                        let mut db = Tensor::zeros(&[geo.c_out]);
                        for row in g.data().chunks_exact(geo.c_out) {
                            for (d, v) in db.data_mut().iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        push(b, db, &mut grads);
                    }
                    if needs(weight) {
                        let cols = geo.im2col(x.data());
                        let mut dw = Tensor::zeros(w.shape());
                        gemm(
                            MatView::new(&cols, rows, width).t(),
                            MatView::new(g.data(), rows, geo.c_out),
                            dw.data_mut(),
                            0.0,
                        );
                        push(weight, dw, &mut grads);
                    }
                    let mut dcols = vec![0.0; rows * width];
                    gemm(
                        MatView::new(g.data(), rows, geo.c_out),
                        MatView::new(w.data(), width, geo.c_out).t(),
                        &mut dcols,
                        0.0,
                    );
                    let mut dx = Tensor::zeros(x.shape());
                    geo.col2im(&dcols, dx.data_mut());
                    push(input, dx, &mut grads);
                }
                Op::MaxPool1d {
                    input,
                    size,
                    stride,
                } => {
                    let x = value(input);
                    let (t, c) = (x.shape()[1], x.shape()[2]);
                    let t_out = node.shape[0];
                    let mut dx = Tensor::zeros(x.shape());
                    for s in 0..n {
                        for to in 0..t_out {
                            for ch in 0..c {
                                let mut best = f32::NEG_INFINITY;
                                let mut arg = 0;
                                for k in 0..size {
                                    let idx = (s * t + to * stride + k) * c + ch;
                                    if x.data()[idx] > best {
                                        best = x.data()[idx];
                                        arg = idx;
                                    }
                                }
                                dx.data_mut()[arg] += g.data()[(s * t_out + to) * c + ch];
                            }
                        }
                    }
                    push(input, dx, &mut grads);
                }
                Op::Flatten(a) => {
                    let shape = value(a).shape().to_vec();
                    push(a, g.reshaped(shape)?, &mut grads);
                }
                Op::Step { input, index } => {
                    let x = value(input);
                    let (t, b) = (x.shape()[1], x.shape()[2]);
                    let mut dx = Tensor::zeros(x.shape());
                    for s in 0..n {
                        let off = (s * t + index) * b;
                        dx.data_mut()[off..off + b].copy_from_slice(&g.data()[s * b..(s + 1) * b]);
                    }
                    push(input, dx, &mut grads);
                }
                Op::SliceCols { input, start, len } => {
                    let x = value(input);
                    let f = x.shape()[1];
                    let mut dx = Tensor::zeros(x.shape());
                    for (s, row) in g.data().chunks_exact(len).enumerate() {
                        dx.data_mut()[s * f + start..s * f + start + len].copy_from_slice(row);
                    }
                    push(input, dx, &mut grads);
                }
                Op::Dropout { input, .. } => {
                    let dx = match &self.masks[id] {
                        Some(mask) => Tensor::new(
                            g.shape().to_vec(),
                            g.data().iter().zip(mask).map(|(v, m)| v * m).collect(),
                        )?,
                        None => g,
                    };
                    push(input, dx, &mut grads);
                }
            }
        }

        let input = grads[0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.values[0].as_ref().unwrap().shape()));
        Ok((input, param_grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_input_graph(build: impl FnOnce(&mut GraphBuilder, NodeId) -> NodeId) -> Graph {
        let mut b = GraphBuilder::new(&[1]);
        let x = b.input();
        let out = build(&mut b, x);
        b.finish(out).unwrap()
    }

    #[test]
    fn identity_graph_passes_input() {
        let g = scalar_input_graph(|_, x| x);
        let x = Tensor::new(vec![3, 1], vec![1.0, -2.0, 5.0]).unwrap();
        assert_eq!(g.predict(&x).unwrap(), x);
    }

    #[test]
    fn relu_forward() {
        let g = scalar_input_graph(|b, x| b.relu(x).unwrap());
        let x = Tensor::new(vec![2, 1], vec![-1.0, 2.0]).unwrap();
        assert_eq!(g.predict(&x).unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn conv_by_hand() {
        let mut b = GraphBuilder::new(&[3, 1]);
        let x = b.input();
        let w = b.param("w", Tensor::new(vec![2, 1, 1], vec![1.0, 1.0]).unwrap());
        let y = b.conv1d(x, w, None, 1, 0).unwrap();
        let g = b.finish(y).unwrap();
        let out = g
            .predict(&Tensor::new(vec![1, 3, 1], vec![1.0, 2.0, 3.0]).unwrap())
            .unwrap();
        assert_eq!(out.shape(), &[1, 2, 1]);
        assert_eq!(out.data(), &[3.0, 5.0]);
    }

    #[test]
    fn linear_gradient() {
        let mut b = GraphBuilder::new(&[2]);
        let x = b.input();
        let w = b.param("w", Tensor::new(vec![2, 1], vec![2.0, 3.0]).unwrap());
        let y = b.matmul(x, w).unwrap();
        let g = b.finish(y).unwrap();
        let acts = g.forward(&Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap()).unwrap();
        let grads = acts.backward(Selector::Columns(&[0]), BackwardMode::Standard).unwrap();
        assert_eq!(grads.input.data(), &[2.0, 3.0]);
        assert_eq!(grads.params[0].data(), &[1.0, 1.0]);
    }

    #[test]
    fn guided_zeroes_negative_upstream() {
        // f(x) = −ReLU(x) at x = 1
        let g = scalar_input_graph(|b, x| {
            let r = b.relu(x).unwrap();
            b.scale(r, -1.0).unwrap()
        });
        let x = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let acts = g.forward(&x).unwrap();
        let std = acts.input_gradient(Selector::Columns(&[0]), BackwardMode::Standard).unwrap();
        let guided = acts.input_gradient(Selector::Columns(&[0]), BackwardMode::Guided).unwrap();
        assert_eq!(std.data(), &[-1.0]);
        assert_eq!(guided.data(), &[0.0]);
    }

    #[test]
    fn inactive_relu_blocks_both_modes() {
        // f(x) = ReLU(−x) at x = 1
        let g = scalar_input_graph(|b, x| {
            let n = b.scale(x, -1.0).unwrap();
            b.relu(n).unwrap()
        });
        let acts = g.forward(&Tensor::new(vec![1, 1], vec![1.0]).unwrap()).unwrap();
        for mode in [BackwardMode::Standard, BackwardMode::Guided] {
            let d = acts.input_gradient(Selector::Columns(&[0]), mode).unwrap();
            assert_eq!(d.data(), &[0.0]);
        }
    }

    #[test]
    fn bad_selection_is_rejected() {
        let g = scalar_input_graph(|_, x| x);
        let acts = g.forward(&Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap()).unwrap();
        assert!(acts.backward(Selector::Columns(&[0]), BackwardMode::Standard).is_err());
        assert!(acts.backward(Selector::Columns(&[0, 1]), BackwardMode::Standard).is_err());
    }

    #[test]
    fn input_shape_mismatch() {
        let g = scalar_input_graph(|_, x| x);
        assert!(g.forward(&Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn kernel_longer_than_input() {
        let mut b = GraphBuilder::new(&[3, 1]);
        let x = b.input();
        let w = b.param("w", Tensor::zeros(&[5, 1, 1]));
        assert!(b.conv1d(x, w, None, 1, 0).is_err());
    }

    #[test]
    fn forward_is_pure() {
        let mut b = GraphBuilder::new(&[4]);
        let x = b.input();
        let w = b.param("w", Tensor::from_fn(&[4, 3], |i| (i as f32 * 0.37).sin()));
        let h = b.matmul(x, w).unwrap();
        let y = b.tanh(h).unwrap();
        let g = b.finish(y).unwrap();
        let x = Tensor::from_fn(&[5, 4], |i| (i as f32).cos());
        assert_eq!(g.predict(&x).unwrap(), g.predict(&x).unwrap());
    }
}
