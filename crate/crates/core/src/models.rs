//! Builders for the compared architectures.
//!
//! Every model reads a `[T, B]` sample. Recurrent models step along `T`
//! with the `B` bands as per-step features and feed their final hidden
//! state to the head. TempCNN convolves along `T` with bands as input
//! channels.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::engine::{Graph, GraphBuilder, NodeId, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Mlp,
    Rnn,
    Lstm,
    Gru,
    #[serde(rename = "tempcnn")]
    TempCnn,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Mlp,
        Architecture::Rnn,
        Architecture::Lstm,
        Architecture::Gru,
        Architecture::TempCnn,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Mlp => "MLP",
            Architecture::Rnn => "RNN",
            Architecture::Lstm => "LSTM",
            Architecture::Gru => "GRU",
            Architecture::TempCnn => "TempCNN",
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Architecture family and its size hyperparameters.
///
/// `hidden` is the layer width (MLP), the hidden state size (recurrent) or
/// the channel count (TempCNN). `depth` counts hidden layers, stacked
/// recurrent layers or convolution blocks. `kernel` and `dense` only apply
/// to TempCNN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub hidden: usize,
    pub depth: usize,
    pub kernel: usize,
    pub dense: usize,
    pub dropout: f32,
}

impl ModelSpec {
    pub fn default_for(architecture: Architecture) -> Self {
        match architecture {
            Architecture::Mlp => ModelSpec {
                architecture,
                hidden: 128,
                depth: 2,
                kernel: 1,
                dense: 0,
                dropout: 0.0,
            },
            Architecture::Rnn | Architecture::Lstm | Architecture::Gru => ModelSpec {
                architecture,
                hidden: 64,
                depth: 1,
                kernel: 1,
                dense: 0,
                dropout: 0.0,
            },
            Architecture::TempCnn => ModelSpec {
                architecture,
                hidden: 64,
                depth: 3,
                kernel: 5,
                dense: 256,
                dropout: 0.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.depth == 0 {
            return Err(Error::ModelSpec("hidden size and depth must be positive".into()));
        }
        if self.architecture == Architecture::TempCnn && (self.kernel == 0 || self.dense == 0) {
            return Err(Error::ModelSpec("TempCNN needs a positive kernel and dense width".into()));
        }
        if self.architecture == Architecture::TempCnn && self.kernel.is_multiple_of(2) {
            return Err(Error::ModelSpec(format!(
                "TempCNN kernel {} must be odd to keep the sequence length",
                self.kernel
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::ModelSpec(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// A built network together with the spec and input size it was built for.
#[derive(Debug, Clone)]
pub struct Model {
    spec: Option<ModelSpec>,
    head: Task,
    graph: Graph,
    input_shape: (usize, usize),
    adjustments: Vec<String>,
}

impl Model {
    /// Wraps a hand-built graph reading `[T, B]` samples. The graph's
    /// output must be `[n_classes]` or `[1]` per sample to match `head`.
    pub fn from_graph(graph: Graph, head: Task) -> Result<Model> {
        let input = graph.input_shape();
        if input.len() != 2 {
            return Err(Error::Shape(format!("model input must be [T, B], got {input:?}")));
        }
        if graph.output_shape() != [output_dim(head)] {
            return Err(Error::Shape(format!(
                "output {:?} does not fit the head",
                graph.output_shape()
            )));
        }
        Ok(Model {
            spec: None,
            head,
            input_shape: (input[0], input[1]),
            graph,
            adjustments: Vec::new(),
        })
    }

    /// `None` for models wrapped with [`Model::from_graph`].
    pub fn spec(&self) -> Option<&ModelSpec> {
        self.spec.as_ref()
    }

    pub fn head(&self) -> Task {
        self.head
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }

    /// `(T, B)`
    pub fn input_shape(&self) -> (usize, usize) {
        self.input_shape
    }

    pub fn output_dim(&self) -> usize {
        self.graph.output_shape()[0]
    }

    /// Structural changes made to fit the input, e.g. a clamped kernel.
    pub fn adjustments(&self) -> &[String] {
        &self.adjustments
    }

    /// Shape of the first trainable weight that touches the input.
    pub fn first_weight_shape(&self) -> &[usize] {
        self.graph.params()[0].value.shape()
    }

    /// `[N, T, B]` → `[N, out]`
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.graph.predict(x)
    }
}

fn output_dim(head: Task) -> usize {
    match head {
        Task::Classification { n_classes } => n_classes,
        Task::Regression => 1,
    }
}

/// Builds a freshly initialized model for `[T, B]` inputs.
///
/// Weights are drawn uniformly from `±sqrt(3·gain²/fan_in)` with gain² = 2
/// ahead of rectifiers and 1 elsewhere; biases start at zero.
pub fn build(spec: &ModelSpec, head: Task, t: usize, b: usize, seed: u64) -> Result<Model> {
    spec.validate()?;
    if t == 0 || b == 0 {
        return Err(Error::ModelSpec(format!("input must be at least 1×1, got {t}×{b}")));
    }
    if spec.architecture == Architecture::TempCnn && spec.kernel > t {
        return Err(Error::ModelSpec(format!(
            "kernel size {} larger than the {t} available time steps",
            spec.kernel
        )));
    }
    let mut init = Init::new(seed);
    let mut g = GraphBuilder::new(&[t, b]);
    let out = output_dim(head);
    let x = g.input();
    let y = match spec.architecture {
        Architecture::Mlp => mlp(&mut g, &mut init, spec, x, out)?,
        Architecture::Rnn => recurrent(&mut g, &mut init, spec, x, t, out, Cell::Rnn)?,
        Architecture::Lstm => recurrent(&mut g, &mut init, spec, x, t, out, Cell::Lstm)?,
        Architecture::Gru => recurrent(&mut g, &mut init, spec, x, t, out, Cell::Gru)?,
        Architecture::TempCnn => tempcnn(&mut g, &mut init, spec, x, out)?,
    };
    Ok(Model {
        spec: Some(spec.clone()),
        head,
        graph: g.finish(y)?,
        input_shape: (t, b),
        adjustments: Vec::new(),
    })
}

/// Fresh model for a shrunken input. Nothing is copied from any previous
/// model; a TempCNN kernel longer than `t` is clamped to the largest odd
/// size that fits.
pub fn resize_for_input(
    spec: &ModelSpec,
    head: Task,
    t: usize,
    b: usize,
    seed: u64,
) -> Result<Model> {
    let mut spec = spec.clone();
    let mut adjustments = Vec::new();
    if spec.architecture == Architecture::TempCnn && spec.kernel > t && t > 0 {
        let k = if t % 2 == 1 { t } else { t - 1 };
        let note = format!("kernel clamped from {} to {k}", spec.kernel);
        log::warn!("{note}");
        adjustments.push(note);
        spec.kernel = k;
    }
    let mut model = build(&spec, head, t, b, seed)?;
    model.adjustments = adjustments;
    Ok(model)
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn weight(&mut self, shape: &[usize], fan_in: usize, gain_sq: f32) -> Tensor {
        let bound = (3.0 * gain_sq / fan_in as f32).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Tensor::from_fn(shape, |_| dist.sample(&mut self.rng))
    }
}

const RELU_GAIN: f32 = 2.0;
const LINEAR_GAIN: f32 = 1.0;

fn dense_layer(
    g: &mut GraphBuilder,
    init: &mut Init,
    name: &str,
    x: NodeId,
    width: usize,
    gain_sq: f32,
) -> Result<NodeId> {
    let fan_in = g.shape(x)[0];
    let w = g.param(
        format!("{name}.weight"),
        init.weight(&[fan_in, width], fan_in, gain_sq),
    );
    let bias = g.param(format!("{name}.bias"), Tensor::zeros(&[width]));
    g.dense(x, w, bias)
}

fn mlp(
    g: &mut GraphBuilder,
    init: &mut Init,
    spec: &ModelSpec,
    x: NodeId,
    out: usize,
) -> Result<NodeId> {
    let mut h = g.flatten(x)?;
    for layer in 0..spec.depth {
        h = dense_layer(g, init, &format!("mlp.{layer}"), h, spec.hidden, RELU_GAIN)?;
        h = g.relu(h)?;
        h = g.dropout(h, spec.dropout)?;
    }
    dense_layer(g, init, "head", h, out, LINEAR_GAIN)
}

fn tempcnn(
    g: &mut GraphBuilder,
    init: &mut Init,
    spec: &ModelSpec,
    x: NodeId,
    out: usize,
) -> Result<NodeId> {
    let mut h = x;
    for block in 0..spec.depth {
        let c_in = g.shape(h)[1];
        let fan_in = spec.kernel * c_in;
        let w = g.param(
            format!("conv.{block}.weight"),
            init.weight(&[spec.kernel, c_in, spec.hidden], fan_in, RELU_GAIN),
        );
        let bias = g.param(format!("conv.{block}.bias"), Tensor::zeros(&[spec.hidden]));
        h = g.conv1d(h, w, Some(bias), 1, (spec.kernel - 1) / 2)?;
        h = g.relu(h)?;
        h = g.dropout(h, spec.dropout)?;
    }
    h = g.flatten(h)?;
    h = dense_layer(g, init, "dense", h, spec.dense, RELU_GAIN)?;
    h = g.relu(h)?;
    h = g.dropout(h, spec.dropout)?;
    dense_layer(g, init, "head", h, out, LINEAR_GAIN)
}

#[derive(Clone, Copy, PartialEq)]
enum Cell {
    Rnn,
    Lstm,
    Gru,
}

impl Cell {
    fn gates(self) -> usize {
        match self {
            Cell::Rnn => 1,
            Cell::Lstm => 4,
            Cell::Gru => 3,
        }
    }
}

fn recurrent(
    g: &mut GraphBuilder,
    init: &mut Init,
    spec: &ModelSpec,
    x: NodeId,
    t: usize,
    out: usize,
    cell: Cell,
) -> Result<NodeId> {
    let h_size = spec.hidden;
    let mut seq: Vec<NodeId> = (0..t).map(|i| g.step(x, i)).collect::<Result<_>>()?;
    for layer in 0..spec.depth {
        let in_size = g.shape(seq[0])[0];
        let width = cell.gates() * h_size;
        let name = format!("rnn.{layer}");
        let wx = g.param(
            format!("{name}.input_weight"),
            init.weight(&[in_size, width], in_size, LINEAR_GAIN),
        );
        let wh = g.param(
            format!("{name}.hidden_weight"),
            init.weight(&[h_size, width], h_size, LINEAR_GAIN),
        );
        let bias = g.param(format!("{name}.bias"), Tensor::zeros(&[width]));

        let mut h: Option<NodeId> = None;
        let mut c: Option<NodeId> = None;
        let mut outputs = Vec::with_capacity(t);
        for &xt in &seq {
            let xin = g.dense(xt, wx, bias)?;
            let next = match cell {
                Cell::Rnn => {
                    let pre = match h {
                        Some(h) => {
                            let hh = g.matmul(h, wh)?;
                            g.add(xin, hh)?
                        }
                        None => xin,
                    };
                    g.tanh(pre)?
                }
                Cell::Lstm => {
                    let pre = match h {
                        Some(h) => {
                            let hh = g.matmul(h, wh)?;
                            g.add(xin, hh)?
                        }
                        None => xin,
                    };
                    let i = g.slice_cols(pre, 0, h_size)?;
                    let i = g.sigmoid(i)?;
                    let f = g.slice_cols(pre, h_size, h_size)?;
                    let f = g.sigmoid(f)?;
                    let cand = g.slice_cols(pre, 2 * h_size, h_size)?;
                    let cand = g.tanh(cand)?;
                    let o = g.slice_cols(pre, 3 * h_size, h_size)?;
                    let o = g.sigmoid(o)?;
                    let write = g.mul(i, cand)?;
                    let cell_state = match c {
                        Some(c) => {
                            let keep = g.mul(f, c)?;
                            g.add(keep, write)?
                        }
                        None => write,
                    };
                    c = Some(cell_state);
                    let squashed = g.tanh(cell_state)?;
                    g.mul(o, squashed)?
                }
                Cell::Gru => {
                    // gates laid out as [update | reset | candidate]
                    let xz = g.slice_cols(xin, 0, h_size)?;
                    let xr = g.slice_cols(xin, h_size, h_size)?;
                    let xn = g.slice_cols(xin, 2 * h_size, h_size)?;
                    match h {
                        Some(h) => {
                            let hh = g.matmul(h, wh)?;
                            let hz = g.slice_cols(hh, 0, h_size)?;
                            let hr = g.slice_cols(hh, h_size, h_size)?;
                            let hn = g.slice_cols(hh, 2 * h_size, h_size)?;
                            let z = g.add(xz, hz)?;
                            let z = g.sigmoid(z)?;
                            let r = g.add(xr, hr)?;
                            let r = g.sigmoid(r)?;
                            let gated = g.mul(r, hn)?;
                            let n = g.add(xn, gated)?;
                            let n = g.tanh(n)?;
                            let keep_new = g.one_minus(z)?;
                            let a = g.mul(keep_new, n)?;
                            let b = g.mul(z, h)?;
                            g.add(a, b)?
                        }
                        None => {
                            let z = g.sigmoid(xz)?;
                            let n = g.tanh(xn)?;
                            let keep_new = g.one_minus(z)?;
                            g.mul(keep_new, n)?
                        }
                    }
                }
            };
            h = Some(next);
            outputs.push(next);
        }
        seq = outputs;
    }
    let last = *seq.last().expect("at least one step");
    let last = g.dropout(last, spec.dropout)?;
    dense_layer(g, init, "head", last, out, LINEAR_GAIN)
}
