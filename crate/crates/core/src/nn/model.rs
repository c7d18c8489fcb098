use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv1d, Gru, LastStep, Layer, Linear, MaxPool1d, Relu};
use super::ops::{self, GruParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng;
use crate::types::{ModelKind, Representation, TrainPreset};

/// Taps of every temporal convolution.
pub const CONV_TAPS: usize = 3;
pub const DILATIONS: [usize; 3] = [1, 2, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Four-way softmax over distance classes, cross-entropy loss.
    Classify,
    /// Single output in meters, squared-error loss; scored via the nearest class.
    Regress,
}

impl Objective {
    pub fn output_width(self) -> usize {
        match self {
            Objective::Classify => 4,
            Objective::Regress => 1,
        }
    }
}

/// Architecture description.
///
/// * `FeedForward`: `num_layers` x (linear(hidden) + ReLU), linear(out).
/// * `Conv1D`: conv(hidden ch) + ReLU, flatten, linear(hidden) + ReLU, linear(out).
/// * `Conv1DDilated`: three conv + ReLU with dilations 1, 2, 4, then the same two linears.
/// * `Conv1DMaxPool`: three conv + ReLU + maxpool(2), then the same two linears.
/// * `Gru`: `num_layers` stacked GRUs, last hidden state, linear(out).
/// * `ConvGru`: conv(hidden ch) + ReLU feeding `num_layers` GRUs, last state, linear(out).
/// * `ConvGruNoLinear`: as `ConvGru`, but the head is a width-1 convolution to
///   `out` channels over the GRU outputs, read at the last step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Per-sample input shape: `[steps, features]` for sequence models, `[features]` otherwise.
    pub input_shape: Vec<usize>,
    pub hidden: usize,
    pub num_layers: usize,
    pub objective: Objective,
}

impl ModelSpec {
    pub fn from_preset(preset: &TrainPreset, input_shape: Vec<usize>, objective: Objective) -> Self {
        Self {
            kind: preset.model_kind,
            input_shape,
            hidden: preset.hidden_size,
            num_layers: preset.num_layers,
            objective,
        }
    }

    pub fn output_width(&self) -> usize {
        self.objective.output_width()
    }

    fn validate(&self) -> Result<()> {
        let want = match self.kind.representation() {
            Representation::Timeseries => 2,
            _ => 1,
        };
        if self.input_shape.len() != want || self.input_shape.contains(&0) {
            return Err(Error::Config(format!(
                "{} takes {} input, got per-sample shape {:?}",
                self.kind,
                self.kind.representation(),
                self.input_shape
            )));
        }
        if self.hidden == 0 || self.num_layers == 0 {
            return Err(Error::Config("hidden size and layer count must be positive".into()));
        }
        Ok(())
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
fn glorot(rng: &mut impl Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::param(shape, data).expect("shape and data agree")
}

fn zeros_param(n: usize) -> Tensor {
    Tensor::param(vec![n], vec![0.0; n]).expect("shape and data agree")
}

fn linear(rng: &mut impl Rng, inp: usize, out: usize) -> Layer {
    Layer::Linear(Linear::new(glorot(rng, vec![inp, out], inp, out), zeros_param(out)))
}

fn conv(rng: &mut impl Rng, cin: usize, cout: usize, taps: usize, dilation: usize) -> Layer {
    let kernel = glorot(rng, vec![taps, cin, cout], cin * taps, cout * taps);
    Layer::Conv1d(Conv1d::new(kernel, zeros_param(cout), dilation))
}

fn gru(rng: &mut impl Rng, inp: usize, hid: usize) -> Layer {
    Layer::Gru(Gru::new(GruParams {
        wx: glorot(rng, vec![inp, 3 * hid], inp, hid),
        uzr: glorot(rng, vec![hid, 2 * hid], hid, hid),
        uh: glorot(rng, vec![hid, hid], hid, hid),
        b: zeros_param(3 * hid),
    }))
}

fn conv_len(len: usize, dilation: usize) -> Result<usize> {
    ops::conv_out_len(len, CONV_TAPS, dilation).ok_or_else(|| {
        Error::Config(format!("sequence of length {len} too short for the convolution stack"))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: ModelSpec,
    pub layers: Vec<Layer>,
}

impl Network {
    /// Builds the architecture with freshly initialized parameters (biases zero).
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(seed, &[rng::label_hash("init")]);
        let rng = &mut rng;
        let h = spec.hidden;
        let out = spec.output_width();
        let mut layers = Vec::new();
        match spec.kind {
            ModelKind::FeedForward => {
                let mut width = spec.input_shape[0];
                for _ in 0..spec.num_layers {
                    layers.push(linear(rng, width, h));
                    layers.push(Layer::Relu(Relu::default()));
                    width = h;
                }
                layers.push(linear(rng, width, out));
            }
            ModelKind::Conv1D | ModelKind::Conv1DDilated | ModelKind::Conv1DMaxPool => {
                let (mut len, mut ch) = (spec.input_shape[0], spec.input_shape[1]);
                let stack: &[usize] = match spec.kind {
                    ModelKind::Conv1D => &[1],
                    ModelKind::Conv1DDilated => &DILATIONS,
                    _ => &[1, 1, 1],
                };
                for &d in stack {
                    layers.push(conv(rng, ch, h, CONV_TAPS, d));
                    layers.push(Layer::Relu(Relu::default()));
                    len = conv_len(len, d)?;
                    ch = h;
                    if spec.kind == ModelKind::Conv1DMaxPool {
                        if len < 2 {
                            return Err(Error::Config("sequence too short for pooling".into()));
                        }
                        layers.push(Layer::MaxPool1d(MaxPool1d::default()));
                        len /= 2;
                    }
                }
                layers.push(linear(rng, len * ch, h));
                layers.push(Layer::Relu(Relu::default()));
                layers.push(linear(rng, h, out));
            }
            ModelKind::Gru | ModelKind::ConvGru | ModelKind::ConvGruNoLinear => {
                let mut width = spec.input_shape[1];
                if spec.kind != ModelKind::Gru {
                    conv_len(spec.input_shape[0], 1)?;
                    layers.push(conv(rng, width, h, CONV_TAPS, 1));
                    layers.push(Layer::Relu(Relu::default()));
                    width = h;
                }
                for _ in 0..spec.num_layers {
                    layers.push(gru(rng, width, h));
                    width = h;
                }
                if spec.kind == ModelKind::ConvGruNoLinear {
                    layers.push(conv(rng, h, out, 1, 1));
                    layers.push(Layer::LastStep(LastStep::default()));
                } else {
                    layers.push(Layer::LastStep(LastStep::default()));
                    layers.push(linear(rng, h, out));
                }
            }
        }
        Ok(Self { spec, layers })
    }

    /// Output `[batch, out]` for input `[batch, ..input_shape]`.
    pub fn forward(&mut self, x: Tensor, train: bool) -> Result<Tensor> {
        if x.shape.get(1..) != Some(&self.spec.input_shape[..]) {
            return Err(Error::Shape(format!(
                "model expects per-sample shape {:?}, got batch shape {:?}",
                self.spec.input_shape, x.shape
            )));
        }
        let mut h = x;
        for layer in &mut self.layers {
            h = layer.forward(h, train)?;
        }
        let batch = h.dim(0);
        let width = h.row_len();
        h.reshaped(vec![batch, width])
    }

    pub fn backward(&mut self, grad: Tensor) -> Tensor {
        let mut g = grad;
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(g);
        }
        g
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Parameters named `<layer index>.<layer>.<tensor>`, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.params()
                    .into_iter()
                    .map(move |(n, t)| (format!("{i}.{}.{n}", l.name()), t))
            })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }
}
