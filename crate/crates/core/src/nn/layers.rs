use serde::{Deserialize, Serialize};

use super::ops::{self, GruCache, GruParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
    #[serde(skip)]
    input: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub dilation: usize,
    #[serde(skip)]
    input: Option<Tensor>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaxPool1d {
    #[serde(skip)]
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Relu {
    #[serde(skip)]
    input: Option<Tensor>,
}

/// GRU over a whole sequence `[batch, steps, in] -> [batch, steps, hidden]`, zero initial state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gru {
    pub params: GruParams,
    #[serde(skip)]
    steps: Vec<GruCache>,
}

impl PartialEq for Gru {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

/// Selects the final step of a sequence: `[batch, steps, ch] -> [batch, ch]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LastStep {
    #[serde(skip)]
    input_shape: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Linear(Linear),
    Conv1d(Conv1d),
    MaxPool1d(MaxPool1d),
    Relu(Relu),
    Gru(Gru),
    LastStep(LastStep),
}

impl Linear {
    pub fn new(w: Tensor, b: Tensor) -> Self {
        Self { w, b, input: None }
    }
}

impl Conv1d {
    pub fn new(kernel: Tensor, bias: Tensor, dilation: usize) -> Self {
        Self {
            kernel,
            bias,
            dilation,
            input: None,
        }
    }
}

impl Gru {
    pub fn new(params: GruParams) -> Self {
        Self {
            params,
            steps: Vec::new(),
        }
    }

    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        if x.shape.len() != 3 || x.dim(2) != self.params.input() {
            return Err(Error::Shape(format!(
                "gru expects [batch, steps, {}], got {:?}",
                self.params.input(),
                x.shape
            )));
        }
        let (batch, steps, inp) = (x.dim(0), x.dim(1), x.dim(2));
        let hid = self.params.hidden();
        let mut h = vec![0.0; batch * hid];
        let mut out = vec![0.0; batch * steps * hid];
        let mut xt = vec![0.0; batch * inp];
        self.steps.clear();
        for t in 0..steps {
            for n in 0..batch {
                let src = (n * steps + t) * inp;
                xt[n * inp..(n + 1) * inp].copy_from_slice(&x.data[src..src + inp]);
            }
            let (next, cache) = ops::gru_step(&xt, &h, batch, &self.params)?;
            for n in 0..batch {
                let dst = (n * steps + t) * hid;
                out[dst..dst + hid].copy_from_slice(&next[n * hid..(n + 1) * hid]);
            }
            if train {
                self.steps.push(cache);
            }
            h = next;
        }
        Tensor::new(vec![batch, steps, hid], out)
    }

    /// Backpropagation through time over every cached step.
    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (batch, steps, hid) = (dy.dim(0), dy.dim(1), dy.dim(2));
        let inp = self.params.input();
        let mut dx = vec![0.0; batch * steps * inp];
        let mut carry = vec![0.0; batch * hid];
        let caches = std::mem::take(&mut self.steps);
        for t in (0..steps).rev() {
            for n in 0..batch {
                let src = (n * steps + t) * hid;
                for k in 0..hid {
                    carry[n * hid + k] += dy.data[src + k];
                }
            }
            let (dxt, dh) = ops::gru_step_backward(&mut self.params, &caches[t], &carry);
            for n in 0..batch {
                let dst = (n * steps + t) * inp;
                dx[dst..dst + inp].copy_from_slice(&dxt[n * inp..(n + 1) * inp]);
            }
            carry = dh;
        }
        Tensor {
            shape: vec![batch, steps, inp],
            data: dx,
            grad: None,
        }
    }
}

impl Layer {
    /// Runs the layer. With `train` set, keeps what the backward pass needs.
    pub fn forward(&mut self, x: Tensor, train: bool) -> Result<Tensor> {
        match self {
            Layer::Linear(l) => {
                let y = ops::linear_forward(&x, &l.w, &l.b)?;
                l.input = train.then_some(x);
                Ok(y)
            }
            Layer::Conv1d(c) => {
                let y = ops::conv1d_forward(&x, &c.kernel, &c.bias, c.dilation)?;
                c.input = train.then_some(x);
                Ok(y)
            }
            Layer::MaxPool1d(p) => {
                let (y, arg) = ops::maxpool1d(&x)?;
                p.cache = train.then(|| (x.shape.clone(), arg));
                Ok(y)
            }
            Layer::Relu(r) => {
                let y = ops::relu(&x);
                r.input = train.then_some(x);
                Ok(y)
            }
            Layer::Gru(g) => g.forward(&x, train),
            Layer::LastStep(s) => {
                if x.shape.len() != 3 {
                    return Err(Error::Shape(format!(
                        "last-step selection needs [batch, steps, ch], got {:?}",
                        x.shape
                    )));
                }
                let (batch, steps, ch) = (x.dim(0), x.dim(1), x.dim(2));
                let mut y = Vec::with_capacity(batch * ch);
                for n in 0..batch {
                    let start = (n * steps + steps - 1) * ch;
                    y.extend_from_slice(&x.data[start..start + ch]);
                }
                s.input_shape = train.then(|| x.shape.clone());
                Tensor::new(vec![batch, ch], y)
            }
        }
    }

    /// Input gradient for the most recent training forward pass.
    ///
    /// Panics if the layer was not run forward with `train` set.
    pub fn backward(&mut self, dy: Tensor) -> Tensor {
        const NO_CACHE: &str = "backward called without a training forward pass";
        match self {
            Layer::Linear(l) => {
                let x = l.input.take().expect(NO_CACHE);
                ops::linear_backward(&x, &mut l.w, &mut l.b, &dy)
            }
            Layer::Conv1d(c) => {
                let x = c.input.take().expect(NO_CACHE);
                ops::conv1d_backward(&x, &mut c.kernel, &mut c.bias, &dy, c.dilation)
            }
            Layer::MaxPool1d(p) => {
                let (shape, arg) = p.cache.take().expect(NO_CACHE);
                ops::maxpool1d_backward(&shape, &arg, &dy)
            }
            Layer::Relu(r) => {
                let x = r.input.take().expect(NO_CACHE);
                ops::relu_backward(&x, &dy)
            }
            Layer::Gru(g) => g.backward(&dy),
            Layer::LastStep(s) => {
                let shape = s.input_shape.take().expect(NO_CACHE);
                let (batch, steps, ch) = (shape[0], shape[1], shape[2]);
                let mut dx = vec![0.0; batch * steps * ch];
                for n in 0..batch {
                    let start = (n * steps + steps - 1) * ch;
                    dx[start..start + ch].copy_from_slice(&dy.data[n * ch..(n + 1) * ch]);
                }
                Tensor {
                    shape,
                    data: dx,
                    grad: None,
                }
            }
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::Linear(l) => vec![("w", &l.w), ("b", &l.b)],
            Layer::Conv1d(c) => vec![("kernel", &c.kernel), ("bias", &c.bias)],
            Layer::Gru(g) => vec![
                ("wx", &g.params.wx),
                ("uzr", &g.params.uzr),
                ("uh", &g.params.uh),
                ("b", &g.params.b),
            ],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Linear(l) => vec![&mut l.w, &mut l.b],
            Layer::Conv1d(c) => vec![&mut c.kernel, &mut c.bias],
            Layer::Gru(g) => g.params.tensors_mut().into_iter().collect(),
            _ => vec![],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Linear(_) => "linear",
            Layer::Conv1d(_) => "conv1d",
            Layer::MaxPool1d(_) => "maxpool1d",
            Layer::Relu(_) => "relu",
            Layer::Gru(_) => "gru",
            Layer::LastStep(_) => "last_step",
        }
    }
}
