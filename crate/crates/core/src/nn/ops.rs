//! Differentiable primitives with hand-derived backward passes.
//!
//! Layouts are batch-first and channels-last: sequences are `[batch, len, ch]`,
//! conv kernels are `[taps, ch_in, ch_out]`. Backward functions return the input
//! gradient and accumulate parameter gradients into each parameter's `grad`.

use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Shape(msg()))
    }
}

/// `x W + b` for `x: [batch, in]` (trailing dims flattened), `W: [in, out]`, `b: [out]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    check(w.shape.len() == 2, || format!("weight must be 2-D, got {:?}", w.shape))?;
    let (batch, inp, out) = (x.dim(0), x.row_len(), w.dim(1));
    check(inp == w.dim(0), || {
        format!("input width {inp} does not match weight rows {} (weight {:?})", w.dim(0), w.shape)
    })?;
    check(b.len() == out, || format!("bias length {} does not match output width {out}", b.len()))?;
    let mut y = vec![0.0; batch * out];
    for row in y.chunks_exact_mut(out) {
        row.copy_from_slice(&b.data);
    }
    gemm(batch, inp, out, &x.data, false, &w.data, false, 1.0, &mut y);
    Tensor::new(vec![batch, out], y)
}

/// Returns `dx` (shaped like `x`); accumulates into `w.grad` and `b.grad`.
pub fn linear_backward(x: &Tensor, w: &mut Tensor, b: &mut Tensor, dy: &Tensor) -> Tensor {
    let (batch, inp, out) = (x.dim(0), x.row_len(), w.dim(1));
    let mut dx = vec![0.0; batch * inp];
    gemm(batch, out, inp, &dy.data, false, &w.data, true, 0.0, &mut dx);
    gemm(inp, batch, out, &x.data, true, &dy.data, false, 1.0, w.grad_mut());
    let db = b.grad_mut();
    for row in dy.data.chunks_exact(out) {
        super::tensor::add_into(db, row);
    }
    Tensor {
        shape: x.shape.clone(),
        data: dx,
        grad: None,
    }
}

pub fn conv_out_len(len: usize, taps: usize, dilation: usize) -> Option<usize> {
    let span = (taps - 1) * dilation + 1;
    len.checked_sub(span).map(|r| r + 1)
}

/// Valid (unpadded, stride 1) dilated convolution:
/// `y[b, t, o] = bias[o] + sum_{j, c} x[b, t + j*dilation, c] * kernel[j, c, o]`.
pub fn conv1d_forward(x: &Tensor, kernel: &Tensor, bias: &Tensor, dilation: usize) -> Result<Tensor> {
    check(x.shape.len() == 3, || format!("conv input must be [batch, len, ch], got {:?}", x.shape))?;
    check(kernel.shape.len() == 3, || format!("kernel must be [taps, in, out], got {:?}", kernel.shape))?;
    check(dilation >= 1, || "dilation must be at least 1".into())?;
    let (batch, len, cin) = (x.dim(0), x.dim(1), x.dim(2));
    let (taps, kin, cout) = (kernel.dim(0), kernel.dim(1), kernel.dim(2));
    check(cin == kin, || format!("input has {cin} channels, kernel expects {kin}"))?;
    check(bias.len() == cout, || format!("bias length {} != {cout} output channels", bias.len()))?;
    let min_len = (taps - 1) * dilation + 1;
    let lout = conv_out_len(len, taps, dilation).ok_or_else(|| {
        Error::Shape(format!(
            "conv input length {len} is shorter than the minimum {min_len} for {taps} taps at dilation {dilation}"
        ))
    })?;
    // Each tap is one product over the whole batch viewed as `batch * len` rows;
    // rows whose window would cross into the next sample are discarded.
    let rows = batch * len;
    let mut full = vec![0.0; rows * cout];
    for j in 0..taps {
        let shift = j * dilation;
        let n = rows - shift;
        let kj = &kernel.data[j * cin * cout..(j + 1) * cin * cout];
        gemm(n, cin, cout, &x.data[shift * cin..], false, kj, false, 1.0, &mut full[..n * cout]);
    }
    let mut y = Vec::with_capacity(batch * lout * cout);
    for b in 0..batch {
        for row in full[b * len * cout..(b * len + lout) * cout].chunks_exact(cout) {
            y.extend(row.iter().zip(&bias.data).map(|(v, c)| v + c));
        }
    }
    Tensor::new(vec![batch, lout, cout], y)
}

pub fn conv1d_backward(
    x: &Tensor,
    kernel: &mut Tensor,
    bias: &mut Tensor,
    dy: &Tensor,
    dilation: usize,
) -> Tensor {
    let (batch, len, cin) = (x.dim(0), x.dim(1), x.dim(2));
    let (taps, cout) = (kernel.dim(0), kernel.dim(2));
    let lout = dy.dim(1);
    let rows = batch * len;
    let mut padded = vec![0.0; rows * cout];
    for b in 0..batch {
        padded[b * len * cout..(b * len + lout) * cout].copy_from_slice(&dy.data[b * lout * cout..(b + 1) * lout * cout]);
    }
    let mut dx = vec![0.0; x.len()];
    let kdata = &kernel.data;
    let kgrad = kernel.grad.get_or_insert_with(|| vec![0.0; kdata.len()]);
    for j in 0..taps {
        let shift = j * dilation;
        let n = rows - shift;
        let xs = &x.data[shift * cin..];
        let dys = &padded[..n * cout];
        let kj = &kdata[j * cin * cout..(j + 1) * cin * cout];
        gemm(cin, n, cout, xs, true, dys, false, 1.0, &mut kgrad[j * cin * cout..(j + 1) * cin * cout]);
        gemm(n, cout, cin, dys, false, kj, true, 1.0, &mut dx[shift * cin..]);
    }
    let db = bias.grad_mut();
    for row in dy.data.chunks_exact(cout) {
        super::tensor::add_into(db, row);
    }
    Tensor {
        shape: x.shape.clone(),
        data: dx,
        grad: None,
    }
}

/// Non-overlapping max over pairs of steps; a trailing odd step is dropped.
/// Returns the output and, per output element, the flat index of the chosen
/// input element (the first one on ties).
pub fn maxpool1d(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    check(x.shape.len() == 3, || format!("maxpool input must be [batch, len, ch], got {:?}", x.shape))?;
    let (batch, len, ch) = (x.dim(0), x.dim(1), x.dim(2));
    check(len >= 2, || format!("maxpool needs length >= 2, got {len}"))?;
    let lout = len / 2;
    let mut y = Vec::with_capacity(batch * lout * ch);
    let mut arg = Vec::with_capacity(batch * lout * ch);
    for b in 0..batch {
        for i in 0..lout {
            for c in 0..ch {
                let first = (b * len + 2 * i) * ch + c;
                let second = first + ch;
                let pick = if x.data[first] >= x.data[second] { first } else { second };
                y.push(x.data[pick]);
                arg.push(pick);
            }
        }
    }
    Ok((Tensor::new(vec![batch, lout, ch], y)?, arg))
}

pub fn maxpool1d_backward(input_shape: &[usize], argmax: &[usize], dy: &Tensor) -> Tensor {
    let mut dx = vec![0.0; input_shape.iter().product()];
    for (&i, g) in argmax.iter().zip(&dy.data) {
        dx[i] += g;
    }
    Tensor {
        shape: input_shape.to_vec(),
        data: dx,
        grad: None,
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|v| v.max(0.0)).collect(),
        grad: None,
    }
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .zip(&dy.data)
            .map(|(v, g)| if *v > 0.0 { *g } else { 0.0 })
            .collect(),
        grad: None,
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Gated recurrent unit parameters.
///
/// `wx: [in, 3H]` holds the update, reset and candidate input weights side by
/// side; `uzr: [H, 2H]` the update/reset recurrent weights; `uh: [H, H]` the
/// candidate recurrent weights; `b: [3H]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub wx: Tensor,
    pub uzr: Tensor,
    pub uh: Tensor,
    pub b: Tensor,
}

impl GruParams {
    pub fn hidden(&self) -> usize {
        self.uh.dim(0)
    }

    pub fn input(&self) -> usize {
        self.wx.dim(0)
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.wx, &mut self.uzr, &mut self.uh, &mut self.b]
    }
}

/// Values from one forward step needed by its backward step.
#[derive(Debug, Clone, Default)]
pub struct GruCache {
    x: Vec<f64>,
    h: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
    rh: Vec<f64>,
}

/// One GRU step over a batch:
/// `z = σ(x Wz + h Uz + bz)`, `r = σ(x Wr + h Ur + br)`,
/// `c = tanh(x Wh + (r ⊙ h) Uh + bh)`, `h' = (1 - z) ⊙ h + z ⊙ c`.
pub fn gru_step(x: &[f64], h: &[f64], batch: usize, p: &GruParams) -> Result<(Vec<f64>, GruCache)> {
    let (inp, hid) = (p.input(), p.hidden());
    check(x.len() == batch * inp, || format!("gru input has {} values, expected {batch}x{inp}", x.len()))?;
    check(h.len() == batch * hid, || format!("gru state has {} values, expected {batch}x{hid}", h.len()))?;
    let h3 = 3 * hid;
    let mut ax = vec![0.0; batch * h3];
    for row in ax.chunks_exact_mut(h3) {
        row.copy_from_slice(&p.b.data);
    }
    gemm(batch, inp, h3, x, false, &p.wx.data, false, 1.0, &mut ax);
    let mut azr = vec![0.0; batch * 2 * hid];
    gemm(batch, hid, 2 * hid, h, false, &p.uzr.data, false, 0.0, &mut azr);

    let mut z = vec![0.0; batch * hid];
    let mut r = vec![0.0; batch * hid];
    let mut rh = vec![0.0; batch * hid];
    for n in 0..batch {
        for k in 0..hid {
            let i = n * hid + k;
            z[i] = sigmoid(ax[n * h3 + k] + azr[n * 2 * hid + k]);
            r[i] = sigmoid(ax[n * h3 + hid + k] + azr[n * 2 * hid + hid + k]);
            rh[i] = r[i] * h[i];
        }
    }
    let mut ah = vec![0.0; batch * hid];
    gemm(batch, hid, hid, &rh, false, &p.uh.data, false, 0.0, &mut ah);
    let mut c = vec![0.0; batch * hid];
    let mut out = vec![0.0; batch * hid];
    for n in 0..batch {
        for k in 0..hid {
            let i = n * hid + k;
            c[i] = (ah[i] + ax[n * h3 + 2 * hid + k]).tanh();
            out[i] = (1.0 - z[i]) * h[i] + z[i] * c[i];
        }
    }
    let cache = GruCache {
        x: x.to_vec(),
        h: h.to_vec(),
        z,
        r,
        c,
        rh,
    };
    Ok((out, cache))
}

/// Backward of [`gru_step`]: returns `(dx, dh_prev)` and accumulates parameter gradients.
pub fn gru_step_backward(p: &mut GruParams, cache: &GruCache, dh_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (inp, hid) = (p.input(), p.hidden());
    let batch = dh_out.len() / hid;
    let h3 = 3 * hid;
    let GruCache { x, h, z, r, c, rh } = cache;

    let mut dh = vec![0.0; batch * hid];
    let mut dah = vec![0.0; batch * hid];
    let mut dax = vec![0.0; batch * h3];
    for n in 0..batch {
        for k in 0..hid {
            let i = n * hid + k;
            let g = dh_out[i];
            let dz = g * (c[i] - h[i]);
            let dc = g * z[i];
            dh[i] = g * (1.0 - z[i]);
            dah[i] = dc * (1.0 - c[i] * c[i]);
            dax[n * h3 + k] = dz * z[i] * (1.0 - z[i]);
            dax[n * h3 + 2 * hid + k] = dah[i];
        }
    }
    gemm(hid, batch, hid, rh, true, &dah, false, 1.0, p.uh.grad_mut());
    let mut drh = vec![0.0; batch * hid];
    gemm(batch, hid, hid, &dah, false, &p.uh.data, true, 0.0, &mut drh);
    let mut dazr = vec![0.0; batch * 2 * hid];
    for n in 0..batch {
        for k in 0..hid {
            let i = n * hid + k;
            let dr = drh[i] * h[i];
            dh[i] += drh[i] * r[i];
            let dar = dr * r[i] * (1.0 - r[i]);
            dax[n * h3 + hid + k] = dar;
            dazr[n * 2 * hid + k] = dax[n * h3 + k];
            dazr[n * 2 * hid + hid + k] = dar;
        }
    }
    gemm(hid, batch, 2 * hid, h, true, &dazr, false, 1.0, p.uzr.grad_mut());
    gemm(batch, 2 * hid, hid, &dazr, false, &p.uzr.data, true, 1.0, &mut dh);

    gemm(inp, batch, h3, x, true, &dax, false, 1.0, p.wx.grad_mut());
    let db = p.b.grad_mut();
    for row in dax.chunks_exact(h3) {
        super::tensor::add_into(db, row);
    }
    let mut dx = vec![0.0; batch * inp];
    gemm(batch, h3, inp, &dax, false, &p.wx.data, true, 0.0, &mut dx);
    (dx, dh)
}

/// Mean categorical cross-entropy of `softmax(logits)` against (possibly soft)
/// target distributions, with its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[f64]) -> Result<(f64, Tensor)> {
    let batch = logits.dim(0);
    let classes = logits.row_len();
    check(targets.len() == logits.len(), || {
        format!("{} targets for logits of shape {:?}", targets.len(), logits.shape)
    })?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for n in 0..batch {
        let l = &logits.data[n * classes..(n + 1) * classes];
        let t = &targets[n * classes..(n + 1) * classes];
        let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = l.iter().map(|v| (v - m).exp()).sum();
        let lse = sum.ln();
        let mass: f64 = t.iter().sum();
        for k in 0..classes {
            let logp = l[k] - m - lse;
            loss -= t[k] * logp;
            grad[n * classes + k] = (logp.exp() * mass - t[k]) / batch as f64;
        }
    }
    Ok((loss / batch as f64, Tensor::new(logits.shape.clone(), grad)?))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean squared error for single-output regression.
pub fn mse(pred: &Tensor, targets: &[f64]) -> Result<(f64, Tensor)> {
    check(pred.len() == targets.len(), || {
        format!("{} targets for predictions of shape {:?}", targets.len(), pred.shape)
    })?;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .data
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            loss += (p - t).powi(2);
            2.0 * (p - t) / n
        })
        .collect();
    Ok((loss / n, Tensor::new(pred.shape.clone(), grad)?))
}
