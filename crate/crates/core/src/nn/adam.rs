use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, param_sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(lr: f64, params: &[&mut Tensor]) -> Self {
        let sizes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Self::new(lr, &sizes)
    }
}

/// One bias-corrected Adam update of every parameter from its `grad` buffer.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != state.m.len()
        || params.iter().zip(&state.m).any(|(p, m)| p.len() != m.len())
    {
        return Err(Error::Shape("optimizer state does not match parameters".into()));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let Tensor { data, grad, .. } = &mut **p;
        let Some(g) = grad.as_ref() else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for k in 0..data.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            data[k] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64, g: f64) -> Tensor {
        let mut t = Tensor::param(vec![1], vec![v]).unwrap();
        t.grad = Some(vec![g]);
        t
    }

    #[test]
    fn first_step_hand_value() {
        let mut p = param(0.0, 1.0);
        let mut st = AdamState::new(1e-3, &[1]);
        adam_step(&mut [&mut p], &mut st).unwrap();
        let expect = -1e-3 / (1.0 + 1e-8);
        assert!((p.data[0] - expect).abs() < 1e-18, "{}", p.data[0]);
        assert!((p.data[0] - -0.00099999999).abs() < 1e-13);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut p = param(0.7, 0.0);
        let mut st = AdamState::new(1e-3, &[1]);
        adam_step(&mut [&mut p], &mut st).unwrap();
        assert_eq!(p.data[0], 0.7);
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let run = || {
            let mut p = param(0.3, 0.0);
            let mut st = AdamState::new(1e-2, &[1]);
            for k in 0..50 {
                p.grad = Some(vec![(k as f64 * 0.7).sin()]);
                adam_step(&mut [&mut p], &mut st).unwrap();
            }
            p.data[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
        let mut p = param(0.0, 1.0);
        assert!(adam_step(&mut [&mut p], &mut AdamState::new(1e-3, &[2])).is_err());
    }
}
