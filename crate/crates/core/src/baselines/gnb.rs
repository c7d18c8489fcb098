use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DistanceClass, Sample};

pub const VARIANCE_FLOOR: f64 = 1e-9;

/// Gaussian naive Bayes over the four distance classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnbModel {
    pub priors: [f64; 4],
    /// Per class, per feature.
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

pub fn gnb_fit<S: Sample>(train: &[S]) -> Result<GnbModel> {
    let width = train
        .first()
        .map(|s| s.features().len())
        .ok_or_else(|| Error::Config("naive Bayes needs training samples".into()))?;
    let mut counts = [0usize; 4];
    let mut means = vec![vec![0.0; width]; 4];
    for s in train {
        let x = s.features();
        if x.len() != width {
            return Err(Error::Shape(format!("feature width {} != {width}", x.len())));
        }
        let c = s.label().index();
        counts[c] += 1;
        for (m, v) in means[c].iter_mut().zip(x) {
            *m += v;
        }
    }
    if let Some(c) = (0..4).find(|&c| counts[c] == 0) {
        return Err(Error::Config(format!(
            "class {} m has no training samples",
            DistanceClass::ALL[c]
        )));
    }
    for c in 0..4 {
        means[c].iter_mut().for_each(|m| *m /= counts[c] as f64);
    }
    let mut variances = vec![vec![0.0; width]; 4];
    for s in train {
        let c = s.label().index();
        for ((var, m), v) in variances[c].iter_mut().zip(&means[c]).zip(s.features()) {
            *var += (v - m).powi(2);
        }
    }
    for c in 0..4 {
        variances[c]
            .iter_mut()
            .for_each(|v| *v = (*v / counts[c] as f64).max(VARIANCE_FLOOR));
    }
    let n = train.len() as f64;
    let priors = counts.map(|k| k as f64 / n);
    Ok(GnbModel {
        priors,
        means,
        variances,
    })
}

impl GnbModel {
    pub fn width(&self) -> usize {
        self.means[0].len()
    }

    /// Log of prior times the product of per-feature normal densities.
    pub fn joint_log_likelihood(&self, x: &[f64]) -> Result<[f64; 4]> {
        if x.len() != self.width() {
            return Err(Error::Shape(format!(
                "naive Bayes fitted on width {}, got {}",
                self.width(),
                x.len()
            )));
        }
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        let mut out = [0.0; 4];
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.priors[c].ln()
                - 0.5
                    * x.iter()
                        .zip(&self.means[c])
                        .zip(&self.variances[c])
                        .map(|((v, m), var)| ln_2pi + var.ln() + (v - m).powi(2) / var)
                        .sum::<f64>();
        }
        Ok(out)
    }

    /// Posterior over classes, normalized in log space.
    pub fn predict(&self, x: &[f64]) -> Result<[f64; 4]> {
        let jll = self.joint_log_likelihood(x)?;
        let max = jll.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = jll.iter().map(|l| (l - max).exp()).sum();
        let log_z = max + z.ln();
        Ok(jll.map(|l| (l - log_z).exp()))
    }
}
