//! Statistical baselines: Gaussian naive Bayes and CART random forests.

mod forest;
mod gnb;

use serde::{Deserialize, Serialize};

pub use forest::{
    forest_fit, tree_fit, weighted_gini, weighted_variance, ForestMode, ForestModel, ForestOutput,
    ForestParams, MaxFeatures, Node, SplitChoice, Tree,
};
pub use gnb::{gnb_fit, GnbModel, VARIANCE_FLOOR};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::types::{DistanceClass, Sample};

pub const BASELINE_KIND: &str = "baseline";

/// A fitted baseline, tagged by kind in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "baseline", rename_all = "lowercase")]
pub enum Baseline {
    Gnb(GnbModel),
    Forest(ForestModel),
}

impl Baseline {
    pub fn predict_class(&self, x: &[f64]) -> Result<DistanceClass> {
        match self {
            Baseline::Gnb(m) => {
                let p = m.predict(x)?;
                let best = (0..4).fold(0, |b, k| if p[k] > p[b] { k } else { b });
                Ok(DistanceClass::ALL[best])
            }
            Baseline::Forest(f) => f.predict(x)?.class(),
        }
    }

    pub fn predict_classes<S: Sample>(&self, samples: &[S]) -> Result<Vec<DistanceClass>> {
        samples.iter().map(|s| self.predict_class(s.features())).collect()
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = serde_json::to_value(self).map_err(|e| Error::Container(e.to_string()))?;
        Ok(Container::new(BASELINE_KIND, meta))
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.meta_as(BASELINE_KIND)
    }
}
