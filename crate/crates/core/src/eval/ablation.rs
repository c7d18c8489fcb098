use serde::{Deserialize, Serialize};

use super::experiment::{run_experiment, Experiment, ModelChoice};
use super::ndcf::ContactRule;
use crate::error::{Error, Result};
use crate::ingest::SplitIntervals;
use crate::pipeline::{prepare, FeatureOptions};
use crate::types::{Representation, SensorKind};

/// Sensors kept and whether the metadata one-hot block is appended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub sensors: Vec<SensorKind>,
    #[serde(default = "yes")]
    pub include_metadata: bool,
}

fn yes() -> bool {
    true
}

impl AblationSpec {
    pub fn all() -> Self {
        Self {
            sensors: SensorKind::ALL.to_vec(),
            include_metadata: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensors.is_empty() {
            return Err(Error::Config("ablation sensor subset must not be empty".into()));
        }
        Ok(())
    }

    /// `all`, or the kept sensors in canonical order joined with `+`.
    pub fn sensor_label(&self) -> String {
        if SensorKind::ALL.iter().all(|k| self.sensors.contains(k)) {
            return "all".into();
        }
        SensorKind::ALL
            .iter()
            .filter(|k| self.sensors.contains(k))
            .map(|k| k.name())
            .collect::<Vec<_>>()
            .join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub model: String,
    pub train_set: String,
    pub eval_set: String,
    pub ndcf: f64,
    pub accuracy: f64,
    pub p_fn: f64,
    pub p_fp: f64,
    pub sensors: String,
    pub metadata: bool,
    pub train_accuracy: f64,
    /// `train_accuracy - accuracy`.
    pub accuracy_gap: f64,
}

impl AblationRow {
    fn new(spec: &AblationSpec, e: &Experiment) -> Self {
        let r = &e.row;
        Self {
            model: r.model.clone(),
            train_set: r.train_set.clone(),
            eval_set: r.eval_set.clone(),
            ndcf: r.ndcf,
            accuracy: r.accuracy,
            p_fn: r.p_fn,
            p_fp: r.p_fp,
            sensors: spec.sensor_label(),
            metadata: spec.include_metadata,
            train_accuracy: e.train_accuracy,
            accuracy_gap: e.train_accuracy - r.accuracy,
        }
    }
}

/// Re-featurizes the split for every spec (normalizer re-fitted each time) and
/// runs the same model on each.
pub fn ablate(
    specs: &[AblationSpec],
    split: &SplitIntervals,
    base: &FeatureOptions,
    choice: &ModelChoice,
    representation: Representation,
    rule: &ContactRule,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    specs.iter().try_for_each(AblationSpec::validate)?;
    specs
        .iter()
        .map(|spec| {
            let opts = FeatureOptions {
                sensors: spec.sensors.clone(),
                include_metadata: spec.include_metadata,
                ..base.clone()
            };
            let prepared = prepare(split, &opts)?;
            let e = run_experiment(choice, representation, &prepared.train, &prepared.eval, rule, seed)?;
            Ok(AblationRow::new(spec, &e))
        })
        .collect()
}
