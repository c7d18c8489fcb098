use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::ndcf::{accuracy, ndcf, ContactRule};
use crate::baselines::{forest_fit, gnb_fit, Baseline, ForestMode, ForestParams, BASELINE_KIND};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::nn::{self, checkpoint, ModelSpec, Objective, TrainOptions, Trained};
use crate::pipeline::{AnyDataset, PreparedSplit};
use crate::types::{DistanceClass, Representation, Sample, TrainPreset};

/// One result line; columns in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub train_set: String,
    pub eval_set: String,
    pub ndcf: f64,
    pub accuracy: f64,
    pub p_fn: f64,
    pub p_fp: f64,
}

pub const REPORT_COLUMNS: [&str; 7] = ["model", "train_set", "eval_set", "ndcf", "accuracy", "p_fn", "p_fp"];

/// Serializes rows of any report type as CSV with a header line.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(format!("report: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("report: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Header-only CSV for an empty table.
pub fn report_csv(rows: &[ReportRow]) -> Result<String> {
    if rows.is_empty() {
        return Ok(REPORT_COLUMNS.join(",") + "\n");
    }
    to_csv(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelChoice {
    Network {
        preset: TrainPreset,
        objective: Objective,
        mixup_alpha: Option<f64>,
    },
    NaiveBayes,
    Forest(ForestParams),
}

impl ModelChoice {
    pub fn network(preset: TrainPreset) -> Self {
        ModelChoice::Network {
            preset,
            objective: Objective::Classify,
            mixup_alpha: None,
        }
    }

    /// Representation used when the caller does not choose one.
    pub fn default_representation(&self) -> Representation {
        match self {
            ModelChoice::Network { preset, .. } => preset.model_kind.representation(),
            _ => Representation::Flat,
        }
    }

    pub fn label(&self, representation: Representation) -> String {
        let base = match self {
            ModelChoice::Network { preset, objective, .. } => match objective {
                Objective::Classify => preset.name.clone(),
                Objective::Regress => format!("{}-regressor", preset.name),
            },
            ModelChoice::NaiveBayes => "naive-bayes".into(),
            ModelChoice::Forest(p) => match p.mode {
                ForestMode::Classify => "rf-classifier".into(),
                ForestMode::Regress => "rf-regressor".into(),
            },
        };
        if representation == Representation::Histogram {
            format!("{base}-histogram")
        } else {
            base
        }
    }
}

const RUN_TAG_KEY: &str = "run";

/// Report label and input representation stored alongside a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTag {
    pub label: String,
    pub representation: Representation,
}

/// A fitted model of any family.
#[derive(Debug, Clone, PartialEq)]
pub enum Fitted {
    Network(Trained),
    Baseline(Baseline),
}

impl Fitted {
    pub fn to_container(&self) -> Result<Container> {
        match self {
            Fitted::Network(t) => checkpoint::to_container(t),
            Fitted::Baseline(b) => b.to_container(),
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        match c.kind.as_str() {
            checkpoint::MODEL_KIND => checkpoint::from_container(c).map(Fitted::Network),
            BASELINE_KIND => Baseline::from_container(c).map(Fitted::Baseline),
            other => Err(Error::Container(format!("`{other}` is not a model checkpoint"))),
        }
    }

    /// Checkpoint that also records the report label and input representation.
    pub fn to_tagged_container(&self, label: &str, representation: Representation) -> Result<Container> {
        let mut c = self.to_container()?;
        let tag = serde_json::to_value(RunTag {
            label: label.to_string(),
            representation,
        })
        .map_err(|e| Error::Container(e.to_string()))?;
        match &mut c.meta {
            serde_json::Value::Object(m) => {
                m.insert(RUN_TAG_KEY.into(), tag);
            }
            _ => return Err(Error::Container("checkpoint header is not an object".into())),
        }
        Ok(c)
    }

    /// Inverse of [`Fitted::to_tagged_container`].
    pub fn from_tagged_container(c: &Container) -> Result<(Self, RunTag)> {
        let tag = c
            .meta
            .get(RUN_TAG_KEY)
            .cloned()
            .ok_or_else(|| Error::Container(format!("checkpoint header has no `{RUN_TAG_KEY}` entry")))?;
        let tag: RunTag = serde_json::from_value(tag).map_err(|e| Error::Container(format!("{RUN_TAG_KEY}: {e}")))?;
        Ok((Self::from_container(c)?, tag))
    }

    pub fn history(&self) -> Option<&nn::History> {
        match self {
            Fitted::Network(t) => Some(&t.history),
            Fitted::Baseline(_) => None,
        }
    }

    fn predict_samples<S: Sample>(&mut self, samples: &[S]) -> Result<Vec<DistanceClass>> {
        match self {
            Fitted::Network(t) => nn::predict_classes(&mut t.network, samples),
            Fitted::Baseline(b) => b.predict_classes(samples),
        }
    }

    pub fn predict(&mut self, data: &AnyDataset) -> Result<Vec<DistanceClass>> {
        match data {
            AnyDataset::Timeseries(d) => self.predict_samples(&d.samples),
            AnyDataset::Flat(d) => self.predict_samples(&d.samples),
            AnyDataset::Histogram(d) => self.predict_samples(&d.samples),
        }
    }
}

fn fit_samples<S: Sample>(
    choice: &ModelChoice,
    train: &[S],
    eval: &[S],
    rule: &ContactRule,
    seed: u64,
) -> Result<Fitted> {
    match choice {
        ModelChoice::Network {
            preset,
            objective,
            mixup_alpha,
        } => {
            let shape = train
                .first()
                .map(|s| s.shape())
                .ok_or_else(|| Error::Config("empty training split".into()))?;
            let spec = ModelSpec::from_preset(preset, shape, *objective);
            let opts = TrainOptions {
                objective: *objective,
                rule: *rule,
                mixup_alpha: *mixup_alpha,
                eval_each_epoch: true,
            };
            nn::train(spec, preset, train, eval, seed, &opts).map(Fitted::Network)
        }
        ModelChoice::NaiveBayes => gnb_fit(train).map(|m| Fitted::Baseline(Baseline::Gnb(m))),
        ModelChoice::Forest(p) => {
            let params = ForestParams { seed, ..p.clone() };
            forest_fit(train, &params).map(|m| Fitted::Baseline(Baseline::Forest(m)))
        }
    }
}

/// Fits `choice` on `train`, passing `eval` along for per-epoch scoring.
pub fn fit(choice: &ModelChoice, train: &AnyDataset, eval: &AnyDataset, rule: &ContactRule, seed: u64) -> Result<Fitted> {
    if let ModelChoice::Network { preset, .. } = choice {
        let want = preset.model_kind.representation();
        let got = match train {
            AnyDataset::Timeseries(_) => Representation::Timeseries,
            AnyDataset::Flat(_) => Representation::Flat,
            AnyDataset::Histogram(_) => Representation::Histogram,
        };
        if want != got {
            return Err(Error::Config(format!(
                "model {} takes {want} input, not {got}",
                preset.model_kind
            )));
        }
    }
    match (train, eval) {
        (AnyDataset::Timeseries(t), AnyDataset::Timeseries(e)) => fit_samples(choice, &t.samples, &e.samples, rule, seed),
        (AnyDataset::Flat(t), AnyDataset::Flat(e)) => fit_samples(choice, &t.samples, &e.samples, rule, seed),
        (AnyDataset::Histogram(t), AnyDataset::Histogram(e)) => fit_samples(choice, &t.samples, &e.samples, rule, seed),
        _ => Err(Error::Config("train and eval use different representations".into())),
    }
}

/// Site names in a split, sorted and joined with `+`.
pub fn set_name(split: &PreparedSplit) -> String {
    let sites: BTreeSet<&str> = split.timeseries.samples.iter().map(|s| s.site.as_str()).collect();
    sites.into_iter().collect::<Vec<_>>().join("+")
}

pub fn score_row(
    model: &str,
    train_set: &str,
    eval_set: &str,
    predictions: &[DistanceClass],
    truths: &[DistanceClass],
    rule: &ContactRule,
) -> Result<ReportRow> {
    let r = ndcf(predictions, truths, rule)?;
    Ok(ReportRow {
        model: model.to_string(),
        train_set: train_set.to_string(),
        eval_set: eval_set.to_string(),
        ndcf: r.ndcf,
        accuracy: accuracy(predictions, truths),
        p_fn: r.p_fn,
        p_fp: r.p_fp,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub row: ReportRow,
    pub fitted: Fitted,
    pub train_accuracy: f64,
}

/// Trains once and scores once on the eval split.
pub fn run_experiment(
    choice: &ModelChoice,
    representation: Representation,
    train: &PreparedSplit,
    eval: &PreparedSplit,
    rule: &ContactRule,
    seed: u64,
) -> Result<Experiment> {
    rule.validate()?;
    let train_data = train.representation(representation);
    let eval_data = eval.representation(representation);
    let mut fitted = fit(choice, &train_data, &eval_data, rule, seed)?;
    let preds = fitted.predict(&eval_data)?;
    let truths = eval.timeseries.labels();
    let row = score_row(
        &choice.label(representation),
        &set_name(train),
        &set_name(eval),
        &preds,
        &truths,
        rule,
    )?;
    let train_preds = fitted.predict(&train_data)?;
    let train_accuracy = accuracy(&train_preds, &train.timeseries.labels());
    Ok(Experiment {
        row,
        fitted,
        train_accuracy,
    })
}

/// Random forest classifier and regressor on the same data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    pub train_set: String,
    pub eval_set: String,
    pub representation: Representation,
    pub classifier_ndcf: f64,
    pub regressor_ndcf: f64,
    /// `regressor_ndcf - classifier_ndcf`; negative when regression helps.
    pub ndcf_delta: f64,
}

pub fn regressor_vs_classifier(
    params: &ForestParams,
    representation: Representation,
    train: &PreparedSplit,
    eval: &PreparedSplit,
    rule: &ContactRule,
    seed: u64,
) -> Result<(ModeComparison, [ReportRow; 2])> {
    let run = |mode| {
        let choice = ModelChoice::Forest(ForestParams { mode, ..params.clone() });
        run_experiment(&choice, representation, train, eval, rule, seed).map(|e| e.row)
    };
    let classifier = run(ForestMode::Classify)?;
    let regressor = run(ForestMode::Regress)?;
    let cmp = ModeComparison {
        train_set: classifier.train_set.clone(),
        eval_set: classifier.eval_set.clone(),
        representation,
        classifier_ndcf: classifier.ndcf,
        regressor_ndcf: regressor.ndcf,
        ndcf_delta: regressor.ndcf - classifier.ndcf,
    };
    Ok((cmp, [classifier, regressor]))
}
