use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::model::{ModelSpec, Network, Objective};
use super::ops;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::eval::{self, ContactRule};
use crate::features::sample_lambda;
use crate::rng;
use crate::types::{class_from_meters, DistanceClass, Representation, Sample, TrainPreset};

/// Largest slice of a mini-batch pushed through the network at once;
/// gradients of the slices are summed before the optimizer step.
pub const MICRO_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub objective: Objective,
    pub rule: ContactRule,
    /// Mix-up with `Beta(alpha, alpha)` coefficients; flat inputs only.
    pub mixup_alpha: Option<f64>,
    /// Score the eval split after every epoch.
    pub eval_each_epoch: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            objective: Objective::Classify,
            rule: ContactRule::default(),
            mixup_alpha: None,
            eval_each_epoch: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_ndcf: Option<f64>,
    pub eval_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,eval_ndcf,eval_accuracy\n");
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch,
                e.train_loss,
                opt(e.eval_ndcf),
                opt(e.eval_accuracy)
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trained {
    pub network: Network,
    pub preset: TrainPreset,
    pub history: History,
}

pub enum Targets {
    /// `[batch, 4]` class distributions.
    Distributions(Vec<f64>),
    /// Distances in meters.
    Meters(Vec<f64>),
}

/// Network plus optimizer state; one call to [`Trainer::step`] is one Adam update.
pub struct Trainer {
    pub network: Network,
    pub adam: AdamState,
}

impl Trainer {
    pub fn new(network: Network, lr: f64) -> Self {
        let mut network = network;
        let adam = AdamState::for_params(lr, &network.params_mut());
        Self { network, adam }
    }

    /// Forward/backward over `x` in micro-batches, then one optimizer update.
    /// Returns the mean loss over the batch.
    pub fn step(&mut self, x: &Tensor, targets: &Targets) -> Result<f64> {
        let batch = x.dim(0);
        let row = x.row_len();
        let classes = self.network.spec.output_width();
        self.network.zero_grad();
        let mut total = 0.0;
        let mut start = 0;
        while start < batch {
            let end = (start + MICRO_BATCH).min(batch);
            let mut shape = x.shape.clone();
            shape[0] = end - start;
            let chunk = Tensor::new(shape, x.data[start * row..end * row].to_vec())?;
            let out = self.network.forward(chunk, true)?;
            let (loss, mut grad) = match (targets, self.network.spec.objective) {
                (Targets::Distributions(t), Objective::Classify) => {
                    ops::softmax_cross_entropy(&out, &t[start * classes..end * classes])?
                }
                (Targets::Meters(t), Objective::Regress) => ops::mse(&out, &t[start..end])?,
                _ => return Err(Error::Config("targets do not match the objective".into())),
            };
            // chunk means -> batch mean
            let share = (end - start) as f64 / batch as f64;
            grad.data.iter_mut().for_each(|g| *g *= share);
            total += loss * share;
            self.network.backward(grad);
            start = end;
        }
        let mut params = self.network.params_mut();
        adam_step(&mut params, &mut self.adam)?;
        Ok(total)
    }
}

fn gather<S: Sample>(samples: &[S], idx: &[usize]) -> Result<Tensor> {
    let mut shape = vec![idx.len()];
    shape.extend(samples[idx[0]].shape());
    let row = samples[idx[0]].features().len();
    let mut data = Vec::with_capacity(idx.len() * row);
    for &i in idx {
        data.extend_from_slice(samples[i].features());
    }
    Tensor::new(shape, data)
}

fn check_inputs<S: Sample>(spec: &ModelSpec, samples: &[S], what: &str) -> Result<()> {
    if let Some(s) = samples.iter().find(|s| s.shape() != spec.input_shape) {
        return Err(Error::Config(format!(
            "{} expects {} input of per-sample shape {:?}, but the {what} split has shape {:?}",
            spec.kind,
            spec.kind.representation(),
            spec.input_shape,
            s.shape()
        )));
    }
    Ok(())
}

/// Mini-batch training for `preset.epochs` epochs with a seeded shuffle per epoch.
pub fn train<S: Sample>(
    spec: ModelSpec,
    preset: &TrainPreset,
    train: &[S],
    eval: &[S],
    seed: u64,
    opts: &TrainOptions,
) -> Result<Trained> {
    preset.validate()?;
    if spec.kind != preset.model_kind {
        return Err(Error::Config(format!(
            "model {} does not match preset `{}` ({})",
            spec.kind, preset.name, preset.model_kind
        )));
    }
    if spec.objective != opts.objective {
        return Err(Error::Config("model objective differs from training objective".into()));
    }
    check_inputs(&spec, train, "train")?;
    check_inputs(&spec, eval, "eval")?;
    let mixup = match opts.mixup_alpha {
        Some(_) if spec.kind.representation() != Representation::Flat => {
            return Err(Error::Config("mix-up applies to flat inputs only".into()))
        }
        other => other,
    };

    let network = Network::new(spec, seed)?;
    let mut trainer = Trainer::new(network, preset.learning_rate);
    let mut history = History::default();
    if preset.epochs > 0 && train.is_empty() {
        return Err(Error::Config("empty training split".into()));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..preset.epochs {
        let mut rng = rng::stream(seed, &[rng::label_hash("epoch"), epoch as u64]);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(preset.batch_size) {
            let mut x = gather(train, idx)?;
            let labels: Vec<DistanceClass> = idx.iter().map(|&i| train[i].label()).collect();
            let mut dists: Vec<[f64; 4]> = labels.iter().map(|l| l.one_hot()).collect();
            let mut meters: Vec<f64> = labels.iter().map(|l| l.meters()).collect();
            if let Some(alpha) = mixup {
                let mut partner: Vec<usize> = (0..idx.len()).collect();
                partner.shuffle(&mut rng);
                let row = x.row_len();
                let src = x.clone();
                for (i, &j) in partner.iter().enumerate() {
                    let lambda = sample_lambda(alpha, &mut rng)?;
                    for k in 0..row {
                        x.data[i * row + k] =
                            lambda * src.data[i * row + k] + (1.0 - lambda) * src.data[j * row + k];
                    }
                    let (a, b) = (labels[i].one_hot(), labels[j].one_hot());
                    for c in 0..4 {
                        dists[i][c] = lambda * a[c] + (1.0 - lambda) * b[c];
                    }
                    meters[i] = lambda * labels[i].meters() + (1.0 - lambda) * labels[j].meters();
                }
            }
            let targets = match opts.objective {
                Objective::Classify => Targets::Distributions(dists.concat()),
                Objective::Regress => Targets::Meters(meters),
            };
            loss_sum += trainer.step(&x, &targets)? * idx.len() as f64;
        }
        let (eval_ndcf, eval_accuracy) = if opts.eval_each_epoch && !eval.is_empty() {
            let preds = predict_classes(&mut trainer.network, eval)?;
            let truths: Vec<DistanceClass> = eval.iter().map(|s| s.label()).collect();
            (
                eval::ndcf(&preds, &truths, &opts.rule).ok().map(|r| r.ndcf),
                Some(eval::accuracy(&preds, &truths)),
            )
        } else {
            (None, None)
        };
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            eval_ndcf,
            eval_accuracy,
        });
    }
    Ok(Trained {
        network: trainer.network,
        preset: preset.clone(),
        history,
    })
}

/// Raw outputs per sample: class probabilities, or `[meters]` in regression mode.
pub fn predict<S: Sample>(network: &mut Network, samples: &[S]) -> Result<Vec<Vec<f64>>> {
    check_inputs(&network.spec, samples, "prediction")?;
    let mut out = Vec::with_capacity(samples.len());
    let idx: Vec<usize> = (0..samples.len()).collect();
    for chunk in idx.chunks(MICRO_BATCH) {
        let y = network.forward(gather(samples, chunk)?, false)?;
        let width = y.row_len();
        for row in y.data.chunks_exact(width) {
            out.push(match network.spec.objective {
                Objective::Classify => ops::softmax(row),
                Objective::Regress => row.to_vec(),
            });
        }
    }
    Ok(out)
}

/// Most probable class (first on ties), or the class nearest the regressed distance.
pub fn output_class(output: &[f64], objective: Objective) -> Result<DistanceClass> {
    match objective {
        Objective::Classify => {
            let mut best = 0;
            for (i, p) in output.iter().enumerate() {
                if *p > output[best] {
                    best = i;
                }
            }
            Ok(DistanceClass::from_index(best).expect("four outputs"))
        }
        Objective::Regress => class_from_meters(output[0]),
    }
}

pub fn predict_classes<S: Sample>(network: &mut Network, samples: &[S]) -> Result<Vec<DistanceClass>> {
    let objective = network.spec.objective;
    predict(network, samples)?
        .iter()
        .map(|o| output_class(o, objective))
        .collect()
}
