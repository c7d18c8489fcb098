use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::features::Vocab;
use crate::rng;
use crate::types::Interval;

#[derive(Debug, Clone, PartialEq)]
pub enum SplitRule {
    /// Whole sites go to one side.
    Site { train: Vec<String>, eval: Vec<String> },
    /// Shuffle experiments with `seed` and send `train_fraction` of them (rounded)
    /// to train. An experiment is never divided between the splits.
    Fraction { train_fraction: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitIntervals {
    pub train: Vec<Interval>,
    pub eval: Vec<Interval>,
    /// Fitted over train and eval together so one-hot widths agree.
    pub vocab: Vocab,
}

pub fn assemble(intervals: Vec<Interval>, rule: &SplitRule) -> Result<SplitIntervals> {
    if intervals.is_empty() {
        return Err(Error::Config("no intervals to split".into()));
    }
    let (train, eval): (Vec<Interval>, Vec<Interval>) = match rule {
        SplitRule::Site { train, eval } => {
            if let Some(s) = train.iter().find(|s| eval.contains(s)) {
                return Err(Error::Config(format!("site `{s}` is in both train and eval")));
            }
            let (tr, rest): (Vec<_>, Vec<_>) =
                intervals.into_iter().partition(|iv| train.contains(&iv.meta.site));
            let ev = rest
                .into_iter()
                .filter(|iv| eval.contains(&iv.meta.site))
                .collect();
            (tr, ev)
        }
        SplitRule::Fraction {
            train_fraction,
            seed,
        } => {
            if !(0.0..=1.0).contains(train_fraction) {
                return Err(Error::Config(format!(
                    "train fraction must lie in [0, 1], got {train_fraction}"
                )));
            }
            let experiments: BTreeSet<&str> = intervals
                .iter()
                .map(|iv| iv.meta.experiment_id.as_str())
                .collect();
            let mut order: Vec<&str> = experiments.into_iter().collect();
            order.shuffle(&mut rng::stream(*seed, &[rng::label_hash("split")]));
            let n_train = (train_fraction * order.len() as f64).round() as usize;
            let train_ids: BTreeSet<String> =
                order[..n_train].iter().map(|s| s.to_string()).collect();
            intervals
                .into_iter()
                .partition(|iv| train_ids.contains(&iv.meta.experiment_id))
        }
    };
    if train.is_empty() || eval.is_empty() {
        return Err(Error::Config(format!(
            "split rule left an empty side (train {}, eval {})",
            train.len(),
            eval.len()
        )));
    }
    let vocab = Vocab::fit(train.iter().chain(eval.iter()).map(|iv| &iv.meta));
    Ok(SplitIntervals { train, eval, vocab })
}
