//! Split intervals → normalized datasets in every representation, and their
//! on-disk form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::features::{self, HistogramSpec, Normalizer, RawSeries, Vocab};
use crate::ingest::SplitIntervals;
use crate::types::{
    class_from_meters, Dataset, FlatSample, HistogramSample, Interval, Representation, SensorKind, Split,
    TimeSeriesSample, SENSOR_WIDTH, SERIES_LEN,
};

pub const DATASET_KIND: &str = "dataset";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureOptions {
    /// Sensor kinds kept; the columns of every other kind are zeroed.
    pub sensors: Vec<SensorKind>,
    pub include_metadata: bool,
    pub histogram: HistogramSpec,
    pub steps: usize,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self {
            sensors: SensorKind::ALL.to_vec(),
            include_metadata: true,
            histogram: HistogramSpec::default(),
            steps: SERIES_LEN,
        }
    }
}

impl FeatureOptions {
    pub fn validate(&self) -> Result<()> {
        if self.sensors.is_empty() {
            return Err(Error::Config("sensor subset must not be empty".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("series length must be positive".into()));
        }
        self.histogram.validate()
    }

    pub fn keeps(&self, kind: SensorKind) -> bool {
        self.sensors.contains(&kind)
    }
}

/// One split in every representation. Sample order matches `ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSplit {
    pub ids: Vec<String>,
    pub timeseries: Dataset<TimeSeriesSample>,
    pub histogram: Dataset<HistogramSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub options: FeatureOptions,
    pub train: PreparedSplit,
    pub eval: PreparedSplit,
}

fn raw_series(iv: &Interval, opts: &FeatureOptions) -> RawSeries {
    let mut raw = features::resample(iv, opts.steps);
    for kind in SensorKind::ALL {
        if !opts.keeps(kind) {
            raw.missing[kind.index()] = true;
            for row in raw.matrix.chunks_exact_mut(SENSOR_WIDTH) {
                row[kind.offset()..kind.offset() + kind.dim()].fill(0.0);
            }
        }
    }
    raw
}

fn build_split(
    intervals: &[Interval],
    raws: &[RawSeries],
    vocab: &Vocab,
    normalizer: &Normalizer,
    opts: &FeatureOptions,
    split: Split,
) -> Result<PreparedSplit> {
    let mut ts = Vec::with_capacity(intervals.len());
    let mut hist = Vec::with_capacity(intervals.len());
    for (iv, raw) in intervals.iter().zip(raws) {
        let onehot = if opts.include_metadata {
            vocab.encode(&iv.meta)?
        } else {
            Vec::new()
        };
        ts.push(features::to_timeseries(
            &normalizer.apply(raw),
            SENSOR_WIDTH,
            &onehot,
            iv.label,
            &iv.meta.site,
        )?);
        hist.push(features::to_histogram(iv, &opts.histogram));
    }
    Ok(PreparedSplit {
        ids: intervals.iter().map(|iv| iv.id.clone()).collect(),
        timeseries: Dataset {
            samples: ts,
            vocab: vocab.clone(),
            normalizer: Some(normalizer.clone()),
            split,
        },
        histogram: Dataset {
            samples: hist,
            vocab: vocab.clone(),
            normalizer: None,
            split,
        },
    })
}

/// Resamples, normalizes with train-only statistics and encodes metadata.
pub fn prepare(split: &SplitIntervals, opts: &FeatureOptions) -> Result<Prepared> {
    opts.validate()?;
    let train_raw: Vec<RawSeries> = split.train.iter().map(|iv| raw_series(iv, opts)).collect();
    let eval_raw: Vec<RawSeries> = split.eval.iter().map(|iv| raw_series(iv, opts)).collect();
    let normalizer = Normalizer::fit(&train_raw)?;
    Ok(Prepared {
        options: opts.clone(),
        train: build_split(&split.train, &train_raw, &split.vocab, &normalizer, opts, Split::Train)?,
        eval: build_split(&split.eval, &eval_raw, &split.vocab, &normalizer, opts, Split::Eval)?,
    })
}

impl PreparedSplit {
    pub fn flat(&self) -> Dataset<FlatSample> {
        let ds = &self.timeseries;
        Dataset {
            samples: ds.samples.iter().map(|s| features::to_flat(s, SENSOR_WIDTH)).collect(),
            vocab: ds.vocab.clone(),
            normalizer: ds.normalizer.clone(),
            split: ds.split,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    /// The samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Shape(format!("sample index {i} out of range for {} samples", self.len())));
        }
        Ok(Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            timeseries: Dataset {
                samples: indices.iter().map(|&i| self.timeseries.samples[i].clone()).collect(),
                vocab: self.timeseries.vocab.clone(),
                normalizer: self.timeseries.normalizer.clone(),
                split: self.timeseries.split,
            },
            histogram: Dataset {
                samples: indices.iter().map(|&i| self.histogram.samples[i].clone()).collect(),
                vocab: self.histogram.vocab.clone(),
                normalizer: self.histogram.normalizer.clone(),
                split: self.histogram.split,
            },
        })
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn representation(&self, r: Representation) -> AnyDataset {
        match r {
            Representation::Timeseries => AnyDataset::Timeseries(self.timeseries.clone()),
            Representation::Flat => AnyDataset::Flat(self.flat()),
            Representation::Histogram => AnyDataset::Histogram(self.histogram.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyDataset {
    Timeseries(Dataset<TimeSeriesSample>),
    Flat(Dataset<FlatSample>),
    Histogram(Dataset<HistogramSample>),
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    split: Split,
    options: FeatureOptions,
    /// Time steps, features per step, samples.
    steps: usize,
    features: usize,
    samples: usize,
    sensor_width: usize,
    vocab: Vocab,
    normalizer: Normalizer,
    ids: Vec<String>,
    sites: Vec<String>,
}

/// Container with tensors `timeseries [N, T, F]`, `histogram [N, B]` and `distance_m [N]`.
pub fn to_container(split: &PreparedSplit, options: &FeatureOptions) -> Result<Container> {
    let ts = &split.timeseries;
    let n = ts.len();
    let (steps, feats) = ts.samples.first().map(|s| (s.rows, s.cols)).unwrap_or((options.steps, 0));
    let normalizer = ts
        .normalizer
        .clone()
        .ok_or_else(|| Error::Container("time-series dataset without normalizer".into()))?;
    let header = DatasetHeader {
        split: ts.split,
        options: options.clone(),
        steps,
        features: feats,
        samples: n,
        sensor_width: SENSOR_WIDTH,
        vocab: ts.vocab.clone(),
        normalizer,
        ids: split.ids.clone(),
        sites: ts.samples.iter().map(|s| s.site.clone()).collect(),
    };
    let meta = serde_json::to_value(&header).map_err(|e| Error::Container(e.to_string()))?;
    let mut c = Container::new(DATASET_KIND, meta);
    c.push(
        "timeseries",
        vec![n, steps, feats],
        ts.samples.iter().flat_map(|s| s.matrix.iter().copied()).collect(),
    )?;
    c.push(
        "histogram",
        vec![n, options.histogram.buckets()],
        split.histogram.samples.iter().flat_map(|s| s.freqs.iter().copied()).collect(),
    )?;
    c.push(
        "distance_m",
        vec![n],
        ts.samples.iter().map(|s| s.label.meters()).collect(),
    )?;
    Ok(c)
}

pub fn from_container(c: &Container) -> Result<(PreparedSplit, FeatureOptions)> {
    let h: DatasetHeader = c.meta_as(DATASET_KIND)?;
    let bad = |m: String| Error::Container(m);
    if h.ids.len() != h.samples || h.sites.len() != h.samples {
        return Err(bad("id/site lists disagree with the sample count".into()));
    }
    if h.normalizer.mean.len() != SENSOR_WIDTH || h.normalizer.std.len() != SENSOR_WIDTH {
        return Err(bad("normalizer width disagrees with the sensor width".into()));
    }
    let buckets = h.options.histogram.validate().map(|_| h.options.histogram.buckets())?;
    let ts = c.tensor("timeseries")?;
    let hist = c.tensor("histogram")?;
    let dist = c.tensor("distance_m")?;
    if ts.shape != [h.samples, h.steps, h.features]
        || hist.shape != [h.samples, buckets]
        || dist.shape != [h.samples]
    {
        return Err(bad("tensor shapes disagree with the header".into()));
    }
    let width = h.steps * h.features;
    let mut ts_samples = Vec::with_capacity(h.samples);
    let mut hist_samples = Vec::with_capacity(h.samples);
    for i in 0..h.samples {
        let label = class_from_meters(dist.data[i])?;
        let site = h.sites[i].clone();
        ts_samples.push(TimeSeriesSample {
            rows: h.steps,
            cols: h.features,
            matrix: ts.data[i * width..(i + 1) * width].to_vec(),
            label,
            site: site.clone(),
        });
        hist_samples.push(HistogramSample {
            freqs: hist.data[i * buckets..(i + 1) * buckets].to_vec(),
            label,
            site,
        });
    }
    let split = PreparedSplit {
        ids: h.ids,
        timeseries: Dataset {
            samples: ts_samples,
            vocab: h.vocab.clone(),
            normalizer: Some(h.normalizer),
            split: h.split,
        },
        histogram: Dataset {
            samples: hist_samples,
            vocab: h.vocab,
            normalizer: None,
            split: h.split,
        },
    };
    Ok((split, h.options))
}

/// Writes `train.pxc` and `eval.pxc` into `dir`.
pub fn save(prepared: &Prepared, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    to_container(&prepared.train, &prepared.options)?.write(&dir.join(TRAIN_FILE))?;
    to_container(&prepared.eval, &prepared.options)?.write(&dir.join(EVAL_FILE))
}

pub const TRAIN_FILE: &str = "train.pxc";
pub const EVAL_FILE: &str = "eval.pxc";

pub fn load(dir: &Path) -> Result<Prepared> {
    let (train, options) = from_container(&Container::read(&dir.join(TRAIN_FILE))?)?;
    let (eval, eval_options) = from_container(&Container::read(&dir.join(EVAL_FILE))?)?;
    if options != eval_options || train.timeseries.split != Split::Train || eval.timeseries.split != Split::Eval {
        return Err(Error::Container(format!(
            "{} and {} were not prepared together",
            TRAIN_FILE, EVAL_FILE
        )));
    }
    Ok(Prepared { options, train, eval })
}
