//! Interval → model-input conversion.
//!
//! Each interval is resampled onto a fixed grid of [`SERIES_LEN`](crate::types::SERIES_LEN) steps by
//! zero-order hold, normalized per feature with statistics from the train split,
//! and extended with the one-hot experiment metadata. The flat representation
//! concatenates the sensor rows and appends a single metadata block; the
//! histogram representation keeps only BLE RSSI bucket frequencies.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    DistanceClass, ExperimentMeta, FlatSample, HistogramSample, Interval, SensorKind,
    TimeSeriesSample, META_FIELDS, SENSOR_WIDTH,
};

pub const STD_EPSILON: f64 = 1e-8;
pub const DEFAULT_MIXUP_ALPHA: f64 = 0.2;

/// Closed vocabulary of each one-hot metadata field, values sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub fields: Vec<(String, Vec<String>)>,
}

impl Vocab {
    pub fn fit<'a>(metas: impl IntoIterator<Item = &'a ExperimentMeta>) -> Self {
        let mut sets: Vec<std::collections::BTreeSet<String>> =
            vec![Default::default(); META_FIELDS.len()];
        for m in metas {
            for (set, field) in sets.iter_mut().zip(META_FIELDS) {
                set.insert(m.field(field).unwrap_or_default().to_string());
            }
        }
        Self {
            fields: META_FIELDS
                .iter()
                .zip(sets)
                .map(|(f, s)| (f.to_string(), s.into_iter().collect()))
                .collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.fields.iter().map(|(_, v)| v.len()).sum()
    }

    /// One-hot encoding of `meta`, fields concatenated in vocabulary order.
    pub fn encode(&self, meta: &ExperimentMeta) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.width()];
        let mut offset = 0;
        for (field, values) in &self.fields {
            let value = meta.field(field).unwrap_or_default();
            let pos = values
                .binary_search_by(|v| v.as_str().cmp(value))
                .map_err(|_| Error::OutOfVocabulary {
                    field: field.clone(),
                    value: value.to_string(),
                })?;
            out[offset + pos] = 1.0;
            offset += values.len();
        }
        Ok(out)
    }
}

/// Resampled sensor matrix before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub steps: usize,
    /// `steps x SENSOR_WIDTH`, row-major.
    pub matrix: Vec<f64>,
    /// Sensor kinds with no readings at all, indexed by [`SensorKind::index`].
    pub missing: [bool; 8],
}

impl RawSeries {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * SENSOR_WIDTH..(i + 1) * SENSOR_WIDTH]
    }

    pub fn missing_kinds(&self) -> Vec<SensorKind> {
        SensorKind::ALL
            .into_iter()
            .filter(|k| self.missing[k.index()])
            .collect()
    }
}

/// Sample time of step `i` on a grid of `steps` over `window` seconds.
pub fn step_time(i: usize, steps: usize, window: f64) -> f64 {
    (i as f64 + 0.5) * window / steps as f64
}

/// Zero-order-hold resampling onto `steps` mid-step sample times.
///
/// Each row holds, per sensor kind, the latest reading at or before the sample
/// time; steps before a kind's first reading take that first reading. Kinds that
/// never report are zero and flagged in `missing`.
pub fn resample(interval: &Interval, steps: usize) -> RawSeries {
    let mut matrix = vec![0.0; steps * SENSOR_WIDTH];
    let mut missing = [false; 8];
    for kind in SensorKind::ALL {
        let readings: Vec<_> = interval.readings_of(kind).collect();
        if readings.is_empty() {
            missing[kind.index()] = true;
            continue;
        }
        let off = kind.offset();
        let mut cur = 0;
        for i in 0..steps {
            let t = step_time(i, steps, interval.window);
            while cur + 1 < readings.len() && readings[cur + 1].t <= t {
                cur += 1;
            }
            let row = &mut matrix[i * SENSOR_WIDTH + off..i * SENSOR_WIDTH + off + kind.dim()];
            row.copy_from_slice(&readings[cur].values);
        }
    }
    RawSeries {
        steps,
        matrix,
        missing,
    }
}

/// Per-feature population mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub epsilon: f64,
}

impl Normalizer {
    /// Fits over every time step of every series, skipping sensor kinds a
    /// series is missing.
    pub fn fit(train: &[RawSeries]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Config("cannot fit a normalizer on no samples".into()));
        }
        let mut count = [0usize; SENSOR_WIDTH];
        let mut sum = [0.0f64; SENSOR_WIDTH];
        let mut present = [true; SENSOR_WIDTH];
        for s in train {
            fill_present(&s.missing, &mut present);
            for i in 0..s.steps {
                for (j, v) in s.row(i).iter().enumerate() {
                    if present[j] {
                        sum[j] += v;
                        count[j] += 1;
                    }
                }
            }
        }
        let mean: Vec<f64> = (0..SENSOR_WIDTH)
            .map(|j| if count[j] > 0 { sum[j] / count[j] as f64 } else { 0.0 })
            .collect();
        // second pass for numerically stable variance
        let mut sq = [0.0f64; SENSOR_WIDTH];
        for s in train {
            fill_present(&s.missing, &mut present);
            for i in 0..s.steps {
                for (j, v) in s.row(i).iter().enumerate() {
                    if present[j] {
                        sq[j] += (v - mean[j]).powi(2);
                    }
                }
            }
        }
        let std = (0..SENSOR_WIDTH)
            .map(|j| {
                let var = if count[j] > 0 { sq[j] / count[j] as f64 } else { 0.0 };
                var.sqrt().max(STD_EPSILON)
            })
            .collect();
        Ok(Self {
            mean,
            std,
            epsilon: STD_EPSILON,
        })
    }

    /// Normalized copy of the series; missing kinds stay zero.
    pub fn apply(&self, series: &RawSeries) -> Vec<f64> {
        let mut present = [true; SENSOR_WIDTH];
        fill_present(&series.missing, &mut present);
        let mut out = series.matrix.clone();
        for row in out.chunks_exact_mut(SENSOR_WIDTH) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if present[j] {
                    (*v - self.mean[j]) / self.std[j]
                } else {
                    0.0
                };
            }
        }
        out
    }

    pub fn invert(&self, normalized: &[f64]) -> Vec<f64> {
        normalized
            .chunks_exact(SENSOR_WIDTH)
            .flat_map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(j, v)| v * self.std[j] + self.mean[j])
            })
            .collect()
    }
}

fn fill_present(missing: &[bool; 8], present: &mut [bool; SENSOR_WIDTH]) {
    for kind in SensorKind::ALL {
        let off = kind.offset();
        for p in &mut present[off..off + kind.dim()] {
            *p = !missing[kind.index()];
        }
    }
}

/// Appends `onehot` to every row of a normalized `steps x sensor_width` matrix.
pub fn to_timeseries(
    normalized: &[f64],
    sensor_width: usize,
    onehot: &[f64],
    label: DistanceClass,
    site: &str,
) -> Result<TimeSeriesSample> {
    if sensor_width == 0 || !normalized.len().is_multiple_of(sensor_width) {
        return Err(Error::Shape(format!(
            "matrix of {} values is not a multiple of width {sensor_width}",
            normalized.len()
        )));
    }
    let rows = normalized.len() / sensor_width;
    let cols = sensor_width + onehot.len();
    let mut matrix = Vec::with_capacity(rows * cols);
    for row in normalized.chunks_exact(sensor_width) {
        matrix.extend_from_slice(row);
        matrix.extend_from_slice(onehot);
    }
    Ok(TimeSeriesSample {
        rows,
        cols,
        matrix,
        label,
        site: site.to_string(),
    })
}

/// Row-major concatenation of the sensor part of every row, then one copy of
/// the metadata block taken from the first row.
pub fn to_flat(sample: &TimeSeriesSample, sensor_width: usize) -> FlatSample {
    let meta_width = sample.cols - sensor_width;
    let mut vector = Vec::with_capacity(sample.rows * sensor_width + meta_width);
    for i in 0..sample.rows {
        vector.extend_from_slice(&sample.row(i)[..sensor_width]);
    }
    if sample.rows > 0 {
        vector.extend_from_slice(&sample.row(0)[sensor_width..]);
    }
    FlatSample {
        vector,
        label: sample.label,
        site: sample.site.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub lo: f64,
    pub hi: f64,
    pub bucket_width: f64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self {
            lo: -100.0,
            hi: -30.0,
            bucket_width: 5.0,
        }
    }
}

impl HistogramSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lo.is_finite()
            && self.hi.is_finite()
            && self.lo < self.hi
            && self.bucket_width.is_finite()
            && self.bucket_width > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid histogram spec {self:?}")))
        }
    }

    pub fn buckets(&self) -> usize {
        ((self.hi - self.lo) / self.bucket_width).ceil() as usize
    }

    pub fn bucket_of(&self, v: f64) -> usize {
        let b = ((v - self.lo) / self.bucket_width).floor();
        b.clamp(0.0, (self.buckets() - 1) as f64) as usize
    }
}

/// Relative frequencies of BLE RSSI readings per bucket; all zero without BLE readings.
pub fn to_histogram(interval: &Interval, spec: &HistogramSpec) -> HistogramSample {
    let mut freqs = vec![0.0; spec.buckets()];
    let mut n = 0usize;
    for r in interval.readings_of(SensorKind::Bluetooth) {
        freqs[spec.bucket_of(r.values[0])] += 1.0;
        n += 1;
    }
    if n > 0 {
        for f in &mut freqs {
            *f /= n as f64;
        }
    }
    HistogramSample {
        freqs,
        label: interval.label,
        site: interval.meta.site.clone(),
    }
}

/// Convex combination of two flat samples and their one-hot labels.
pub fn mixup(a: &FlatSample, b: &FlatSample, lambda: f64) -> Result<(Vec<f64>, [f64; 4])> {
    if a.vector.len() != b.vector.len() {
        return Err(Error::Shape(format!(
            "mix-up needs equal lengths, got {} and {}",
            a.vector.len(),
            b.vector.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("mix-up lambda {lambda} outside [0, 1]")));
    }
    let vector = a
        .vector
        .iter()
        .zip(&b.vector)
        // clamp absorbs rounding so the result stays on the segment
        .map(|(x, y)| (lambda * x + (1.0 - lambda) * y).clamp(x.min(*y), x.max(*y)))
        .collect();
    let (ha, hb) = (a.label.one_hot(), b.label.one_hot());
    let mut label = [0.0; 4];
    for k in 0..4 {
        label[k] = lambda * ha[k] + (1.0 - lambda) * hb[k];
    }
    Ok((vector, label))
}

/// Draws a mix-up coefficient from `Beta(alpha, alpha)`.
pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| Error::Domain(format!("mix-up alpha {alpha}: {e}")))?;
    Ok(beta.sample(rng))
}
