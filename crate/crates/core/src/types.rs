//! Domain types shared by the whole pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Normalizer, Vocab};

/// Number of resampled time steps per interval.
pub const SERIES_LEN: usize = 150;

/// Default interval duration in seconds.
pub const DEFAULT_WINDOW_S: f64 = 4.0;

/// The four labelled separations, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DistanceClass {
    D1_2,
    D1_8,
    D3_0,
    D4_5,
}

impl DistanceClass {
    pub const ALL: [DistanceClass; 4] = [Self::D1_2, Self::D1_8, Self::D3_0, Self::D4_5];
    pub const COUNT: usize = 4;

    pub fn meters(self) -> f64 {
        match self {
            Self::D1_2 => 1.2,
            Self::D1_8 => 1.8,
            Self::D3_0 => 3.0,
            Self::D4_5 => 4.5,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Exact lookup used when reading manifests; tolerates decimal formatting noise only.
    pub fn from_label_meters(d: f64) -> Option<Self> {
        Self::ALL.into_iter().find(|c| (c.meters() - d).abs() < 1e-9)
    }

    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for DistanceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}", self.meters())
    }
}

/// Nearest class to a distance in meters. Midpoints go to the smaller class and
/// values outside `[1.2, 4.5]` clamp to the extremes.
pub fn class_from_meters(d: f64) -> Result<DistanceClass> {
    if !d.is_finite() {
        return Err(Error::Domain(format!("distance must be finite, got {d}")));
    }
    let mut best = DistanceClass::D1_2;
    let mut best_gap = (d - best.meters()).abs();
    for c in &DistanceClass::ALL[1..] {
        let gap = (d - c.meters()).abs();
        // strict: ties keep the smaller class
        if gap < best_gap {
            best = *c;
            best_gap = gap;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "&'static str", try_from = "String")]
pub enum SensorKind {
    Bluetooth,
    Accelerometer,
    Gyroscope,
    Magnetometer,
    Attitude,
    Gravity,
    Altitude,
    Compass,
}

/// Width of the resampled sensor block (sum of all kinds' channel counts).
pub const SENSOR_WIDTH: usize = 18;

impl SensorKind {
    pub const ALL: [SensorKind; 8] = [
        Self::Bluetooth,
        Self::Accelerometer,
        Self::Gyroscope,
        Self::Magnetometer,
        Self::Attitude,
        Self::Gravity,
        Self::Altitude,
        Self::Compass,
    ];

    pub fn dim(self) -> usize {
        match self {
            Self::Bluetooth | Self::Altitude | Self::Compass => 1,
            _ => 3,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// First column of this kind inside a resampled row.
    pub fn offset(self) -> usize {
        Self::ALL[..self.index()].iter().map(|k| k.dim()).sum()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Bluetooth => "bluetooth",
            Self::Accelerometer => "accelerometer",
            Self::Gyroscope => "gyroscope",
            Self::Magnetometer => "magnetometer",
            Self::Attitude => "attitude",
            Self::Gravity => "gravity",
            Self::Altitude => "altitude",
            Self::Compass => "compass",
        }
    }
}

impl From<SensorKind> for &'static str {
    fn from(k: SensorKind) -> Self {
        k.name()
    }
}

impl TryFrom<String> for SensorKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SensorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| k.name() == lower || (lower == "ble" && *k == Self::Bluetooth))
            .ok_or_else(|| Error::Domain(format!("unknown sensor `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub t: f64,
    pub kind: SensorKind,
    pub values: Vec<f64>,
}

impl SensorReading {
    pub fn new(t: f64, kind: SensorKind, values: Vec<f64>) -> Result<Self> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Domain(format!("reading time must be finite and >= 0, got {t}")));
        }
        if values.len() != kind.dim() {
            return Err(Error::Shape(format!(
                "{kind} expects {} values, got {}",
                kind.dim(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("{kind} reading has non-finite values")));
        }
        Ok(Self { t, kind, values })
    }
}

/// Metadata fields that are one-hot encoded, in encoding order.
pub const META_FIELDS: [&str; 4] = ["tx_model", "rx_model", "tx_power", "carriage"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExperimentMeta {
    pub experiment_id: String,
    pub site: String,
    pub tx_model: String,
    pub rx_model: String,
    pub tx_power: String,
    pub carriage: String,
}

impl ExperimentMeta {
    pub fn field(&self, name: &str) -> Option<&str> {
        match name {
            "tx_model" => Some(&self.tx_model),
            "rx_model" => Some(&self.rx_model),
            "tx_power" => Some(&self.tx_power),
            "carriage" => Some(&self.carriage),
            _ => None,
        }
    }
}

/// One labelled window of readings between a transmitter/receiver pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub id: String,
    pub meta: ExperimentMeta,
    pub label: DistanceClass,
    pub window: f64,
    pub readings: Vec<SensorReading>,
}

impl Interval {
    /// Builds an interval, sorting readings by time (stable for equal times).
    pub fn new(
        id: impl Into<String>,
        meta: ExperimentMeta,
        label: DistanceClass,
        window: f64,
        mut readings: Vec<SensorReading>,
    ) -> Result<Self> {
        if !(window.is_finite() && window > 0.0) {
            return Err(Error::Domain(format!("window must be positive, got {window}")));
        }
        if readings.is_empty() {
            return Err(Error::Domain("interval has no readings".into()));
        }
        if let Some(r) = readings.iter().find(|r| r.t > window) {
            return Err(Error::Domain(format!(
                "reading at t={} lies outside window {window}",
                r.t
            )));
        }
        readings.sort_by(|a, b| a.t.total_cmp(&b.t));
        Ok(Self {
            id: id.into(),
            meta,
            label,
            window,
            readings,
        })
    }

    pub fn readings_of(&self, kind: SensorKind) -> impl Iterator<Item = &SensorReading> {
        self.readings.iter().filter(move |r| r.kind == kind)
    }
}

/// `rows x cols` matrix, row-major; rows are time steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesSample {
    pub rows: usize,
    pub cols: usize,
    pub matrix: Vec<f64>,
    pub label: DistanceClass,
    pub site: String,
}

impl TimeSeriesSample {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatSample {
    pub vector: Vec<f64>,
    pub label: DistanceClass,
    pub site: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSample {
    pub freqs: Vec<f64>,
    pub label: DistanceClass,
    pub site: String,
}

/// Common view over every sample representation: a flat feature slice plus label.
pub trait Sample {
    fn features(&self) -> &[f64];
    fn label(&self) -> DistanceClass;
    fn site(&self) -> &str;
    /// Logical input shape excluding the batch dimension.
    fn shape(&self) -> Vec<usize>;
}

impl Sample for TimeSeriesSample {
    fn features(&self) -> &[f64] {
        &self.matrix
    }
    fn label(&self) -> DistanceClass {
        self.label
    }
    fn site(&self) -> &str {
        &self.site
    }
    fn shape(&self) -> Vec<usize> {
        vec![self.rows, self.cols]
    }
}

impl Sample for FlatSample {
    fn features(&self) -> &[f64] {
        &self.vector
    }
    fn label(&self) -> DistanceClass {
        self.label
    }
    fn site(&self) -> &str {
        &self.site
    }
    fn shape(&self) -> Vec<usize> {
        vec![self.vector.len()]
    }
}

impl Sample for HistogramSample {
    fn features(&self) -> &[f64] {
        &self.freqs
    }
    fn label(&self) -> DistanceClass {
        self.label
    }
    fn site(&self) -> &str {
        &self.site
    }
    fn shape(&self) -> Vec<usize> {
        vec![self.freqs.len()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Timeseries,
    Flat,
    Histogram,
}

impl FromStr for Representation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "timeseries" => Ok(Self::Timeseries),
            "flat" => Ok(Self::Flat),
            "histogram" => Ok(Self::Histogram),
            _ => Err(Error::Config(format!(
                "unknown representation `{s}` (expected timeseries|flat|histogram)"
            ))),
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Timeseries => "timeseries",
            Self::Flat => "flat",
            Self::Histogram => "histogram",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<S> {
    pub samples: Vec<S>,
    pub vocab: Vocab,
    pub normalizer: Option<Normalizer>,
    pub split: Split,
}

impl<S: Sample> Dataset<S> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<DistanceClass> {
        self.samples.iter().map(|s| s.label()).collect()
    }

    pub fn feature_width(&self) -> Option<usize> {
        self.samples.first().map(|s| s.features().len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "&'static str", try_from = "String")]
pub enum ModelKind {
    FeedForward,
    Gru,
    Conv1D,
    Conv1DDilated,
    Conv1DMaxPool,
    ConvGru,
    ConvGruNoLinear,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        Self::FeedForward,
        Self::Gru,
        Self::Conv1D,
        Self::Conv1DDilated,
        Self::Conv1DMaxPool,
        Self::ConvGru,
        Self::ConvGruNoLinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::FeedForward => "feedforward",
            Self::Gru => "gru",
            Self::Conv1D => "conv1d",
            Self::Conv1DDilated => "conv1d-dilated",
            Self::Conv1DMaxPool => "conv1d-maxpool",
            Self::ConvGru => "convgru",
            Self::ConvGruNoLinear => "convgru-nolinear",
        }
    }

    /// Input representation the model consumes.
    pub fn representation(self) -> Representation {
        match self {
            Self::FeedForward => Representation::Flat,
            _ => Representation::Timeseries,
        }
    }
}

impl From<ModelKind> for &'static str {
    fn from(k: ModelKind) -> Self {
        k.name()
    }
}

impl TryFrom<String> for ModelKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        // No LSTM cell is implemented; the LSTM rows run on the GRU.
        if s == "lstm" {
            return Ok(Self::Gru);
        }
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPreset {
    pub name: String,
    pub model_kind: ModelKind,
    /// Recurrent layers for GRU kinds, conv layers for Conv1D kinds, hidden layers for feed-forward.
    pub num_layers: usize,
    pub epochs: usize,
    pub hidden_size: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl TrainPreset {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_size == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!(
                "preset `{}`: layers, hidden size and batch size must be positive",
                self.name
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "preset `{}`: learning rate must be positive",
                self.name
            )));
        }
        Ok(())
    }
}

fn preset(
    name: &str,
    model_kind: ModelKind,
    num_layers: usize,
    epochs: usize,
    hidden_size: usize,
    learning_rate: f64,
    batch_size: usize,
) -> TrainPreset {
    TrainPreset {
        name: name.to_string(),
        model_kind,
        num_layers,
        epochs,
        hidden_size,
        learning_rate,
        batch_size,
    }
}

/// Every named training preset.
pub fn presets() -> Vec<TrainPreset> {
    use ModelKind::*;
    vec![
        preset("convgru-1", ConvGru, 2, 200, 200, 1e-3, 25),
        preset("convgru-2", ConvGru, 2, 200, 10, 1e-3, 25),
        preset("convgru-3", ConvGru, 1, 200, 5, 1e-3, 25),
        preset("convgru-4", ConvGru, 2, 200, 200, 1e-3, 200),
        preset("convgru-5", ConvGru, 2, 200, 200, 1e-4, 1000),
        preset("convgru-6", ConvGru, 2, 200, 200, 1e-4, 1000),
        preset("convgru-nolinear-1", ConvGruNoLinear, 2, 500, 200, 1e-4, 4000),
        preset("convgru-nolinear-2", ConvGruNoLinear, 2, 200, 200, 1e-4, 500),
        preset("convgru-nolinear-3", ConvGruNoLinear, 2, 500, 200, 1e-4, 4000),
        preset("gru", Gru, 2, 40, 200, 3e-4, 100),
        preset("lstm", Gru, 2, 40, 200, 3e-4, 100),
        preset("conv1d-1", Conv1D, 1, 100, 64, 1e-5, 50),
        preset("conv1d-2", Conv1D, 1, 100, 64, 1e-4, 50),
        preset("conv1d-3", Conv1D, 1, 148, 64, 1e-5, 50),
        preset("conv1d-dilated-1", Conv1DDilated, 3, 100, 64, 1e-5, 50),
        preset("conv1d-dilated-2", Conv1DDilated, 3, 100, 64, 1e-5, 128),
        preset("conv1d-maxpool", Conv1DMaxPool, 3, 100, 64, 1e-5, 128),
        preset("feedforward", FeedForward, 2, 100, 64, 1e-4, 50),
    ]
}

pub fn preset_by_name(name: &str) -> Result<TrainPreset> {
    presets()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| {
            let known: Vec<String> = presets().into_iter().map(|p| p.name).collect();
            Error::Config(format!("unknown preset `{name}` (known: {})", known.join(", ")))
        })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NdcfResult {
    pub p_fn: f64,
    pub p_fp: f64,
    pub w_fn: f64,
    pub w_fp: f64,
    pub ndcf: f64,
    pub counts: Confusion,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_class_examples() {
        assert_eq!(class_from_meters(2.3).unwrap(), DistanceClass::D1_8);
        assert_eq!(class_from_meters(2.4).unwrap(), DistanceClass::D1_8);
        assert_eq!(class_from_meters(10.0).unwrap(), DistanceClass::D4_5);
        assert_eq!(class_from_meters(-3.0).unwrap(), DistanceClass::D1_2);
        assert_eq!(class_from_meters(1.5).unwrap(), DistanceClass::D1_2);
        assert_eq!(class_from_meters(3.75).unwrap(), DistanceClass::D3_0);
        assert!(class_from_meters(f64::NAN).is_err());
        assert!(class_from_meters(f64::INFINITY).is_err());
    }

    #[test]
    fn classes_round_trip_and_increase() {
        for (i, c) in DistanceClass::ALL.into_iter().enumerate() {
            assert_eq!(class_from_meters(c.meters()).unwrap(), c);
            assert_eq!(c.index(), i);
        }
        assert!(DistanceClass::ALL.windows(2).all(|w| w[0].meters() < w[1].meters()));
    }

    #[test]
    fn sensor_widths() {
        let total: usize = SensorKind::ALL.iter().map(|k| k.dim()).sum();
        assert_eq!(total, SENSOR_WIDTH);
        assert_eq!(SensorKind::Compass.offset(), 17);
        assert_eq!(SensorKind::Altitude.offset(), 16);
        assert_eq!("BLE".parse::<SensorKind>().unwrap(), SensorKind::Bluetooth);
        assert!("sonar".parse::<SensorKind>().is_err());
    }

    #[test]
    fn interval_sorts_and_validates() {
        let meta = ExperimentMeta {
            experiment_id: "e".into(),
            site: "s".into(),
            tx_model: "a".into(),
            rx_model: "a".into(),
            tx_power: "high".into(),
            carriage: "hand".into(),
        };
        let r = |t| SensorReading::new(t, SensorKind::Bluetooth, vec![-60.0]).unwrap();
        let iv = Interval::new("i", meta.clone(), DistanceClass::D1_2, 4.0, vec![r(3.0), r(1.0), r(4.0)])
            .unwrap();
        let ts: Vec<f64> = iv.readings.iter().map(|r| r.t).collect();
        assert_eq!(ts, vec![1.0, 3.0, 4.0]);
        assert!(Interval::new("i", meta.clone(), DistanceClass::D1_2, 4.0, vec![]).is_err());
        assert!(Interval::new("i", meta, DistanceClass::D1_2, 4.0, vec![r(4.5)]).is_err());
        assert!(SensorReading::new(0.0, SensorKind::Gyroscope, vec![1.0]).is_err());
    }

    #[test]
    fn preset_table() {
        let p = presets();
        assert_eq!(p.len(), 18);
        assert!(p.iter().all(|p| p.validate().is_ok()));
        let c = preset_by_name("conv1d-1").unwrap();
        assert_eq!(
            (c.model_kind, c.num_layers, c.epochs, c.hidden_size, c.batch_size),
            (ModelKind::Conv1D, 1, 100, 64, 50)
        );
        assert_eq!(c.learning_rate, 1e-5);
        assert_eq!(preset_by_name("lstm").unwrap().model_kind, ModelKind::Gru);
        assert_eq!("lstm".parse::<ModelKind>().unwrap(), ModelKind::Gru);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn nearest_class_is_monotone(a in -10.0f64..20.0, b in -10.0f64..20.0) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(class_from_meters(lo).unwrap() <= class_from_meters(hi).unwrap());
            }

            #[test]
            fn nearest_class_minimizes_gap(d in 0.0f64..6.0) {
                let c = class_from_meters(d).unwrap();
                let gap = (d - c.meters()).abs();
                for other in DistanceClass::ALL {
                    prop_assert!(gap <= (d - other.meters()).abs());
                }
            }
        }
    }
}
