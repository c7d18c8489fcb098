//! Proximity sensing from BLE RSSI and phone motion sensors.
//!
//! The crate covers the whole offline pipeline:
//!
//! 1. [`ingest`]: parse sensor logs + interval manifests into [`types::Interval`]s and
//!    split them into train/eval sets.
//! 2. [`features`]: zero-order-hold resampling onto a 150-step grid, normalization,
//!    metadata one-hot encoding, flat and histogram representations, mix-up.
//! 3. [`nn`] and [`baselines`]: models trained from scratch (feed-forward, Conv1D
//!    variants, GRU, ConvGRU; Gaussian naive Bayes and random forests).
//! 4. [`eval`]: normalized decision cost (nDCF) scoring, experiment and ablation harnesses.
//! 5. [`analysis`]: PCA projections, cross-dataset nearest-neighbour gap and
//!    nearest-neighbour training subsets.
//!
//! [`synth`] generates two-site synthetic data in the ingest formats, and
//! [`container`] is the on-disk format for datasets and model checkpoints.

pub mod analysis;
pub mod baselines;
pub mod config;
pub mod container;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{DistanceClass, Interval, SensorKind};
