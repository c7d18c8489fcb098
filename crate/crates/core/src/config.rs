//! Run configuration: a TOML file merged with command-line overrides.
//!
//! Every key is optional in the file; a value given on the command line wins
//! over the file, and the file wins over built-in defaults. Which keys must end
//! up set depends on the subcommand, see [`RunConfig::require`].
//!
//! ```toml
//! seed = 7
//! data_dir = "data/raw"
//! out_dir = "out"
//! preset = "conv1d-2"            # or `model = "rf-regressor"`, or an inline [train_preset]
//! representation = "timeseries"  # timeseries | flat | histogram
//! train_site = ["mitre"]
//! eval_site = ["nist"]           # omit and set train_fraction for a within-site split
//! strict = false
//!
//! [contact]
//! threshold = 1.8
//!
//! [features]
//! sensors = ["bluetooth", "accelerometer"]
//! include_metadata = true
//!
//! [[ablation]]
//! sensors = ["bluetooth"]
//! include_metadata = false
//!
//! [synth]
//! n_experiments = 20
//! shift = 1.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{ForestMode, ForestParams};
use crate::error::{Error, Result};
use crate::eval::{AblationSpec, ContactRule, ModelChoice};
use crate::features::{HistogramSpec, DEFAULT_MIXUP_ALPHA};
use crate::ingest::SplitRule;
use crate::nn::Objective;
use crate::pipeline::FeatureOptions;
use crate::synth::SynthConfig;
use crate::types::{preset_by_name, presets, ModelKind, Representation, SensorKind, TrainPreset};

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "PROXSENSE_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactSection {
    pub threshold: Option<f64>,
    pub w_fn: Option<f64>,
    pub w_fp: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub sensors: Option<Vec<SensorKind>>,
    pub include_metadata: Option<bool>,
    pub histogram: Option<HistogramSpec>,
}

/// One train/eval pairing of the benchmark grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSet {
    pub train: Vec<String>,
    pub eval: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Entries are `<model-or-preset>[@<representation>]`.
    pub models: Vec<String>,
    pub sets: Vec<BenchSet>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            models: [
                "naive-bayes",
                "rf-classifier",
                "rf-regressor",
                "rf-regressor@histogram",
                "feedforward",
                "conv1d-2",
            ]
            .map(String::from)
            .to_vec(),
            sets: vec![
                BenchSet {
                    train: vec!["mitre".into()],
                    eval: vec!["nist".into()],
                },
                BenchSet {
                    train: vec!["nist".into()],
                    eval: vec!["mitre".into()],
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// PCA components kept in the projection table (the scatter uses the first two).
    pub pca_components: usize,
    /// Nearest neighbors per eval sample in the optimal training subset.
    pub subset_neighbors: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            pca_components: 2,
            subset_neighbors: 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Model kind (`conv1d`, `gru`, ...) or baseline (`naive-bayes`, `rf-classifier`, `rf-regressor`).
    pub model: Option<String>,
    pub preset: Option<String>,
    pub train_preset: Option<TrainPreset>,
    pub representation: Option<Representation>,
    pub objective: Option<Objective>,
    /// Mix-up coefficient for flat network inputs; 0 disables.
    pub mixup_alpha: Option<f64>,
    /// Replaces the preset's epoch count.
    pub epochs: Option<usize>,
    pub train_site: Option<Vec<String>>,
    pub eval_site: Option<Vec<String>>,
    /// Within-site split: fraction of experiments used for training.
    pub train_fraction: Option<f64>,
    pub strict: Option<bool>,
    pub contact: ContactSection,
    pub features: FeatureSection,
    pub forest: ForestParams,
    pub ablation: Vec<AblationSpec>,
    pub synth: SynthConfig,
    pub bench: BenchSection,
    pub analysis: AnalysisSection,
}

/// Command-line values; `None`/`false` leaves the file value in place.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub model: Option<String>,
    pub preset: Option<String>,
    pub train_site: Option<Vec<String>>,
    pub eval_site: Option<Vec<String>>,
    pub sensors: Option<Vec<SensorKind>>,
    pub no_metadata: bool,
    pub representation: Option<Representation>,
    pub contact_threshold: Option<f64>,
    pub strict: bool,
    pub epochs: Option<usize>,
}

/// Keys a subcommand may demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Key {
    Seed,
    DataDir,
    OutDir,
    Model,
}

impl Key {
    fn name(self) -> &'static str {
        match self {
            Key::Seed => "seed",
            Key::DataDir => "data_dir",
            Key::OutDir => "out_dir",
            Key::Model => "model/preset",
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: Overrides) {
        macro_rules! set {
            ($field:ident) => {
                if o.$field.is_some() {
                    self.$field = o.$field;
                }
            };
        }
        set!(seed);
        set!(data_dir);
        set!(out_dir);
        set!(model);
        set!(preset);
        set!(train_site);
        set!(eval_site);
        set!(representation);
        set!(epochs);
        if o.sensors.is_some() {
            self.features.sensors = o.sensors;
        }
        if o.no_metadata {
            self.features.include_metadata = Some(false);
        }
        if o.contact_threshold.is_some() {
            self.contact.threshold = o.contact_threshold;
        }
        if o.strict {
            self.strict = Some(true);
        }
    }

    /// Usage error naming every missing key.
    pub fn require(&self, keys: &[Key]) -> Result<()> {
        let missing: Vec<&str> = keys
            .iter()
            .filter(|k| match k {
                Key::Seed => self.seed.is_none(),
                Key::DataDir => self.data_dir.is_none(),
                Key::OutDir => self.out_dir.is_none(),
                Key::Model => self.model.is_none() && self.preset.is_none() && self.train_preset.is_none(),
            })
            .map(|k| k.name())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("missing config keys: {}", missing.join(", "))))
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.require(&[Key::Seed])?;
        Ok(self.seed.unwrap_or_default())
    }

    pub fn data_dir(&self) -> Result<&Path> {
        self.require(&[Key::DataDir])?;
        Ok(self.data_dir.as_deref().unwrap_or(Path::new(".")))
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.require(&[Key::OutDir])?;
        Ok(self.out_dir.as_deref().unwrap_or(Path::new(".")))
    }

    pub fn strict(&self) -> bool {
        self.strict.unwrap_or(false)
    }

    pub fn contact_rule(&self) -> Result<ContactRule> {
        let d = ContactRule::default();
        let rule = ContactRule {
            threshold: self.contact.threshold.unwrap_or(d.threshold),
            w_fn: self.contact.w_fn.unwrap_or(d.w_fn),
            w_fp: self.contact.w_fp.unwrap_or(d.w_fp),
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn feature_options(&self) -> Result<FeatureOptions> {
        let d = FeatureOptions::default();
        let opts = FeatureOptions {
            sensors: self.features.sensors.clone().unwrap_or(d.sensors),
            include_metadata: self.features.include_metadata.unwrap_or(d.include_metadata),
            histogram: self.features.histogram.unwrap_or(d.histogram),
            steps: d.steps,
        };
        opts.validate()?;
        Ok(opts)
    }

    /// Site split, or a seeded experiment-level split when only `train_fraction` is given.
    pub fn split_rule(&self) -> Result<SplitRule> {
        let sites = &self.synth.sites;
        match (&self.eval_site, self.train_fraction) {
            (Some(_), Some(_)) => Err(Error::Config(
                "set either eval_site or train_fraction, not both".into(),
            )),
            (None, Some(train_fraction)) => Ok(SplitRule::Fraction {
                train_fraction,
                seed: self.seed()?,
            }),
            (eval, None) => Ok(SplitRule::Site {
                train: self.train_site.clone().unwrap_or_else(|| vec![sites[0].clone()]),
                eval: eval.clone().unwrap_or_else(|| vec![sites[1].clone()]),
            }),
        }
    }

    fn apply_epochs(&self, mut p: TrainPreset) -> TrainPreset {
        if let Some(e) = self.epochs {
            p.epochs = e;
        }
        p
    }

    /// Resolves `model`, `preset` and `train_preset` into one model.
    pub fn model_choice(&self) -> Result<ModelChoice> {
        self.require(&[Key::Model])?;
        let preset = match (&self.train_preset, &self.preset) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("set either preset or train_preset, not both".into()))
            }
            (Some(inline), None) => Some(inline.clone()),
            (None, Some(name)) => Some(preset_by_name(name)?),
            (None, None) => None,
        };
        let choice = match (preset, self.model.as_deref()) {
            (Some(p), model) => {
                if let Some(m) = model {
                    let kind: ModelKind = m.parse()?;
                    if kind != p.model_kind {
                        return Err(Error::Config(format!(
                            "model `{m}` does not match preset `{}` ({})",
                            p.name, p.model_kind
                        )));
                    }
                }
                self.network_choice(p)?
            }
            (None, Some(m)) => self.named_choice(m)?,
            (None, None) => unreachable!("require checked"),
        };
        if let (ModelChoice::Network { preset, .. }, Some(r)) = (&choice, self.representation) {
            if preset.model_kind.representation() != r {
                return Err(Error::Config(format!(
                    "model {} takes {} input, not {r}",
                    preset.model_kind,
                    preset.model_kind.representation()
                )));
            }
        }
        Ok(choice)
    }

    fn network_choice(&self, preset: TrainPreset) -> Result<ModelChoice> {
        let preset = self.apply_epochs(preset);
        preset.validate()?;
        let flat = preset.model_kind.representation() == Representation::Flat;
        let mixup_alpha = match self.mixup_alpha {
            Some(a) if a > 0.0 => Some(a),
            Some(_) => None,
            None if flat => Some(DEFAULT_MIXUP_ALPHA),
            None => None,
        };
        Ok(ModelChoice::Network {
            preset,
            objective: self.objective.unwrap_or(Objective::Classify),
            mixup_alpha: mixup_alpha.filter(|_| flat),
        })
    }

    /// Baseline name, model kind (first preset of that kind) or preset name.
    pub fn named_choice(&self, name: &str) -> Result<ModelChoice> {
        let forest = |mode| ModelChoice::Forest(ForestParams { mode, ..self.forest.clone() });
        match name {
            "naive-bayes" | "gnb" => Ok(ModelChoice::NaiveBayes),
            "rf-classifier" => Ok(forest(ForestMode::Classify)),
            "rf-regressor" => Ok(forest(ForestMode::Regress)),
            _ => {
                if let Ok(p) = preset_by_name(name) {
                    return self.network_choice(p);
                }
                let kind: ModelKind = name.parse().map_err(|_| {
                    Error::Config(format!(
                        "unknown model `{name}` (expected a model kind, preset name, naive-bayes, rf-classifier or rf-regressor)"
                    ))
                })?;
                let p = presets()
                    .into_iter()
                    .find(|p| p.model_kind == kind)
                    .expect("every kind has a preset");
                self.network_choice(p)
            }
        }
    }

    /// Representation for `choice`: the configured one, else the model's natural input.
    pub fn representation_for(&self, choice: &ModelChoice) -> Representation {
        self.representation.unwrap_or_else(|| choice.default_representation())
    }

    /// Benchmark grid entries as (choice, representation).
    pub fn bench_models(&self) -> Result<Vec<(ModelChoice, Representation)>> {
        if self.bench.models.is_empty() || self.bench.sets.is_empty() {
            return Err(Error::Config("bench needs at least one model and one set".into()));
        }
        self.bench
            .models
            .iter()
            .map(|entry| {
                let (name, repr) = match entry.split_once('@') {
                    Some((n, r)) => (n, Some(r.parse::<Representation>()?)),
                    None => (entry.as_str(), None),
                };
                let choice = self.named_choice(name)?;
                let repr = repr.unwrap_or_else(|| choice.default_representation());
                if let ModelChoice::Network { preset, .. } = &choice {
                    if preset.model_kind.representation() != repr {
                        return Err(Error::Config(format!("bench entry `{entry}`: {} takes {} input", preset.model_kind, preset.model_kind.representation())));
                    }
                }
                Ok((choice, repr))
            })
            .collect()
    }

    pub fn ablation_specs(&self) -> Vec<AblationSpec> {
        if self.ablation.is_empty() {
            let mut specs = vec![AblationSpec::all()];
            specs.push(AblationSpec {
                sensors: SensorKind::ALL.to_vec(),
                include_metadata: false,
            });
            for group in [
                vec![SensorKind::Bluetooth],
                vec![
                    SensorKind::Bluetooth,
                    SensorKind::Accelerometer,
                    SensorKind::Gyroscope,
                    SensorKind::Magnetometer,
                ],
            ] {
                specs.push(AblationSpec {
                    sensors: group,
                    include_metadata: true,
                });
            }
            specs
        } else {
            self.ablation.clone()
        }
    }

    /// Synthetic-data settings with the run seed applied.
    pub fn synth_config(&self) -> Result<SynthConfig> {
        let cfg = SynthConfig {
            seed: self.seed()?,
            ..self.synth.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
