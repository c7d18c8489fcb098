//! Two-site synthetic interval generator.
//!
//! RSSI follows a log-distance path-loss model with Gaussian shadowing,
//! attenuated by carriage state and offset by transmit power. Motion channels
//! are bounded random walks whose step size depends only on carriage, so they
//! carry context but little direct distance information. Site B uses site A's
//! path-loss parameters perturbed in proportion to `shift`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::container::write_atomic;
use crate::error::{Error, Result};
use crate::ingest::{Manifest, ManifestRecord};
use crate::rng;
use crate::types::{DistanceClass, SensorKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathLoss {
    /// RSSI at 1 m, dBm.
    pub p0: f64,
    pub n_exp: f64,
    /// Shadowing standard deviation, dB.
    pub sigma: f64,
}

impl Default for PathLoss {
    fn default() -> Self {
        Self {
            p0: -45.0,
            n_exp: 2.0,
            sigma: 6.0,
        }
    }
}

impl PathLoss {
    /// Site B parameters for a given shift.
    pub fn shifted(&self, shift: f64) -> Self {
        Self {
            p0: self.p0 + 5.0 * shift,
            n_exp: self.n_exp + 0.4 * shift,
            sigma: self.sigma * (1.0 + shift),
        }
    }

    pub fn mean_rssi(&self, d: f64, atten: f64) -> f64 {
        self.p0 - 10.0 * self.n_exp * d.log10() - atten
    }
}

/// Readings per second for each sensor kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorRates {
    pub bluetooth: f64,
    pub accelerometer: f64,
    pub gyroscope: f64,
    pub magnetometer: f64,
    pub attitude: f64,
    pub gravity: f64,
    pub altitude: f64,
    pub compass: f64,
}

impl Default for SensorRates {
    fn default() -> Self {
        Self {
            bluetooth: 5.0,
            accelerometer: 6.0,
            gyroscope: 6.0,
            magnetometer: 6.0,
            attitude: 6.0,
            gravity: 6.0,
            altitude: 1.0,
            compass: 2.0,
        }
    }
}

impl SensorRates {
    pub fn get(&self, kind: SensorKind) -> f64 {
        match kind {
            SensorKind::Bluetooth => self.bluetooth,
            SensorKind::Accelerometer => self.accelerometer,
            SensorKind::Gyroscope => self.gyroscope,
            SensorKind::Magnetometer => self.magnetometer,
            SensorKind::Attitude => self.attitude,
            SensorKind::Gravity => self.gravity,
            SensorKind::Altitude => self.altitude,
            SensorKind::Compass => self.compass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// Site A first; its path-loss parameters are the reference.
    pub sites: [String; 2],
    pub n_experiments: usize,
    pub intervals_per_experiment: usize,
    pub window_s: f64,
    pub rates: SensorRates,
    pub path_loss: PathLoss,
    /// dB of extra loss per carriage state.
    pub carriage_atten: BTreeMap<String, f64>,
    /// Relative random-walk step size per carriage state.
    pub carriage_motion: BTreeMap<String, f64>,
    /// dB added to `p0` per transmit power setting.
    pub tx_power_offset: BTreeMap<String, f64>,
    pub devices: Vec<String>,
    pub shift: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let table = |kv: &[(&str, f64)]| kv.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        Self {
            seed: 0,
            sites: ["mitre".into(), "nist".into()],
            n_experiments: 20,
            intervals_per_experiment: 50,
            window_s: 4.0,
            rates: SensorRates::default(),
            path_loss: PathLoss::default(),
            carriage_atten: table(&[("hand", 0.0), ("pocket", 4.0), ("purse", 7.0)]),
            carriage_motion: table(&[("hand", 1.0), ("pocket", 0.6), ("purse", 0.3)]),
            tx_power_offset: table(&[("high", 0.0), ("low", -5.0)]),
            devices: vec!["galaxy".into(), "iphone".into(), "pixel".into()],
            shift: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let pl = &self.path_loss;
        if !(pl.sigma >= 0.0 && pl.n_exp > 0.0 && pl.p0.is_finite()) {
            return bad(format!("path loss needs sigma >= 0, n_exp > 0, finite p0; got {pl:?}"));
        }
        if !(self.shift.is_finite() && self.shift >= 0.0) {
            return bad(format!("shift must be >= 0, got {}", self.shift));
        }
        if !(self.window_s.is_finite() && self.window_s > 0.0) {
            return bad(format!("window_s must be positive, got {}", self.window_s));
        }
        if let Some(k) = SensorKind::ALL
            .into_iter()
            .find(|k| !(self.rates.get(*k).is_finite() && self.rates.get(*k) > 0.0))
        {
            return bad(format!("rate for {k} must be positive"));
        }
        if self.n_experiments == 0 || self.intervals_per_experiment == 0 {
            return bad("n_experiments and intervals_per_experiment must be positive".into());
        }
        if self.sites[0] == self.sites[1] || self.sites.iter().any(|s| !is_token(s)) {
            return bad(format!("sites must be two distinct identifiers, got {:?}", self.sites));
        }
        if self.devices.is_empty() || self.devices.iter().any(|d| !is_token(d)) {
            return bad("devices must be a non-empty list of identifiers".into());
        }
        for (name, table) in [
            ("carriage_atten", &self.carriage_atten),
            ("carriage_motion", &self.carriage_motion),
            ("tx_power_offset", &self.tx_power_offset),
        ] {
            if table.is_empty() || table.iter().any(|(k, v)| !is_token(k) || !v.is_finite()) {
                return bad(format!("{name} must map identifiers to finite numbers"));
            }
        }
        if self.carriage_motion.keys().ne(self.carriage_atten.keys()) {
            return bad("carriage_motion and carriage_atten must list the same carriage states".into());
        }
        Ok(())
    }

    pub fn site_params(&self, site: usize) -> PathLoss {
        if site == 0 {
            self.path_loss
        } else {
            self.path_loss.shifted(self.shift)
        }
    }
}

fn is_token(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// One RSSI draw: `p0 - 10 n log10(d) - atten + N(0, sigma^2)`.
pub fn rssi_sample<R: Rng + ?Sized>(d: f64, params: &PathLoss, atten: f64, rng: &mut R) -> Result<f64> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {d}")));
    }
    let noise = if params.sigma > 0.0 {
        Normal::new(0.0, params.sigma)
            .map_err(|e| Error::Domain(e.to_string()))?
            .sample(rng)
    } else {
        0.0
    };
    Ok(params.mean_rssi(d, atten) + noise)
}

/// Random-walk baseline, bound and base step for a motion channel group.
fn walk_profile(kind: SensorKind) -> (&'static [f64], f64, f64) {
    match kind {
        SensorKind::Accelerometer => (&[0.0, 0.0, 0.0], 3.0, 0.3),
        SensorKind::Gyroscope => (&[0.0, 0.0, 0.0], 2.0, 0.2),
        SensorKind::Magnetometer => (&[20.0, -5.0, 40.0], 10.0, 1.0),
        SensorKind::Attitude => (&[0.0, 0.5, 0.0], 1.5, 0.05),
        SensorKind::Gravity => (&[0.0, 0.0, -9.81], 2.0, 0.1),
        SensorKind::Altitude => (&[101.3], 0.2, 0.01),
        SensorKind::Compass => (&[180.0], 30.0, 3.0),
        SensorKind::Bluetooth => (&[0.0], 0.0, 0.0),
    }
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (v * s).round() / s
}

/// Generated files for one site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteData {
    pub site: String,
    pub log: String,
    pub manifest: Manifest,
}

struct Experiment {
    records: Vec<ManifestRecord>,
    log: String,
}

fn generate_experiment(cfg: &SynthConfig, site_idx: usize, exp_idx: usize) -> Result<Experiment> {
    let site = &cfg.sites[site_idx];
    let mut rng = rng::stream(cfg.seed, &[site_idx as u64, exp_idx as u64]);
    let params = cfg.site_params(site_idx);
    let pick = |rng: &mut rand_chacha::ChaCha8Rng, keys: Vec<&String>| -> String {
        keys.choose(rng).map(|s| s.to_string()).unwrap_or_default()
    };
    let tx_model = pick(&mut rng, cfg.devices.iter().collect());
    let rx_model = pick(&mut rng, cfg.devices.iter().collect());
    let tx_power = pick(&mut rng, cfg.tx_power_offset.keys().collect());
    let carriage = pick(&mut rng, cfg.carriage_atten.keys().collect());
    let atten = cfg.carriage_atten[&carriage] - cfg.tx_power_offset[&tx_power];
    let motion = cfg.carriage_motion[&carriage];
    let experiment_id = format!("{site}-e{exp_idx:03}");

    let mut records = Vec::with_capacity(cfg.intervals_per_experiment);
    let mut log = String::new();
    for j in 0..cfg.intervals_per_experiment {
        let label = DistanceClass::ALL[(exp_idx + j) % 4];
        let interval_id = format!("{experiment_id}-i{j:03}");
        let mut lines: Vec<(f64, SensorKind, Vec<f64>)> = Vec::new();
        for kind in SensorKind::ALL {
            let rate = cfg.rates.get(kind);
            let n = ((rate * cfg.window_s).round() as usize).max(1);
            let (base, bound, step) = walk_profile(kind);
            let mut state: Vec<f64> = base
                .iter()
                .map(|b| b + rng.gen_range(-0.5..0.5) * bound)
                .collect();
            for k in 0..n {
                let t = ((k as f64 + rng.gen::<f64>()) / rate).min(cfg.window_s);
                let t = round_to(t, 4).min(cfg.window_s);
                let values = if kind == SensorKind::Bluetooth {
                    vec![rssi_sample(label.meters(), &params, atten, &mut rng)?.round()]
                } else {
                    let normal = Normal::new(0.0, step * motion).map_err(|e| Error::Domain(e.to_string()))?;
                    for (s, b) in state.iter_mut().zip(base) {
                        *s = (*s + normal.sample(&mut rng)).clamp(b - bound, b + bound);
                    }
                    state.iter().map(|v| round_to(*v, 4)).collect()
                };
                lines.push((t, kind, values));
            }
        }
        lines.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (t, kind, values) in lines {
            write!(log, "{interval_id} {t} {kind}").unwrap();
            for v in values {
                write!(log, " {v}").unwrap();
            }
            log.push('\n');
        }
        records.push(ManifestRecord {
            interval_id,
            experiment_id: experiment_id.clone(),
            site: site.clone(),
            tx_model: tx_model.clone(),
            rx_model: rx_model.clone(),
            tx_power: tx_power.clone(),
            carriage: carriage.clone(),
            distance_m: label.meters(),
            window_s: cfg.window_s,
        });
    }
    Ok(Experiment { records, log })
}

/// Generates both sites. Output depends only on the configuration.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SiteData>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(2);
    for (site_idx, site) in cfg.sites.iter().enumerate() {
        let mut log = format!("# synthetic site {site}: interval_id t sensor values...\n");
        let mut records = Vec::new();
        for e in 0..cfg.n_experiments {
            let exp = generate_experiment(cfg, site_idx, e)?;
            log.push_str(&exp.log);
            records.extend(exp.records);
        }
        out.push(SiteData {
            site: site.clone(),
            log,
            manifest: Manifest::new(records)?,
        });
    }
    Ok(out)
}

/// Writes `<site>.log` and `<site>.manifest.csv` for every site into `dir`.
pub fn write_sites(sites: &[SiteData], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in sites {
        write_atomic(&dir.join(format!("{}.log", s.site)), s.log.as_bytes())?;
        write_atomic(
            &dir.join(format!("{}{}", s.site, crate::ingest::MANIFEST_SUFFIX)),
            s.manifest.to_csv()?.as_bytes(),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_logs;

    fn small() -> SynthConfig {
        SynthConfig {
            seed: 7,
            n_experiments: 5,
            intervals_per_experiment: 6,
            ..Default::default()
        }
    }

    #[test]
    fn path_loss_examples() {
        let p = PathLoss { p0: -40.0, n_exp: 2.0, sigma: 0.0 };
        let mut rng = rng::stream(0, &[]);
        assert_eq!(rssi_sample(1.0, &p, 0.0, &mut rng).unwrap(), -40.0);
        assert_eq!(rssi_sample(10.0, &p, 0.0, &mut rng).unwrap(), -60.0);
        assert!(rssi_sample(0.0, &p, 0.0, &mut rng).is_err());
        assert!(rssi_sample(-1.0, &p, 0.0, &mut rng).is_err());
    }

    #[test]
    fn shadowing_mean_monte_carlo() {
        let p = PathLoss { p0: -40.0, n_exp: 2.0, sigma: 4.0 };
        let mut rng = rng::stream(1, &[]);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| rssi_sample(3.0, &p, 2.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - p.mean_rssi(3.0, 2.0)).abs() < 0.1, "{mean}");
    }

    #[test]
    fn mean_rssi_strictly_decreases_with_distance() {
        let cfg = SynthConfig { shift: 1.0, ..Default::default() };
        let n = 10_000;
        for site in 0..2 {
            let params = cfg.site_params(site);
            for (carriage, atten) in &cfg.carriage_atten {
                let mut rng = rng::stream(3, &[site as u64, rng::label_hash(carriage)]);
                let means: Vec<f64> = DistanceClass::ALL
                    .iter()
                    .map(|c| {
                        (0..n)
                            .map(|_| rssi_sample(c.meters(), &params, *atten, &mut rng).unwrap())
                            .sum::<f64>()
                            / n as f64
                    })
                    .collect();
                let margin = 3.0 * params.sigma / (n as f64).sqrt();
                for w in means.windows(2) {
                    assert!(w[0] - w[1] > margin, "site {site} {carriage}: {means:?}");
                }
            }
        }
    }

    #[test]
    fn zero_shift_means_identical_sites() {
        let cfg = small();
        assert_eq!(cfg.site_params(0), cfg.site_params(1));
        let shifted = SynthConfig { shift: 1.0, ..small() };
        let b = shifted.site_params(1);
        assert_eq!((b.p0, b.n_exp, b.sigma), (-40.0, 2.4, 12.0));
    }

    #[test]
    fn deterministic_and_parseable() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        for site in &a {
            let (ivs, rep) = parse_logs(&site.log, &site.manifest, true).unwrap();
            assert!(rep.is_clean());
            assert_eq!(ivs.len(), 30);
            assert_eq!(rep.dropped_out_of_window, 0);
            assert!(ivs.iter().all(|iv| iv.meta.site == site.site));
        }
    }

    #[test]
    fn labels_balanced_within_one_experiment_block() {
        let cfg = SynthConfig {
            n_experiments: 7,
            intervals_per_experiment: 5,
            ..small()
        };
        for site in generate(&cfg).unwrap() {
            let mut counts = [0usize; 4];
            for r in &site.manifest.records {
                counts[r.label().unwrap().index()] += 1;
            }
            let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
            assert!(spread <= cfg.intervals_per_experiment, "{counts:?}");
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = small();
        c.path_loss.sigma = -1.0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.rates.gyroscope = 0.0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.sites = ["a".into(), "a".into()];
        assert!(c.validate().is_err());
    }
}
