//! Sensor-log and manifest ingestion.
//!
//! A dataset directory holds pairs of files sharing a stem:
//!
//! * `<stem>.log` – one reading per line, whitespace separated:
//!   `interval_id t sensor v1 [v2 v3]`. `t` is seconds from the interval start,
//!   `sensor` is one of `bluetooth accelerometer gyroscope magnetometer attitude
//!   gravity altitude compass`, followed by exactly as many values as the sensor
//!   has channels. Blank lines and lines starting with `#` are ignored.
//! * `<stem>.manifest.csv` – comma separated with a header row:
//!   `interval_id,experiment_id,site,tx_model,rx_model,tx_power,carriage,distance_m,window_s`.

mod log;
mod manifest;
mod split;

use std::fs;
use std::path::{Path, PathBuf};

pub use log::{format_interval, parse_line, parse_logs, LogLine, ParseReport};
pub use manifest::{Manifest, ManifestRecord};
pub use split::{assemble, SplitIntervals, SplitRule};

use crate::error::{Error, Result};
use crate::types::Interval;

pub const LOG_EXT: &str = "log";
pub const MANIFEST_SUFFIX: &str = ".manifest.csv";

/// Log/manifest pairs found in `dir`, sorted by stem.
pub fn discover(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut pairs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(stem) = name.strip_suffix(MANIFEST_SUFFIX) {
            let log = dir.join(format!("{stem}.{LOG_EXT}"));
            if !log.exists() {
                return Err(Error::Manifest(format!(
                    "{} has no matching log file {}",
                    path.display(),
                    log.display()
                )));
            }
            pairs.push((log, path));
        }
    }
    pairs.sort();
    if pairs.is_empty() {
        return Err(Error::Config(format!(
            "no `*{MANIFEST_SUFFIX}` files in {}",
            dir.display()
        )));
    }
    Ok(pairs)
}

/// Loads every log/manifest pair in `dir`. In strict mode the first bad record
/// aborts; otherwise bad records are skipped and collected in the report.
pub fn load_dir(dir: &Path, strict: bool) -> Result<(Vec<Interval>, ParseReport)> {
    let mut intervals = Vec::new();
    let mut report = ParseReport::default();
    for (log_path, manifest_path) in discover(dir)? {
        let manifest_text =
            fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest = Manifest::parse(&manifest_text)?;
        let log_text = fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?;
        let (mut ivs, rep) = parse_logs(&log_text, &manifest, strict)?;
        intervals.append(&mut ivs);
        report.merge(rep);
    }
    intervals.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = intervals.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::Manifest(format!(
            "interval id `{}` appears in more than one manifest",
            w[0].id
        )));
    }
    Ok((intervals, report))
}
