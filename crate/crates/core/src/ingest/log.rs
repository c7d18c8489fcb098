use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::ingest::Manifest;
use crate::types::{Interval, SensorKind, SensorReading};

#[derive(Debug, Clone, PartialEq)]
pub struct LogLine {
    pub interval_id: String,
    pub t: f64,
    pub sensor: SensorKind,
    pub values: Vec<f64>,
}

/// Bookkeeping for one or more parsed log streams.
///
/// `records == parsed + dropped_out_of_window + errored + orphaned`
/// where orphaned counts records whose interval is not in the manifest.
#[derive(Debug, Default)]
pub struct ParseReport {
    pub records: usize,
    pub parsed: usize,
    pub dropped_out_of_window: usize,
    pub errored: usize,
    pub orphaned: usize,
    pub errors: Vec<Error>,
    /// Manifest intervals that ended up with zero readings and were excluded.
    pub empty_intervals: Vec<String>,
}

impl ParseReport {
    pub fn merge(&mut self, other: ParseReport) {
        self.records += other.records;
        self.parsed += other.parsed;
        self.dropped_out_of_window += other.dropped_out_of_window;
        self.errored += other.errored;
        self.orphaned += other.orphaned;
        self.errors.extend(other.errors);
        self.empty_intervals.extend(other.empty_intervals);
    }

    pub fn is_clean(&self) -> bool {
        self.errors.is_empty() && self.empty_intervals.is_empty()
    }
}

fn parse_float(tok: &str, what: &str, line: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("{what} `{tok}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("{what} `{tok}` is not finite"),
        });
    }
    Ok(v)
}

/// Parses one log line. Returns `Ok(None)` for blank and comment lines.
pub fn parse_line(text: &str, line: usize) -> Result<Option<LogLine>> {
    let trimmed = text.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let mut toks = trimmed.split_whitespace();
    let interval_id = toks.next().unwrap_or_default().to_string();
    let t_tok = toks.next().ok_or_else(|| Error::Parse {
        line,
        msg: "missing time field".into(),
    })?;
    let t = parse_float(t_tok, "time", line)?;
    if t < 0.0 {
        return Err(Error::Parse {
            line,
            msg: format!("negative time {t}"),
        });
    }
    let name = toks.next().ok_or_else(|| Error::Parse {
        line,
        msg: "missing sensor field".into(),
    })?;
    let sensor: SensorKind = name.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("unknown sensor `{name}`"),
    })?;
    let values = toks
        .map(|tok| parse_float(tok, "value", line))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != sensor.dim() {
        return Err(Error::Parse {
            line,
            msg: format!(
                "{sensor} expects {} value(s), got {}",
                sensor.dim(),
                values.len()
            ),
        });
    }
    Ok(Some(LogLine {
        interval_id,
        t,
        sensor,
        values,
    }))
}

/// Parses a log stream against its manifest, producing one interval per
/// manifest record that has at least one in-window reading.
///
/// Readings with `t > window` are dropped and counted; `t == window` is kept.
pub fn parse_logs(
    text: &str,
    manifest: &Manifest,
    strict: bool,
) -> Result<(Vec<Interval>, ParseReport)> {
    let mut report = ParseReport::default();
    let mut grouped: BTreeMap<&str, Vec<SensorReading>> = BTreeMap::new();
    let mut orphans: BTreeMap<String, usize> = BTreeMap::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let parsed = match parse_line(raw, line) {
            Ok(None) => continue,
            Ok(Some(l)) => l,
            Err(e) => {
                report.records += 1;
                report.errored += 1;
                if strict {
                    return Err(e);
                }
                report.errors.push(e);
                continue;
            }
        };
        report.records += 1;
        let Some(record) = manifest.get(&parsed.interval_id) else {
            *orphans.entry(parsed.interval_id).or_default() += 1;
            continue;
        };
        if parsed.t > record.window_s {
            report.dropped_out_of_window += 1;
            continue;
        }
        let reading = SensorReading {
            t: parsed.t,
            kind: parsed.sensor,
            values: parsed.values,
        };
        grouped.entry(record.interval_id.as_str()).or_default().push(reading);
        report.parsed += 1;
    }

    if !orphans.is_empty() {
        report.orphaned = orphans.values().sum();
        let err = Error::OrphanIntervals(orphans.into_keys().collect());
        if strict {
            return Err(err);
        }
        report.errors.push(err);
    }

    let mut intervals = Vec::with_capacity(manifest.records.len());
    for record in &manifest.records {
        let readings = grouped.remove(record.interval_id.as_str()).unwrap_or_default();
        if readings.is_empty() {
            if strict {
                return Err(Error::Manifest(format!(
                    "interval `{}` has no readings",
                    record.interval_id
                )));
            }
            report.empty_intervals.push(record.interval_id.clone());
            continue;
        }
        intervals.push(Interval::new(
            record.interval_id.clone(),
            record.meta(),
            record.label()?,
            record.window_s,
            readings,
        )?);
    }
    Ok((intervals, report))
}

/// Renders an interval's readings in log format (no header, one line each).
pub fn format_interval(interval: &Interval) -> String {
    let mut out = String::new();
    for r in &interval.readings {
        write!(out, "{} {} {}", interval.id, r.t, r.kind).unwrap();
        for v in &r.values {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DistanceClass;

    fn manifest(window: f64) -> Manifest {
        Manifest::parse(&format!(
            "interval_id,experiment_id,site,tx_model,rx_model,tx_power,carriage,distance_m,window_s\n\
             iv1,e1,mitre,pixel,pixel,high,hand,1.2,{window}\n"
        ))
        .unwrap()
    }

    #[test]
    fn single_record_passthrough() {
        let (ivs, rep) = parse_logs("iv1 0.5 bluetooth -60\n", &manifest(4.0), false).unwrap();
        assert_eq!(ivs.len(), 1);
        assert_eq!(ivs[0].readings.len(), 1);
        assert_eq!(ivs[0].label, DistanceClass::D1_2);
        assert_eq!(ivs[0].readings[0].values, vec![-60.0]);
        assert!(rep.is_clean());
    }

    #[test]
    fn unknown_sensor_names_line() {
        let err = parse_logs("iv1 0.5 sonar -60\n", &manifest(4.0), true).unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 1);
                assert!(msg.contains("sonar"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let (_, rep) = parse_logs("iv1 0.5 sonar -60\n", &manifest(4.0), false).unwrap();
        assert_eq!(rep.errors.len(), 1);
        // the only record errored, so the interval is empty and excluded
        assert_eq!(rep.empty_intervals, vec!["iv1".to_string()]);
    }

    #[test]
    fn readings_resorted() {
        let text = "iv1 3.0 bluetooth -61\niv1 1.0 bluetooth -62\niv1 2.0 bluetooth -63\n";
        let (ivs, _) = parse_logs(text, &manifest(4.0), true).unwrap();
        let ts: Vec<f64> = ivs[0].readings.iter().map(|r| r.t).collect();
        assert_eq!(ts, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn window_boundary_and_drops() {
        let text = "# header\n\niv1 4.0 bluetooth -61\niv1 4.01 bluetooth -62\n";
        let (ivs, rep) = parse_logs(text, &manifest(4.0), true).unwrap();
        assert_eq!(ivs[0].readings.len(), 1);
        assert_eq!(rep.dropped_out_of_window, 1);
        assert_eq!(rep.records, 2);
    }

    #[test]
    fn orphans_listed() {
        let text = "iv1 0.1 bluetooth -61\nivX 0.2 bluetooth -62\nivY 0.2 compass 10\n";
        match parse_logs(text, &manifest(4.0), true).unwrap_err() {
            Error::OrphanIntervals(ids) => assert_eq!(ids, vec!["ivX", "ivY"]),
            other => panic!("unexpected {other:?}"),
        }
        let (ivs, rep) = parse_logs(text, &manifest(4.0), false).unwrap();
        assert_eq!(ivs.len(), 1);
        assert_eq!(rep.orphaned, 2);
    }

    #[test]
    fn bad_lines_collected_not_fail_fast() {
        let text = "iv1 x bluetooth -61\niv1 0.1 gyroscope 1 2\niv1 0.2 bluetooth -60\niv1 -1 compass 3\n";
        let (ivs, rep) = parse_logs(text, &manifest(4.0), false).unwrap();
        assert_eq!(ivs[0].readings.len(), 1);
        assert_eq!(rep.errors.len(), 3);
        let lines: Vec<usize> = rep
            .errors
            .iter()
            .map(|e| match e {
                Error::Parse { line, .. } => *line,
                _ => 0,
            })
            .collect();
        assert_eq!(lines, vec![1, 2, 4]);
        assert_eq!(
            rep.records,
            rep.parsed + rep.dropped_out_of_window + rep.errored + rep.orphaned
        );
    }

    #[test]
    fn format_then_parse_is_identity() {
        let text = "iv1 0.25 accelerometer 0.1 -9.81 1e-7\niv1 1.5 bluetooth -71.5\n";
        let (ivs, _) = parse_logs(text, &manifest(4.0), true).unwrap();
        let again = format_interval(&ivs[0]);
        let (ivs2, _) = parse_logs(&again, &manifest(4.0), true).unwrap();
        assert_eq!(ivs, ivs2);
    }
}
