//! Replays the checked-in fuzz corpus through the same checks the fuzz targets make.

use std::fs;
use std::path::PathBuf;

use proxsense::config::RunConfig;
use proxsense::container::Container;
use proxsense::eval::Fitted;
use proxsense::ingest::{parse_line, parse_logs, Manifest};
use proxsense::pipeline;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn parse_line_seeds() {
    let mut ok = 0;
    for (_, data) in seeds("parse_line") {
        for (i, line) in String::from_utf8(data).unwrap().lines().enumerate() {
            if let Ok(Some(parsed)) = parse_line(line, i + 1) {
                assert!(parsed.t.is_finite() && parsed.t >= 0.0);
                assert_eq!(parsed.values.len(), parsed.sensor.dim());
                ok += 1;
            }
        }
    }
    assert!(ok > 0);
}

#[test]
fn manifest_seeds() {
    let results: Vec<bool> = seeds("manifest")
        .into_iter()
        .map(|(_, data)| match Manifest::parse(std::str::from_utf8(&data).unwrap()) {
            Ok(m) => {
                assert_eq!(Manifest::parse(&m.to_csv().unwrap()).unwrap().records, m.records);
                true
            }
            Err(_) => false,
        })
        .collect();
    assert!(results.contains(&true) && results.contains(&false));
}

#[test]
fn parse_logs_seeds() {
    for (name, data) in seeds("parse_logs") {
        let text = String::from_utf8(data).unwrap();
        let (manifest, log) = text.split_once("\n---\n").expect("seed has a separator");
        let manifest = Manifest::parse(manifest).unwrap();
        let (intervals, report) = parse_logs(log, &manifest, false).unwrap();
        assert_eq!(
            report.records,
            report.parsed + report.dropped_out_of_window + report.errored + report.orphaned,
            "{name}"
        );
        assert!(!intervals.is_empty());
        assert!(parse_logs(log, &manifest, true).is_err(), "seed contains bad records");
    }
}

#[test]
fn config_seeds() {
    for (name, data) in seeds("config") {
        let cfg = RunConfig::parse(std::str::from_utf8(&data).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        cfg.contact_rule().unwrap();
        cfg.feature_options().unwrap();
        cfg.split_rule().unwrap();
        cfg.model_choice().unwrap();
        cfg.bench_models().unwrap();
        cfg.synth_config().unwrap();
    }
}

#[test]
fn container_seeds() {
    let mut decoded = Vec::new();
    for (name, data) in seeds("container") {
        let Ok(c) = Container::decode(&data) else {
            continue;
        };
        let bytes = c.encode();
        assert_eq!(bytes, data, "{name} re-encodes identically");
        let _ = pipeline::from_container(&c);
        let _ = Fitted::from_container(&c);
        decoded.push(name);
    }
    assert!(decoded.iter().any(|n| n == "dataset"));
    assert!(decoded.iter().any(|n| n == "network"));
    assert!(!decoded.iter().any(|n| n == "truncated"));
}
