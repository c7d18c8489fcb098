#![no_main]

//! Input: manifest CSV, a line holding only `---`, then the log text.

use libfuzzer_sys::fuzz_target;
use proxsense::ingest::{parse_logs, Manifest};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Some((manifest, log)) = text.split_once("\n---\n") else {
        return;
    };
    let Ok(manifest) = Manifest::parse(manifest) else {
        return;
    };
    if let Ok((intervals, report)) = parse_logs(log, &manifest, false) {
        assert_eq!(
            report.records,
            report.parsed + report.dropped_out_of_window + report.errored + report.orphaned
        );
        assert!(intervals.len() + report.empty_intervals.len() <= manifest.len());
        if let Ok((strict, _)) = parse_logs(log, &manifest, true) {
            assert_eq!(strict, intervals);
        }
    }
});
