#![no_main]

use libfuzzer_sys::fuzz_target;
use proxsense::ingest::parse_line;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    for (i, line) in text.lines().enumerate() {
        if let Ok(Some(parsed)) = parse_line(line, i + 1) {
            assert!(parsed.t.is_finite() && parsed.t >= 0.0);
            assert_eq!(parsed.values.len(), parsed.sensor.dim());
            assert!(parsed.values.iter().all(|v| v.is_finite()));
        }
    }
});
