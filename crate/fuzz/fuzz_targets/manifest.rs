#![no_main]

use libfuzzer_sys::fuzz_target;
use proxsense::ingest::Manifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(manifest) = Manifest::parse(text) {
        let csv = manifest.to_csv().expect("parsed manifest serializes");
        let again = Manifest::parse(&csv).expect("serialized manifest parses");
        assert_eq!(again.records, manifest.records);
    }
});
