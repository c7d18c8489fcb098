#![no_main]

use libfuzzer_sys::fuzz_target;
use proxsense::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::parse(text) {
        let _ = cfg.contact_rule();
        let _ = cfg.feature_options();
        let _ = cfg.split_rule();
        let _ = cfg.model_choice();
        let _ = cfg.bench_models();
        let _ = cfg.synth_config();
    }
});
