#![no_main]

use cace_cli::{parse_config, AnalysisConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(file) = parse_config(text) {
        let mut cfg = AnalysisConfig::default();
        if cfg.apply(&file).is_ok() {
            let _ = cfg.validate();
        }
    }
});
