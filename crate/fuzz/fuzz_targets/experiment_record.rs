#![no_main]
use egp_core::report::{build_reports, ExperimentRecord};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(record) = ExperimentRecord::from_json(text) {
        let _ = build_reports(&[record]);
    }
});
