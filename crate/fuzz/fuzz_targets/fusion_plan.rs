#![no_main]
use egp_core::reduce::FusionPlan;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(plan) = FusionPlan::from_json(text) {
        let _ = plan.edits_hash();
        assert_eq!(FusionPlan::from_json(&plan.to_json()).unwrap().edits, plan.edits);
    }
});
