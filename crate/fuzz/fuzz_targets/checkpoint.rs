#![no_main]
use egp_core::nn::Network;
use libfuzzer_sys::fuzz_target;

// A checkpoint that loads must survive a save/load cycle unchanged.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(net) = Network::from_checkpoint_json(text) {
        let again = Network::from_checkpoint_json(&net.to_checkpoint_json()).unwrap();
        assert_eq!(again.to_checkpoint_json(), net.to_checkpoint_json());
    }
});
