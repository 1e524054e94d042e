#![no_main]

use libfuzzer_sys::fuzz_target;
use spike_assoc::ScenarioConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ScenarioConfig::from_json(text) {
        let _ = cfg.digest();
    }
});
