#![no_main]

use covlab_core::scenario::ScenarioConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ScenarioConfig::from_toml(text) {
            // Accepted configs must survive a round trip unchanged.
            let again = ScenarioConfig::from_toml(&cfg.to_toml()).expect("re-parse of a valid config");
            assert_eq!(again, cfg);
        }
    }
});
