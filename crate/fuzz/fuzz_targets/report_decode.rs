#![no_main]

use covlab_core::scenario::ScenarioReport;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(report) = ScenarioReport::from_json(text) {
            let again = ScenarioReport::from_json(&report.to_json()).expect("re-decode of a valid report");
            assert_eq!(again.payload_json(), report.payload_json());
        }
    }
});
