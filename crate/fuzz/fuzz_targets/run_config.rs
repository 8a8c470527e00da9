#![no_main]

use cgg_cli::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = RunConfig::from_json(text) {
        let echoed = serde_json::to_string(&config).expect("serialize");
        let again = RunConfig::from_json(&echoed).expect("reparse");
        assert_eq!(config, again);
    }
});
