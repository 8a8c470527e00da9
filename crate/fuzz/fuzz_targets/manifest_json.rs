#![no_main]

use cgg_core::gaitdata::{manifest_from_json, manifest_to_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(manifest) = manifest_from_json(text) {
        let echoed = manifest_to_json(&manifest);
        let again = manifest_from_json(&echoed).expect("reparse");
        assert_eq!(manifest, again);
    }
});
