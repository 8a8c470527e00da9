#![no_main]

use cgg_core::preprocess::parse_sample_line;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(sample) = parse_sample_line(text) {
        sample.validate().expect("accepted sample must validate");
        let echoed = serde_json::to_string(&sample).expect("serialize");
        let again = parse_sample_line(&echoed).expect("reparse");
        assert_eq!(sample, again);
        let _ = sample.id();
    }
});
