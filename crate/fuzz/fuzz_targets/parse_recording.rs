#![no_main]

use cgg_core::gaitdata::{parse_recording, serialize_recording, ClassLabel, Cohort, SubjectMeta};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let meta = SubjectMeta {
        subject_id: "FzCo01".to_string(),
        cohort: Cohort::Ga,
        label: ClassLabel::Co,
        severity: None,
    };
    if let Ok(rec) = parse_recording(text, "fuzz", meta.clone(), 100.0) {
        rec.validate().expect("accepted recording must validate");
        // whatever parses must survive an exact round trip
        let echoed = serialize_recording(&rec);
        let again = parse_recording(&echoed, "fuzz", meta, 100.0).expect("reparse");
        assert_eq!(rec, again);
    }
});
