//! Clinical records parsed from arbitrary bytes must never panic, and an
//! accepted record must survive an encode/parse/encode cycle unchanged.

#![no_main]

use growthcast_core::cases::{encode_clinical_json, parse_clinical_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(file) = parse_clinical_json(data) else { return };
    let first = encode_clinical_json(&file);
    let reparsed = parse_clinical_json(first.as_bytes()).expect("encoded record must parse");
    assert_eq!(encode_clinical_json(&reparsed), first);
});
