//! Feature CSV parsing must never panic on arbitrary text; accepted tables
//! re-encode to a stable fixed point (shortest round-trip float printing).

#![no_main]

use growthcast_core::features::{encode_feature_csv, parse_feature_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(rows) = parse_feature_csv(text) else { return };
    let first = encode_feature_csv(&rows);
    let reparsed = parse_feature_csv(&first).expect("encoded table must parse");
    assert_eq!(encode_feature_csv(&reparsed), first);
});
