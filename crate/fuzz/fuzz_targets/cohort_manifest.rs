//! Cohort manifests parsed from arbitrary bytes must never panic, and an
//! accepted manifest must survive an encode/parse/encode cycle unchanged.

#![no_main]

use growthcast_core::cases::{encode_cohort_manifest, parse_cohort_manifest};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(manifest) = parse_cohort_manifest(data) else { return };
    let first = encode_cohort_manifest(&manifest);
    let reparsed = parse_cohort_manifest(first.as_bytes()).expect("encoded manifest must parse");
    assert_eq!(encode_cohort_manifest(&reparsed), first);
});
