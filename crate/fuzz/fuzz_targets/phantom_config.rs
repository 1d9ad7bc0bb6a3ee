//! Phantom configs parsed from arbitrary bytes must never panic; accepted
//! configs re-encode canonically and always pass their own validation.

#![no_main]

use growthcast_core::growthsim::{encode_phantom_config, parse_phantom_config};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(config) = parse_phantom_config(data) else { return };
    config.validate().expect("parse_phantom_config only returns validated configs");
    let first = encode_phantom_config(&config);
    let reparsed = parse_phantom_config(first.as_bytes()).expect("encoded config must parse");
    assert_eq!(reparsed, config);
});
