//! The binary weight codec must reject malformed bytes without panicking;
//! accepted weights must re-encode to the identical byte sequence.

#![no_main]

use growthcast_core::convnet::io::{decode_weights, encode_weights};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(weights) = decode_weights(data) else { return };
    assert_eq!(encode_weights(&weights), data);
});
