//! Header text must never panic the parser, and an accepted header must
//! re-encode to a form the parser maps to the same geometry.

#![no_main]

use growthcast_core::rawvol::{encode_volume_header, parse_volume_header};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(header) = parse_volume_header(text) else { return };
    let canonical = encode_volume_header(header.dims, header.spacing);
    let again = parse_volume_header(&canonical).expect("canonical header must parse");
    assert_eq!(again.dims, header.dims);
    assert_eq!(again.spacing, header.spacing);
});
