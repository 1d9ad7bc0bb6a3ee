//! Payload bytes are decoded against a small header derived from the input
//! prefix. Accepted payloads must re-encode to the identical bytes: the
//! codec is a bijection on finite little-endian f32 sequences.

#![no_main]

use growthcast_core::rawvol::{
    decode_volume_payload, encode_volume_header, encode_volume_payload, parse_volume_header,
};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&sel, payload)) = data.split_first() else { return };
    let dims = (
        usize::from(sel & 0x03) + 1,
        usize::from((sel >> 2) & 0x03) + 1,
        usize::from((sel >> 4) & 0x03) + 1,
    );
    let header = parse_volume_header(&encode_volume_header(dims, (1.0, 0.5, 2.0)))
        .expect("generated header must parse");
    let Ok(volume) = decode_volume_payload(&header, payload) else { return };
    assert_eq!(encode_volume_payload(&volume), payload);
});
