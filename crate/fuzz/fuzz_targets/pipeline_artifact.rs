//! The pipeline artifact container nests the net weights, the feature
//! scaler, the SVM, and the run provenance. Decoding arbitrary bytes must
//! never panic; accepted artifacts must encode to a stable fixed point.

#![no_main]

use growthcast_core::artifact::{decode_artifact, encode_artifact};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(artifact) = decode_artifact(data) else { return };
    let first = encode_artifact(&artifact).expect("decoded artifact must re-encode");
    let reparsed = decode_artifact(&first).expect("encoded artifact must decode");
    let second = encode_artifact(&reparsed).expect("reparsed artifact must re-encode");
    assert_eq!(second, first);
});
