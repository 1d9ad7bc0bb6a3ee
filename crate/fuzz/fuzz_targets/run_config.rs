//! Run and experiment configs share the JSON surface the command line
//! accepts; neither parser may panic, and accepted documents re-encode
//! canonically.

#![no_main]

use growthcast_core::eval::fold::{
    encode_experiment_config, encode_run_config, parse_experiment_config, parse_run_config,
};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = parse_run_config(data) {
        cfg.validate().expect("parse_run_config only returns validated configs");
        let first = encode_run_config(&cfg);
        let reparsed = parse_run_config(first.as_bytes()).expect("encoded config must parse");
        assert_eq!(reparsed, cfg);
    }
    if let Ok(cfg) = parse_experiment_config(data) {
        let first = encode_experiment_config(&cfg);
        let reparsed =
            parse_experiment_config(first.as_bytes()).expect("encoded config must parse");
        assert_eq!(reparsed, cfg);
    }
});
