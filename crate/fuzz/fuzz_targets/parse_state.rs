#![no_main]
use libfuzzer_sys::fuzz_target;
use qsatlink_core::config::{parse_state, parse_state_sequence};

fuzz_target!(|data: &str| {
    if let Ok(psi) = parse_state(data) {
        assert!((psi.norm_sqr() - 1.0).abs() <= 1e-9);
    }
    let _ = parse_state_sequence(data);
});
