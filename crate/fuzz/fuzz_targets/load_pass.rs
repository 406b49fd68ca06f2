#![no_main]
use libfuzzer_sys::fuzz_target;
use qsatlink_core::orbitpass::{load_pass, save_pass};

fuzz_target!(|data: &[u8]| {
    let Ok(pass) = load_pass(data) else { return };
    let mut once = Vec::new();
    save_pass(&pass, &mut once).unwrap();
    // Saved passes are canonical: loading and saving again is a fixed point.
    let again = load_pass(once.as_slice()).unwrap();
    let mut twice = Vec::new();
    save_pass(&again, &mut twice).unwrap();
    assert_eq!(once, twice);
    let _ = pass.at(pass.start() + 0.5 * pass.duration());
});
