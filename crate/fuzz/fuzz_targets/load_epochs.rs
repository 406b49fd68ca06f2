#![no_main]
use libfuzzer_sys::fuzz_target;
use qsatlink_core::timing::{expected_arrivals, load_epochs};

fuzz_target!(|data: &[u8]| {
    let Ok(epochs) = load_epochs(data) else { return };
    if let Ok(grid) = expected_arrivals(&epochs, 1000) {
        let _ = grid.nearest(epochs[0]);
    }
});
