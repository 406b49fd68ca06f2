#![no_main]
use libfuzzer_sys::fuzz_target;
use qsatlink_core::linkbudget::SatelliteCatalog;

fuzz_target!(|data: &[u8]| {
    let _ = SatelliteCatalog::parse(data);
});
