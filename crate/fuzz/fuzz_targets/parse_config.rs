#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(cfg) = qsatlink_core::config::parse_config(data) {
        // Resolution may fail (missing files, bad values) but must not panic.
        let _ = cfg.resolve(std::path::Path::new("/nonexistent"));
    }
});
