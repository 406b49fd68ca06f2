#![no_main]
use libfuzzer_sys::fuzz_target;
use qsatlink_core::timing::{TimeTagStream, TAGGER_RESOLUTION_PS};

fuzz_target!(|data: &[u8]| {
    let Ok(stream) = TimeTagStream::load(data, TAGGER_RESOLUTION_PS) else { return };
    let mut out = Vec::new();
    stream.save(&mut out).unwrap();
    let back = TimeTagStream::load(out.as_slice(), TAGGER_RESOLUTION_PS).unwrap();
    assert_eq!(back, stream);
});
