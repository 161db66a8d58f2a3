#![no_main]
use libfuzzer_sys::fuzz_target;
use fbi_micro::cli::Run;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = Run::from_bytes(s.as_bytes(), None, ".".into());
    }
});
