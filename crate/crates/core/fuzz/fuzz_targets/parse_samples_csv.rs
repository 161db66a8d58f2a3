#![no_main]
use libfuzzer_sys::fuzz_target;
use fbi_micro::fbi::parse_samples_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = parse_samples_csv(s);
    }
});
