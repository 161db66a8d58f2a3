#![no_main]
use libfuzzer_sys::fuzz_target;
use fbi_micro::cli::parse_functional_desc;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = parse_functional_desc(s);
    }
});
