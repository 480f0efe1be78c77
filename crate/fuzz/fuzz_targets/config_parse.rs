#![no_main]

use libfuzzer_sys::fuzz_target;
use osc_hawkes::{make_model, Config};

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(c) = Config::parse(s) {
            let _ = make_model(&c);
        }
    }
});
