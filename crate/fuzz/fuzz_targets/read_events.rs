#![no_main]

use libfuzzer_sys::fuzz_target;
use osc_hawkes::io::read_events;

fuzz_target!(|data: &[u8]| {
    if let Ok((t1, t2)) = read_events(data) {
        assert!(t1.iter().chain(&t2).all(|t| t.is_finite()));
    }
});
