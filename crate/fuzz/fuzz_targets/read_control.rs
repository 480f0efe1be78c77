#![no_main]

use libfuzzer_sys::fuzz_target;
use osc_hawkes::io::read_control;

fuzz_target!(|data: &[u8]| {
    let _ = read_control(data, 1.0);
});
