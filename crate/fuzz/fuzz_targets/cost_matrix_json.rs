#![no_main]

use libfuzzer_sys::fuzz_target;
use osc_hawkes::action::{fw_weights, CostMatrix};

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = serde_json::from_slice::<CostMatrix>(data) {
        if c.len() <= 6 {
            let _ = fw_weights(&c);
        }
    }
});
