#![no_main]

use libfuzzer_sys::fuzz_target;
use osc_hawkes::io::{read_path, write_path};

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = read_path(data) {
        let mut buf = Vec::new();
        write_path(&mut buf, &p).unwrap();
        assert_eq!(read_path(buf.as_slice()).unwrap(), p);
    }
});
