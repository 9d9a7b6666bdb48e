#![no_main]

use camcal::io::{decode_map, decode_mask, encode_map, encode_mask};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = decode_map(data) {
        assert_eq!(encode_map(&map).unwrap(), data);
    }
    if let Ok(mask) = decode_mask(data) {
        // -0.0 decodes as empty but re-encodes as +0.0.
        let again = encode_mask(&mask).unwrap();
        assert_eq!(decode_mask(&again).unwrap(), mask);
    }
});
