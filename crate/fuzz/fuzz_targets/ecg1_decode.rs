#![no_main]

use ecgstate::data::{decode_ecg1, encode_ecg1};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(epoch) = decode_ecg1(data) {
        assert_eq!(encode_ecg1(&epoch), data);
    }
});
