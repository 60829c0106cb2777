#![no_main]

use ecgstate::data::{format_manifest, parse_manifest};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_manifest(text) {
        let again = format_manifest(&rows).expect("parsed rows format");
        assert_eq!(parse_manifest(&again).expect("formatted rows parse"), rows);
    }
});
