#![no_main]

use dynsplat::io::{read_cameras, write_cameras};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cams) = read_cameras(text) {
        let again = read_cameras(&write_cameras(&cams)).expect("written cameras parse");
        assert_eq!(again.len(), cams.len());
    }
});
