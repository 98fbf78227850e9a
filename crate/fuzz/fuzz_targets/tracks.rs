#![no_main]

use dynsplat::io::{read_tracks, write_tracks};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(set) = read_tracks(text) {
        let again = read_tracks(&write_tracks(&set)).expect("written tracks parse");
        assert_eq!(again.tracks.len(), set.tracks.len());
    }
});
