#![no_main]

use dynsplat::io::{read_checkpoint, write_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(state) = read_checkpoint(text) {
        let again = read_checkpoint(&write_checkpoint(&state)).expect("written checkpoint parses");
        assert_eq!(again.cloud.gaussians.len(), state.cloud.gaussians.len());
    }
});
