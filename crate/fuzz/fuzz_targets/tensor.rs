#![no_main]

use dynsplat::io::Tensor;
use libfuzzer_sys::fuzz_target;

// The format has no slack, so anything that decodes re-encodes to itself.
fuzz_target!(|data: &[u8]| {
    if let Ok(t) = Tensor::decode(data) {
        assert_eq!(t.encode(), data);
    }
});
