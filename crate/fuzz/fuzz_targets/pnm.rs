#![no_main]

use dynsplat::io::{decode_mask, decode_ppm, encode_mask, encode_ppm};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_ppm(data) {
        let bytes = encode_ppm(&img).expect("decoded image encodes");
        assert_eq!(decode_ppm(&bytes).expect("encoded image decodes"), img);
    }
    if let Ok(mask) = decode_mask(data) {
        let bytes = encode_mask(&mask).expect("decoded mask encodes");
        assert_eq!(decode_mask(&bytes).expect("encoded mask decodes"), mask);
    }
});
