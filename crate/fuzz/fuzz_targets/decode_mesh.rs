#![no_main]

use libfuzzer_sys::fuzz_target;

// Mesh files are the untrusted input surface of the I/O module: the decoder
// must reject any malformed input with an error instead of panicking or
// over-allocating, and anything it accepts must be internally consistent.
fuzz_target!(|data: &[u8]| {
    if let Ok((header, elements)) = quadforest::forest_io::decode_mesh(data) {
        assert_eq!(elements.len() as u64, header.num_elements);
        assert_eq!(header.pertree.last().copied(), Some(header.num_elements));
    }
});
