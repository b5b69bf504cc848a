#![no_main]

use libfuzzer_sys::fuzz_target;

// Variable-size data files pair an untrusted size table with a payload
// section; the first input byte picks the expected element count so the
// fuzzer explores the count/length interplay.
fuzz_target!(|data: &[u8]| {
    let Some((&n, rest)) = data.split_first() else {
        return;
    };
    if let Ok((sizes, payload)) = quadforest::forest_io::decode_data_variable(rest, n as u64) {
        assert_eq!(sizes.len(), n as usize);
        assert_eq!(sizes.iter().sum::<u64>(), payload.len() as u64);
    }
});
