#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(dataset) = nccox::io::parse_dataset(text) {
            // Whatever parses must survive a round trip.
            let again = nccox::io::parse_dataset(&nccox::io::serialize_dataset(&dataset)).unwrap();
            assert_eq!(again, dataset);
        }
    }
});
