#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(pairs) = nccox::io::parse_grid(text) {
            assert!(pairs.iter().all(|&(s, t)| s >= 0.0 && t >= 0.0 && s.is_finite() && t.is_finite()));
        }
    }
});
