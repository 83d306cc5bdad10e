#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(report) = nccox::experiment::parse_mc_csv(text) {
            let _ = nccox::experiment::report_csv(&report);
            let _ = nccox::experiment::report_text(&report);
        }
    }
});
