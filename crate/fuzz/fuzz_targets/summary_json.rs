#![no_main]

use fedself::experiment::output::{parse_summary, summary_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(summary) = parse_summary(text) {
        let emitted = summary_json(&summary);
        let again = parse_summary(&emitted).expect("emitted summary parses");
        assert_eq!(summary_json(&again), emitted);
    }
});
