#![no_main]

use fedself::training::idx::{idx_to_dataset, parse_idx};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(arr) = parse_idx(data) {
        assert!(arr.len() <= data.len());
        // the same bytes as images and labels exercise the shape checks
        let _ = idx_to_dataset(&arr, &arr, Some(16));
    }
});
