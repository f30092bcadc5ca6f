#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(ds) = featguard::data::parse_csv(text) {
            // accepted datasets satisfy their own shape contract
            assert_eq!(ds.inputs.nrows(), ds.labels.len());
            assert!(ds.labels.iter().all(|&l| l < ds.class_count));
            assert!(ds.bounds.0 <= ds.bounds.1);
        }
    }
});
