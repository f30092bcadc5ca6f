#![no_main]

use featguard::classifier::MlpClassifier;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(model) = MlpClassifier::from_json(text) {
            let round = model.to_json().expect("accepted model serializes");
            MlpClassifier::from_json(&round).expect("serialized model parses back");
        }
    }
});
