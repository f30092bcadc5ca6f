#![no_main]

use featguard::gmm::GmmModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(gmm) = GmmModel::from_json(text) {
            let round = gmm.to_json().expect("accepted mixture serializes");
            GmmModel::from_json(&round).expect("serialized mixture parses back");
        }
    }
});
