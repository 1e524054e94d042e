#![no_main]

use libfuzzer_sys::fuzz_target;
use spike_assoc::oracle::{is_feasible, parse_labeled_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(records) = parse_labeled_jsonl(text) {
        for r in &records {
            assert!(is_feasible(&r.optimal, r.n_tx(), r.limit));
        }
    }
});
