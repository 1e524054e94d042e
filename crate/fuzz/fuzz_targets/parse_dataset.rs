#![no_main]

use libfuzzer_sys::fuzz_target;
use spike_assoc::Dataset;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ds) = Dataset::from_jsonl(text) {
        // Anything accepted must survive a write/read cycle unchanged.
        let again = Dataset::from_jsonl(&ds.to_jsonl()).expect("re-parse");
        assert_eq!(again, ds);
    }
});
