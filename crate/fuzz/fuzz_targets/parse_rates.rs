#![no_main]

use libfuzzer_sys::fuzz_target;
use spike_assoc::oracle::{default_limit, solve_optimal};
use spike_assoc::RateMatrix;

fuzz_target!(|data: &[u8]| {
    let Ok(rows) = serde_json::from_slice::<Vec<Vec<f64>>>(data) else {
        return;
    };
    let Ok(rates) = RateMatrix::from_rows(rows) else {
        return;
    };
    if rates.n_rx() > 8 || rates.n_tx() > 4 {
        return;
    }
    let limit = default_limit(rates.n_rx(), rates.n_tx());
    let _ = solve_optimal(&rates, limit);
});
