#![no_main]

use libfuzzer_sys::fuzz_target;
use spike_assoc::training::{Checkpoint, CheckpointKind};
use spike_assoc::RateMatrix;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(ckpt) = Checkpoint::from_json(text) else {
        return;
    };
    let Ok(model) = ckpt.model() else {
        return;
    };
    let (n_rx, n_tx) = match ckpt.kind {
        CheckpointKind::TopDown { n_rx, n_tx, .. } => (n_rx, n_tx),
        CheckpointKind::BottomUp { n_tx } => (2, n_tx),
    };
    if ckpt.spec.time_steps > 64 || n_rx.saturating_mul(n_tx) > 256 {
        return;
    }
    let rates = RateMatrix::new(n_rx, n_tx, vec![1.0; n_rx * n_tx]).unwrap();
    let pred = model.predict(&rates).expect("validated model predicts");
    assert_eq!(pred.len(), n_rx);
});
