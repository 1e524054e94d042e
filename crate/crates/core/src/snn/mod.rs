//! Spiking network engine: LIF neurons, dense layers with dropout, a temporal
//! forward pass, surrogate-gradient BPTT and Adam.

mod adam;
mod lif;
mod network;

pub use adam::{adam_step, AdamState};
pub use lif::{lif_step, surrogate_grad, LifParams, Reset};
pub use network::{
    backward, forward, init_weights, ForwardTrace, Gradients, HiddenStep, Layer, Mode, NetworkSpec,
    Weights,
};
