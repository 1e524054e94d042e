use serde::{Deserialize, Serialize};

use super::network::{Gradients, Weights};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first: Weights,
    pub second: Weights,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(like: &Weights) -> Self {
        Self::with_hyper(like, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(like: &Weights, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            first: like.zeros_like(),
            second: like.zeros_like(),
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step(w: &mut Weights, grads: &Gradients, st: &mut AdamState, lr: f64) -> Result<()> {
    if !w.same_shape(grads) || !w.same_shape(&st.first) || !w.same_shape(&st.second) {
        return Err(Error::Shape("adam: weights, gradients and state differ in shape".into()));
    }
    st.step += 1;
    let t = st.step as i32;
    let bc1 = 1.0 - st.beta1.powi(t);
    let bc2 = 1.0 - st.beta2.powi(t);
    let (b1, b2, eps) = (st.beta1, st.beta2, st.eps);
    let params = w.params_mut();
    let g = grads.params();
    let m = st.first.params_mut();
    let v = st.second.params_mut();
    for (((p, &g), m), v) in params.zip(g).zip(m).zip(v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
