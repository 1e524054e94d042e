use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reset {
    /// Subtract the threshold after a spike.
    Subtract,
    /// Set the potential to zero after a spike.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    /// Membrane decay per step, in [0, 1).
    pub beta: f64,
    pub threshold: f64,
    pub reset: Reset,
    /// Sharpness `k` of the surrogate derivative.
    pub surrogate_slope: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            beta: 0.9,
            threshold: 1.0,
            reset: Reset::Subtract,
            surrogate_slope: 25.0,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("lif.beta {} not in [0,1)", self.beta)));
        }
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(Error::Config("lif.threshold must be finite and > 0".into()));
        }
        if !(self.surrogate_slope.is_finite() && self.surrogate_slope > 0.0) {
            return Err(Error::Config("lif.surrogate_slope must be finite and > 0".into()));
        }
        Ok(())
    }

    /// Integrates one step and applies the threshold. Returns the
    /// pre-reset potential alongside the post-reset one.
    #[inline]
    pub(crate) fn integrate(&self, u: f64, current: f64) -> (f64, f64, bool) {
        let pre = self.beta * u + current;
        let spike = pre >= self.threshold;
        let next = match (spike, self.reset) {
            (false, _) => pre,
            (true, Reset::Subtract) => pre - self.threshold,
            (true, Reset::Zero) => 0.0,
        };
        (pre, next, spike)
    }
}

/// One LIF update: `pre = beta·u + i_in`, spike iff `pre >= threshold`, then
/// reset. Returns the post-reset potential and the spike (0 or 1).
pub fn lif_step(u: f64, i_in: f64, p: &LifParams) -> (f64, u8) {
    let (_, next, spike) = p.integrate(u, i_in);
    (next, spike as u8)
}

/// Reciprocal-quadratic (fast sigmoid) surrogate for d(spike)/d(pre), with
/// `x = pre - threshold`.
#[inline]
pub fn surrogate_grad(x: f64, k: f64) -> f64 {
    let d = 1.0 + k * x.abs();
    1.0 / (d * d)
}
