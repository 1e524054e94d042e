use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lif::{surrogate_grad, LifParams, Reset};
use crate::error::{Error, Result};
use crate::rng::{self, TAG_WEIGHTS};

/// Layer sizes, per-hidden-layer LIF parameters and dropout, and the number
/// of simulation steps. The output layer is a non-spiking leaky integrator
/// with decay `output_beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layer_sizes: Vec<usize>,
    pub lif: Vec<LifParams>,
    pub dropout_rates: Vec<f64>,
    pub time_steps: usize,
    pub output_beta: f64,
}

impl NetworkSpec {
    /// Same LIF parameters and dropout rate on every hidden layer; the output
    /// integrator shares the hidden `beta`.
    pub fn uniform(layer_sizes: Vec<usize>, lif: LifParams, dropout: f64, time_steps: usize) -> Self {
        let hidden = layer_sizes.len().saturating_sub(2);
        Self {
            layer_sizes,
            lif: vec![lif; hidden],
            dropout_rates: vec![dropout; hidden],
            time_steps,
            output_beta: lif.beta,
        }
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    pub fn hidden_count(&self) -> usize {
        self.layer_sizes.len() - 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 3 {
            return Err(Error::Config("network needs at least one hidden layer".into()));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be > 0".into()));
        }
        let hidden = self.hidden_count();
        if self.lif.len() != hidden || self.dropout_rates.len() != hidden {
            return Err(Error::Config(format!(
                "{hidden} hidden layers but {} lif entries and {} dropout rates",
                self.lif.len(),
                self.dropout_rates.len()
            )));
        }
        for p in &self.lif {
            p.validate()?;
        }
        if self.dropout_rates.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::Config("dropout rates must be in [0,1)".into()));
        }
        if self.time_steps == 0 {
            return Err(Error::Config("time_steps must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.output_beta) {
            return Err(Error::Config("output_beta must be in [0,1)".into()));
        }
        Ok(())
    }

    fn layer_shapes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.layer_sizes.windows(2).map(|w| (w[1], w[0]))
    }
}

/// Dense layer: `w` is `out × in`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn n_out(&self) -> usize {
        self.b.len()
    }

    pub fn n_in(&self) -> usize {
        self.w.len().checked_div(self.b.len()).unwrap_or(0)
    }

    fn row(&self, o: usize) -> &[f64] {
        let n_in = self.n_in();
        &self.w[o * n_in..(o + 1) * n_in]
    }

    /// `out = W·x + b` over a dense input.
    fn affine(&self, x: &[f64], out: &mut [f64]) {
        for (o, y) in out.iter_mut().enumerate() {
            *y = self.b[o] + self.row(o).iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    /// `out = W·x + b` where most of `x` is zero.
    fn affine_sparse(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.b);
        let n_in = self.n_in();
        for (k, &xk) in x.iter().enumerate() {
            if xk != 0.0 {
                for (o, y) in out.iter_mut().enumerate() {
                    *y += self.w[o * n_in + k] * xk;
                }
            }
        }
    }

    /// `out = Wᵀ·g`.
    fn transpose_mul(&self, g: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (o, &go) in g.iter().enumerate() {
            if go != 0.0 {
                for (v, w) in out.iter_mut().zip(self.row(o)) {
                    *v += w * go;
                }
            }
        }
    }

    /// `W += g ⊗ x`, `b += g`.
    fn accumulate(&mut self, g: &[f64], x: &[f64]) {
        let n_in = self.n_in();
        for (o, &go) in g.iter().enumerate() {
            self.b[o] += go;
            if go != 0.0 {
                let row = &mut self.w[o * n_in..(o + 1) * n_in];
                for (w, &xk) in row.iter_mut().zip(x) {
                    if xk != 0.0 {
                        *w += go * xk;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub layers: Vec<Layer>,
}

/// Gradients share the parameter layout of [`Weights`].
pub type Gradients = Weights;

impl Weights {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            layers: spec
                .layer_shapes()
                .map(|(out, inp)| Layer {
                    w: vec![0.0; out * inp],
                    b: vec![0.0; out],
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: vec![0.0; l.w.len()],
                    b: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &Weights) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.w.len() == b.w.len() && a.b.len() == b.b.len())
    }

    pub fn check_spec(&self, spec: &NetworkSpec) -> Result<()> {
        let expected: Vec<_> = spec.layer_shapes().collect();
        if self.layers.len() != expected.len() {
            return Err(Error::Shape(format!(
                "{} weight layers for {} in spec",
                self.layers.len(),
                expected.len()
            )));
        }
        for (k, (l, (out, inp))) in self.layers.iter().zip(expected).enumerate() {
            if l.b.len() != out || Some(l.w.len()) != out.checked_mul(inp) {
                return Err(Error::Shape(format!(
                    "layer {k}: got {} weights/{} biases, expected {out}x{inp}",
                    l.w.len(),
                    l.b.len()
                )));
            }
        }
        if self.params().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weight".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters in a fixed order: per layer, weights then biases.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(&l.b))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    pub fn param_mut(&mut self, index: usize) -> &mut f64 {
        self.params_mut().nth(index).expect("parameter index in range")
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, other: &Weights, scale: f64) {
        for (a, b) in self.params_mut().zip(other.params()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.params_mut().for_each(|v| *v *= factor);
    }
}

/// Uniform in `±sqrt(1/fan_in)` per layer, zero biases.
pub fn init_weights(spec: &NetworkSpec, seed: u64) -> Weights {
    let mut w = Weights::zeros(spec);
    for (k, (layer, &fan_in)) in w.layers.iter_mut().zip(&spec.layer_sizes).enumerate() {
        let bound = (1.0 / fan_in as f64).sqrt();
        let mut rng = rng::stream(seed, &[TAG_WEIGHTS, k as u64]);
        for v in &mut layer.w {
            *v = rng.random_range(-bound..=bound);
        }
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active.
    Train,
    /// Dropout off, no rescaling.
    Eval,
}

/// State of one hidden layer at one simulation step.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStep {
    pub current: Vec<f64>,
    /// Potential after integration, before threshold and reset.
    pub pre: Vec<f64>,
    /// Post-reset potential.
    pub potential: Vec<f64>,
    /// Raw spikes, 0.0 or 1.0 (before dropout).
    pub spikes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    /// Dropout multipliers per hidden layer: 0, 1/(1-p), or 1 in eval mode.
    pub masks: Vec<Vec<f64>>,
    /// `steps[t][l]`
    pub steps: Vec<Vec<HiddenStep>>,
    /// Output membrane potential at every step.
    pub output: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        self.output.last().expect("trace has at least one step")
    }

    fn dropped(&self, t: usize, l: usize) -> Vec<f64> {
        self.steps[t][l]
            .spikes
            .iter()
            .zip(&self.masks[l])
            .map(|(s, m)| s * m)
            .collect()
    }
}

fn sample_masks<R: Rng + ?Sized>(spec: &NetworkSpec, mode: Mode, rng: &mut R) -> Vec<Vec<f64>> {
    spec.layer_sizes[1..spec.layer_sizes.len() - 1]
        .iter()
        .zip(&spec.dropout_rates)
        .map(|(&n, &p)| match mode {
            Mode::Train if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                (0..n)
                    .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                    .collect()
            }
            _ => vec![1.0; n],
        })
        .collect()
}

/// Runs the network for `time_steps` steps with `x` injected as a constant
/// current into the first hidden layer every step. The logits are the output
/// potentials at the final step.
///
/// Dropout masks are drawn from `rng` once per call (train mode only) and
/// reused at every step.
pub fn forward<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    w: &Weights,
    x: &[f64],
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<f64>, ForwardTrace)> {
    if x.len() != spec.input_size() {
        return Err(Error::Shape(format!(
            "input has {} features, network expects {}",
            x.len(),
            spec.input_size()
        )));
    }
    if w.layers.len() != spec.layer_sizes.len() - 1 {
        return Err(Error::Shape("weights do not match network spec".into()));
    }
    let hidden = spec.hidden_count();
    let masks = sample_masks(spec, mode, rng);

    let mut first_current = vec![0.0; spec.layer_sizes[1]];
    w.layers[0].affine(x, &mut first_current);

    let mut potentials: Vec<Vec<f64>> = spec.layer_sizes[1..=hidden]
        .iter()
        .map(|&n| vec![0.0; n])
        .collect();
    let mut u_out = vec![0.0; spec.output_size()];
    let mut steps = Vec::with_capacity(spec.time_steps);
    let mut output = Vec::with_capacity(spec.time_steps);

    for _ in 0..spec.time_steps {
        let mut current = first_current.clone();
        let mut records = Vec::with_capacity(hidden);
        for l in 0..hidden {
            let p = &spec.lif[l];
            let n = current.len();
            let mut pre = vec![0.0; n];
            let mut spikes = vec![0.0; n];
            for k in 0..n {
                let (pr, next, s) = p.integrate(potentials[l][k], current[k]);
                pre[k] = pr;
                potentials[l][k] = next;
                spikes[k] = if s { 1.0 } else { 0.0 };
            }
            let dropped: Vec<f64> = spikes.iter().zip(&masks[l]).map(|(s, m)| s * m).collect();
            let mut next_current = vec![0.0; w.layers[l + 1].n_out()];
            w.layers[l + 1].affine_sparse(&dropped, &mut next_current);
            records.push(HiddenStep {
                current,
                pre,
                potential: potentials[l].clone(),
                spikes,
            });
            current = next_current;
        }
        for (u, c) in u_out.iter_mut().zip(&current) {
            *u = spec.output_beta * *u + c;
        }
        steps.push(records);
        output.push(u_out.clone());
    }

    let trace = ForwardTrace {
        input: x.to_vec(),
        masks,
        steps,
        output,
    };
    Ok((u_out, trace))
}

/// Backpropagation through time. Each spike nonlinearity uses
/// [`surrogate_grad`]; the reset term is detached, so gradient reaches the
/// previous potential only through the leak.
pub fn backward(
    spec: &NetworkSpec,
    w: &Weights,
    trace: &ForwardTrace,
    dloss_dlogits: &[f64],
) -> Result<Gradients> {
    let hidden = spec.hidden_count();
    if trace.steps.len() != spec.time_steps
        || trace.masks.len() != hidden
        || trace.input.len() != spec.input_size()
        || trace.steps.iter().any(|s| s.len() != hidden)
    {
        return Err(Error::Shape("trace does not match network spec".into()));
    }
    if dloss_dlogits.len() != spec.output_size() {
        return Err(Error::Shape(format!(
            "loss gradient has {} entries, network outputs {}",
            dloss_dlogits.len(),
            spec.output_size()
        )));
    }
    let mut grads = w.zeros_like();
    // dL/du_l[t] arriving from step t+1
    let mut carry: Vec<Vec<f64>> = spec.layer_sizes[1..=hidden]
        .iter()
        .map(|&n| vec![0.0; n])
        .collect();
    let mut first_layer_sum = vec![0.0; spec.layer_sizes[1]];
    let mut g_out = dloss_dlogits.to_vec();

    for t in (0..spec.time_steps).rev() {
        let mut g_in = vec![0.0; spec.layer_sizes[hidden]];
        let dropped = trace.dropped(t, hidden - 1);
        grads.layers[hidden].accumulate(&g_out, &dropped);
        w.layers[hidden].transpose_mul(&g_out, &mut g_in);
        for l in (0..hidden).rev() {
            let p = &spec.lif[l];
            let rec = &trace.steps[t][l];
            let mask = &trace.masks[l];
            let mut g_pre = vec![0.0; g_in.len()];
            for k in 0..g_in.len() {
                let through_potential = match p.reset {
                    Reset::Subtract => carry[l][k],
                    Reset::Zero => carry[l][k] * (1.0 - rec.spikes[k]),
                };
                let through_spike = g_in[k] * mask[k] * surrogate_grad(rec.pre[k] - p.threshold, p.surrogate_slope);
                g_pre[k] = through_potential + through_spike;
                carry[l][k] = p.beta * g_pre[k];
            }
            if l == 0 {
                for (s, g) in first_layer_sum.iter_mut().zip(&g_pre) {
                    *s += g;
                }
            } else {
                let dropped = trace.dropped(t, l - 1);
                grads.layers[l].accumulate(&g_pre, &dropped);
                let mut next = vec![0.0; spec.layer_sizes[l]];
                w.layers[l].transpose_mul(&g_pre, &mut next);
                g_in = next;
            }
        }
        for g in &mut g_out {
            *g *= spec.output_beta;
        }
    }
    // The first layer sees the same input every step, so its weight gradient
    // is one outer product with the summed pre-activation gradient.
    let layer0 = &mut grads.layers[0];
    let n_in = spec.input_size();
    for (o, &g) in first_layer_sum.iter().enumerate() {
        layer0.b[o] = g;
        for (k, &x) in trace.input.iter().enumerate() {
            layer0.w[o * n_in + k] = g * x;
        }
    }
    Ok(grads)
}
