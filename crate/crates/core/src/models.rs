//! Top-down (whole network state) and bottom-up (one receiver at a time)
//! association estimators built on [`crate::snn`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::Association;
use crate::rng;
use crate::scenario::RateMatrix;
use crate::snn::{self, LifParams, Mode, NetworkSpec, Weights};

pub const SIGMA_FLOOR: f64 = 1e-9;
pub const DEFAULT_TIME_STEPS: usize = 25;
pub const DEFAULT_DROPOUT: f64 = 0.2;

/// One global affine map `(x - mu) / sigma` over every rate entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mu: f64,
    pub sigma: f64,
}

impl Standardizer {
    pub const IDENTITY: Standardizer = Standardizer { mu: 0.0, sigma: 1.0 };

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(Error::Format(format!(
                "standardizer mu={} sigma={} (sigma must be finite and > 0)",
                self.mu, self.sigma
            )));
        }
        Ok(())
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| (v - self.mu) / self.sigma).collect()
    }
}

/// Pooled mean and population standard deviation over every entry of every
/// training matrix. `sigma` is floored at [`SIGMA_FLOOR`].
pub fn fit_standardizer<'a, I>(train: I) -> Result<Standardizer>
where
    I: IntoIterator<Item = &'a RateMatrix>,
    I::IntoIter: Clone,
{
    let iter = train.into_iter();
    let count: usize = iter.clone().map(|m| m.as_slice().len()).sum();
    if count == 0 {
        return Err(Error::Config("cannot fit a standardizer on no data".into()));
    }
    let n = count as f64;
    let mu = iter.clone().flat_map(|m| m.as_slice()).sum::<f64>() / n;
    let var = iter
        .flat_map(|m| m.as_slice())
        .map(|v| (v - mu).powi(2))
        .sum::<f64>()
        / n;
    Ok(Standardizer {
        mu,
        sigma: var.sqrt().max(SIGMA_FLOOR),
    })
}

pub fn standardize(s: &Standardizer, rates: &RateMatrix) -> Vec<f64> {
    s.apply(rates.as_slice())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    TopDown,
    BottomUp,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::TopDown => "topdown",
            ModelKind::BottomUp => "bottomup",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight `λ` of the soft-capacity penalty (top-down only).
    pub penalty_weight: f64,
    /// Capacity used by the penalty. `None` takes the limit recorded in the
    /// labeled data.
    #[serde(default)]
    pub limit: Option<usize>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            penalty_weight: 0.1,
            limit: None,
        }
    }
}

fn check_finite(logits: &[f64]) -> Result<()> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(())
}

fn softmax(z: &[f64]) -> (Vec<f64>, f64) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let log_norm = max + sum.ln();
    (exps.into_iter().map(|e| e / sum).collect(), log_norm)
}

/// Row-wise softmax cross-entropy averaged over receivers, plus
/// `λ · Σ_j max(0, load_j - L)²` on the soft loads `load_j = Σ_i p_ij`.
/// Returns the loss and its exact gradient with respect to the logits.
pub fn topdown_loss(
    logits: &[f64],
    n_tx: usize,
    target: &Association,
    penalty_weight: f64,
    limit: usize,
) -> Result<(f64, Vec<f64>)> {
    check_finite(logits)?;
    let n_rx = target.len();
    if n_tx == 0 || logits.len() != n_rx * n_tx {
        return Err(Error::Shape(format!(
            "{} logits for {n_rx} receivers x {n_tx} transmitters",
            logits.len()
        )));
    }
    if let Some(&bad) = target.as_slice().iter().find(|&&t| t >= n_tx) {
        return Err(Error::Shape(format!("target transmitter {bad} >= {n_tx}")));
    }
    let mut probs = Vec::with_capacity(logits.len());
    let mut ce = 0.0;
    for (row, &t) in logits.chunks_exact(n_tx).zip(target.as_slice()) {
        let (p, log_norm) = softmax(row);
        ce += log_norm - row[t];
        probs.extend(p);
    }
    let inv_n = 1.0 / n_rx as f64;
    ce *= inv_n;

    let mut loads = vec![0.0; n_tx];
    for row in probs.chunks_exact(n_tx) {
        for (l, p) in loads.iter_mut().zip(row) {
            *l += p;
        }
    }
    let excess: Vec<f64> = loads.iter().map(|l| (l - limit as f64).max(0.0)).collect();
    let penalty: f64 = excess.iter().map(|e| e * e).sum();

    let mut grad = vec![0.0; logits.len()];
    for (i, (g_row, p_row)) in grad.chunks_exact_mut(n_tx).zip(probs.chunks_exact(n_tx)).enumerate() {
        // d penalty / d z_ik = p_ik · (c_k - Σ_j c_j p_ij), c_j = 2·excess_j
        let mean_c: f64 = p_row.iter().zip(&excess).map(|(p, e)| 2.0 * e * p).sum();
        for k in 0..n_tx {
            let onehot = if k == target.as_slice()[i] { 1.0 } else { 0.0 };
            g_row[k] = (p_row[k] - onehot) * inv_n
                + penalty_weight * p_row[k] * (2.0 * excess[k] - mean_c);
        }
    }
    Ok((ce + penalty_weight * penalty, grad))
}

/// Softmax cross-entropy for a single receiver; gradient `p - onehot(target)`.
pub fn bottomup_loss(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    check_finite(logits)?;
    if target >= logits.len() {
        return Err(Error::Shape(format!("target {target} >= {} classes", logits.len())));
    }
    let (mut p, log_norm) = softmax(logits);
    let loss = log_norm - logits[target];
    p[target] -= 1.0;
    Ok((loss, p))
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn decode_bottomup(logits: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = k;
        }
    }
    best
}

/// Per-row argmax. No capacity repair is applied.
pub fn decode_topdown(logits: &[f64], n_tx: usize) -> Association {
    Association(logits.chunks_exact(n_tx).map(decode_bottomup).collect())
}

/// `[N·M, 128, 128, N·M]`, default LIF parameters, dropout 0.2, 25 steps.
pub fn default_topdown_spec(n_rx: usize, n_tx: usize) -> NetworkSpec {
    let io = n_rx * n_tx;
    NetworkSpec::uniform(
        vec![io, 128, 128, io],
        LifParams::default(),
        DEFAULT_DROPOUT,
        DEFAULT_TIME_STEPS,
    )
}

/// `[M, 64, 64, M]`, default LIF parameters, dropout 0.2, 25 steps.
pub fn default_bottomup_spec(n_tx: usize) -> NetworkSpec {
    NetworkSpec::uniform(
        vec![n_tx, 64, 64, n_tx],
        LifParams::default(),
        DEFAULT_DROPOUT,
        DEFAULT_TIME_STEPS,
    )
}

fn eval_logits(spec: &NetworkSpec, w: &Weights, x: &[f64]) -> Result<Vec<f64>> {
    // Eval mode draws nothing from the stream.
    let mut unused = rng::stream(0, &[]);
    Ok(snn::forward(spec, w, x, Mode::Eval, &mut unused)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopDownModel {
    pub spec: NetworkSpec,
    pub weights: Weights,
    pub standardizer: Standardizer,
    pub n_rx: usize,
    pub n_tx: usize,
    pub limit: usize,
}

impl TopDownModel {
    pub fn new(
        spec: NetworkSpec,
        weights: Weights,
        standardizer: Standardizer,
        n_rx: usize,
        n_tx: usize,
        limit: usize,
    ) -> Result<Self> {
        let io = n_rx.checked_mul(n_tx);
        if io != Some(spec.input_size()) || io != Some(spec.output_size()) {
            return Err(Error::Shape(format!(
                "top-down network must map {n_rx}x{n_tx} inputs to as many outputs"
            )));
        }
        Ok(Self {
            spec,
            weights,
            standardizer,
            n_rx,
            n_tx,
            limit,
        })
    }

    pub fn predict(&self, rates: &RateMatrix) -> Result<Association> {
        if (rates.n_rx(), rates.n_tx()) != (self.n_rx, self.n_tx) {
            return Err(Error::Shape(format!(
                "model expects {}x{} rates, got {}x{}",
                self.n_rx,
                self.n_tx,
                rates.n_rx(),
                rates.n_tx()
            )));
        }
        let x = standardize(&self.standardizer, rates);
        let logits = eval_logits(&self.spec, &self.weights, &x)?;
        Ok(decode_topdown(&logits, self.n_tx))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BottomUpModel {
    pub spec: NetworkSpec,
    pub weights: Weights,
    pub standardizer: Standardizer,
    pub n_tx: usize,
}

impl BottomUpModel {
    pub fn new(spec: NetworkSpec, weights: Weights, standardizer: Standardizer, n_tx: usize) -> Result<Self> {
        if spec.input_size() != n_tx || spec.output_size() != n_tx {
            return Err(Error::Shape(format!(
                "bottom-up network must map {n_tx} inputs to {n_tx} outputs"
            )));
        }
        Ok(Self {
            spec,
            weights,
            standardizer,
            n_tx,
        })
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<usize> {
        let x = self.standardizer.apply(row);
        Ok(decode_bottomup(&eval_logits(&self.spec, &self.weights, &x)?))
    }

    /// One independent forward pass per receiver row.
    pub fn predict(&self, rates: &RateMatrix) -> Result<Association> {
        if rates.n_tx() != self.n_tx {
            return Err(Error::Shape(format!(
                "model expects {} transmitters, got {}",
                self.n_tx,
                rates.n_tx()
            )));
        }
        rates
            .rows()
            .map(|row| self.predict_row(row))
            .collect::<Result<Vec<_>>>()
            .map(Association)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    TopDown(TopDownModel),
    BottomUp(BottomUpModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::TopDown(_) => ModelKind::TopDown,
            Model::BottomUp(_) => ModelKind::BottomUp,
        }
    }

    pub fn predict(&self, rates: &RateMatrix) -> Result<Association> {
        match self {
            Model::TopDown(m) => m.predict(rates),
            Model::BottomUp(m) => m.predict(rates),
        }
    }

    pub fn n_tx(&self) -> usize {
        match self {
            Model::TopDown(m) => m.n_tx,
            Model::BottomUp(m) => m.n_tx,
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        match self {
            Model::TopDown(m) => &m.spec,
            Model::BottomUp(m) => &m.spec,
        }
    }

    pub fn weights(&self) -> &Weights {
        match self {
            Model::TopDown(m) => &m.weights,
            Model::BottomUp(m) => &m.weights,
        }
    }

    pub fn standardizer(&self) -> Standardizer {
        match self {
            Model::TopDown(m) => m.standardizer,
            Model::BottomUp(m) => m.standardizer,
        }
    }
}
