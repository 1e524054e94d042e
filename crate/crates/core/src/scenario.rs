//! Synthetic time-stepped network scenarios.
//!
//! Receivers random-walk inside a rectangular area. Each step yields an N×M
//! [`RateMatrix`] of Shannon rates from a log-distance path-loss model with
//! log-normal shadowing. A RIS node is a lossless two-hop relay of its anchor
//! base station.

use std::fmt::Write as _;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, TAG_INIT_POS, TAG_MOBILITY, TAG_SHADOW};

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    BaseStation,
    RisRelay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxNode {
    pub position: Point3,
    pub kind: TxKind,
    pub tx_power_dbm: f64,
    /// Index of the base station a RIS reflects. Required iff `kind` is `ris_relay`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_tx: Option<usize>,
    /// Scalar antenna/aperture gain in dB (0 = omnidirectional).
    #[serde(default)]
    pub gain_db: f64,
}

impl TxNode {
    pub fn base_station(position: Point3, tx_power_dbm: f64) -> Self {
        Self {
            position,
            kind: TxKind::BaseStation,
            tx_power_dbm,
            anchor_tx: None,
            gain_db: 0.0,
        }
    }

    pub fn ris_relay(position: Point3, tx_power_dbm: f64, anchor: usize, gain_db: f64) -> Self {
        Self {
            position,
            kind: TxKind::RisRelay,
            tx_power_dbm,
            anchor_tx: Some(anchor),
            gain_db,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub pl0_db: f64,
    pub ref_distance: f64,
    pub exponent: f64,
    pub shadow_sigma_db: f64,
    pub bandwidth_hz: f64,
    pub noise_dbm: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            pl0_db: 40.0,
            ref_distance: 1.0,
            exponent: 3.0,
            shadow_sigma_db: 4.0,
            bandwidth_hz: 20e6,
            noise_dbm: -94.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.pl0_db,
            self.ref_distance,
            self.exponent,
            self.shadow_sigma_db,
            self.bandwidth_hz,
            self.noise_dbm,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("channel parameters must be finite".into()));
        }
        if self.exponent <= 0.0 {
            return Err(Error::Config("channel.exponent must be > 0".into()));
        }
        if self.bandwidth_hz <= 0.0 {
            return Err(Error::Config("channel.bandwidth_hz must be > 0".into()));
        }
        if self.shadow_sigma_db < 0.0 {
            return Err(Error::Config("channel.shadow_sigma_db must be >= 0".into()));
        }
        if self.ref_distance <= 0.0 {
            return Err(Error::Config("channel.ref_distance must be > 0".into()));
        }
        Ok(())
    }

    /// Log-distance path loss in dB, without shadowing.
    pub fn path_loss_db(&self, distance: f64) -> f64 {
        self.pl0_db + 10.0 * self.exponent * (distance / self.ref_distance).log10()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub area_width: f64,
    pub area_height: f64,
    pub n_rx: usize,
    pub tx_nodes: Vec<TxNode>,
    pub n_steps: usize,
    pub step_size: f64,
    pub channel: ChannelParams,
    /// Receiver antenna height in meters.
    #[serde(default = "default_rx_height")]
    pub rx_height: f64,
    pub seed: u64,
}

fn default_rx_height() -> f64 {
    1.5
}

impl Default for ScenarioConfig {
    /// Two base stations on opposite sides of a 500 m square plus one
    /// UAV-mounted RIS hovering over the centre, anchored to the first; six
    /// receivers. The RIS aperture gain gives it a coverage zone comparable to
    /// each base station's.
    fn default() -> Self {
        Self {
            area_width: 500.0,
            area_height: 500.0,
            n_rx: 6,
            tx_nodes: vec![
                TxNode::base_station([40.0, 250.0, 25.0], 43.0),
                TxNode::base_station([460.0, 250.0, 25.0], 43.0),
                TxNode::ris_relay([250.0, 250.0, 30.0], 43.0, 0, 105.0),
            ],
            n_steps: 500,
            step_size: 40.0,
            channel: ChannelParams::default(),
            rx_height: default_rx_height(),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn n_tx(&self) -> usize {
        self.tx_nodes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rx == 0 {
            return Err(Error::Config("n_rx must be >= 1".into()));
        }
        if self.tx_nodes.is_empty() {
            return Err(Error::Config("tx_nodes must not be empty".into()));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be >= 1".into()));
        }
        if !(self.area_width.is_finite() && self.area_width > 0.0)
            || !(self.area_height.is_finite() && self.area_height > 0.0)
        {
            return Err(Error::Config("area dimensions must be finite and > 0".into()));
        }
        if !(self.step_size.is_finite() && self.step_size >= 0.0) {
            return Err(Error::Config("step_size must be finite and >= 0".into()));
        }
        if !(self.rx_height.is_finite() && self.rx_height >= 0.0) {
            return Err(Error::Config("rx_height must be finite and >= 0".into()));
        }
        self.channel.validate()?;
        for (j, tx) in self.tx_nodes.iter().enumerate() {
            if tx.position.iter().any(|c| !c.is_finite())
                || !tx.tx_power_dbm.is_finite()
                || !tx.gain_db.is_finite()
            {
                return Err(Error::Config(format!("tx_nodes[{j}] has non-finite fields")));
            }
            if tx.position[2] < 0.0 {
                return Err(Error::Config(format!("tx_nodes[{j}] altitude must be >= 0")));
            }
            match (tx.kind, tx.anchor_tx) {
                (TxKind::BaseStation, None) => {}
                (TxKind::BaseStation, Some(_)) => {
                    return Err(Error::Config(format!(
                        "tx_nodes[{j}] is a base_station but has anchor_tx"
                    )))
                }
                (TxKind::RisRelay, None) => {
                    return Err(Error::Config(format!(
                        "tx_nodes[{j}] is a ris_relay without anchor_tx"
                    )))
                }
                (TxKind::RisRelay, Some(a)) => {
                    if self.tx_nodes.get(a).map(|n| n.kind) != Some(TxKind::BaseStation) {
                        return Err(Error::Config(format!(
                            "tx_nodes[{j}].anchor_tx = {a} is not a base_station"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// N×M matrix of achievable rates, one row per receiver, one column per
/// transmitter, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct RateMatrix {
    n_rx: usize,
    n_tx: usize,
    data: Vec<f64>,
}

impl RateMatrix {
    /// Builds a matrix from row-major data. Entries must be finite; the sign
    /// is not checked here (see [`RateMatrix::check_nonnegative`]) so that
    /// affine transforms of rates remain representable.
    pub fn new(n_rx: usize, n_tx: usize, data: Vec<f64>) -> Result<Self> {
        if n_rx == 0 || n_tx == 0 {
            return Err(Error::Shape("rate matrix must be at least 1x1".into()));
        }
        if data.len() != n_rx * n_tx {
            return Err(Error::Shape(format!(
                "expected {n_rx}x{n_tx} = {} entries, got {}",
                n_rx * n_tx,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rate matrix entry".into()));
        }
        Ok(Self { n_rx, n_tx, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rx = rows.len();
        let n_tx = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_tx) {
            return Err(Error::Shape("ragged rate matrix".into()));
        }
        Self::new(n_rx, n_tx, rows.into_iter().flatten().collect())
    }

    pub fn n_rx(&self) -> usize {
        self.n_rx
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn get(&self, rx: usize, tx: usize) -> f64 {
        self.data[rx * self.n_tx + tx]
    }

    pub fn row(&self, rx: usize) -> &[f64] {
        &self.data[rx * self.n_tx..(rx + 1) * self.n_tx]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_tx)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.n_rx, self.n_tx, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn check_nonnegative(&self) -> Result<()> {
        if self.data.iter().any(|&v| v < 0.0) {
            return Err(Error::Format("rate matrix has negative entries".into()));
        }
        Ok(())
    }
}

impl TryFrom<Vec<Vec<f64>>> for RateMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<RateMatrix> for Vec<Vec<f64>> {
    fn from(m: RateMatrix) -> Self {
        m.to_rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub step: usize,
    pub rates: RateMatrix,
    pub positions: Vec<Point3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Digest of the generating config; `None` when loaded from a file.
    pub config_digest: Option<String>,
    pub instances: Vec<Instance>,
}

impl Dataset {
    pub fn new(config_digest: Option<String>, instances: Vec<Instance>) -> Result<Self> {
        validate_instances(&instances)?;
        Ok(Self {
            config_digest,
            instances,
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for inst in &self.instances {
            serde_json::to_writer(&mut out, inst)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for inst in &self.instances {
            let _ = writeln!(s, "{}", serde_json::to_string(inst).expect("instance serializes"));
        }
        s
    }

    /// Parses a JSON Lines dataset. Blank lines are skipped.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut instances = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let inst: Instance = serde_json::from_str(line)
                .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
            instances.push(inst);
        }
        Self::new(None, instances)
    }
}

fn validate_instances(instances: &[Instance]) -> Result<()> {
    let Some(first) = instances.first() else {
        return Ok(());
    };
    let (n, m) = (first.rates.n_rx(), first.rates.n_tx());
    for (k, inst) in instances.iter().enumerate() {
        if inst.step != k {
            return Err(Error::Format(format!(
                "instance {k} has step {} (steps must be 0,1,2,...)",
                inst.step
            )));
        }
        if inst.rates.n_rx() != n || inst.rates.n_tx() != m {
            return Err(Error::Shape(format!(
                "step {}: rate matrix is {}x{}, expected {n}x{m}",
                inst.step,
                inst.rates.n_rx(),
                inst.rates.n_tx()
            )));
        }
        inst.rates.check_nonnegative()?;
        if inst.positions.len() != n {
            return Err(Error::Shape(format!(
                "step {}: {} positions for {n} receivers",
                inst.step,
                inst.positions.len()
            )));
        }
        if inst.positions.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("step {}: position", inst.step)));
        }
    }
    Ok(())
}

/// Folds `x` back into `[0, hi]` by mirror reflection at both walls.
fn reflect(x: f64, hi: f64) -> f64 {
    let period = 2.0 * hi;
    let r = x.rem_euclid(period);
    let r = if r > hi { period - r } else { r };
    r.clamp(0.0, hi)
}

/// Moves every point by `step_size` in a uniform random planar direction,
/// reflecting at the area boundary. Altitude is unchanged.
pub fn step_positions<R: Rng + ?Sized>(
    positions: &[Point3],
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Vec<Point3> {
    positions
        .iter()
        .map(|&[x, y, z]| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let nx = x + cfg.step_size * angle.cos();
            let ny = y + cfg.step_size * angle.sin();
            [reflect(nx, cfg.area_width), reflect(ny, cfg.area_height), z]
        })
        .collect()
}

fn distance(a: Point3, b: Point3) -> f64 {
    a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

/// `log2(1 + 10^(snr_db/10))` without overflow at very high SNR.
fn log2_one_plus_snr(snr_db: f64) -> f64 {
    let y = snr_db * std::f64::consts::LN_10 / 10.0;
    let softplus = y.max(0.0) + (-y.abs()).exp().ln_1p();
    softplus / std::f64::consts::LN_2
}

/// Shannon rate of one link, in bits/s.
///
/// `nodes` is the full transmitter list so that a RIS can find its anchor.
pub fn link_rate<R: Rng + ?Sized>(
    nodes: &[TxNode],
    tx: usize,
    rx_pos: Point3,
    ch: &ChannelParams,
    rng: &mut R,
) -> Result<f64> {
    let node = nodes
        .get(tx)
        .ok_or_else(|| Error::Config(format!("transmitter index {tx} out of range")))?;
    let segment = |a: Point3, b: Point3| -> Result<f64> {
        let d = distance(a, b);
        if d == 0.0 {
            return Err(Error::DegenerateGeometry(format!(
                "zero distance on link of transmitter {tx}"
            )));
        }
        Ok(ch.path_loss_db(d))
    };
    let mut loss = match node.kind {
        TxKind::BaseStation => segment(node.position, rx_pos)?,
        TxKind::RisRelay => {
            let anchor = node
                .anchor_tx
                .and_then(|a| nodes.get(a))
                .ok_or_else(|| Error::Config(format!("ris_relay {tx} has no valid anchor")))?;
            segment(anchor.position, node.position)? + segment(node.position, rx_pos)?
        }
    };
    if ch.shadow_sigma_db > 0.0 {
        let shadow = Normal::new(0.0, ch.shadow_sigma_db).expect("sigma validated");
        loss += shadow.sample(rng);
    }
    let snr_db = node.tx_power_dbm + node.gain_db - loss - ch.noise_dbm;
    Ok(ch.bandwidth_hz * log2_one_plus_snr(snr_db))
}

fn initial_positions(cfg: &ScenarioConfig) -> Vec<Point3> {
    let mut rng = rng::stream(cfg.seed, &[TAG_INIT_POS]);
    (0..cfg.n_rx)
        .map(|_| {
            [
                rng.random_range(0.0..=cfg.area_width),
                rng.random_range(0.0..=cfg.area_height),
                cfg.rx_height,
            ]
        })
        .collect()
}

fn rate_matrix(cfg: &ScenarioConfig, step: usize, positions: &[Point3]) -> Result<RateMatrix> {
    let m = cfg.n_tx();
    let mut data = Vec::with_capacity(positions.len() * m);
    for (i, &pos) in positions.iter().enumerate() {
        for j in 0..m {
            let mut rng = rng::stream(cfg.seed, &[TAG_SHADOW, step as u64, i as u64, j as u64]);
            data.push(link_rate(&cfg.tx_nodes, j, pos, &cfg.channel, &mut rng)?);
        }
    }
    RateMatrix::new(positions.len(), m, data)
}

/// Runs the scenario. Mobility is sequential; per-step rate matrices are
/// computed in parallel on the current rayon pool, each from its own derived
/// stream, so the result does not depend on the thread count.
pub fn generate_dataset(cfg: &ScenarioConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut trajectory = Vec::with_capacity(cfg.n_steps);
    let mut pos = initial_positions(cfg);
    for step in 0..cfg.n_steps {
        if step > 0 {
            let mut rng = rng::stream(cfg.seed, &[TAG_MOBILITY, step as u64]);
            pos = step_positions(&pos, cfg, &mut rng);
        }
        trajectory.push(pos.clone());
    }
    let instances = trajectory
        .into_par_iter()
        .enumerate()
        .map(|(step, positions)| {
            let rates = rate_matrix(cfg, step, &positions)?;
            Ok(Instance {
                step,
                rates,
                positions,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(Some(cfg.digest()), instances)
}
