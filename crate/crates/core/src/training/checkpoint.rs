//! Best-model checkpoint file.
//!
//! JSON with exactly the fields `format_version`, `kind`, `spec`,
//! `standardizer`, `layers` and `meta`. Floats are written in shortest
//! round-trip form and parsed with correct rounding, so weights survive a
//! save/load cycle bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{BottomUpModel, Model, ModelKind, Standardizer, TopDownModel};
use crate::snn::{Layer, NetworkSpec, Weights};

pub const FORMAT_VERSION: u32 = 1;

/// Model kind plus the problem dimensions needed to rebuild it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum CheckpointKind {
    TopDown { n_rx: usize, n_tx: usize, limit: usize },
    BottomUp { n_tx: usize },
}

impl CheckpointKind {
    pub fn model_kind(&self) -> ModelKind {
        match self {
            CheckpointKind::TopDown { .. } => ModelKind::TopDown,
            CheckpointKind::BottomUp { .. } => ModelKind::BottomUp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: CheckpointKind,
    pub spec: NetworkSpec,
    pub standardizer: Standardizer,
    pub layers: Vec<Layer>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn from_model(model: &Model, meta: CheckpointMeta) -> Self {
        let kind = match model {
            Model::TopDown(m) => CheckpointKind::TopDown {
                n_rx: m.n_rx,
                n_tx: m.n_tx,
                limit: m.limit,
            },
            Model::BottomUp(m) => CheckpointKind::BottomUp { n_tx: m.n_tx },
        };
        Self {
            format_version: FORMAT_VERSION,
            kind,
            spec: model.spec().clone(),
            standardizer: model.standardizer(),
            layers: model.weights().layers.clone(),
            meta,
        }
    }

    /// Rebuilds the model, checking every shape against the spec.
    pub fn model(&self) -> Result<Model> {
        self.spec.validate()?;
        self.standardizer.validate()?;
        let weights = Weights {
            layers: self.layers.clone(),
        };
        weights.check_spec(&self.spec)?;
        match self.kind {
            CheckpointKind::TopDown { n_rx, n_tx, limit } => Ok(Model::TopDown(TopDownModel::new(
                self.spec.clone(),
                weights,
                self.standardizer,
                n_rx,
                n_tx,
                limit,
            )?)),
            CheckpointKind::BottomUp { n_tx } => Ok(Model::BottomUp(BottomUpModel::new(
                self.spec.clone(),
                weights,
                self.standardizer,
                n_tx,
            )?)),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        if !self.meta.best_val_loss.is_finite() {
            return Err(Error::NonFinite("best_val_loss".into()));
        }
        Ok(serde_json::to_string(self)?)
    }

    /// Parses and fully validates a checkpoint; nothing is returned unless
    /// the whole model can be rebuilt.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Format("checkpoint has no integer format_version".into()))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(Error::Version {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: FORMAT_VERSION,
            });
        }
        let ckpt: Checkpoint = serde_json::from_value(value)?;
        ckpt.model()?;
        Ok(ckpt)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let json = ckpt.to_json()?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    Checkpoint::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::default_bottomup_spec;
    use crate::snn::init_weights;

    fn sample() -> Checkpoint {
        let spec = default_bottomup_spec(3);
        let weights = init_weights(&spec, 17);
        let model = Model::BottomUp(
            BottomUpModel::new(spec, weights, Standardizer { mu: 1.0 / 3.0, sigma: 0.1 }, 3).unwrap(),
        );
        Checkpoint::from_model(
            &model,
            CheckpointMeta {
                best_epoch: 4,
                best_val_loss: 0.123_456_789_012_345_67,
                config_digest: "abc".into(),
            },
        )
    }

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        for (a, b) in back.layers.iter().flat_map(|l| &l.w).zip(c.layers.iter().flat_map(|l| &l.w)) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn top_level_fields_are_exact() {
        let v: serde_json::Value = serde_json::from_str(&sample().to_json().unwrap()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["format_version", "kind", "layers", "meta", "spec", "standardizer"]);
        assert!(v["layers"][0]["w"].is_array() && v["layers"][0]["b"].is_array());
        assert_eq!(v["kind"]["model"], "bottomup");
    }

    #[test]
    fn unknown_version_rejected() {
        let json = sample().to_json().unwrap().replace("\"format_version\":1", "\"format_version\":7");
        assert!(matches!(Checkpoint::from_json(&json), Err(Error::Version { found: 7, .. })));
    }

    #[test]
    fn truncated_file_rejected() {
        let json = sample().to_json().unwrap();
        let cut = &json[..json.len() / 2];
        assert!(matches!(Checkpoint::from_json(cut), Err(Error::Format(_))));
    }

    #[test]
    fn inconsistent_shapes_rejected() {
        let mut c = sample();
        c.layers[1].w.pop();
        let json = serde_json::to_string(&c).unwrap();
        assert!(Checkpoint::from_json(&json).is_err());

        let mut c = sample();
        c.kind = CheckpointKind::BottomUp { n_tx: 4 };
        let json = serde_json::to_string(&c).unwrap();
        assert!(Checkpoint::from_json(&json).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&sample(), &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), sample());
    }
}
