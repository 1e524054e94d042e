use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("infeasible instance{}: {n_rx} receivers exceed {n_tx} transmitters x limit {limit}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Infeasible {
        step: Option<usize>,
        n_rx: usize,
        n_tx: usize,
        limit: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("no training performed: epochs_max is 0")]
    NoTraining,

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported checkpoint format_version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
