//! Command-line front end: `generate`, `label`, `train`, `eval`, `oracle`.
//!
//! Exit codes: 0 success, 2 config/argument error, 3 infeasible instance,
//! 4 I/O or format error. Failures print one line to stderr of the form
//! `error: code=<n> kind=<kind> msg=<text>`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::eval::{evaluate, write_report};
use crate::models::ModelKind;
use crate::oracle::{default_limit, label_dataset, parse_labeled_jsonl, solve_optimal, write_labeled_jsonl};
use crate::scenario::{generate_dataset, Dataset, RateMatrix, ScenarioConfig};
use crate::training::{load_checkpoint, save_checkpoint, train, TrainConfig};

pub const SEED_ENV: &str = "SPIKE_ASSOC_SEED";

#[derive(Debug, Parser)]
#[command(name = "spike-assoc", version, about = "SNN user association pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Topdown,
    Bottomup,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Topdown => ModelKind::TopDown,
            ModelArg::Bottomup => ModelKind::BottomUp,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a scenario and write one rate matrix per time step (JSON Lines).
    Generate {
        /// Scenario config (JSON). Built-in default scenario when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Attach exhaustive-search optimal associations to a dataset.
    Label {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-transmitter capacity. Defaults to ceil(N/M)+1.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Train a model on labeled data and write the best checkpoint.
    Train {
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training config (JSON); missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Per-epoch history as CSV.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint against labeled data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        json: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Solve one instance given inline as a JSON matrix.
    Oracle {
        #[arg(long)]
        rates: String,
        #[arg(long)]
        limit: usize,
    },
}

struct Failure {
    code: i32,
    kind: &'static str,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Config(_) => (2, "config"),
            Error::NoTraining => (2, "config"),
            Error::Infeasible { .. } => (3, "infeasible"),
            Error::Io(_) => (4, "io"),
            Error::Format(_) | Error::Version { .. } => (4, "format"),
            Error::Shape(_) => (4, "shape"),
            Error::NonFinite(_) => (4, "non_finite"),
            Error::DegenerateGeometry(_) => (2, "geometry"),
        };
        Failure {
            code,
            kind,
            msg: e.to_string(),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure {
        code: 4,
        kind: "io",
        msg: format!("{}: {e}", path.display()),
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure {
        code: 4,
        kind: "io",
        msg: format!("{}: {e}", path.display()),
    })
}

fn config_failure(msg: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        kind: "config",
        msg: msg.into(),
    }
}

/// Seed precedence: `--seed`, then the config file, then `SPIKE_ASSOC_SEED`.
fn resolve_seed(flag: Option<u64>, file_has_seed: bool) -> Result<Option<u64>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    if file_has_seed {
        return Ok(None);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| config_failure(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Parses a JSON config, tolerating a missing `seed` (filled from `seed`).
fn parse_config<T: serde::de::DeserializeOwned>(text: &str, fallback_seed: u64) -> Result<(T, bool), Failure> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| config_failure(format!("config: {e}")))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| config_failure("config must be a JSON object"))?;
    let has_seed = obj.contains_key("seed");
    if !has_seed {
        obj.insert("seed".into(), fallback_seed.into());
    }
    let cfg = serde_json::from_value(value).map_err(|e| config_failure(format!("config: {e}")))?;
    Ok((cfg, has_seed))
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(config_failure("--jobs must be >= 1")),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| config_failure(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn run_command<O: Write>(cmd: Command, out: &mut O) -> Result<(), Failure> {
    match cmd {
        Command::Generate {
            config,
            out: path,
            seed,
            jobs,
        } => {
            let (mut cfg, has_seed) = match &config {
                Some(p) => parse_config::<ScenarioConfig>(&read(p)?, 0)?,
                None => (ScenarioConfig::default(), false),
            };
            if let Some(s) = resolve_seed(seed, has_seed)? {
                cfg.seed = s;
            }
            cfg.validate()?;
            let ds = with_jobs(jobs, || generate_dataset(&cfg))??;
            write(&path, ds.to_jsonl().as_bytes())
        }
        Command::Label {
            input,
            out: path,
            limit,
            jobs,
        } => {
            let ds = Dataset::from_jsonl(&read(&input)?)?;
            let limit = match (limit, ds.instances.first()) {
                (Some(l), _) => l,
                (None, Some(first)) => default_limit(first.rates.n_rx(), first.rates.n_tx()),
                (None, None) => 0,
            };
            let labeled = with_jobs(jobs, || label_dataset(&ds, limit))??;
            let mut buf = Vec::new();
            write_labeled_jsonl(&labeled, &mut buf)?;
            write(&path, &buf)
        }
        Command::Train {
            model,
            input,
            out: path,
            config,
            history,
            seed,
        } => {
            let (mut cfg, has_seed) = match &config {
                Some(p) => parse_config::<TrainConfig>(&read(p)?, 0)?,
                None => (TrainConfig::default(), false),
            };
            if let Some(s) = resolve_seed(seed, has_seed)? {
                cfg.seed = s;
            }
            cfg.validate()?;
            let data = parse_labeled_jsonl(&read(&input)?)?;
            let (ckpt, hist) = train(model.into(), &data, &cfg)?;
            save_checkpoint(&ckpt, &path)?;
            if let Some(h) = history {
                let mut buf = Vec::new();
                hist.write_csv(&mut buf)?;
                write(&h, &buf)?;
            }
            Ok(())
        }
        Command::Eval {
            checkpoint,
            input,
            json,
            csv,
            jobs,
        } => {
            let model = load_checkpoint(&checkpoint)?.model()?;
            let data = parse_labeled_jsonl(&read(&input)?)?;
            let report = with_jobs(jobs, || evaluate(&model, &data))??;
            write_report(&report, &json, &csv)?;
            Ok(())
        }
        Command::Oracle { rates, limit } => {
            let rows: Vec<Vec<f64>> =
                serde_json::from_str(&rates).map_err(|e| config_failure(format!("--rates: {e}")))?;
            let rates = RateMatrix::from_rows(rows).map_err(|e| config_failure(format!("--rates: {e}")))?;
            let (assign, total) = solve_optimal(&rates, limit)?;
            let assign = serde_json::to_string(&assign).expect("association serializes");
            writeln!(out, "{assign} {total}").map_err(|e| Failure {
                code: 4,
                kind: "io",
                msg: e.to_string(),
            })
        }
    }
}

/// Runs the CLI with explicit output streams and returns the exit code.
pub fn run_with<I, T, O, E>(args: I, out: &mut O, err: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    O: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("invalid arguments");
            let first = first.strip_prefix("error: ").unwrap_or(first);
            let _ = writeln!(err, "error: code=2 kind=argument msg={first}");
            return 2;
        }
    };
    match run_command(cli.command, out) {
        Ok(()) => 0,
        Err(f) => {
            let msg = f.msg.replace('\n', " ");
            let _ = writeln!(err, "error: code={} kind={} msg={msg}", f.code, f.kind);
            f.code
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
