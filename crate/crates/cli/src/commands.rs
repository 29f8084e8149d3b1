//! The work behind each CLI command, kept free of argument parsing and
//! process exit so it can be tested directly.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use gam_core::evalharness::{self, EvalConfig, EvalMode, MetricReport};
use gam_core::memorizer::MemorizeError;
use gam_core::pagestore::persist::{self, PersistError};
use gam_core::researcher::{ResearchError, ResearchTrace};
use gam_core::{Engine, FinalContext, ModelBackend, Request, Session};
use thiserror::Error;

use crate::config::{ConfigError, EngineConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("row {row}: {source}")]
    Session { row: usize, source: MemorizeError },
    #[error("store {path}: {source}")]
    Store { path: PathBuf, source: PersistError },
    #[error("no store at {0}")]
    MissingStore(PathBuf),
    #[error("{error} (trace written to {trace})")]
    Research {
        error: ResearchError,
        trace: PathBuf,
    },
    #[error("{0}")]
    Dataset(String),
    #[error(transparent)]
    Eval(#[from] evalharness::EvalError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MalformedRow { .. } | CliError::Dataset(_) => EXIT_INPUT,
            CliError::Session { source, .. } => match source {
                MemorizeError::OutOfOrderSession { .. } | MemorizeError::EmptySession(_) => {
                    EXIT_INPUT
                }
                MemorizeError::Backend(_) | MemorizeError::EmptyCompletion => EXIT_BACKEND,
                _ => EXIT_FAILURE,
            },
            CliError::Research { error, .. } => match error {
                ResearchError::Prompt(_) => EXIT_FAILURE,
                _ => EXIT_BACKEND,
            },
            CliError::Eval(evalharness::EvalError::Backend(_)) => EXIT_BACKEND,
            _ => EXIT_FAILURE,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses every row of a sessions file up front so that a bad row aborts
/// before anything is ingested. Rows are numbered from 1; blank lines are
/// skipped but still counted. Each session comes back with its row.
pub fn read_sessions(path: &Path) -> Result<Vec<(usize, Session)>, CliError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut sessions = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let session: Session = serde_json::from_str(&line).map_err(|e| CliError::MalformedRow {
            row: i + 1,
            message: e.to_string(),
        })?;
        sessions.push((i + 1, session));
    }
    Ok(sessions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestSummary {
    pub sessions: usize,
    pub pages: usize,
    pub memos: usize,
}

impl std::fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} sessions, {} pages, {} memos",
            self.sessions, self.pages, self.memos
        )
    }
}

fn open_engine(config: &EngineConfig) -> Result<Engine, CliError> {
    Engine::open_or_create(&config.store_path, config.engine_settings()).map_err(|source| {
        CliError::Store {
            path: config.store_path.clone(),
            source,
        }
    })
}

/// Ingests every session in `sessions_file`. The store on disk is only
/// rewritten once all of them have gone through.
pub fn ingest(
    config: &EngineConfig,
    sessions_file: &Path,
    backend: &dyn ModelBackend,
) -> Result<IngestSummary, CliError> {
    let rows = read_sessions(sessions_file)?;
    let mut engine = open_engine(config)?;
    let (pages_before, memos_before) = (engine.state.store.len(), engine.state.memory.len());
    for (row, session) in &rows {
        engine
            .ingest(session, backend)
            .map_err(|source| CliError::Session { row: *row, source })?;
    }
    std::fs::create_dir_all(&config.store_path).map_err(io_err(&config.store_path))?;
    engine
        .save(&config.store_path)
        .map_err(|source| CliError::Store {
            path: config.store_path.clone(),
            source,
        })?;
    Ok(IngestSummary {
        sessions: rows.len(),
        pages: engine.state.store.len() - pages_before,
        memos: engine.state.memory.len() - memos_before,
    })
}

pub fn traces_dir(store: &Path) -> PathBuf {
    store.join("traces")
}

/// Writes `trace` as the next numbered file under `<store>/traces`.
pub fn write_trace(store: &Path, trace: &ResearchTrace) -> Result<PathBuf, CliError> {
    let dir = traces_dir(store);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let taken = std::fs::read_dir(&dir).map_err(io_err(&dir))?.count();
    let mut n = taken;
    let path = loop {
        let candidate = dir.join(format!("trace-{n:06}.json"));
        if !candidate.exists() {
            break candidate;
        }
        n += 1;
    };
    std::fs::write(&path, trace.to_json()).map_err(io_err(&path))?;
    Ok(path)
}

/// Runs one research request against the stored state. The trace is
/// written whether or not the run succeeds.
pub fn research(
    config: &EngineConfig,
    request: &str,
    backend: &dyn ModelBackend,
) -> Result<(FinalContext, PathBuf), CliError> {
    if !persist::exists(&config.store_path) {
        return Err(CliError::MissingStore(config.store_path.clone()));
    }
    let engine = open_engine(config)?;
    match engine.research(&Request::new(request), backend) {
        Ok(out) => {
            let path = write_trace(&config.store_path, &out.trace)?;
            Ok((out, path))
        }
        Err(failure) => {
            let trace = write_trace(&config.store_path, &failure.trace)?;
            Err(CliError::Research {
                error: failure.error,
                trace,
            })
        }
    }
}

/// Scores `dataset` in `mode` and writes the report to `report_path`.
pub fn eval(
    config: &EngineConfig,
    dataset: &Path,
    mode: EvalMode,
    report_path: &Path,
    backend: &dyn ModelBackend,
) -> Result<MetricReport, CliError> {
    let file = std::fs::File::open(dataset).map_err(io_err(dataset))?;
    let examples = evalharness::load_dataset(BufReader::new(file))
        .map_err(|e| CliError::Dataset(format!("{}: {e}", dataset.display())))?;
    let eval_config = EvalConfig {
        engine: config.engine_settings(),
        ..EvalConfig::default()
    };
    let report = evalharness::run_benchmark(&examples, mode, &eval_config, backend)?;
    if let Some(parent) = report_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(report_path, report.to_json()).map_err(io_err(report_path))?;
    Ok(report)
}
