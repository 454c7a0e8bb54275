//! Study harness around the detection cascade: cohort manifests, parallel
//! evaluation with stratified metrics, lead-time and reader-study analysis,
//! report emission and the HTTP service behind the reader workstation.

pub mod cohort;
pub mod config;
pub mod emit;
pub mod evaluate;
pub mod leadtime;
pub mod manifest;
pub mod reader;
pub mod service;
pub mod strata;

use std::path::{Path, PathBuf};

use panscreen_core::cascade::CascadeError;
use panscreen_core::phantom::PhantomError;
use panscreen_core::stats::StatsError;
use panscreen_core::volume::nifti::NiftiError;
use thiserror::Error;

pub use cohort::{generate_cohort, load_case, CohortMeta};
pub use config::StudyConfig;
pub use emit::emit_reports;
pub use evaluate::{evaluate_cohort, CaseFailure, Evaluation};
pub use leadtime::{lead_time_days, lead_time_summary, LeadTimeSummary};
pub use manifest::{Manifest, ManifestRow, RowIssue};
pub use reader::{reader_analysis, PositiveCall, ReaderReport, ReaderResponse};
pub use strata::{stratified_report, StratifiedReport};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("invalid manifest {path}:\n{}", issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Manifest { path: PathBuf, issues: Vec<RowIssue> },
    #[error("{path}: {source}")]
    Nifti {
        path: PathBuf,
        #[source]
        source: NiftiError,
    },
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("invalid reader responses:\n{}", .0.iter().map(|m| format!("  {m}")).collect::<Vec<_>>().join("\n"))]
    Responses(Vec<String>),
    #[error("invalid config: {0}")]
    Config(String),
}

impl StudyError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        StudyError::Io { path: path.to_path_buf(), source }
    }

    pub fn nifti(path: &Path, source: NiftiError) -> Self {
        StudyError::Nifti { path: path.to_path_buf(), source }
    }

    pub(crate) fn csv(e: csv::Error) -> Self {
        StudyError::Format(e.to_string())
    }
}

/// Write `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), StudyError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| StudyError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| StudyError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, StudyError> {
    let text = std::fs::read_to_string(path).map_err(|e| StudyError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| StudyError::Format(format!("{}: {e}", path.display())))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), StudyError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| StudyError::Format(e.to_string()))?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

/// Bounded rayon pool; `threads == 0` uses rayon's default size.
pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool, StudyError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| StudyError::Config(format!("thread pool: {e}")))
}
