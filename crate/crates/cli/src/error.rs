use std::path::{Path, PathBuf};

use thiserror::Error;
use tonal_core::analysis::AnalysisError;
use tonal_core::generation::GenerationError;
use tonal_core::midi_io::MidiError;
use tonal_core::tokenizer::TokenizerError;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flag values or combinations; exit code 1.
    #[error("{0}")]
    Usage(String),
    /// Bad input data or a failed pipeline step; exit code 2.
    #[error("{0}")]
    Data(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    File { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }

    pub fn in_file(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::File {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }
}

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl From<GenerationError> for CliError {
    fn from(e: GenerationError) -> Self {
        match e {
            GenerationError::Request(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MidiError> for CliError {
    fn from(e: MidiError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
