use std::path::PathBuf;

use thiserror::Error;

use crate::dgm::DgmError;
use crate::estimator::EstimatorError;
use crate::experiment::ExperimentError;
use crate::intensity::IntensityError;
use crate::panel::PanelError;
use crate::treatment::TreatmentError;
use crate::weights::WeightError;

/// Any failure surfaced by the library's file-level entry points.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Dgm(#[from] DgmError),
    #[error(transparent)]
    Intensity(#[from] IntensityError),
    #[error(transparent)]
    Treatment(#[from] TreatmentError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("{path}: schema mismatch{}: {message}", line_suffix(*.line))]
    SchemaMismatch {
        path: String,
        line: Option<u64>,
        message: String,
    },
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn line_suffix(line: Option<u64>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_default()
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for invalid input, 3 for numerical failure, 4 for IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Panel(_) | Error::Dgm(_) | Error::SchemaMismatch { .. } | Error::Config { .. } => 2,
            Error::Experiment(ExperimentError::Invalid(_) | ExperimentError::Dgm(_)) => 2,
            Error::Estimator(EstimatorError::Panel(_)) => 2,
            Error::Intensity(IntensityError::InvalidSpec(_)) => 2,
            Error::Io { .. } => 4,
            _ => 3,
        }
    }
}
