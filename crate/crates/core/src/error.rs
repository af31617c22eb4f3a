use std::fmt;

/// Optimization stage that produced a failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    ActiveBeamforming,
    PowerAllocation,
    PassiveBeamforming,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::ActiveBeamforming => "stage1-beamforming",
            Stage::PowerAllocation => "stage1-power",
            Stage::PassiveBeamforming => "stage2-passive",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("infeasible configuration: {0}")]
    InfeasibleConfiguration(String),

    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),

    #[error("degenerate polynomial: all coefficients are zero")]
    DegeneratePolynomial,

    #[error("reflection extraction degenerate: homogenizing coordinate {0:e} is too small")]
    ExtractionDegenerate(f64),

    #[error("{stage} infeasible in cluster {cluster}: {constraint}")]
    Infeasible {
        stage: Stage,
        cluster: usize,
        constraint: String,
    },

    #[error("{stage} did not converge in cluster {cluster} after {iterations} iterations")]
    NonConvergence {
        stage: Stage,
        cluster: usize,
        iterations: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("seed {seed}: {source}")]
    Seeded {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Strips seed wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Seeded { source, .. } => source.root(),
            other => other,
        }
    }

    /// Short machine-readable tag used in CSV status columns.
    pub fn status_tag(&self) -> String {
        match self.root() {
            Error::Infeasible { stage, constraint, .. } => {
                format!("infeasible:{stage}:{}", constraint.split_whitespace().next().unwrap_or(""))
            }
            Error::NonConvergence { stage, .. } => format!("nonconvergence:{stage}"),
            Error::DegenerateChannel(_) => "degenerate-channel".to_string(),
            Error::InfeasibleConfiguration(_) => "infeasible-configuration".to_string(),
            Error::ExtractionDegenerate(_) => "extraction-degenerate".to_string(),
            _ => "error".to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
