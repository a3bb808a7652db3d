use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage an error originated from, attached by [`Error::at`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    NullFit,
    Projection,
    Dimension,
    Statistic,
    Bootstrap,
    Ingest,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::NullFit => "null-model fit",
            Stage::Projection => "projection estimate",
            Stage::Dimension => "structural dimension",
            Stage::Statistic => "test statistic",
            Stage::Bootstrap => "bootstrap",
            Stage::Ingest => "data ingestion",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}", format_data_error(.row, .column, .message))]
    Data {
        row: Option<usize>,
        column: Option<String>,
        message: String,
    },

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("optimizer did not converge after {restarts} restarts (best rss {best_rss:.6e})")]
    Convergence {
        restarts: usize,
        best_params: Vec<f64>,
        best_rss: f64,
    },

    #[error("degenerate bandwidth: {0}")]
    DegenerateBandwidth(String),

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("bootstrap unstable: {failed} of {total} resamples failed")]
    BootstrapUnstable { failed: usize, total: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_data_error(row: &Option<usize>, column: &Option<String>, message: &str) -> String {
    match (row, column) {
        (Some(r), Some(c)) => format!("data error at row {r}, column '{c}': {message}"),
        (Some(r), None) => format!("data error at row {r}: {message}"),
        (None, Some(c)) => format!("data error in column '{c}': {message}"),
        (None, None) => format!("data error: {message}"),
    }
}

impl Error {
    pub fn data(message: impl Into<String>) -> Self {
        Error::Data {
            row: None,
            column: None,
            message: message.into(),
        }
    }

    /// Tag the error with the stage it came from. Already-tagged errors keep
    /// their innermost stage.
    pub fn at(self, stage: Stage) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// The error with any stage tags stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::InvalidArgument(_) | Error::Config(_) => 2,
            Error::Data { .. } | Error::Io(_) => 3,
            _ => 4,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn at(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn at(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
