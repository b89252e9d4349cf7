use thiserror::Error;

/// Errors raised across the design, sampling, analysis and persistence layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("required number of instances exceeds the cap of {cap}")]
    Overflow { cap: u64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("positivity violation: {0}")]
    Positivity(String),

    #[error("run of algorithm `{algorithm}` on instance `{instance}` (seed {seed}) failed: {message}")]
    Run {
        algorithm: String,
        instance: String,
        seed: u64,
        message: String,
    },

    #[error("incomplete design, missing cells: {}", format_cells(.0))]
    IncompleteDesign(Vec<(String, String)>),

    #[error("instance `{instance}`: {source}")]
    Instance {
        instance: String,
        #[source]
        source: Box<Error>,
    },

    #[error("state error: {0}")]
    State(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_cells(cells: &[(String, String)]) -> String {
    cells
        .iter()
        .map(|(a, i)| format!("({a}, {i})"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    /// Process exit code: 1 for usage and configuration problems, 2 for
    /// failures at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::State(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
