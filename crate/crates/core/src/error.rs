use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("partition needs {requested} channels but only {available} are available")]
    PartitionSize { requested: usize, available: usize },

    #[error("invalid trial split: {0}")]
    Split(String),

    #[error("invalid k-shot plan: {0}")]
    Plan(String),

    #[error("k-out neuron {neuron} is silent across all train trials")]
    UnusableNeuron { neuron: usize },

    #[error("dataset format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("degenerate likelihood (zero under every state){}", trial_suffix(.trial, .time))]
    DegenerateLikelihood { trial: Option<usize>, time: usize },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("channel {channel} is not covered by the readout")]
    Index { channel: usize },

    #[error("covariance error: {0}")]
    Covariance(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("every held-out neuron is silent in the evaluation trials")]
    EmptyScore,

    #[error("singular regime: {0}")]
    Singular(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("unknown {kind} '{name}'")]
    UnknownStrategy { kind: &'static str, name: String },
}

fn trial_suffix(trial: &Option<usize>, time: &usize) -> String {
    match trial {
        Some(i) => format!(" in trial {i} at time {time}"),
        None => format!(" at time {time}"),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad user input rather than by numerics or I/O.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Invalid(_)
                | Error::PartitionSize { .. }
                | Error::Split(_)
                | Error::Plan(_)
                | Error::UnknownStrategy { .. }
                | Error::Json(_)
                | Error::Format(_)
        )
    }
}
