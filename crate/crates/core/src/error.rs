use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no plane features extracted at root size {root_size} m")]
    NoFeatures { root_size: f64 },

    #[error("all {count} plane features have a degenerate eigengap")]
    AllFeaturesDegenerate { count: usize },

    #[error("timestamp {t} is not covered by the encoder stream")]
    UncoveredTimestamp { t: f64 },

    #[error("scan produced no points")]
    EmptyScan,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
