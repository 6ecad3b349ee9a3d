use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "insufficient pilots: {pilots} pilot slots cannot be split evenly among {users} users"
    )]
    InsufficientPilots { pilots: usize, users: usize },

    #[error("degenerate channel estimate for user {user}")]
    DegenerateEstimate { user: usize },

    #[error("symbol index {index} out of range for {symbols} symbols")]
    SymbolOutOfRange { index: usize, symbols: usize },

    #[error("histogram is empty")]
    EmptyHistogram,

    #[error("critical SNR search failed: {0}")]
    Bracketing(String),

    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
