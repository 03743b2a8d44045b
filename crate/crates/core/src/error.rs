use crate::C64;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("truncation leak {leak:.3e} at gamma = {gamma} exceeds limit {limit:.3e}; increase the truncation")]
    TruncationLeak { gamma: C64, leak: f64, limit: f64 },

    #[error("population R_{index} = {value:.3e} is negative beyond rounding noise")]
    NegativePopulation { index: usize, value: f64 },

    #[error(
        "all model probabilities are below the floor {floor:e}; data and model are inconsistent"
    )]
    DegenerateModel { floor: f64 },

    #[error("records target different displacements: {first} vs {other}")]
    GammaMismatch { first: C64, other: C64 },

    #[error("{settings} settings cannot constrain {unknowns} unknowns")]
    TooFewSettings { settings: usize, unknowns: usize },

    #[error("{failed} of {total} grid points failed")]
    PointFailures { failed: usize, total: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("data error: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) => 2,
            Error::Data { .. } | Error::Input(_) | Error::Io(_) | Error::DimensionMismatch(_) => 3,
            _ => 4,
        }
    }
}
