use thiserror::Error;

/// Errors raised by the simulator library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("radial distance {r} mm outside aperture radius {aperture} mm")]
    OutOfAperture { r: f64, aperture: f64 },

    #[error("total internal reflection (sin of incidence {sin_incidence:.6}, n1={n1}, n2={n2})")]
    TotalInternalReflection { sin_incidence: f64, n1: f64, n2: f64 },

    #[error("degenerate emission cone: {0}")]
    DegenerateCone(String),

    #[error("element index {index} out of range for {count} elements")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("channel matrix is {rows}x{cols}; diagonal dominance needs a square matrix (map receivers with sigproc::select_receivers)")]
    NotSquare { rows: usize, cols: usize },

    #[error("channel matrix has no nonzero entry")]
    ZeroMatrix,

    #[error("transmitter {0} reaches no receiver")]
    EmptySubset(usize),

    #[error("zero combining denominator for transmitter {0}")]
    ZeroDenominator(usize),

    #[error("infeasible starting point: {0}")]
    InfeasibleStart(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
