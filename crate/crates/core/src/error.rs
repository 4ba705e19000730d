use thiserror::Error;

/// Every fallible operation in the crate reports one of these.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("Newton iteration did not converge after {iterations} iterations (residual history: {history:?})")]
    NewtonDivergence { iterations: usize, history: Vec<f64> },

    #[error("mass lost to clipping: {0:e} exceeds 1e-12")]
    ClippingMassLoss(f64),

    #[error("trajectory left the domain by {distance:e} (tolerance {tolerance:e})")]
    FlowEscape { distance: f64, tolerance: f64 },

    #[error("CFL violated: dt*|V|/h = {ratio} > 0.5")]
    Cfl { ratio: f64 },

    #[error("Sinkhorn did not converge after {iterations} iterations (marginal error {marginal_error:e})")]
    SinkhornDivergence { iterations: usize, marginal_error: f64 },

    #[error("transport instance too large: {atoms} atoms (limit {limit})")]
    TooManyAtoms { atoms: usize, limit: usize },

    #[error("unknown theorem id `{0}`")]
    UnknownTheorem(String),

    #[error("unknown figure id `{0}`")]
    UnknownFigure(String),

    #[error("parameters outside the figure regime: {0}")]
    Regime(String),

    #[error("no admissible reduction found: {0}")]
    NoReduction(String),

    #[error("negative concentration {0:e} below -1e-12")]
    NegativeConcentration(f64),

    /// `line` is 1-based; 0 means the value did not come from a file line.
    #[error("config error{}: {message}", line_suffix(*.line))]
    Config { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

fn line_suffix(line: usize) -> String {
    if line == 0 { String::new() } else { format!(" at line {line}") }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
