use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate network: {0}")]
    DegenerateNetwork(String),

    #[error("no stable post-fault equilibrium: {0}")]
    NoEquilibrium(String),

    /// The linear part of the expanded field has an eigenvalue with
    /// non-negative real part, so no quadratic Zubov term exists.
    #[error("linearized field is not Hurwitz (largest real part {max_real:.3e})")]
    NotHurwitz { max_real: f64 },

    #[error("resonant Zubov operator at degree {degree} (condition number {condition:.3e})")]
    Resonance { degree: usize, condition: f64 },

    #[error("phi is not positive definite (smallest eigenvalue {0:.3e})")]
    PhiNotPositiveDefinite(f64),

    #[error("traditional energy baseline unavailable: {0}")]
    BaselineUnavailable(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
