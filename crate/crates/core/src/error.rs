use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("{what} is not unitary (max deviation {deviation:e})")]
    NotUnitary { what: &'static str, deviation: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("step {step:e} exceeds the stability limit {limit:e}")]
    StepTooLarge { step: f64, limit: f64 },

    #[error("jump step invalid: dt * max rate = {0} exceeds 0.05")]
    StepValidity(f64),

    #[error("integration failure: trace drift {drift:e} at t = {time}")]
    TraceDrift { drift: f64, time: f64 },

    #[error("truncation leak: top Fock population {population:e} of factor {factor} exceeds 1e-4")]
    TruncationLeak { factor: usize, population: f64 },

    #[error("degenerate state: every channel probability is below 1e-15")]
    DegenerateState,

    #[error("trajectory {index}: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that arise while evolving a valid input
    /// (as opposed to rejecting the input itself).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::TraceDrift { .. } | Error::TruncationLeak { .. } | Error::DegenerateState => true,
            Error::Trajectory { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
