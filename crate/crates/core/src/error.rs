use thiserror::Error;

/// Errors raised by the numerical routines and the experiment harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("argument {0} coincides with an atom")]
    Pole(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no bracket for the edge equation: {0}")]
    NoBracket(String),

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("point {0} + {1}i lies outside the admissible region")]
    DomainExit(f64, f64),

    #[error("particles collided (gap {gap:e} at index {index})")]
    Collision { index: usize, gap: f64 },

    #[error("step failed at t = {time}: substep floor reached")]
    StepFailure { time: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
