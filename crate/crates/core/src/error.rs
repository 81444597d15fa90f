use thiserror::Error;

use crate::sim::CappedRun;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The inputs are valid but describe a regime this crate does not handle.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Adaptive quadrature stopped before reaching the requested tolerance.
    #[error("quadrature did not converge: achieved error {achieved:e} against requested {requested:e} after {subdivisions} subdivisions")]
    NotConverged {
        value: f64,
        achieved: f64,
        requested: f64,
        subdivisions: usize,
    },

    /// A quantity that the caller asked for diverges.
    #[error("divergent: {0}")]
    Divergent(String),

    /// The population outgrew `max_particles`; carries everything computed before the cap.
    #[error("population exceeded max_particles = {} at t = {}", .0.max_particles, .0.cap_time)]
    Capped(Box<CappedRun>),
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
