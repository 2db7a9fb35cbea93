use thiserror::Error;

use crate::measures::MeasureTag;

pub type Result<T> = std::result::Result<T, CocoError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CocoError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter {name} = {value}: {constraint}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("transition kernel is degenerate for rho = {rho}")]
    DegenerateKernel { rho: f64 },

    #[error("fundamental value {value} is at or below the conversion barrier {barrier}")]
    AlreadyConverted { value: f64, barrier: f64 },

    #[error("posterior collapse at t = {time}: normalization {normalization:e} (observations incompatible with survival)")]
    PosteriorCollapse { time: f64, normalization: f64 },

    #[error("posterior built under {posterior} cannot answer a {requested} query")]
    MeasureMismatch {
        posterior: MeasureTag,
        requested: MeasureTag,
    },

    #[error("oracle starvation: {accepted} of {simulated} paths accepted; increase n_paths")]
    OracleStarvation { accepted: u64, simulated: u64 },

    #[error("configuration error: {0}")]
    Config(String),
}

impl CocoError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        CocoError::Domain(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric_failure(&self) -> bool {
        matches!(
            self,
            CocoError::PosteriorCollapse { .. } | CocoError::OracleStarvation { .. }
        )
    }
}
