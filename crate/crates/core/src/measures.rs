//! Drifts of `(log S, U)` under the pricing measures and the Radon–Nikodým
//! weights linking them to the risk-neutral measure.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CocoError, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasureTag {
    /// Risk-neutral measure.
    #[serde(rename = "P_STAR")]
    PStar,
    /// T-forward measure (zero-coupon bond numeraire).
    #[serde(rename = "P_T")]
    PT,
    /// Share measure (stock numeraire).
    #[serde(rename = "P_S")]
    PS,
}

impl MeasureTag {
    /// With constant rates the forward measure coincides with the risk-neutral one.
    pub fn compatible_with(self, other: MeasureTag) -> bool {
        use MeasureTag::*;
        matches!(
            (self, other),
            (PStar | PT, PStar | PT) | (PS, PS)
        )
    }
}

impl fmt::Display for MeasureTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeasureTag::PStar => "P_STAR",
            MeasureTag::PT => "P_T",
            MeasureTag::PS => "P_S",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureDrifts {
    pub measure: MeasureTag,
    /// Drift of `log S` per year.
    pub mu_s: f64,
    /// Drift of `U` per year.
    pub mu_u: f64,
}

impl MeasureDrifts {
    /// Drift of the part of a `U` increment not explained by `rho * dlog S`.
    pub fn residual_drift(&self, rho: f64) -> f64 {
        self.mu_u - rho * self.mu_s
    }
}

pub fn drifts_under(measure: MeasureTag, p: &ModelParams) -> MeasureDrifts {
    let var = p.sigma * p.sigma;
    match measure {
        MeasureTag::PStar | MeasureTag::PT => MeasureDrifts {
            measure,
            mu_s: p.r - 0.5 * var,
            mu_u: (p.a - 0.5) * var,
        },
        MeasureTag::PS => MeasureDrifts {
            measure,
            mu_s: p.r + 0.5 * var,
            mu_u: (p.a - 0.5 + p.rho) * var,
        },
    }
}

/// `dQ/dP*` for a stock path sampled over `[0, T]`, `T = p.maturity`.
///
/// Only the endpoints matter: the Brownian value `W*_T` is recovered from the
/// terminal log-return. Under constant rates the forward-measure weight is 1.
pub fn rn_weight(measure: MeasureTag, path: &[f64], p: &ModelParams) -> Result<f64> {
    if path.len() < 2 {
        return Err(CocoError::domain("rn_weight needs a path with at least two points"));
    }
    if let Some(bad) = path.iter().find(|&&s| !(s > 0.0)) {
        return Err(CocoError::domain(format!(
            "stock path values must be positive, got {bad}"
        )));
    }
    rn_weight_between(measure, path[0], path[path.len() - 1], p.maturity, p)
}

/// Weight of the measure change over an interval of length `elapsed` with
/// stock moving from `start` to `end`.
pub fn rn_weight_between(
    measure: MeasureTag,
    start: f64,
    end: f64,
    elapsed: f64,
    p: &ModelParams,
) -> Result<f64> {
    match measure {
        MeasureTag::PStar | MeasureTag::PT => Ok(1.0),
        MeasureTag::PS => {
            if !(start > 0.0 && end > 0.0) {
                return Err(CocoError::domain("stock values must be positive"));
            }
            let var = p.sigma * p.sigma;
            let w = ((end / start).ln() - (p.r - 0.5 * var) * elapsed) / p.sigma;
            Ok((p.sigma * w - 0.5 * var * elapsed).exp())
        }
    }
}
