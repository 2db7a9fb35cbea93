//! Pricing engine for contingent convertible bonds whose conversion trigger is a
//! partially observed fundamental process.
//!
//! The fundamental value `U` is revealed exactly only at scheduled update times;
//! in between, the market sees stock prices that are correlated with `U`. The
//! crate is organised as:
//!
//! - [`model`]: model constants, update/observation timeline, covenant barrier.
//! - [`measures`]: drifts under the risk-neutral, forward and share measures and
//!   Radon–Nikodým weights.
//! - [`hitting`]: closed-form first-passage quantities for drifted Brownian motion.
//! - [`filter`]: grid-based Bayes recursion for the law of `U_t` given survival and
//!   the stock observations since the last update.
//! - [`pricing`]: conditional survival, the CoCo price and the compensator of the
//!   conditional conversion probability.
//! - [`oracle`]: Monte Carlo engines that verify every analytic component.
//! - [`scenario`]: reproducible stock scenarios and hidden fundamental paths.

// `!(x > 0.0)` is the NaN-rejecting form of a positivity check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod filter;
pub mod hitting;
pub mod measures;
pub mod model;
pub mod oracle;
pub mod pricing;
pub mod scenario;

pub use error::{CocoError, Result};
pub use filter::{FilterConfig, GridFilter, KernelMode, PosteriorDensity, TransitionKernelInputs};
pub use hitting::{bridge_no_hit, first_passage_cdf, survival_closed_form, ClosedFormTerms};
pub use measures::{drifts_under, rn_weight, MeasureDrifts, MeasureTag};
pub use model::{barrier_level, ModelParams, ObservationRecord, UpdateSchedule};
pub use pricing::{conditional_survival, price, CompensatorPath, PriceQuote, SurvivalReport};
