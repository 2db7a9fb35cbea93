//! Model constants, the update/observation timeline and the covenant barrier.

use serde::{Deserialize, Serialize};

use crate::error::{CocoError, Result};

/// Minimum separation between two consecutive schedule times.
pub const TIME_TOLERANCE: f64 = 1e-12;

/// Scalar model constants shared by every module.
///
/// `initial_fundamental` is stored explicitly: the fundamental process is quoted
/// on the log-stock scale, so with the default parameters `U_0 = ln S_0` and the
/// conversion barrier `ln 35` sits at a stock level of 35.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Risk-free rate (per year).
    pub r: f64,
    /// Volatility of both the stock and the fundamental process (per sqrt-year).
    pub sigma: f64,
    /// Correlation between the stock noise and the fundamental noise.
    pub rho: f64,
    /// Barrier-shape parameter.
    pub a: f64,
    /// Dividend-like rate (per year).
    pub kappa: f64,
    /// Covenant level `L` of the benchmark barrier.
    pub covenant: f64,
    /// Face value `N`.
    pub face_value: f64,
    /// Shares delivered per bond on conversion.
    pub conversion_ratio: f64,
    /// Conversion log-barrier.
    pub conversion_barrier: f64,
    /// Default log-barrier; stored, not priced.
    pub default_barrier: f64,
    /// Maturity `T` in years.
    pub maturity: f64,
    /// Initial share price.
    pub initial_stock: f64,
    /// Initial fundamental value `U_0`.
    pub initial_fundamental: f64,
}

impl ModelParams {
    /// Parameters of the numerical illustration: r = 3%, sigma = 0.49, S_0 = 100,
    /// N = 100, conversion barrier ln 35, kappa = 0 and a fundamental drift equal
    /// to the stock drift `r - sigma^2/2` (so `a = r / sigma^2`).
    pub fn illustration() -> Self {
        let r = 0.03;
        let sigma: f64 = 0.49;
        ModelParams {
            r,
            sigma,
            rho: 0.5,
            a: r / (sigma * sigma),
            kappa: 0.0,
            covenant: 35.0,
            face_value: 100.0,
            conversion_ratio: 2.0,
            conversion_barrier: 35f64.ln(),
            default_barrier: 20f64.ln(),
            maturity: 1.0,
            initial_stock: 100.0,
            initial_fundamental: 100f64.ln(),
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    /// Moves the conversion barrier; the default barrier keeps its distance below it.
    pub fn with_barrier(mut self, conversion_barrier: f64) -> Self {
        let gap = self.conversion_barrier - self.default_barrier;
        self.conversion_barrier = conversion_barrier;
        self.default_barrier = conversion_barrier - gap;
        self
    }

    /// Checks every invariant, requiring `|rho| < 1`.
    pub fn validate(&self) -> Result<()> {
        self.check(false, false)
    }

    /// As [`validate`](Self::validate) but admits the perfectly correlated
    /// limit `|rho| = 1`, used only by degenerate-limit tests.
    pub fn validate_limit_mode(&self) -> Result<()> {
        self.check(true, false)
    }

    /// As [`validate`](Self::validate) but admits `sigma = 0`, for which path
    /// simulation is deterministic. Filtering and pricing still need `sigma > 0`.
    pub fn validate_simulation(&self) -> Result<()> {
        self.check(false, true)
    }

    fn check(&self, allow_unit_rho: bool, allow_zero_sigma: bool) -> Result<()> {
        let finite = [
            ("r", self.r),
            ("sigma", self.sigma),
            ("rho", self.rho),
            ("a", self.a),
            ("kappa", self.kappa),
            ("covenant", self.covenant),
            ("face_value", self.face_value),
            ("conversion_ratio", self.conversion_ratio),
            ("conversion_barrier", self.conversion_barrier),
            ("default_barrier", self.default_barrier),
            ("maturity", self.maturity),
            ("initial_stock", self.initial_stock),
            ("initial_fundamental", self.initial_fundamental),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(CocoError::InvalidParameter {
                    name,
                    value,
                    constraint: "must be finite",
                });
            }
        }
        if allow_zero_sigma {
            non_negative("sigma", self.sigma)?;
        } else {
            positive("sigma", self.sigma)?;
        }
        positive("maturity", self.maturity)?;
        positive("initial_stock", self.initial_stock)?;
        non_negative("face_value", self.face_value)?;
        non_negative("conversion_ratio", self.conversion_ratio)?;
        non_negative("covenant", self.covenant)?;
        if self.default_barrier >= self.conversion_barrier {
            return Err(CocoError::InvalidParameter {
                name: "default_barrier",
                value: self.default_barrier,
                constraint: "must lie strictly below conversion_barrier",
            });
        }
        let rho_ok = if allow_unit_rho {
            self.rho.abs() <= 1.0
        } else {
            self.rho.abs() < 1.0
        };
        if !rho_ok {
            return Err(CocoError::InvalidParameter {
                name: "rho",
                value: self.rho,
                constraint: if allow_unit_rho {
                    "must satisfy |rho| <= 1"
                } else {
                    "must satisfy |rho| < 1"
                },
            });
        }
        if self.initial_fundamental <= self.conversion_barrier {
            return Err(CocoError::InvalidParameter {
                name: "initial_fundamental",
                value: self.initial_fundamental,
                constraint: "must lie above conversion_barrier (contract alive at issuance)",
            });
        }
        Ok(())
    }
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 {
        Ok(())
    } else {
        Err(CocoError::InvalidParameter {
            name,
            value,
            constraint: "must be > 0",
        })
    }
}

fn non_negative(name: &'static str, value: f64) -> Result<()> {
    if value >= 0.0 {
        Ok(())
    } else {
        Err(CocoError::InvalidParameter {
            name,
            value,
            constraint: "must be >= 0",
        })
    }
}

/// Benchmark barrier `l_t = L e^{-r(T-t)} exp{(kappa + a sigma^2)(T - t)}` for
/// constant rates.
pub fn barrier_level(t: f64, p: &ModelParams) -> Result<f64> {
    if !(0.0..=p.maturity).contains(&t) {
        return Err(CocoError::domain(format!(
            "barrier_level requires 0 <= t <= T, got t = {t}, T = {}",
            p.maturity
        )));
    }
    let remaining = p.maturity - t;
    Ok(p.covenant * ((-p.r + p.kappa + p.a * p.sigma * p.sigma) * remaining).exp())
}

/// Log-leverage `ln(S_t / l_t)`.
pub fn fundamental_from_stock(t: f64, stock: f64, p: &ModelParams) -> Result<f64> {
    if stock <= 0.0 {
        return Err(CocoError::domain(format!("stock price must be > 0, got {stock}")));
    }
    let level = barrier_level(t, p)?;
    if level <= 0.0 {
        return Err(CocoError::domain("barrier level is zero; log-leverage undefined"));
    }
    Ok((stock / level).ln())
}

/// A timestamped stock quote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub time: f64,
    pub stock_price: f64,
}

impl ObservationRecord {
    pub fn new(time: f64, stock_price: f64) -> Result<Self> {
        if !(stock_price > 0.0 && stock_price.is_finite()) {
            return Err(CocoError::domain(format!(
                "stock price must be positive, got {stock_price}"
            )));
        }
        if !time.is_finite() {
            return Err(CocoError::domain("observation time must be finite"));
        }
        Ok(ObservationRecord { time, stock_price })
    }

    /// Positive prices, strictly increasing times.
    pub fn validate_series(series: &[ObservationRecord]) -> Result<()> {
        for obs in series {
            ObservationRecord::new(obs.time, obs.stock_price)?;
        }
        for pair in series.windows(2) {
            if pair[1].time - pair[0].time <= TIME_TOLERANCE {
                return Err(CocoError::domain(format!(
                    "observation times must be strictly increasing ({} then {})",
                    pair[0].time, pair[1].time
                )));
            }
        }
        Ok(())
    }
}

/// Full-information update times `T_0 = 0 < T_1 < ...` and the stock
/// observation times inside each period `[T_j, T_{j+1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateSchedule {
    update_times: Vec<f64>,
    observation_times: Vec<Vec<f64>>,
}

/// Configuration-file form of [`UpdateSchedule`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub update_times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation_times: Option<Vec<Vec<f64>>>,
}

impl UpdateSchedule {
    /// `observation_times[j]` lists the quotes of period `j`; it must start at
    /// `T_j` and end at `T_{j+1}`.
    pub fn new(update_times: Vec<f64>, observation_times: Vec<Vec<f64>>) -> Result<Self> {
        if update_times.is_empty() {
            return Err(CocoError::InvalidSchedule("no update times".into()));
        }
        if update_times[0] != 0.0 {
            return Err(CocoError::InvalidSchedule(format!(
                "first update time must be 0, got {}",
                update_times[0]
            )));
        }
        strictly_increasing(&update_times, "update times")?;
        let periods = update_times.len() - 1;
        if observation_times.len() != periods {
            return Err(CocoError::InvalidSchedule(format!(
                "{} periods but {} observation lists",
                periods,
                observation_times.len()
            )));
        }
        for (j, times) in observation_times.iter().enumerate() {
            if times.len() < 2 {
                return Err(CocoError::InvalidSchedule(format!(
                    "period {j} needs at least its two endpoints"
                )));
            }
            if times[0] != update_times[j] {
                return Err(CocoError::InvalidSchedule(format!(
                    "period {j} must start at T_{j} = {}",
                    update_times[j]
                )));
            }
            if (times[times.len() - 1] - update_times[j + 1]).abs() > TIME_TOLERANCE {
                return Err(CocoError::InvalidSchedule(format!(
                    "period {j} must end at T_{} = {}",
                    j + 1,
                    update_times[j + 1]
                )));
            }
            strictly_increasing(times, "observation times")?;
        }
        Ok(UpdateSchedule {
            update_times,
            observation_times,
        })
    }

    /// Equally spaced quotes, the spacing rounded so each period is an integer
    /// number of steps.
    pub fn uniform(update_times: Vec<f64>, step: f64) -> Result<Self> {
        if !(step > 0.0) {
            return Err(CocoError::InvalidSchedule(format!(
                "observation step must be > 0, got {step}"
            )));
        }
        let mut observation_times = Vec::with_capacity(update_times.len().saturating_sub(1));
        for pair in update_times.windows(2) {
            let (start, end) = (pair[0], pair[1]);
            let n = ((end - start) / step).round().max(1.0) as usize;
            let dt = (end - start) / n as f64;
            let mut times: Vec<f64> = (0..n).map(|k| start + k as f64 * dt).collect();
            times.push(end);
            observation_times.push(times);
        }
        UpdateSchedule::new(update_times, observation_times)
    }

    pub fn from_config(cfg: &ScheduleConfig) -> Result<Self> {
        match (&cfg.observation_times, cfg.observation_step) {
            (Some(times), None) => UpdateSchedule::new(cfg.update_times.clone(), times.clone()),
            (None, Some(step)) => UpdateSchedule::uniform(cfg.update_times.clone(), step),
            _ => Err(CocoError::Config(
                "schedule needs exactly one of observation_step or observation_times".into(),
            )),
        }
    }

    pub fn update_times(&self) -> &[f64] {
        &self.update_times
    }

    pub fn periods(&self) -> usize {
        self.update_times.len() - 1
    }

    pub fn period_observations(&self, j: usize) -> &[f64] {
        &self.observation_times[j]
    }

    /// Every observation time once, in order (period endpoints not repeated).
    pub fn all_observation_times(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for times in &self.observation_times {
            for &t in times {
                if out.last().is_none_or(|&last| t - last > TIME_TOLERANCE) {
                    out.push(t);
                }
            }
        }
        if out.is_empty() {
            out.push(0.0);
        }
        out
    }

    /// Last full-information update at or before `t`.
    pub fn floor_of(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(CocoError::domain(format!("floor_of requires t >= 0, got {t}")));
        }
        let idx = self.update_times.partition_point(|&tj| tj <= t);
        Ok(self.update_times[idx - 1])
    }
}

fn strictly_increasing(times: &[f64], what: &str) -> Result<()> {
    for pair in times.windows(2) {
        if !(pair[1] - pair[0] > TIME_TOLERANCE) {
            return Err(CocoError::InvalidSchedule(format!(
                "{what} must be strictly increasing, got {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    Ok(())
}
