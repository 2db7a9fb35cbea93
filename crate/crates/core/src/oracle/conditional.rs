use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{map_chunks, path_rng, Estimate, MIN_ACCEPTANCE_RATE};
use crate::error::{CocoError, Result};
use crate::hitting::{bridge_hit_probability, survival_closed_form};
use crate::measures::{drifts_under, rn_weight_between, MeasureDrifts, MeasureTag};
use crate::model::{ModelParams, ObservationRecord};

/// Sizes and seed of one oracle run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub n_paths: u64,
    pub dt_fine: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            n_paths: 100_000,
            dt_fine: 5e-4,
            seed: 20_240_601,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Interval {
    subs: usize,
    h: f64,
    d_log_s: f64,
}

/// Simulates `U` on a fine grid given the observed stock quotes.
///
/// The stock is pinned at every quote: its log path between two quotes is a
/// Brownian bridge, filled in sequentially on the fine grid. Each fine
/// `U` increment is `rho` times the stock increment plus the residual drift and
/// an independent Gaussian shock. A path is dead once `U` ends a fine step at
/// or below the barrier, or a Bernoulli draw with the bridge hitting
/// probability fires.
#[derive(Debug, Clone)]
pub struct ConditionalSampler {
    p: ModelParams,
    drifts: MeasureDrifts,
    intervals: Vec<Interval>,
}

impl ConditionalSampler {
    /// `obs[0]` is the last update, where `U = p.initial_fundamental`.
    pub fn new(p: &ModelParams, drifts: &MeasureDrifts, obs: &[ObservationRecord], dt_fine: f64) -> Result<Self> {
        p.validate_simulation()?;
        ObservationRecord::validate_series(obs)?;
        if obs.is_empty() {
            return Err(CocoError::domain("conditional oracle needs at least one observation"));
        }
        if !(dt_fine > 0.0) {
            return Err(CocoError::domain("dt_fine must be > 0"));
        }
        let intervals = obs
            .windows(2)
            .map(|w| {
                let len = w[1].time - w[0].time;
                let subs = (len / dt_fine - 1e-9).ceil().max(1.0) as usize;
                Interval {
                    subs,
                    h: len / subs as f64,
                    d_log_s: (w[1].stock_price / w[0].stock_price).ln(),
                }
            })
            .collect();
        Ok(ConditionalSampler {
            p: *p,
            drifts: *drifts,
            intervals,
        })
    }

    pub fn steps(&self) -> usize {
        self.intervals.len()
    }

    /// Moves `u` from quote `k` to quote `k + 1`; `None` if the path converts.
    pub fn advance(&self, rng: &mut ChaCha8Rng, k: usize, u: f64) -> Option<f64> {
        let (u, hit) = self.step_interval(rng, k, u, true);
        (!hit).then_some(u)
    }

    /// As [`advance`](Self::advance) but keeps simulating past a crossing;
    /// returns the value at quote `k + 1` and whether the barrier was hit.
    pub fn advance_tracking(&self, rng: &mut ChaCha8Rng, k: usize, u: f64) -> (f64, bool) {
        self.step_interval(rng, k, u, false)
    }

    fn step_interval(&self, rng: &mut ChaCha8Rng, k: usize, u: f64, stop_on_hit: bool) -> (f64, bool) {
        let iv = self.intervals[k];
        let p = &self.p;
        let c = p.conversion_barrier;
        let var = p.sigma * p.sigma;
        let resid = self.drifts.residual_drift(p.rho) * iv.h;
        let ortho = p.sigma * (1.0 - p.rho * p.rho).sqrt() * iv.h.sqrt();
        let mut remaining = iv.d_log_s;
        let mut tau = iv.subs as f64 * iv.h;
        let mut u = u;
        let mut hit = u <= c;
        for i in 0..iv.subs {
            let x = if i + 1 == iv.subs {
                remaining
            } else {
                let w: f64 = rng.sample(StandardNormal);
                let mean = remaining * iv.h / tau;
                let sd = p.sigma * (iv.h * (tau - iv.h) / tau).sqrt();
                mean + sd * w
            };
            remaining -= x;
            tau -= iv.h;
            let z: f64 = rng.sample(StandardNormal);
            let next = u + p.rho * x + resid + ortho * z;
            if !hit {
                if next <= c {
                    hit = true;
                } else {
                    let q = bridge_hit_probability(u - c, next - c, var * iv.h);
                    hit = q > 0.0 && rng.random::<f64>() < q;
                }
                if hit && stop_on_hit {
                    return (next, true);
                }
            }
            u = next;
        }
        (u, hit)
    }

    /// Whether a path at `u` survives `[0, remaining]` under the sampler's
    /// drifts, from one exact Gaussian step with the bridge correction.
    pub fn continue_survives(&self, rng: &mut ChaCha8Rng, u: f64, remaining: f64) -> bool {
        if remaining <= 0.0 {
            return true;
        }
        let p = &self.p;
        let c = p.conversion_barrier;
        let z: f64 = rng.sample(StandardNormal);
        let end = u + self.drifts.mu_u * remaining + p.sigma * remaining.sqrt() * z;
        if end <= c {
            return false;
        }
        let q = bridge_hit_probability(u - c, end - c, p.sigma * p.sigma * remaining);
        !(q > 0.0 && rng.random::<f64>() < q)
    }
}

fn index_of_time(obs: &[ObservationRecord], t: f64) -> Result<usize> {
    obs.iter()
        .position(|o| (o.time - t).abs() <= 1e-9)
        .ok_or_else(|| CocoError::domain(format!("t = {t} is not an observation time")))
}

fn check_acceptance(accepted: u64, simulated: u64) -> Result<()> {
    if (accepted as f64) < MIN_ACCEPTANCE_RATE * simulated as f64 || accepted == 0 {
        return Err(CocoError::OracleStarvation { accepted, simulated });
    }
    Ok(())
}

/// Histogram of `U_t` over surviving conditional paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Accepted paths that fell outside `[edges[0], edges[last])`.
    pub outside: u64,
    pub n_accepted: u64,
    pub n_simulated: u64,
    /// Three binomial standard errors per bin, in density units.
    pub half_widths: Vec<f64>,
}

impl ConditionalHistogram {
    fn from_counts(edges: Vec<f64>, counts: Vec<u64>, outside: u64, n_simulated: u64) -> Self {
        let n_accepted = counts.iter().sum::<u64>() + outside;
        let n = n_accepted.max(1) as f64;
        let half_widths = counts
            .iter()
            .zip(edges.windows(2))
            .map(|(&k, e)| {
                let q = k as f64 / n;
                3.0 * (q * (1.0 - q) / n).sqrt() / (e[1] - e[0])
            })
            .collect();
        ConditionalHistogram {
            edges,
            counts,
            outside,
            n_accepted,
            n_simulated,
            half_widths,
        }
    }

    /// Probability density estimate per bin.
    pub fn densities(&self) -> Vec<f64> {
        let n = self.n_accepted.max(1) as f64;
        self.counts
            .iter()
            .zip(self.edges.windows(2))
            .map(|(&k, e)| k as f64 / (n * (e[1] - e[0])))
            .collect()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.n_accepted as f64 / self.n_simulated as f64
    }

    /// Merges a histogram on the same edges; order does not matter.
    pub fn merge(&mut self, other: &ConditionalHistogram) -> Result<()> {
        if self.edges != other.edges {
            return Err(CocoError::domain("cannot merge histograms with different edges"));
        }
        let counts = self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect();
        *self = ConditionalHistogram::from_counts(
            self.edges.clone(),
            counts,
            self.outside + other.outside,
            self.n_simulated + other.n_simulated,
        );
        Ok(())
    }
}

/// Histogram of `U_t` given survival and the quotes in `obs` up to `t`.
/// `obs[0]` is the last update, with `U = p.initial_fundamental`; `t` must be
/// one of the quote times. `edges` must be increasing.
#[allow(clippy::too_many_arguments)]
pub fn conditional_posterior_oracle(
    p: &ModelParams,
    drifts: &MeasureDrifts,
    obs: &[ObservationRecord],
    t: f64,
    edges: &[f64],
    cfg: &OracleConfig,
) -> Result<ConditionalHistogram> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(CocoError::domain("histogram edges must be increasing"));
    }
    let last = index_of_time(obs, t)?;
    let sampler = ConditionalSampler::new(p, drifts, &obs[..=last], cfg.dt_fine)?;
    let lo = edges[0];
    let hi = edges[edges.len() - 1];
    let bins = edges.len() - 1;
    let uniform_width = (hi - lo) / bins as f64;
    let uniform = edges
        .iter()
        .enumerate()
        .all(|(i, &e)| (e - (lo + i as f64 * uniform_width)).abs() <= 1e-12 * (1.0 + e.abs()));

    let parts = map_chunks(cfg.n_paths, |range| {
        let mut counts = vec![0u64; bins];
        let mut outside = 0u64;
        'paths: for path in range {
            let mut rng = path_rng(cfg.seed, path);
            let mut u = p.initial_fundamental;
            for k in 0..sampler.steps() {
                match sampler.advance(&mut rng, k, u) {
                    Some(next) => u = next,
                    None => continue 'paths,
                }
            }
            if !(lo..hi).contains(&u) {
                outside += 1;
                continue;
            }
            let mut bin = if uniform {
                (((u - lo) / uniform_width) as usize).min(bins - 1)
            } else {
                edges.partition_point(|&e| e <= u) - 1
            };
            // Guard the rounding of the division at bin boundaries.
            while bin > 0 && u < edges[bin] {
                bin -= 1;
            }
            while bin + 1 < bins && u >= edges[bin + 1] {
                bin += 1;
            }
            counts[bin] += 1;
        }
        (counts, outside)
    });
    let mut counts = vec![0u64; bins];
    let mut outside = 0;
    for (c, o) in parts {
        for (acc, v) in counts.iter_mut().zip(c) {
            *acc += v;
        }
        outside += o;
    }
    let hist = ConditionalHistogram::from_counts(edges.to_vec(), counts, outside, cfg.n_paths);
    check_acceptance(hist.n_accepted, cfg.n_paths)?;
    Ok(hist)
}

/// One checkpoint of a survival series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub t: f64,
    /// Fraction of paths alive at `t` that also survive to the horizon.
    pub estimate: Estimate,
}

/// `P(tau > horizon | survival and quotes up to t)` for each checkpoint `t`
/// (each must be a quote time). Paths are simulated once through all quotes;
/// every path alive at a checkpoint is continued from there with an
/// independent exact step to the horizon.
pub fn survival_series_oracle(
    p: &ModelParams,
    drifts: &MeasureDrifts,
    obs: &[ObservationRecord],
    checkpoints: &[f64],
    horizon: f64,
    cfg: &OracleConfig,
) -> Result<Vec<SeriesPoint>> {
    let idx: Vec<usize> = checkpoints.iter().map(|&t| index_of_time(obs, t)).collect::<Result<_>>()?;
    let last = idx.iter().copied().max().unwrap_or(0);
    let sampler = ConditionalSampler::new(p, drifts, &obs[..=last], cfg.dt_fine)?;
    // Checkpoints attached to each quote index.
    let mut at_index: Vec<Vec<usize>> = vec![Vec::new(); last + 1];
    for (c, &i) in idx.iter().enumerate() {
        at_index[i].push(c);
    }
    let n_cp = checkpoints.len();
    let parts = map_chunks(cfg.n_paths, |range| {
        let mut alive = vec![0u64; n_cp];
        let mut survive = vec![0u64; n_cp];
        for path in range {
            let mut rng = path_rng(cfg.seed, path);
            let mut u = p.initial_fundamental;
            for k in 0..=last {
                if k > 0 {
                    match sampler.advance(&mut rng, k - 1, u) {
                        Some(next) => u = next,
                        None => break,
                    }
                }
                for &c in &at_index[k] {
                    alive[c] += 1;
                    if sampler.continue_survives(&mut rng, u, horizon - checkpoints[c]) {
                        survive[c] += 1;
                    }
                }
            }
        }
        (alive, survive)
    });
    let mut alive = vec![0u64; n_cp];
    let mut survive = vec![0u64; n_cp];
    for (a, s) in parts {
        for c in 0..n_cp {
            alive[c] += a[c];
            survive[c] += s[c];
        }
    }
    (0..n_cp)
        .map(|c| {
            check_acceptance(alive[c], cfg.n_paths)?;
            Ok(SeriesPoint {
                t: checkpoints[c],
                estimate: Estimate::proportion(survive[c], alive[c]),
            })
        })
        .collect()
}

/// Single-checkpoint form of [`survival_series_oracle`].
pub fn survival_oracle(
    p: &ModelParams,
    drifts: &MeasureDrifts,
    obs: &[ObservationRecord],
    t: f64,
    horizon: f64,
    cfg: &OracleConfig,
) -> Result<Estimate> {
    if horizon <= t || p.conversion_barrier == f64::NEG_INFINITY {
        return Ok(Estimate { mean: 1.0, stderr: 0.0, n: cfg.n_paths });
    }
    Ok(survival_series_oracle(p, drifts, obs, &[t], horizon, cfg)?[0].estimate)
}

/// Monte Carlo CoCo price at `t` (a quote time) on the survival event.
///
/// Conditional paths are simulated under the risk-neutral drifts up to `t` and
/// continued jointly with the stock to maturity. The discounted payoff is the
/// face value on survival and `C_r e^{-kappa (T - t)} S_T` on conversion.
pub fn price_oracle(p: &ModelParams, obs: &[ObservationRecord], t: f64, cfg: &OracleConfig) -> Result<Estimate> {
    let drifts = drifts_under(MeasureTag::PStar, p);
    let last = index_of_time(obs, t)?;
    let sampler = ConditionalSampler::new(p, &drifts, &obs[..=last], cfg.dt_fine)?;
    let remaining = p.maturity - t;
    if remaining < 0.0 {
        return Err(CocoError::domain("valuation time after maturity"));
    }
    let s_t = obs[last].stock_price;
    let c = p.conversion_barrier;
    let discount = (-p.r * remaining).exp();
    let equity_scale = p.conversion_ratio * (-p.kappa * remaining).exp();
    let sq = remaining.sqrt();
    let ortho = p.sigma * (1.0 - p.rho * p.rho).sqrt() * sq;
    let resid = drifts.residual_drift(p.rho) * remaining;

    let parts = map_chunks(cfg.n_paths, |range| {
        let (mut n, mut sum, mut sum_sq) = (0u64, 0.0, 0.0);
        'paths: for path in range {
            let mut rng = path_rng(cfg.seed, path);
            let mut u = p.initial_fundamental;
            for k in 0..sampler.steps() {
                match sampler.advance(&mut rng, k, u) {
                    Some(next) => u = next,
                    None => continue 'paths,
                }
            }
            let payoff = if remaining <= 0.0 {
                p.face_value
            } else {
                let w: f64 = rng.sample(StandardNormal);
                let z: f64 = rng.sample(StandardNormal);
                let d_ls = drifts.mu_s * remaining + p.sigma * sq * w;
                let u_end = u + p.rho * d_ls + resid + ortho * z;
                let converted = u_end <= c || {
                    let q = bridge_hit_probability(u - c, u_end - c, p.sigma * p.sigma * remaining);
                    q > 0.0 && rng.random::<f64>() < q
                };
                if converted {
                    equity_scale * s_t * d_ls.exp()
                } else {
                    p.face_value
                }
            };
            let v = discount * payoff;
            n += 1;
            sum += v;
            sum_sq += v * v;
        }
        (n, sum, sum_sq)
    });
    let (mut n, mut sum, mut sum_sq) = (0u64, 0.0, 0.0);
    for (a, b, c2) in parts {
        n += a;
        sum += b;
        sum_sq += c2;
    }
    check_acceptance(n, cfg.n_paths)?;
    Ok(Estimate::from_moments(sum, sum_sq, n))
}

/// Risk-neutral estimate of `E*[dP^S/dP* 1{tau > T}]` next to the closed-form
/// share-measure survival probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RnCheck {
    pub estimate: Estimate,
    pub closed_form: f64,
}

/// Simulates unconditional joint paths under the risk-neutral measure from
/// `(S_0, U_0)` to `p.maturity` and weights survivors by the share-measure
/// density.
pub fn share_survival_check(p: &ModelParams, cfg: &OracleConfig) -> Result<RnCheck> {
    p.validate()?;
    let drifts = drifts_under(MeasureTag::PStar, p);
    let horizon = p.maturity;
    let steps = (horizon / cfg.dt_fine).ceil().max(1.0) as usize;
    let h = horizon / steps as f64;
    let sq = h.sqrt();
    let ortho = p.sigma * (1.0 - p.rho * p.rho).sqrt() * sq;
    let resid = drifts.residual_drift(p.rho) * h;
    let c = p.conversion_barrier;
    let var = p.sigma * p.sigma * h;
    let s0 = p.initial_stock;

    let parts = map_chunks(cfg.n_paths, |range| {
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        'paths: for path in range {
            let mut rng = path_rng(cfg.seed, path);
            let mut u = p.initial_fundamental;
            let mut ls = 0.0;
            for _ in 0..steps {
                let w: f64 = rng.sample(StandardNormal);
                let z: f64 = rng.sample(StandardNormal);
                let d_ls = drifts.mu_s * h + p.sigma * sq * w;
                let next = u + p.rho * d_ls + resid + ortho * z;
                if next <= c {
                    continue 'paths;
                }
                let q = bridge_hit_probability(u - c, next - c, var);
                if q > 0.0 && rng.random::<f64>() < q {
                    continue 'paths;
                }
                u = next;
                ls += d_ls;
            }
            let weight = rn_weight_between(MeasureTag::PS, s0, s0 * ls.exp(), horizon, p).unwrap_or(f64::NAN);
            sum += weight;
            sum_sq += weight * weight;
        }
        (sum, sum_sq)
    });
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for (a, b) in parts {
        sum += a;
        sum_sq += b;
    }
    let share = drifts_under(MeasureTag::PS, p);
    Ok(RnCheck {
        estimate: Estimate::from_moments(sum, sum_sq, cfg.n_paths),
        closed_form: survival_closed_form(p.initial_fundamental, c, share.mu_u, p.sigma, horizon)?,
    })
}
