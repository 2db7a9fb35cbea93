//! Reproducible stock scenarios and fundamental-value paths.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CocoError, Result};
use crate::hitting::bridge_hit_probability;
use crate::measures::{drifts_under, MeasureTag};
use crate::model::{ModelParams, ObservationRecord, UpdateSchedule};
use crate::oracle::ConditionalSampler;
use crate::pricing::UpdateRecord;

/// Seed-stream offsets so that the different generators never share a stream.
const STOCK_STREAM: u64 = 0;
const HIDDEN_STREAM: u64 = 1 << 40;
const JOINT_STREAM: u64 = 2 << 40;

const MAX_ATTEMPTS: usize = 10_000;

/// Risk-neutral stock path on `times` (starting at 0 with `S_0`), redrawn until
/// every quote stays above the stock level of the conversion barrier,
/// `exp(conversion_barrier)`. Scenario `index` uses its own random stream.
pub fn stock_scenario(p: &ModelParams, times: &[f64], seed: u64, index: u64) -> Result<Vec<ObservationRecord>> {
    p.validate_simulation()?;
    if times.first() != Some(&0.0) {
        return Err(CocoError::domain("scenario times must start at 0"));
    }
    let mu = drifts_under(MeasureTag::PStar, p).mu_s;
    let floor = p.conversion_barrier.exp();
    let mut rng = crate::oracle::path_rng(seed, STOCK_STREAM + index);
    for _ in 0..MAX_ATTEMPTS {
        let mut out = Vec::with_capacity(times.len());
        let mut ls = p.initial_stock.ln();
        out.push(ObservationRecord::new(0.0, p.initial_stock)?);
        let mut ok = true;
        for w in times.windows(2) {
            let dt = w[1] - w[0];
            let z: f64 = rng.sample(StandardNormal);
            ls += mu * dt + p.sigma * dt.sqrt() * z;
            let s = ls.exp();
            if s <= floor {
                ok = false;
                break;
            }
            out.push(ObservationRecord::new(w[1], s)?);
        }
        if ok {
            ObservationRecord::validate_series(&out)?;
            return Ok(out);
        }
    }
    Err(CocoError::domain(format!(
        "no stock path above {floor} in {MAX_ATTEMPTS} attempts"
    )))
}

/// Fundamental values at each quote of `observations` given the stock path.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenPath {
    pub u: Vec<f64>,
    /// Barrier reached at or before each quote.
    pub converted: Vec<bool>,
}

impl HiddenPath {
    pub fn first_conversion(&self) -> Option<usize> {
        self.converted.iter().position(|&c| c)
    }
}

/// Draws the hidden fundamental path consistent with a stock path, under the
/// risk-neutral drifts, starting from `p.initial_fundamental`. The path keeps
/// going after a crossing; `converted` records when the barrier was hit.
pub fn hidden_fundamental(
    p: &ModelParams,
    observations: &[ObservationRecord],
    dt_fine: f64,
    seed: u64,
    index: u64,
) -> Result<HiddenPath> {
    let drifts = drifts_under(MeasureTag::PStar, p);
    let sampler = ConditionalSampler::new(p, &drifts, observations, dt_fine)?;
    let mut rng = crate::oracle::path_rng(seed, HIDDEN_STREAM + index);
    let mut u = p.initial_fundamental;
    let mut hit = false;
    let mut path = HiddenPath {
        u: vec![u],
        converted: vec![false],
    };
    for k in 0..sampler.steps() {
        let (next, crossed) = sampler.advance_tracking(&mut rng, k, u);
        u = next;
        hit |= crossed;
        path.u.push(u);
        path.converted.push(hit);
    }
    Ok(path)
}

/// Stock quotes, the true fundamental path and the update records of one
/// unconditional risk-neutral scenario over a whole schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct JointScenario {
    pub observations: Vec<ObservationRecord>,
    pub hidden: HiddenPath,
    pub updates: Vec<UpdateRecord>,
}

/// Simulates `(log S, U)` jointly at the schedule's quote times with exact
/// Gaussian steps; conversion between quotes is decided by a Bernoulli draw
/// with the bridge hitting probability.
pub fn joint_scenario(p: &ModelParams, schedule: &UpdateSchedule, seed: u64, index: u64) -> Result<JointScenario> {
    p.validate()?;
    let times = schedule.all_observation_times();
    let d = drifts_under(MeasureTag::PStar, p);
    let c = p.conversion_barrier;
    let ortho = (1.0 - p.rho * p.rho).sqrt();
    let mut rng = crate::oracle::path_rng(seed, JOINT_STREAM + index);
    let mut ls = p.initial_stock.ln();
    let mut u = p.initial_fundamental;
    let mut hit = false;
    let mut observations = vec![ObservationRecord::new(0.0, p.initial_stock)?];
    let mut hidden = HiddenPath {
        u: vec![u],
        converted: vec![false],
    };
    for w in times.windows(2) {
        let dt = w[1] - w[0];
        let sq = p.sigma * dt.sqrt();
        let x: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        let next_u = u + d.mu_u * dt + sq * (p.rho * x + ortho * z);
        ls += d.mu_s * dt + sq * x;
        if !hit {
            hit = next_u <= c || {
                let q = bridge_hit_probability(u - c, next_u - c, p.sigma * p.sigma * dt);
                q > 0.0 && rng.random::<f64>() < q
            };
        }
        u = next_u;
        observations.push(ObservationRecord::new(w[1], ls.exp())?);
        hidden.u.push(u);
        hidden.converted.push(hit);
    }
    let updates = schedule.update_times()[1..]
        .iter()
        .map(|&t| {
            let k = times.iter().position(|&s| (s - t).abs() <= 1e-9).expect("update is a quote time");
            UpdateRecord {
                time: t,
                fundamental: hidden.u[k],
                converted: hidden.converted[k],
            }
        })
        .collect();
    Ok(JointScenario {
        observations,
        hidden,
        updates,
    })
}
