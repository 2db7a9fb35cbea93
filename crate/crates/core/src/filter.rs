//! Grid-based Bayes recursion for the conditional law of the fundamental value.
//!
//! Between two full-information updates the fundamental value `U` is hidden;
//! each stock quote is informative through the correlation `rho`. Writing a
//! `U` increment as `rho * dlog S` plus an independent residual, one
//! observation step multiplies the prior by
//!
//! ```text
//! bridge(u_prev, u) * h(u - u_prev - rho * dlog S)
//! ```
//!
//! and integrates out `u_prev`. `h` is the Gaussian density of the residual and
//! `bridge` the probability that the pinned path avoided the barrier. The
//! stock-increment density does not depend on `u` and cancels in the Bayes
//! ratio, so it is never evaluated. The normalizing constant of each step is the
//! conditional probability of surviving that step; their running product is the
//! posterior's `survival_mass`.

use std::io::{BufRead, Write};

use crate::error::{CocoError, Result};
use crate::hitting::bridge_no_hit;
use crate::measures::{drifts_under, MeasureDrifts, MeasureTag};
use crate::model::{ModelParams, ObservationRecord, TIME_TOLERANCE};

/// Steps whose normalization falls below this are reported as posterior collapse.
pub const COLLAPSE_THRESHOLD: f64 = 1e-300;

/// `1 - exp(-x)` equals 1 in f64 once `x` exceeds this.
const BRIDGE_SATURATION: f64 = 38.0;

const MAX_GRID_EXPANSIONS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMode {
    /// Evaluate only offsets within `band_sigmas` standard deviations of the
    /// residual kernel, reusing the kernel along each diagonal.
    Banded,
    /// Full `M x M` reference application through [`kernel_h`] and
    /// [`bridge_no_hit`].
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub grid_points: usize,
    /// Grid extends this many `sigma * sqrt(period)` above the anchor value.
    pub tail_sigmas: f64,
    pub band_sigmas: f64,
    pub kernel: KernelMode,
    /// Trigger for upward grid expansion: posterior mass in the top cells.
    pub edge_mass_tolerance: f64,
    pub edge_cells: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            grid_points: 2048,
            tail_sigmas: 8.0,
            band_sigmas: 12.0,
            kernel: KernelMode::Banded,
            edge_mass_tolerance: 1e-8,
            edge_cells: 4,
        }
    }
}

impl FilterConfig {
    pub fn with_grid_points(mut self, grid_points: usize) -> Self {
        self.grid_points = grid_points;
        self
    }

    pub fn with_kernel(mut self, kernel: KernelMode) -> Self {
        self.kernel = kernel;
        self
    }
}

/// Inputs of the residual kernel for one observation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionKernelInputs {
    /// `ln(s_j / s_{j-1})`.
    pub d_log_s: f64,
    pub dt: f64,
    pub drifts: MeasureDrifts,
}

/// Gaussian density of the residual `dU - rho dlog S`: mean
/// `(mu_U - rho mu_S) dt`, variance `sigma^2 (1 - rho^2) dt`.
pub fn kernel_h(z: f64, k: &TransitionKernelInputs, p: &ModelParams) -> Result<f64> {
    if !(k.dt > 0.0) {
        return Err(CocoError::domain(format!("kernel_h needs dt > 0, got {}", k.dt)));
    }
    if p.rho.abs() >= 1.0 {
        return Err(CocoError::DegenerateKernel { rho: p.rho });
    }
    let var = p.sigma * p.sigma * (1.0 - p.rho * p.rho) * k.dt;
    let mean = k.drifts.residual_drift(p.rho) * k.dt;
    let x = z - mean;
    Ok((-0.5 * x * x / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt())
}

/// Discretized conditional density of `U_t` given survival and the stock
/// quotes since the last update, on a uniform grid whose lower edge is the
/// conversion barrier.
///
/// Immediately after an update the law is a point mass. It is kept exactly in
/// `atom`; `weights` then hold the single-cell spike representation.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDensity {
    lower: f64,
    step: f64,
    weights: Vec<f64>,
    anchor_time: f64,
    survival_mass: f64,
    measure: MeasureTag,
    atom: Option<f64>,
}

impl PosteriorDensity {
    fn spike(lower: f64, step: f64, len: usize, u: f64) -> Vec<f64> {
        let mut weights = vec![0.0; len];
        let idx = (((u - lower) / step).round().max(1.0) as usize).min(len - 1);
        weights[idx] = if idx == len - 1 { 2.0 / step } else { 1.0 / step };
        weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lower + i as f64 * self.step
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.node(self.len() - 1)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn anchor_time(&self) -> f64 {
        self.anchor_time
    }

    pub fn survival_mass(&self) -> f64 {
        self.survival_mass
    }

    pub fn measure(&self) -> MeasureTag {
        self.measure
    }

    /// Location of the point mass right after an update.
    pub fn atom(&self) -> Option<f64> {
        self.atom
    }

    fn trapezoid_weight(&self, i: usize) -> f64 {
        trapezoid_weight(i, self.len(), self.step)
    }

    /// Trapezoid integral of the stored weights.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.weights, self.step)
    }

    /// `E[f(U_t)]` under the posterior; exact for a point mass.
    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        if let Some(u) = self.atom {
            return f(u);
        }
        (0..self.len())
            .filter(|&i| self.weights[i] != 0.0)
            .map(|i| self.trapezoid_weight(i) * self.weights[i] * f(self.node(i)))
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.expectation(|u| u)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.expectation(|u| (u - m) * (u - m)).max(0.0)
    }

    pub fn peak_density(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    /// Linear interpolation of the weights; zero outside the grid.
    pub fn density_at(&self, u: f64) -> f64 {
        let x = (u - self.lower) / self.step;
        if x < 0.0 || x > (self.len() - 1) as f64 {
            return 0.0;
        }
        let i = (x.floor() as usize).min(self.len() - 2);
        let frac = x - i as f64;
        self.weights[i] * (1.0 - frac) + self.weights[i + 1] * frac
    }

    /// Mass of `[lo, hi)` under the piecewise-linear density (or the atom).
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        if let Some(u) = self.atom {
            return if (lo..hi).contains(&u) { 1.0 } else { 0.0 };
        }
        let lo = lo.max(self.lower);
        let hi = hi.min(self.upper());
        if hi <= lo {
            return 0.0;
        }
        let first = ((lo - self.lower) / self.step).floor() as usize;
        let last = (((hi - self.lower) / self.step).ceil() as usize).min(self.len() - 1);
        let mut total = 0.0;
        for i in first..last {
            let a = self.node(i).max(lo);
            let b = self.node(i + 1).min(hi);
            if b > a {
                total += 0.5 * (self.density_at(a) + self.density_at(b)) * (b - a);
            }
        }
        total
    }

    /// Average density over `[lo, hi)`, comparable with a histogram bin.
    pub fn bin_average(&self, lo: f64, hi: f64) -> f64 {
        self.mass_between(lo, hi) / (hi - lo)
    }

    /// CSV snapshot: a `#` line carrying `anchor_time`, `survival_mass` and the
    /// measure, then columns `u,density`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut out = out;
        writeln!(
            out,
            "# anchor_time={:.9},survival_mass={:.12e},measure={}",
            self.anchor_time, self.survival_mass, self.measure
        )?;
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["u", "density"])?;
        for i in 0..self.len() {
            writer.write_record([format!("{:.12}", self.node(i)), format!("{:.12e}", self.weights[i])])?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Reads a snapshot written by [`write_csv`](Self::write_csv). The grid must
    /// be uniform; the point-mass flag is not preserved.
    pub fn read_csv<R: BufRead>(mut input: R) -> Result<Self> {
        let mut meta = String::new();
        input
            .read_line(&mut meta)
            .map_err(|e| CocoError::Config(e.to_string()))?;
        let meta = meta
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| CocoError::Config("missing posterior header line".into()))?;
        let mut anchor_time = None;
        let mut survival_mass = None;
        let mut measure = None;
        for item in meta.trim().split(',') {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| CocoError::Config(format!("bad header item {item:?}")))?;
            match key {
                "anchor_time" => anchor_time = value.parse::<f64>().ok(),
                "survival_mass" => survival_mass = value.parse::<f64>().ok(),
                "measure" => {
                    measure = match value {
                        "P_STAR" => Some(MeasureTag::PStar),
                        "P_T" => Some(MeasureTag::PT),
                        "P_S" => Some(MeasureTag::PS),
                        _ => None,
                    }
                }
                _ => return Err(CocoError::Config(format!("unknown header key {key:?}"))),
            }
        }
        let mut reader = csv::Reader::from_reader(input);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| CocoError::Config(e.to_string()))?;
            let parse = |k: usize| -> Result<f64> {
                record
                    .get(k)
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| CocoError::Config(format!("bad posterior row {record:?}")))
            };
            nodes.push(parse(0)?);
            weights.push(parse(1)?);
        }
        if nodes.len() < 2 {
            return Err(CocoError::Config("posterior needs at least two grid points".into()));
        }
        let step = (nodes[nodes.len() - 1] - nodes[0]) / (nodes.len() - 1) as f64;
        Ok(PosteriorDensity {
            lower: nodes[0],
            step,
            weights,
            anchor_time: anchor_time.ok_or_else(|| CocoError::Config("missing anchor_time".into()))?,
            survival_mass: survival_mass
                .ok_or_else(|| CocoError::Config("missing survival_mass".into()))?,
            measure: measure.ok_or_else(|| CocoError::Config("missing measure".into()))?,
            atom: None,
        })
    }
}

fn trapezoid_weight(i: usize, len: usize, step: f64) -> f64 {
    if i == 0 || i + 1 == len {
        0.5 * step
    } else {
        step
    }
}

fn trapezoid(values: &[f64], step: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..n - 1].iter().sum();
    step * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// Filter for one model parameter set under one measure.
#[derive(Debug, Clone)]
pub struct GridFilter {
    params: ModelParams,
    drifts: MeasureDrifts,
    config: FilterConfig,
}

impl GridFilter {
    /// `|rho| = 1` is accepted for the degenerate-limit path only.
    pub fn new(params: ModelParams, measure: MeasureTag, config: FilterConfig) -> Result<Self> {
        params.validate_limit_mode()?;
        if config.grid_points < 8 {
            return Err(CocoError::InvalidParameter {
                name: "grid_points",
                value: config.grid_points as f64,
                constraint: "must be >= 8",
            });
        }
        Ok(GridFilter {
            drifts: drifts_under(measure, &params),
            params,
            config,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn drifts(&self) -> &MeasureDrifts {
        &self.drifts
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    /// Point-mass posterior at a full-information update. The grid spans
    /// `[c, u + tail * sigma * sqrt(period) + drift allowance]`.
    pub fn reset_at_update(&self, u_observed: f64, t: f64, period_end: f64) -> Result<PosteriorDensity> {
        let p = &self.params;
        let c = p.conversion_barrier;
        if !(u_observed > c) {
            return Err(CocoError::AlreadyConverted {
                value: u_observed,
                barrier: c,
            });
        }
        let len = (period_end - t).max(1e-4);
        // The same allowance under every measure keeps the grids identical.
        let drift_allowance = [MeasureTag::PStar, MeasureTag::PS]
            .iter()
            .map(|&m| {
                let d = drifts_under(m, p);
                d.mu_u.abs() + d.mu_s.abs()
            })
            .fold(0.0, f64::max);
        let spread = self.config.tail_sigmas * p.sigma * len.sqrt() + drift_allowance * len;
        let upper = u_observed + spread;
        let m = self.config.grid_points;
        let step = (upper - c) / (m - 1) as f64;
        Ok(PosteriorDensity {
            lower: c,
            step,
            weights: PosteriorDensity::spike(c, step, m, u_observed),
            anchor_time: t,
            survival_mass: 1.0,
            measure: self.drifts.measure,
            atom: Some(u_observed),
        })
    }

    /// Bayes update from the quote `prev` (at the prior's anchor time) to `next`.
    pub fn posterior_step(
        &self,
        prior: &PosteriorDensity,
        prev: &ObservationRecord,
        next: &ObservationRecord,
    ) -> Result<PosteriorDensity> {
        if !prior.measure.compatible_with(self.drifts.measure) {
            return Err(CocoError::MeasureMismatch {
                posterior: prior.measure,
                requested: self.drifts.measure,
            });
        }
        if (prev.time - prior.anchor_time).abs() > 1e-9 {
            return Err(CocoError::domain(format!(
                "observation at t = {} does not match posterior anchor {}",
                prev.time, prior.anchor_time
            )));
        }
        ObservationRecord::validate_series(&[*prev, *next])?;
        let dt = next.time - prev.time;
        if dt <= TIME_TOLERANCE {
            return Err(CocoError::domain("observation step must have dt > 0"));
        }
        let kernel = TransitionKernelInputs {
            d_log_s: (next.stock_price / prev.stock_price).ln(),
            dt,
            drifts: self.drifts,
        };
        if self.params.rho.abs() >= 1.0 {
            return self.degenerate_step(prior, &kernel, next.time);
        }

        let mut prior = prior.clone();
        let mut expansions = 0;
        loop {
            let unnormalized = self.propagate(&prior, &kernel)?;
            let normalization = trapezoid(&unnormalized, prior.step);
            if !(normalization > COLLAPSE_THRESHOLD) || !normalization.is_finite() {
                return Err(CocoError::PosteriorCollapse {
                    time: next.time,
                    normalization,
                });
            }
            let n = unnormalized.len();
            let cells = self.config.edge_cells.min(n - 1);
            let edge_mass = trapezoid(&unnormalized[n - 1 - cells..], prior.step) / normalization;
            if edge_mass > self.config.edge_mass_tolerance && expansions < MAX_GRID_EXPANSIONS {
                // Same spacing, more nodes on top; the prior is zero there.
                let extra = (n / 2).max(1);
                prior.weights.resize(n + extra, 0.0);
                expansions += 1;
                continue;
            }
            let weights = unnormalized.iter().map(|w| w / normalization).collect();
            return Ok(PosteriorDensity {
                lower: prior.lower,
                step: prior.step,
                weights,
                anchor_time: next.time,
                // A one-step survival probability; the excess over 1 is rounding.
                survival_mass: prior.survival_mass * normalization.min(1.0),
                measure: prior.measure,
                atom: None,
            });
        }
    }

    fn propagate(&self, prior: &PosteriorDensity, k: &TransitionKernelInputs) -> Result<Vec<f64>> {
        let p = &self.params;
        let c = p.conversion_barrier;
        let n = prior.len();
        let shift = p.rho * k.d_log_s;
        let mut out = vec![0.0; n];
        if let Some(u0) = prior.atom {
            let scale = self.lattice_scale(prior.lower - u0, prior.step, k)?;
            for (j, slot) in out.iter_mut().enumerate() {
                let u = prior.node(j);
                let bridge = bridge_no_hit(u0, u, c, p.sigma, k.dt);
                if bridge > 0.0 {
                    *slot = scale * bridge * kernel_h(u - u0 - shift, k, p)?;
                }
            }
            return Ok(out);
        }
        let scale = self.lattice_scale(0.0, prior.step, k)?;
        match self.config.kernel {
            KernelMode::Dense => {
                for (j, slot) in out.iter_mut().enumerate() {
                    let u = prior.node(j);
                    let mut acc = 0.0;
                    for i in 0..n {
                        let q = prior.trapezoid_weight(i) * prior.weights[i];
                        if q == 0.0 {
                            continue;
                        }
                        let v = prior.node(i);
                        acc += q * bridge_no_hit(v, u, c, p.sigma, k.dt) * kernel_h(u - v - shift, k, p)?;
                    }
                    *slot = scale * acc;
                }
            }
            KernelMode::Banded => {
                let h = prior.step;
                let var = p.sigma * p.sigma * (1.0 - p.rho * p.rho) * k.dt;
                let sd = var.sqrt();
                let center = shift + k.drifts.residual_drift(p.rho) * k.dt;
                let half = self.config.band_sigmas * sd;
                let d_lo = ((center - half) / h).ceil() as i64;
                let d_hi = ((center + half) / h).floor() as i64;
                // Kernel value for each grid offset d = j - i.
                let kvec: Vec<f64> = (d_lo..=d_hi)
                    .map(|d| Ok(scale * kernel_h(d as f64 * h - shift, k, p)?))
                    .collect::<Result<_>>()?;
                let gap: Vec<f64> = (0..n).map(|i| prior.node(i) - c).collect();
                let inv = 2.0 / (p.sigma * p.sigma * k.dt);
                for i in 0..n {
                    let q = prior.trapezoid_weight(i) * prior.weights[i];
                    if q == 0.0 || gap[i] <= 0.0 {
                        continue;
                    }
                    let j_lo = (i as i64 + d_lo).max(1);
                    let j_hi = (i as i64 + d_hi).min(n as i64 - 1);
                    let ai = gap[i] * inv;
                    for j in j_lo..=j_hi {
                        let j = j as usize;
                        let x = ai * gap[j];
                        let bridge = if x > BRIDGE_SATURATION { 1.0 } else { -(-x).exp_m1() };
                        out[j] += q * bridge * kvec[(j as i64 - i as i64 - d_lo) as usize];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Factor that makes the kernel sum to one on the lattice `offset + d * h`,
    /// so a step never creates mass when the kernel is narrow against the grid.
    fn lattice_scale(&self, offset: f64, h: f64, k: &TransitionKernelInputs) -> Result<f64> {
        let p = &self.params;
        let sd = (p.sigma * p.sigma * (1.0 - p.rho * p.rho) * k.dt).sqrt();
        let center = p.rho * k.d_log_s + k.drifts.residual_drift(p.rho) * k.dt;
        let half = (self.config.band_sigmas + 1.0) * sd;
        let d_lo = ((center - half - offset) / h).ceil() as i64;
        let d_hi = ((center + half - offset) / h).floor() as i64;
        let mut mass = 0.0;
        for d in d_lo..=d_hi {
            mass += h * kernel_h(offset + d as f64 * h - p.rho * k.d_log_s, k, p)?;
        }
        Ok(if mass > 0.0 { 1.0 / mass } else { 1.0 })
    }

    /// Perfect-correlation limit: the point mass moves with the stock.
    fn degenerate_step(
        &self,
        prior: &PosteriorDensity,
        k: &TransitionKernelInputs,
        time: f64,
    ) -> Result<PosteriorDensity> {
        let p = &self.params;
        let u0 = prior.atom.ok_or_else(|| {
            CocoError::domain("the |rho| = 1 limit path requires a point-mass prior")
        })?;
        let u = u0 + p.rho * k.d_log_s + k.drifts.residual_drift(p.rho) * k.dt;
        let factor = bridge_no_hit(u0, u, p.conversion_barrier, p.sigma, k.dt);
        if !(factor > COLLAPSE_THRESHOLD) {
            return Err(CocoError::PosteriorCollapse {
                time,
                normalization: factor,
            });
        }
        let mut len = prior.len();
        while prior.lower + (len - 1) as f64 * prior.step < u {
            len += len / 2;
        }
        Ok(PosteriorDensity {
            lower: prior.lower,
            step: prior.step,
            weights: PosteriorDensity::spike(prior.lower, prior.step, len, u),
            anchor_time: time,
            survival_mass: prior.survival_mass * factor,
            measure: prior.measure,
            atom: Some(u),
        })
    }

    /// Resets at `observations[0]` with fundamental value `u_start` and steps
    /// through the remaining quotes; one posterior per quote.
    pub fn run_period(
        &self,
        u_start: f64,
        observations: &[ObservationRecord],
        period_end: f64,
    ) -> Result<Vec<PosteriorDensity>> {
        let first = observations
            .first()
            .ok_or_else(|| CocoError::domain("run_period needs at least one observation"))?;
        let mut out = Vec::with_capacity(observations.len());
        out.push(self.reset_at_update(u_start, first.time, period_end)?);
        for pair in observations.windows(2) {
            let next = self.posterior_step(out.last().unwrap(), &pair[0], &pair[1])?;
            out.push(next);
        }
        Ok(out)
    }
}
