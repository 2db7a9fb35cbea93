//! Conditional survival, the CoCo price and the Doob–Meyer decomposition of the
//! conditional conversion probability.

use std::io::Write;

use crate::error::{CocoError, Result};
use crate::filter::{FilterConfig, GridFilter, PosteriorDensity};
use crate::hitting::survival_closed_form;
use crate::measures::{drifts_under, MeasureTag};
use crate::model::{ModelParams, ObservationRecord, UpdateSchedule, TIME_TOLERANCE};

/// `P(tau > horizon | G_t)` on the survival event, under `measure`.
///
/// The posterior carries the information up to its anchor time; survival from
/// there on uses the closed form with the continuation drift of `measure`.
pub fn conditional_survival(
    post: &PosteriorDensity,
    measure: MeasureTag,
    p: &ModelParams,
    horizon: f64,
) -> Result<f64> {
    if !post.measure().compatible_with(measure) {
        return Err(CocoError::MeasureMismatch {
            posterior: post.measure(),
            requested: measure,
        });
    }
    let remaining = horizon - post.anchor_time();
    if remaining < -TIME_TOLERANCE {
        return Err(CocoError::domain(format!(
            "horizon {horizon} precedes posterior anchor {}",
            post.anchor_time()
        )));
    }
    if remaining <= TIME_TOLERANCE {
        return Ok(1.0);
    }
    let mu = drifts_under(measure, p).mu_u;
    let c = p.conversion_barrier;
    if let Some(u) = post.atom() {
        return survival_closed_form(u, c, mu, p.sigma, remaining);
    }
    if !(p.sigma > 0.0) {
        return Err(CocoError::domain(format!("sigma must be > 0, got {}", p.sigma)));
    }
    // sigma and the horizon are positive, so the per-node calls cannot fail.
    let value = post.expectation(|u| survival_closed_form(u, c, mu, p.sigma, remaining).unwrap_or(0.0));
    Ok(value.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalReport {
    pub t: f64,
    pub horizon: f64,
    pub p_survive_star: f64,
    pub p_survive_t: f64,
    pub p_convert_s: f64,
}

impl SurvivalReport {
    /// `post_star` is a risk-neutral (or forward) posterior, `post_s` a
    /// share-measure posterior, both anchored at the same time.
    pub fn compute(
        post_star: &PosteriorDensity,
        post_s: &PosteriorDensity,
        p: &ModelParams,
        horizon: f64,
    ) -> Result<Self> {
        check_same_anchor(post_star, post_s)?;
        let p_survive_star = conditional_survival(post_star, MeasureTag::PStar, p, horizon)?;
        let p_survive_t = conditional_survival(post_star, MeasureTag::PT, p, horizon)?;
        let p_convert_s = 1.0 - conditional_survival(post_s, MeasureTag::PS, p, horizon)?;
        Ok(SurvivalReport {
            t: post_star.anchor_time(),
            horizon,
            p_survive_star,
            p_survive_t,
            p_convert_s,
        })
    }
}

fn check_same_anchor(a: &PosteriorDensity, b: &PosteriorDensity) -> Result<()> {
    if (a.anchor_time() - b.anchor_time()).abs() > 1e-9 {
        return Err(CocoError::domain(format!(
            "posteriors anchored at different times ({} vs {})",
            a.anchor_time(),
            b.anchor_time()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceQuote {
    pub t: f64,
    pub pi: f64,
    pub bond_leg: f64,
    pub equity_leg: f64,
}

impl PriceQuote {
    fn from_probabilities(p: &ModelParams, t: f64, stock_price: f64, survive_t: f64, convert_s: f64) -> Self {
        let remaining = p.maturity - t;
        let bond_leg = p.face_value * (-p.r * remaining).exp() * survive_t;
        let equity_leg = p.conversion_ratio * stock_price * (-p.kappa * remaining).exp() * convert_s;
        PriceQuote {
            t,
            pi: bond_leg + equity_leg,
            bond_leg,
            equity_leg,
        }
    }
}

/// CoCo price at `t` on the survival event. `post_t` is built with the
/// forward-measure (equivalently risk-neutral) drifts, `post_s` with the
/// share-measure drifts; both must be anchored at `t`. `stock_price` is `S_t`.
pub fn price(
    post_t: &PosteriorDensity,
    post_s: &PosteriorDensity,
    p: &ModelParams,
    t: f64,
    stock_price: f64,
) -> Result<PriceQuote> {
    check_same_anchor(post_t, post_s)?;
    if (post_t.anchor_time() - t).abs() > 1e-9 {
        return Err(CocoError::domain(format!(
            "valuation time {t} differs from posterior anchor {}",
            post_t.anchor_time()
        )));
    }
    if !(stock_price > 0.0) {
        return Err(CocoError::domain(format!("stock price must be positive, got {stock_price}")));
    }
    let survive_t = conditional_survival(post_t, MeasureTag::PT, p, p.maturity)?;
    let convert_s = 1.0 - conditional_survival(post_s, MeasureTag::PS, p, p.maturity)?;
    Ok(PriceQuote::from_probabilities(p, t, stock_price, survive_t, convert_s))
}

/// Price when `U_t = u` is known exactly.
pub fn price_full_information(p: &ModelParams, t: f64, u: f64, stock_price: f64) -> Result<PriceQuote> {
    let remaining = p.maturity - t;
    let c = p.conversion_barrier;
    let (survive_t, convert_s) = if remaining <= TIME_TOLERANCE {
        let alive = if u > c { 1.0 } else { 0.0 };
        (alive, 1.0 - alive)
    } else {
        let mu_t = drifts_under(MeasureTag::PT, p).mu_u;
        let mu_s = drifts_under(MeasureTag::PS, p).mu_u;
        (
            survival_closed_form(u, c, mu_t, p.sigma, remaining)?,
            1.0 - survival_closed_form(u, c, mu_s, p.sigma, remaining)?,
        )
    };
    Ok(PriceQuote::from_probabilities(p, t, stock_price, survive_t, convert_s))
}

/// Fundamental value revealed at an update time, with whether conversion
/// already happened at or before it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateRecord {
    pub time: f64,
    pub fundamental: f64,
    pub converted: bool,
}

/// `F(t) = P*(tau <= t | F~_t)` on the observation grid, split into the
/// predictable part `A` and the jump part `M` accumulated at update times.
///
/// The left limit before each update is stored as its own row with
/// `left_limit = true`, sharing the update's time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CompensatorPath {
    pub times: Vec<f64>,
    pub f_values: Vec<f64>,
    pub a_values: Vec<f64>,
    pub m_values: Vec<f64>,
    pub left_limit: Vec<bool>,
}

impl CompensatorPath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn push(&mut self, t: f64, f: f64, m: f64, left_limit: bool) {
        self.times.push(t);
        self.f_values.push(f);
        self.m_values.push(m);
        self.a_values.push(f - m);
        self.left_limit.push(left_limit);
    }

    /// Largest decrease of `A` between consecutive rows (0 if nondecreasing).
    pub fn max_a_decrease(&self) -> f64 {
        self.a_values
            .windows(2)
            .map(|w| (w[0] - w[1]).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Largest `|F - (M + A)|`.
    pub fn max_identity_error(&self) -> f64 {
        (0..self.len())
            .map(|i| (self.f_values[i] - (self.m_values[i] + self.a_values[i])).abs())
            .fold(0.0, f64::max)
    }

    /// `M` at time `t`: the value after every jump at or before `t`.
    pub fn m_at(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&s| s <= t + TIME_TOLERANCE);
        if idx == 0 {
            0.0
        } else {
            self.m_values[idx - 1]
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["t", "left_limit", "F", "A", "M"])?;
        for i in 0..self.len() {
            writer.write_record([
                format!("{:.9}", self.times[i]),
                u8::from(self.left_limit[i]).to_string(),
                format!("{:.12}", self.f_values[i]),
                format!("{:.12}", self.a_values[i]),
                format!("{:.12}", self.m_values[i]),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Builds the compensator path for one scenario.
///
/// `observations` are the stock quotes at every time of
/// `schedule.all_observation_times()`; `updates` hold the revealed fundamental
/// values at `T_1, T_2, ...` (the value at `T_0` is `p.initial_fundamental`).
/// Within a period `F` is read off the filter's survival mass; the left limit
/// at the next update continues the last posterior exactly to the update time.
pub fn compensator_path(
    observations: &[ObservationRecord],
    updates: &[UpdateRecord],
    p: &ModelParams,
    schedule: &UpdateSchedule,
    config: &FilterConfig,
) -> Result<CompensatorPath> {
    let times = schedule.all_observation_times();
    if observations.len() != times.len() {
        return Err(CocoError::domain(format!(
            "scenario has {} quotes but the schedule has {} observation times",
            observations.len(),
            times.len()
        )));
    }
    for (o, t) in observations.iter().zip(&times) {
        if (o.time - t).abs() > 1e-9 {
            return Err(CocoError::domain(format!(
                "quote at {} does not match observation time {t}",
                o.time
            )));
        }
    }
    if updates.len() != schedule.periods() {
        return Err(CocoError::domain(format!(
            "scenario has {} update values for {} periods",
            updates.len(),
            schedule.periods()
        )));
    }
    let filter = GridFilter::new(*p, MeasureTag::PStar, *config)?;
    let mu = filter.drifts().mu_u;
    let c = p.conversion_barrier;
    let update_times = schedule.update_times();

    let mut path = CompensatorPath::default();
    let mut m = 0.0;
    let mut current_u = Some(p.initial_fundamental);
    path.push(0.0, 0.0, 0.0, false);
    let mut cursor = 0usize;

    for j in 0..schedule.periods() {
        let period_times = schedule.period_observations(j);
        let end = update_times[j + 1];
        let first = cursor;
        let last = first + period_times.len() - 1;
        cursor = last;
        let record = updates[j];
        if (record.time - end).abs() > 1e-9 {
            return Err(CocoError::domain(format!(
                "update value at {} does not match T_{} = {end}",
                record.time,
                j + 1
            )));
        }

        let f_left = match current_u {
            None => {
                for k in first + 1..last {
                    path.push(times[k], 1.0, m, false);
                }
                1.0
            }
            Some(u) => {
                let obs = &observations[first..last];
                let posts = filter.run_period(u, obs, end)?;
                for (k, post) in posts.iter().enumerate().skip(1) {
                    path.push(times[first + k], 1.0 - post.survival_mass(), m, false);
                }
                let post = posts.last().unwrap();
                let remaining = end - post.anchor_time();
                let cont = if let Some(a) = post.atom() {
                    survival_closed_form(a, c, mu, p.sigma, remaining)?
                } else {
                    conditional_survival(post, MeasureTag::PStar, p, end)?
                };
                (1.0 - post.survival_mass() * cont).clamp(0.0, 1.0)
            }
        };
        path.push(end, f_left, m, true);
        let converted = current_u.is_none() || record.converted || record.fundamental <= c;
        let f_update = if converted { 1.0 } else { 0.0 };
        m += f_update - f_left;
        path.push(end, f_update, m, false);
        current_u = if converted { None } else { Some(record.fundamental) };
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::FilterConfig;

    fn obs(t: f64, s: f64) -> ObservationRecord {
        ObservationRecord::new(t, s).unwrap()
    }

    fn star_and_share(p: &ModelParams, series: &[ObservationRecord]) -> (PosteriorDensity, PosteriorDensity) {
        let cfg = FilterConfig::default().with_grid_points(512);
        let a = GridFilter::new(*p, MeasureTag::PT, cfg)
            .unwrap()
            .run_period(p.initial_fundamental, series, p.maturity)
            .unwrap()
            .pop()
            .unwrap();
        let b = GridFilter::new(*p, MeasureTag::PS, cfg)
            .unwrap()
            .run_period(p.initial_fundamental, series, p.maturity)
            .unwrap()
            .pop()
            .unwrap();
        (a, b)
    }

    #[test]
    fn spike_posterior_matches_closed_form() {
        let p = ModelParams::illustration();
        let f = GridFilter::new(p, MeasureTag::PStar, FilterConfig::default()).unwrap();
        let post = f.reset_at_update(p.initial_fundamental, 0.0, 1.0).unwrap();
        let mu = drifts_under(MeasureTag::PStar, &p).mu_u;
        let expected = survival_closed_form(p.initial_fundamental, p.conversion_barrier, mu, p.sigma, 1.0).unwrap();
        assert_eq!(conditional_survival(&post, MeasureTag::PStar, &p, 1.0).unwrap(), expected);
        assert_eq!(conditional_survival(&post, MeasureTag::PStar, &p, 0.0).unwrap(), 1.0);
        assert!(matches!(
            conditional_survival(&post, MeasureTag::PS, &p, 1.0),
            Err(CocoError::MeasureMismatch { .. })
        ));
    }

    #[test]
    fn forward_and_risk_neutral_survival_agree() {
        let p = ModelParams::illustration().with_rho(0.5);
        let (post, post_s) = star_and_share(&p, &[obs(0.0, 100.0), obs(0.1, 80.0), obs(0.2, 70.0)]);
        let report = SurvivalReport::compute(&post, &post_s, &p, 1.0).unwrap();
        assert_eq!(report.p_survive_star, report.p_survive_t);
        for x in [report.p_survive_star, report.p_convert_s] {
            assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn price_limits() {
        let base = ModelParams::illustration().with_rho(0.5);
        let series = [obs(0.0, 100.0), obs(0.1, 90.0)];

        let far = base.with_barrier(base.initial_fundamental - 20.0 * base.sigma);
        let (pt, ps) = star_and_share(&far, &series);
        let q = price(&pt, &ps, &far, 0.1, 90.0).unwrap();
        assert!((q.pi - far.face_value * (-far.r * 0.9f64).exp()).abs() < 1e-6);

        let near = base.with_barrier(base.initial_fundamental - 1e-10);
        let f_t = GridFilter::new(near, MeasureTag::PT, FilterConfig::default()).unwrap();
        let f_s = GridFilter::new(near, MeasureTag::PS, FilterConfig::default()).unwrap();
        let pt = f_t.reset_at_update(near.initial_fundamental, 0.0, 1.0).unwrap();
        let ps = f_s.reset_at_update(near.initial_fundamental, 0.0, 1.0).unwrap();
        let q = price(&pt, &ps, &near, 0.0, 100.0).unwrap();
        assert!((q.pi - near.conversion_ratio * 100.0).abs() < 1e-6);
        assert_eq!(q.pi, q.bond_leg + q.equity_leg);
    }

    #[test]
    fn price_legs_bounded() {
        let p = ModelParams::illustration().with_rho(0.25);
        let (pt, ps) = star_and_share(&p, &[obs(0.0, 100.0), obs(0.05, 60.0), obs(0.1, 50.0)]);
        let q = price(&pt, &ps, &p, 0.1, 50.0).unwrap();
        assert!(q.bond_leg >= 0.0 && q.bond_leg <= p.face_value * (-p.r * 0.9f64).exp());
        assert!(q.equity_leg >= 0.0 && q.equity_leg <= p.conversion_ratio * 50.0);
    }

    #[test]
    fn compensator_first_period_and_continuity() {
        let p = ModelParams::illustration().with_rho(0.5);
        let schedule = UpdateSchedule::uniform(vec![0.0, 1.0, 2.0], 0.1).unwrap();
        let prices = [
            100.0, 90.0, 85.0, 70.0, 75.0, 60.0, 62.0, 58.0, 55.0, 50.0, 52.0, 50.0, 48.0, 47.0, 44.0, 46.0, 45.0,
            43.0, 44.0, 45.0, 41.0,
        ];
        let times = schedule.all_observation_times();
        let series: Vec<_> = times.iter().zip(prices).map(|(&t, s)| obs(t, s)).collect();
        let updates = [
            UpdateRecord { time: 1.0, fundamental: 52.0f64.ln() + 0.05, converted: false },
            UpdateRecord { time: 2.0, fundamental: 41.0f64.ln(), converted: false },
        ];
        let cfg = FilterConfig::default().with_grid_points(256);
        let path = compensator_path(&series, &updates, &p, &schedule, &cfg).unwrap();
        for i in 0..path.len() {
            if path.times[i] < 1.0 || path.left_limit[i] && path.times[i] == 1.0 {
                assert_eq!(path.a_values[i], path.f_values[i]);
            }
        }
        assert!(path.max_a_decrease() <= 1e-12);
        assert!(path.max_identity_error() <= 1e-14);
        let i = path.times.iter().position(|&t| t == 1.0).unwrap();
        assert!(path.left_limit[i] && !path.left_limit[i + 1]);
        assert_eq!(path.a_values[i], path.a_values[i + 1]);
        assert_eq!(path.f_values[i + 1], 0.0);
        assert!(path.m_at(1.5) < 0.0);
    }

    #[test]
    fn compensator_after_conversion_is_flat() {
        let p = ModelParams::illustration().with_rho(0.5);
        let schedule = UpdateSchedule::uniform(vec![0.0, 1.0, 2.0], 0.25).unwrap();
        let times = schedule.all_observation_times();
        let series: Vec<_> = times.iter().map(|&t| obs(t, 100.0 - 20.0 * t)).collect();
        let updates = [
            UpdateRecord { time: 1.0, fundamental: p.conversion_barrier - 0.1, converted: true },
            UpdateRecord { time: 2.0, fundamental: p.conversion_barrier - 0.2, converted: true },
        ];
        let path = compensator_path(&series, &updates, &p, &schedule, &FilterConfig::default().with_grid_points(128)).unwrap();
        let after: Vec<_> = path.times.iter().zip(&path.f_values).filter(|(&t, _)| t > 1.0).collect();
        assert!(after.iter().all(|(_, &f)| f == 1.0));
        assert_eq!(path.m_at(2.0), path.m_at(1.0));
        assert!(path.max_a_decrease() <= 1e-12);
    }
}
