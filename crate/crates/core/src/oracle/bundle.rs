use rand::Rng;
use rand_distr::StandardNormal;

use super::{map_chunks, path_rng, Estimate};
use crate::error::{CocoError, Result};
use crate::hitting::bridge_hit_probability;
use crate::measures::MeasureDrifts;
use crate::model::ModelParams;

/// Unconditional joint paths of `(log S, U)` on a uniform fine grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub n_paths: usize,
    pub steps: usize,
    pub step: f64,
    /// Row-major `n_paths x (steps + 1)`.
    pub log_s: Vec<f64>,
    /// Row-major `n_paths x (steps + 1)`.
    pub u: Vec<f64>,
    /// Barrier hit by the horizon, including bridge crossings between nodes.
    pub crossed: Vec<bool>,
    pub seed: u64,
}

impl PathBundle {
    pub fn log_s_path(&self, i: usize) -> &[f64] {
        &self.log_s[i * (self.steps + 1)..(i + 1) * (self.steps + 1)]
    }

    pub fn u_path(&self, i: usize) -> &[f64] {
        &self.u[i * (self.steps + 1)..(i + 1) * (self.steps + 1)]
    }

    pub fn crossing_estimate(&self) -> Estimate {
        Estimate::proportion(self.crossed.iter().filter(|&&c| c).count() as u64, self.n_paths as u64)
    }

    /// Sample correlation of the `(dlog S, dU)` increments over all paths and steps.
    pub fn increment_correlation(&self) -> f64 {
        let mut n = 0.0;
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..self.n_paths {
            let (ls, u) = (self.log_s_path(i), self.u_path(i));
            for k in 0..self.steps {
                let x = ls[k + 1] - ls[k];
                let y = u[k + 1] - u[k];
                n += 1.0;
                sx += x;
                sy += y;
                sxx += x * x;
                syy += y * y;
                sxy += x * y;
            }
        }
        let cov = sxy / n - sx * sy / (n * n);
        cov / ((sxx / n - sx * sx / (n * n)) * (syy / n - sy * sy / (n * n))).sqrt()
    }
}

/// Simulates `n_paths` joint paths over `[0, horizon]` from
/// `(ln S_0, U_0)`. Increments are exact Gaussian draws; `U` combines the
/// stock shock with an independent one as `rho dW + sqrt(1 - rho^2) dZ`, and a
/// barrier crossing between grid nodes is decided by a Bernoulli draw with the
/// Brownian-bridge hitting probability.
pub fn simulate_bundle(
    p: &ModelParams,
    drifts: &MeasureDrifts,
    horizon: f64,
    n_paths: usize,
    dt_fine: f64,
    seed: u64,
) -> Result<PathBundle> {
    p.validate_limit_mode()?;
    if n_paths == 0 {
        return Err(CocoError::domain("n_paths must be >= 1"));
    }
    if !(horizon > 0.0) || !(dt_fine > 0.0) || dt_fine > 1e-3 * horizon * (1.0 + 1e-12) {
        return Err(CocoError::domain(format!(
            "need horizon > 0 and 0 < dt_fine <= 1e-3 * horizon (got {horizon}, {dt_fine})"
        )));
    }
    let steps = (horizon / dt_fine).ceil() as usize;
    let h = horizon / steps as f64;
    let width = steps + 1;
    let sq = h.sqrt();
    let resid = drifts.residual_drift(p.rho) * h;
    let ortho = p.sigma * (1.0 - p.rho * p.rho).max(0.0).sqrt() * sq;
    let c = p.conversion_barrier;
    let var = p.sigma * p.sigma * h;

    let chunks = map_chunks(n_paths as u64, |range| {
        let mut ls_out = Vec::with_capacity(range.clone().count() * width);
        let mut u_out = Vec::with_capacity(range.clone().count() * width);
        let mut crossed = Vec::with_capacity(range.clone().count());
        for path in range {
            let mut rng = path_rng(seed, path);
            let mut ls = p.initial_stock.ln();
            let mut u = p.initial_fundamental;
            let mut hit = u <= c;
            ls_out.push(ls);
            u_out.push(u);
            for _ in 0..steps {
                let w: f64 = rng.sample(StandardNormal);
                let z: f64 = rng.sample(StandardNormal);
                let d_ls = drifts.mu_s * h + p.sigma * sq * w;
                let u_next = u + p.rho * d_ls + resid + ortho * z;
                if !hit {
                    if u_next <= c {
                        hit = true;
                    } else {
                        let q = bridge_hit_probability(u - c, u_next - c, var);
                        if q > 0.0 && rng.random::<f64>() < q {
                            hit = true;
                        }
                    }
                }
                ls += d_ls;
                u = u_next;
                ls_out.push(ls);
                u_out.push(u);
            }
            crossed.push(hit);
        }
        (ls_out, u_out, crossed)
    });

    let mut bundle = PathBundle {
        n_paths,
        steps,
        step: h,
        log_s: Vec::with_capacity(n_paths * width),
        u: Vec::with_capacity(n_paths * width),
        crossed: Vec::with_capacity(n_paths),
        seed,
    };
    for (ls, u, crossed) in chunks {
        bundle.log_s.extend(ls);
        bundle.u.extend(u);
        bundle.crossed.extend(crossed);
    }
    Ok(bundle)
}

/// Fraction of paths of `u0 + mu t + sigma W_t` that reach `c` by `horizon`,
/// stepping with `dt_fine`. With `bridge = false` only grid nodes are checked.
/// Paths stop at their first crossing; nothing is stored.
#[allow(clippy::too_many_arguments)]
pub fn crossing_frequency(
    u0: f64,
    c: f64,
    mu: f64,
    sigma: f64,
    horizon: f64,
    n_paths: u64,
    dt_fine: f64,
    seed: u64,
    bridge: bool,
) -> Result<Estimate> {
    if n_paths == 0 || !(sigma > 0.0) || !(horizon > 0.0) || !(dt_fine > 0.0) {
        return Err(CocoError::domain("crossing_frequency needs positive sizes"));
    }
    if u0 <= c {
        return Ok(Estimate { mean: 1.0, stderr: 0.0, n: n_paths });
    }
    let steps = (horizon / dt_fine).ceil().max(1.0) as usize;
    let h = horizon / steps as f64;
    let drift = mu * h;
    let scale = sigma * h.sqrt();
    let var = sigma * sigma * h;
    let counts = map_chunks(n_paths, |range| {
        let mut hits = 0u64;
        for path in range {
            let mut rng = path_rng(seed, path);
            let mut x = u0 - c;
            for _ in 0..steps {
                let z: f64 = rng.sample(StandardNormal);
                let next = x + drift + scale * z;
                if next <= 0.0 {
                    hits += 1;
                    break;
                }
                if bridge {
                    let q = bridge_hit_probability(x, next, var);
                    if q > 0.0 && rng.random::<f64>() < q {
                        hits += 1;
                        break;
                    }
                }
                x = next;
            }
        }
        hits
    });
    Ok(Estimate::proportion(counts.iter().sum(), n_paths))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hitting::first_passage_cdf;
    use crate::measures::{drifts_under, MeasureTag};

    #[test]
    fn perfect_correlation_moves_together() {
        let p = ModelParams::illustration().with_rho(1.0);
        let d = drifts_under(MeasureTag::PStar, &p);
        let b = simulate_bundle(&p, &d, 0.1, 3, 1e-4, 1).unwrap();
        for i in 0..3 {
            let (ls, u) = (b.log_s_path(i), b.u_path(i));
            for k in 0..b.steps {
                let expected = ls[k + 1] - ls[k] + (d.mu_u - d.mu_s) * b.step;
                assert!((u[k + 1] - u[k] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn increments_have_target_moments_and_correlation() {
        let p = ModelParams::illustration().with_rho(0.5);
        let d = drifts_under(MeasureTag::PStar, &p);
        let b = simulate_bundle(&p, &d, 1.0, 1000, 1e-3, 3).unwrap();
        let n = (b.n_paths * b.steps) as f64;
        let incs: Vec<f64> = (0..b.n_paths)
            .flat_map(|i| b.u_path(i).windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>())
            .collect();
        let mean = incs.iter().sum::<f64>() / n;
        let var = incs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let target_var = p.sigma * p.sigma * b.step;
        assert!((mean - d.mu_u * b.step).abs() < 4.0 * (target_var / n).sqrt());
        assert!((var - target_var).abs() < 4.0 * target_var * (2.0 / n).sqrt());
        let corr = b.increment_correlation();
        assert!((corr - 0.5).abs() < 4.0 * (1.0 - 0.25) / n.sqrt(), "corr {corr}");
    }

    #[test]
    fn bundle_is_reproducible() {
        let p = ModelParams::illustration().with_rho(0.3);
        let d = drifts_under(MeasureTag::PS, &p);
        let a = simulate_bundle(&p, &d, 0.5, 50, 5e-4, 11).unwrap();
        let b = simulate_bundle(&p, &d, 0.5, 50, 5e-4, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate_bundle(&p, &d, 0.5, 50, 5e-4, 12).unwrap();
        assert_ne!(a.u, c.u);
    }

    #[test]
    fn bundle_rejects_coarse_grid() {
        let p = ModelParams::illustration();
        let d = drifts_under(MeasureTag::PStar, &p);
        assert!(simulate_bundle(&p, &d, 1.0, 10, 0.01, 0).is_err());
        assert!(simulate_bundle(&p, &d, 1.0, 0, 1e-3, 0).is_err());
    }

    #[test]
    fn bridge_correction_is_needed_and_sufficient() {
        let (u0, c, mu, sigma, t) = (0.3, 0.0, -0.09, 0.49, 1.0);
        let exact = first_passage_cdf(u0, c, mu, sigma, t).unwrap();
        let n = 40_000;
        let with = crossing_frequency(u0, c, mu, sigma, t, n, 0.01, 5, true).unwrap();
        let without = crossing_frequency(u0, c, mu, sigma, t, n, 0.01, 5, false).unwrap();
        assert!((with.mean - exact).abs() <= 3.0 * with.stderr, "{with:?} vs {exact}");
        assert!(without.mean < exact - 3.0 * without.stderr, "{without:?} vs {exact}");
    }

    #[test]
    fn bundle_crossings_match_closed_form() {
        let p = ModelParams::illustration().with_rho(0.5).with_barrier(4.3);
        let d = drifts_under(MeasureTag::PStar, &p);
        let b = simulate_bundle(&p, &d, 1.0, 4000, 1e-3, 21).unwrap();
        let exact = first_passage_cdf(p.initial_fundamental, 4.3, d.mu_u, p.sigma, 1.0).unwrap();
        let est = b.crossing_estimate();
        assert!((est.mean - exact).abs() <= 3.0 * est.stderr_at(exact), "{est:?} vs {exact}");
    }
}
