//! Monte Carlo engines used to verify the analytic components.
//!
//! Every path draws from its own ChaCha8 stream selected by `(seed, path index)`,
//! and partial results are reduced in a fixed chunk order, so estimates do not
//! depend on the number of threads or their scheduling.

mod bundle;
mod conditional;

pub use bundle::{crossing_frequency, simulate_bundle, PathBundle};
pub use conditional::{
    conditional_posterior_oracle, price_oracle, share_survival_check, survival_oracle, survival_series_oracle,
    ConditionalHistogram, ConditionalSampler, OracleConfig, RnCheck, SeriesPoint,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Paths per reduction chunk.
pub(crate) const CHUNK: u64 = 4096;

/// Acceptance rates below this are reported as oracle starvation.
pub const MIN_ACCEPTANCE_RATE: f64 = 1e-5;

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
}

impl Estimate {
    /// Proportion estimate with the binomial standard error.
    pub fn proportion(successes: u64, n: u64) -> Self {
        let mean = if n == 0 { f64::NAN } else { successes as f64 / n as f64 };
        Estimate {
            mean,
            stderr: (mean * (1.0 - mean) / n as f64).sqrt(),
            n,
        }
    }

    pub fn from_moments(sum: f64, sum_sq: f64, n: u64) -> Self {
        let nf = n as f64;
        let mean = sum / nf;
        let var = ((sum_sq / nf - mean * mean) * nf / (nf - 1.0).max(1.0)).max(0.0);
        Estimate {
            mean,
            stderr: (var / nf).sqrt(),
            n,
        }
    }

    /// Binomial standard error evaluated at a hypothesised probability `p0`;
    /// stays informative when the sample proportion is 0 or 1.
    pub fn stderr_at(&self, p0: f64) -> f64 {
        (p0 * (1.0 - p0) / self.n as f64).sqrt()
    }

    /// `|value - mean| <= k * stderr`.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (value - self.mean).abs() <= k * self.stderr
    }
}

pub(crate) fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Runs `body` on each chunk of path indices in parallel and returns the chunk
/// results in index order.
pub(crate) fn map_chunks<T, F>(n_paths: u64, body: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<u64>) -> T + Sync,
{
    let chunks = n_paths.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| body(c * CHUNK..((c + 1) * CHUNK).min(n_paths)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_of_order() {
        let a: Vec<u64> = (0..4).map(|i| path_rng(7, i).random()).collect();
        let b: Vec<u64> = (0..4).rev().map(|i| path_rng(7, i).random()).collect();
        assert_eq!(a, b.into_iter().rev().collect::<Vec<_>>());
        assert_ne!(a[0], a[1]);
        assert_ne!(path_rng(7, 0).random::<u64>(), path_rng(8, 0).random::<u64>());
    }

    #[test]
    fn chunks_cover_range_in_order() {
        let parts = map_chunks(10_000, |r| (r.start, r.end));
        assert_eq!(parts.first().unwrap().0, 0);
        assert_eq!(parts.last().unwrap().1, 10_000);
        for w in parts.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
    }

    #[test]
    fn estimate_helpers() {
        let e = Estimate::proportion(25, 100);
        assert_eq!(e.mean, 0.25);
        assert!((e.stderr - (0.25f64 * 0.75 / 100.0).sqrt()).abs() < 1e-15);
        let all = Estimate::proportion(100, 100);
        assert_eq!(all.stderr, 0.0);
        assert!((all.stderr_at(0.99) - (0.99f64 * 0.01 / 100.0).sqrt()).abs() < 1e-15);
        let m = Estimate::from_moments(10.0, 30.0, 4);
        assert_eq!(m.mean, 2.5);
        assert!(m.covers(2.6, 1.0));
    }
}
