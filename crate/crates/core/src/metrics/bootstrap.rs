use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Resamples `values` with replacement `replicates` times. The returned mean
/// is the mean of replicate means; limits are `mu +/- 1.96 sigma / sqrt(N)`
/// with `sigma` the population standard deviation of the replicate means and
/// `N` the replicate count.
pub fn bootstrap_ci(values: &[f64], replicates: usize, seed: u64) -> Result<BootstrapCi> {
    if values.is_empty() {
        return Err(Error::UndefinedMetric("bootstrap over zero samples".into()));
    }
    if replicates == 0 {
        return Err(Error::Config("bootstrap needs at least one replicate".into()));
    }
    let n = values.len();
    if values.iter().all(|&v| v == values[0]) {
        return Ok(BootstrapCi {
            mean: values[0],
            lower: values[0],
            upper: values[0],
        });
    }
    let mut rng = rng::seeded(seed);
    let means: Vec<f64> = (0..replicates)
        .map(|_| {
            let total: f64 = (0..n).map(|_| values[rng.random_range(0..n)]).sum();
            total / n as f64
        })
        .collect();
    let mu = means.iter().sum::<f64>() / replicates as f64;
    let var = means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / replicates as f64;
    let half = 1.96 * var.sqrt() / (replicates as f64).sqrt();
    Ok(BootstrapCi {
        mean: mu,
        lower: mu - half,
        upper: mu + half,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_samples() {
        let ci = bootstrap_ci(&[0.5, 0.5, 0.5], 100, 1).unwrap();
        assert_eq!((ci.mean, ci.lower, ci.upper), (0.5, 0.5, 0.5));
        let ci = bootstrap_ci(&[0.7], 10, 1).unwrap();
        assert_eq!((ci.mean, ci.lower, ci.upper), (0.7, 0.7, 0.7));
    }

    #[test]
    fn two_point_mean_converges() {
        let ci = bootstrap_ci(&[0.0, 1.0], 1000, 42).unwrap();
        assert!((ci.mean - 0.5).abs() < 0.05);
        assert!(ci.lower <= ci.mean && ci.mean <= ci.upper);
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let v = [0.1, 0.9, 0.3, 0.35, 0.8];
        let a = bootstrap_ci(&v, 500, 9).unwrap();
        let b = bootstrap_ci(&v, 500, 9).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.lower.to_bits(), b.lower.to_bits());
    }

    #[test]
    fn errors() {
        assert!(bootstrap_ci(&[], 10, 0).is_err());
        assert!(bootstrap_ci(&[1.0], 0, 0).is_err());
    }
}
