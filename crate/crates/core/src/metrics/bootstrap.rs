use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub point: Option<f64>,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub n_boot: usize,
    /// Resamples on which the statistic was defined.
    pub n_defined: usize,
    pub warning: Option<String>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap over items (sessions) resampled with replacement.
/// Replicate `b` draws from its own seed `derive(seed, b)`, so results do not
/// depend on thread scheduling.
pub fn bootstrap_ci<T, F>(items: &[T], statistic: F, n_boot: usize, level: f64, seed: u64) -> Result<BootstrapCi>
where
    T: Sync,
    F: Fn(&[&T]) -> Option<f64> + Sync,
{
    if items.is_empty() {
        return Err(Error::Input("bootstrap needs at least one item".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Input(format!("confidence level {level} outside (0, 1)")));
    }
    let warning = (n_boot < 100).then(|| format!("n_boot = {n_boot} is below 100; interval is unreliable"));
    let all: Vec<&T> = items.iter().collect();
    let point = statistic(&all);

    let mut stats: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_from_seed(derive_seed(seed, b as u64));
            let sample: Vec<&T> = (0..items.len())
                .map(|_| &items[rng.random_range(0..items.len())])
                .collect();
            statistic(&sample)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .filter(|v| v.is_finite())
        .collect();
    if stats.is_empty() {
        return Err(Error::Numerical("statistic undefined on every resample".into()));
    }
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapCi {
        point,
        lower: quantile(&stats, tail),
        upper: quantile(&stats, 1.0 - tail),
        level,
        n_boot,
        n_defined: stats.len(),
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(xs: &[&f64]) -> Option<f64> {
        Some(xs.iter().copied().sum::<f64>() / xs.len() as f64)
    }

    #[test]
    fn constant_statistic_has_zero_width() {
        let ci = bootstrap_ci(&[1.0, 2.0, 3.0], |_| Some(5.0), 500, 0.95, 1).unwrap();
        assert_eq!((ci.lower, ci.upper), (5.0, 5.0));
    }

    #[test]
    fn contains_point_estimate_and_is_seeded() {
        let data: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64).collect();
        let a = bootstrap_ci(&data, mean, 2000, 0.95, 9).unwrap();
        let b = bootstrap_ci(&data, mean, 2000, 0.95, 9).unwrap();
        assert_eq!(a, b);
        let p = a.point.unwrap();
        assert!(a.lower <= p && p <= a.upper);
        assert!(a.warning.is_none());
    }

    #[test]
    fn small_n_boot_warns() {
        let ci = bootstrap_ci(&[1.0, 2.0], mean, 50, 0.95, 1).unwrap();
        assert!(ci.warning.is_some());
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[0.0, 10.0], 0.25), 2.5);
        assert_eq!(quantile(&[3.0], 0.9), 3.0);
    }
}
