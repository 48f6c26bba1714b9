//! Poisson weights and goodness-of-fit helpers.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

pub fn poisson_pmf(k: usize, mean: f64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (-mean + k as f64 * mean.ln() - ln_gamma(k as f64 + 1.0)).exp()
}

/// Weights `P(K = 0..=K_max)` of a Poisson law, truncated at the first
/// `K_max ≥ mean` whose upper tail `1 − Σ` is below `tail`.
pub fn poisson_weights(mean: f64, tail: f64) -> Vec<f64> {
    let hard_cap = (mean + 40.0 * mean.sqrt() + 100.0).ceil() as usize;
    let mut weights = Vec::new();
    let mut cumulative = 0.0;
    for k in 0..=hard_cap {
        let w = poisson_pmf(k, mean);
        weights.push(w);
        cumulative += w;
        if k as f64 >= mean && 1.0 - cumulative < tail {
            break;
        }
    }
    weights
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonFit {
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: f64,
    /// `(label, observed, expected)`; the first and last bins absorb the tails.
    pub bins: Vec<(String, u64, f64)>,
}

/// Pearson chi-square test of a histogram of counts against
/// `Poisson(mean)`. Tail values are pooled into the outermost bins so that
/// every bin has expected count at least `min_expected`.
pub fn poisson_goodness_of_fit(histogram: &[u64], mean: f64, min_expected: f64) -> PoissonFit {
    let total: u64 = histogram.iter().sum();
    let n = total as f64;
    let kmax = histogram
        .len()
        .max((mean + 40.0 * mean.sqrt() + 10.0) as usize);
    let expected: Vec<f64> = (0..=kmax).map(|k| n * poisson_pmf(k, mean)).collect();
    let observed = |k: usize| histogram.get(k).copied().unwrap_or(0);

    let interior: Vec<usize> = (0..=kmax)
        .filter(|&k| expected[k] >= min_expected)
        .collect();
    let (lo, hi) = match (interior.first(), interior.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => (0, 0),
    };

    let mut bins = Vec::new();
    let lower_obs: u64 = (0..=lo).map(observed).sum();
    let lower_exp: f64 = expected[..=lo].iter().sum();
    bins.push((format!("<={lo}"), lower_obs, lower_exp));
    for k in lo + 1..hi {
        bins.push((k.to_string(), observed(k), expected[k]));
    }
    if hi > lo {
        let upper_obs = total - (0..hi).map(observed).sum::<u64>();
        let upper_exp = n - expected[..hi].iter().sum::<f64>();
        bins.push((format!(">={hi}"), upper_obs, upper_exp));
    }

    let chi_square: f64 = bins
        .iter()
        .map(|(_, o, e)| (*o as f64 - e).powi(2) / e)
        .sum();
    let dof = bins.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(dof as f64)
            .expect("positive dof")
            .cdf(chi_square)
    };
    PoissonFit {
        chi_square,
        dof,
        p_value,
        bins,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pmf_values() {
        // e^-2 2^2 / 2!
        assert_abs_diff_eq!(poisson_pmf(2, 2.0), 2.0 * (-2.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(poisson_pmf(0, 0.0), 1.0);
        assert_abs_diff_eq!(poisson_pmf(3, 0.0), 0.0);
        let s: f64 = (0..200).map(|k| poisson_pmf(k, 30.0)).sum();
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn weights_reach_tail() {
        for mean in [0.1, 2.0, 100.0, 2000.0] {
            let w = poisson_weights(mean, 1e-12);
            let s: f64 = w.iter().sum();
            assert!(1.0 - s < 1e-12 + 1e-13 * w.len() as f64, "mean {mean}: {s}");
        }
    }

    #[test]
    fn exact_histogram_fits_perfectly() {
        let mean = 2.0;
        let hist: Vec<u64> = (0..30)
            .map(|k| (1e6 * poisson_pmf(k, mean)).round() as u64)
            .collect();
        let fit = poisson_goodness_of_fit(&hist, mean, 5.0);
        assert!(fit.p_value > 0.99, "{fit:?}");
        assert!(fit.bins.iter().all(|b| b.2 >= 5.0));
    }

    #[test]
    fn wrong_mean_is_rejected() {
        let hist: Vec<u64> = (0..30)
            .map(|k| (1e5 * poisson_pmf(k, 2.2)).round() as u64)
            .collect();
        assert!(poisson_goodness_of_fit(&hist, 2.0, 5.0).p_value < 1e-6);
    }
}
