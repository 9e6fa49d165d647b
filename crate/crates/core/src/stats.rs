//! Small statistical toolkit: two-sample Kolmogorov-Smirnov, Wilson
//! intervals, two-proportion z-tests and total-variation distance.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// `P[N(0,1) > z]`.
pub fn normal_sf(z: f64) -> f64 {
    std_normal().sf(z)
}

/// `z` with `P[N(0,1) <= z] = p`.
pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

impl KsResult {
    /// The null of equal laws is not rejected at level `alpha`.
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

/// Two-sample KS test. Ties are handled by stepping both empirical CDFs past
/// each distinct value before comparing. NaNs are not allowed.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.partial_cmp(q).expect("no NaN"));
    y.sort_by(|p, q| p.partial_cmp(q).expect("no NaN"));
    let (n1, n2) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n1 && j < n2 {
        let v = x[i].min(y[j]);
        while i < n1 && x[i] == v {
            i += 1;
        }
        while j < n2 && y[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }
    let ne = (n1 * n2) as f64 / (n1 + n2) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    KsResult { statistic: d, p_value: kolmogorov_sf(lambda), n1, n2 }
}

/// `P[K > lambda]` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Wilson score interval at two-sided level `1 - alpha`.
pub fn wilson_interval(successes: u64, n: u64, alpha: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = normal_quantile(1.0 - alpha / 2.0);
    let n = n as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProportionTest {
    pub z: f64,
    /// One-sided p-value for `p1 > p2`.
    pub p_value: f64,
}

/// Pooled two-proportion z-test of `p1 > p2`.
pub fn two_proportion_test(x1: u64, n1: u64, x2: u64, n2: u64) -> ProportionTest {
    let (f1, f2) = (x1 as f64 / n1 as f64, x2 as f64 / n2 as f64);
    let pooled = (x1 + x2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    let z = if se == 0.0 {
        if f1 > f2 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        (f1 - f2) / se
    };
    ProportionTest { z, p_value: normal_sf(z) }
}

/// Histogram over `0..=max_state` plus one overflow bin, normalized.
pub fn histogram(values: impl IntoIterator<Item = u64>, max_state: usize) -> Vec<f64> {
    let mut counts = vec![0u64; max_state + 2];
    let mut n = 0u64;
    for v in values {
        counts[(v as usize).min(max_state + 1)] += 1;
        n += 1;
    }
    counts.iter().map(|c| *c as f64 / n.max(1) as f64).collect()
}

/// `(1/2) sum |p_i - q_i|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n).map(|i| (p.get(i).unwrap_or(&0.0) - q.get(i).unwrap_or(&0.0)).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_critical_values() {
        // Classical critical points: 1.3581 at 5%, 1.6276 at 1%.
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn ks_identical_and_shifted() {
        let a: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let r = ks_two_sample(&a, &a);
        assert_eq!(r.statistic, 0.0);
        let b: Vec<f64> = (0..1000).map(|i| i as f64 + 500.0).collect();
        let r = ks_two_sample(&a, &b);
        assert!((r.statistic - 0.5).abs() < 1e-12);
        assert!(r.p_value < 1e-10);
    }

    #[test]
    fn ks_ties_at_atoms() {
        // Same two-atom law in different orders: the statistic is exactly 0.
        let a = [0.0, 0.0, 1.0, 1.0];
        let b = [1.0, 0.0, 1.0, 0.0];
        assert_eq!(ks_two_sample(&a, &b).statistic, 0.0);
    }

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson_interval(30, 100, 0.05);
        assert!(lo < 0.3 && 0.3 < hi);
        assert!((lo - 0.2189).abs() < 1e-3 && (hi - 0.3958).abs() < 1e-3);
        let (lo, hi) = wilson_interval(100, 100, 0.05);
        assert!(hi == 1.0 && lo > 0.95);
    }

    #[test]
    fn proportion_test_direction() {
        assert!(two_proportion_test(600, 1000, 400, 1000).p_value < 1e-10);
        assert!(two_proportion_test(400, 1000, 600, 1000).p_value > 0.99);
    }

    #[test]
    fn tv_distance() {
        let p = histogram([0, 0, 1, 7], 3);
        assert_eq!(p, vec![0.5, 0.25, 0.0, 0.0, 0.25]);
        assert_eq!(total_variation(&p, &p), 0.0);
        assert!((total_variation(&[1.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
    }
}
