//! Distributional checks with fixed seeds.

use rayon::prelude::*;

use bpire::branching::{offspring_sum, OffspringLaw, Population};
use bpire::classify::{series_moment_probe, SeriesParams, VLaw};
use bpire::env::{log_rho, EnvironmentSpec, MLaw, PLaw, SiteEnv};
use bpire::rng::{Lane, StreamKey};
use bpire::stats::ks_two_sample;
use bpire::walk::{simulate_walk, CookieEnvironment, KeyedDecisions, StopRule, WalkOptions};

/// `P[M >= k]` for the heavy-tailed cookie law.
fn heavy_survival(k: u64, lambda: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => (1.0 + 2f64.ln()).powf(-lambda),
        _ => (1.0 + (k as f64).ln()).powf(-lambda),
    }
}

#[test]
fn heavy_tail_inversion_frequencies() {
    let lambda = 1.0;
    let n = 10_000_000u64;
    let chunks = 100u64;
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = StreamKey::new(77, c, Lane::Auxiliary).stream(0);
            let law = MLaw::HeavyTail { lambda };
            let mut counts = vec![0u64; 102];
            for _ in 0..n / chunks {
                let m = law.sample(u64::MAX, &mut rng).saturating_u64();
                counts[(m as usize).min(101)] += 1;
            }
            counts
        })
        .reduce(|| vec![0u64; 102], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
    for k in 0..=100u64 {
        let p = heavy_survival(k, lambda) - heavy_survival(k + 1, lambda);
        let f = counts[k as usize] as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        if p == 0.0 {
            assert_eq!(counts[k as usize], 0, "k = {k}");
        } else {
            assert!((f - p).abs() <= 5.0 * sigma, "k = {k}: {f} vs {p}");
        }
    }
}

#[test]
fn site_draws_are_exchangeable() {
    let spec = EnvironmentSpec::new(PLaw::LogitUniform { half_width: 1.5 }, MLaw::Poisson { mean: 1.0 });
    let draw = |seed: u64| -> Vec<f64> {
        let mut rng = StreamKey::new(seed, 0, Lane::Environment).stream(0);
        (0..100_000).map(|_| log_rho(spec.sample_site(&mut rng).p)).collect()
    };
    let ks = ks_two_sample(&draw(1), &draw(2));
    assert!(ks.passes(0.01), "{ks:?}");
}

#[test]
fn negative_binomial_shortcut_matches_naive_sum() {
    let n = 100_000u64;
    for (i, p) in [0.3, 0.5, 0.7].into_iter().enumerate() {
        for k in [1u64, 5, 20] {
            let law = OffspringLaw::Geometric { p };
            let seed = 100 + 10 * i as u64 + k;
            let shortcut: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|r| {
                    let mut rng = StreamKey::new(seed, r, Lane::Offspring).stream(0);
                    offspring_sum(&law, Population::Exact(k), u64::MAX, &mut rng).as_f64()
                })
                .collect();
            let naive: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|r| {
                    let mut rng = StreamKey::new(seed, r, Lane::Offspring).stream(1);
                    (0..k).map(|_| offspring_sum(&law, Population::Exact(1), u64::MAX, &mut rng).as_f64()).sum()
                })
                .collect();
            let ks = ks_two_sample(&shortcut, &naive);
            assert!(ks.passes(0.01), "p = {p}, k = {k}: {ks:?}");
        }
    }
}

#[test]
fn quenched_transition_frequency() {
    // Site 0 holds one cookie, site 1 always sends the walk back, so step 3
    // is the second visit to site 0.
    let p0 = 0.3;
    let n = 100_000u64;
    let ups = (0..n)
        .into_par_iter()
        .filter(|&r| {
            let mut env = CookieEnvironment::fixed([(0, SiteEnv::new(p0, 1)), (1, SiteEnv::new(1e-300, 0))], SiteEnv::new(0.5, 0));
            let mut d = KeyedDecisions::new(&StreamKey::new(31, r, Lane::Environment));
            let opts = WalkOptions { coupling: false, record_positions: true };
            let path = simulate_walk(&mut env, 0, StopRule::horizon(3), &mut d, opts);
            let pos = path.positions.unwrap();
            assert_eq!(&pos[..3], &[0, 1, 0]);
            pos[3] == 1
        })
        .count() as f64;
    let f = ups / n as f64;
    let sigma = (p0 * (1.0 - p0) / n as f64).sqrt();
    assert!((f - p0).abs() <= 4.0 * sigma, "{f}");
}

#[test]
fn series_probe_separates_log_moments() {
    let heavy = SeriesParams {
        d: 2,
        a: 0.5,
        c: 1.0,
        v_law: VLaw::LogPareto { index: 1.0 },
        partial_terms: 10_000,
        divergence_cap: 1.0,
    };
    let r = series_moment_probe(&heavy, 20, 3).unwrap();
    assert!(!r.log_moment_finite);
    assert!(r.diverging_fraction > 0.5, "{}", r.diverging_fraction);

    let light = SeriesParams { v_law: VLaw::LogPareto { index: 3.0 }, partial_terms: 100, ..heavy };
    let r = series_moment_probe(&light, 20, 4).unwrap();
    assert!(r.log_moment_finite);
    assert!(r.median_increment_2 < r.median_increment_1, "{} {}", r.median_increment_1, r.median_increment_2);
    assert!(r.diverging_fraction < 0.5);

    let fast = SeriesParams { a: 0.01, v_law: VLaw::Constant { value: 1.0 }, partial_terms: 15, ..heavy };
    let r = series_moment_probe(&fast, 1, 5).unwrap();
    assert!(r.replicas[0].increment_1 + r.replicas[0].increment_2 < 1e-6);
}
