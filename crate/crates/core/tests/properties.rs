use proptest::prelude::*;

use bpire::branching::exact::{recursion_laws, ExactGeneration};
use bpire::branching::{step, Generation, OffspringLaw, Population};
use bpire::classify::{evaluate_criteria, CriteriaParams, Verdict};
use bpire::env::{log_rho, rho, EnvironmentSpec, MLaw, PLaw, Regime};
use bpire::ladder::{block_immigrant_pgf, composed_pgf, LadderDecomposition, LogMeanWalk, LADDER_TOLERANCE};
use bpire::recursion::{ArEnv, ArPath};
use bpire::rng::{Lane, StreamKey};
use bpire::walk::{couple_excursion, simulate_walk, CookieEnvironment, KeyedDecisions, StopRule, WalkOptions};

fn geometric_with_mean(mu: f64) -> OffspringLaw {
    OffspringLaw::Geometric { p: mu / (1.0 + mu) }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rho_is_positive_and_decreasing(p in 0.001f64..0.998, dp in 1e-6f64..1e-3) {
        let q = (p + dp).min(0.999);
        prop_assert!(rho(p).unwrap() > 0.0);
        prop_assert!(rho(p).unwrap() > rho(q).unwrap());
        prop_assert!((log_rho(p) - rho(p).unwrap().ln()).abs() < 1e-12);
    }

    #[test]
    fn constant_p_regime_follows_mean(p in 0.01f64..0.99) {
        let spec = EnvironmentSpec::new(PLaw::constant(p), MLaw::Constant { value: 1 });
        let expected = if (p - 0.5).abs() < 1e-15 {
            Regime::Critical
        } else if p < 0.5 {
            Regime::Subcritical
        } else {
            Regime::Supercritical
        };
        prop_assert_eq!(spec.regime(), expected);
    }

    #[test]
    fn symmetric_two_point_is_critical(a in 0.01f64..0.49) {
        let spec = EnvironmentSpec::new(PLaw::TwoPoint { a, weight: 0.5 }, MLaw::Constant { value: 0 });
        prop_assert_eq!(spec.regime(), Regime::Critical);
    }

    #[test]
    fn step_stays_exact_below_threshold(
        mu in 0.05f64..3.0,
        z in 0u64..5000,
        m in 0u64..100,
        seed in any::<u64>(),
    ) {
        let g = Generation::new(geometric_with_mean(mu), m);
        let mut rng = StreamKey::new(seed, 0, Lane::Offspring).stream(1);
        let next = step(Population::Exact(z), &g, u64::MAX, &mut rng);
        prop_assert!(next.is_exact());
        prop_assert!(next.exact().unwrap() >= m);
    }

    #[test]
    fn ladder_blocks_descend(
        mus in proptest::collection::vec(prop_oneof![Just(0.5), Just(2.0), Just(1.0 / 3.0), Just(3.0), Just(1.0)], 1..80),
    ) {
        let gens: Vec<Generation> = mus.iter().map(|&mu| Generation::new(geometric_with_mean(mu), 0)).collect();
        let y = LogMeanWalk::from_generations(&gens).unwrap();
        let mut rng = StreamKey::new(1, 0, Lane::Ladder).stream(0);
        let d = LadderDecomposition::build(&gens, gens.len(), u64::MAX, &mut rng).unwrap();
        prop_assert_eq!(d.epochs.epochs[0], 0);
        for block in &d.blocks {
            let (a, b) = (block.start, block.end);
            prop_assert!(y.values[b] < y.values[a]);
            for k in a..b {
                prop_assert!(y.values[k] >= y.values[a] - LADDER_TOLERANCE);
            }
            let gap = y.values[b] - y.values[a];
            prop_assert!((block.log_mean() - gap).abs() < 1e-9);
            prop_assert!(block.log_mean() < 0.0);
        }
    }

    #[test]
    fn ar_iteration_matches_expansion_and_is_monotone(
        envs in proptest::collection::vec((0.1f64..3.0, 0u32..20, 0u32..5), 1..40),
    ) {
        let base: Vec<ArEnv> = envs.iter().map(|&(mu, m, _)| ArEnv::new(mu, m as f64)).collect();
        let more: Vec<ArEnv> = envs.iter().map(|&(mu, m, extra)| ArEnv::new(mu, (m + extra) as f64)).collect();
        let x = ArPath::from_envs(base.clone());
        let y = ArPath::from_envs(more);
        for n in 0..=base.len() {
            prop_assert!(y.ln_xs[n] >= x.ln_xs[n]);
        }
        let n = base.len();
        let a = x.ln_xs[n];
        let b = bpire::recursion::expanded_x(&base, n).unwrap();
        prop_assert!(a == b || (a - b).abs() < 1e-9);
    }

    #[test]
    fn quenched_mean_equals_difference_equation(
        envs in proptest::collection::vec((0.05f64..0.95, 0usize..3), 1..5),
    ) {
        let gens: Vec<ExactGeneration> = envs.iter().map(|&(q, m)| ExactGeneration::new(vec![1.0 - q, q], m)).collect();
        let law = recursion_laws(0, &gens).pop().unwrap();
        let mean: f64 = law.iter().enumerate().map(|(k, w)| k as f64 * w).sum();
        let x = ArPath::from_envs(envs.iter().map(|&(q, m)| ArEnv::new(q, m as f64)).collect());
        let xn = x.value(envs.len());
        prop_assert!((mean - xn).abs() <= 1e-9 * xn.max(1.0));
    }

    #[test]
    fn block_pgf_matches_exact_law(
        block in proptest::collection::vec((0.05f64..0.95, 0usize..3), 1..3),
        start in 0usize..3,
        s in 0.0f64..1.0,
    ) {
        let exact: Vec<ExactGeneration> = block.iter().map(|&(q, m)| ExactGeneration::new(vec![1.0 - q, q], m)).collect();
        let law = recursion_laws(start, &exact).pop().unwrap();
        let direct: f64 = law.iter().rev().fold(0.0, |acc, w| acc * s + w);
        let gens: Vec<Generation> = block.iter().map(|&(q, m)| Generation::new(OffspringLaw::Bernoulli { q }, m as u64)).collect();
        let laws: Vec<OffspringLaw> = gens.iter().map(|g| g.law.clone()).collect();
        let predicted = composed_pgf(&laws, s).unwrap().powi(start as i32) * block_immigrant_pgf(&gens, s).unwrap();
        prop_assert!((direct - predicted).abs() < 1e-12);
    }

    #[test]
    fn walks_obey_cookie_rule_and_nearest_neighbour(seed in any::<u64>(), lambda in 0.5f64..4.0) {
        let spec = EnvironmentSpec::heavy_tail_example(lambda).with_exact_threshold(1 << 20);
        let key = StreamKey::new(seed, 0, Lane::Environment);
        let mut env = CookieEnvironment::from_spec(&spec, &key);
        let mut d = KeyedDecisions::new(&key);
        let opts = WalkOptions { coupling: true, record_positions: true };
        let path = simulate_walk(&mut env, 0, StopRule::horizon(2000), &mut d, opts);
        let pos = path.positions.as_ref().unwrap();
        prop_assert!(pos.windows(2).all(|w| (w[1] - w[0]).abs() == 1));
        if let Some(ledger) = &path.ledger {
            for (&x, entries) in &ledger.sites {
                let m = env.cookies(x);
                for e in entries {
                    prop_assert_eq!(e.forced, e.visit <= m);
                    if e.forced {
                        prop_assert!(e.up);
                    }
                }
            }
        }
    }

    #[test]
    fn completed_excursions_couple_exactly(seed in any::<u64>(), m_max in 0u64..4) {
        let support: Vec<u64> = (0..=m_max).collect();
        let weights = vec![1.0; support.len()];
        let spec = EnvironmentSpec::new(PLaw::TwoPoint { a: 0.3, weight: 0.5 }, MLaw::Finite { support, weights });
        let c = couple_excursion(&spec, 20_000, &StreamKey::new(seed, 0, Lane::Environment)).unwrap();
        if c.completed {
            prop_assert!(c.exact_match, "{:?}", c);
            prop_assert_eq!(c.upcrossings[0], 1);
            prop_assert_eq!(c.steps, 2 * c.upcrossings.iter().sum::<u64>());
        }
    }

    #[test]
    fn thm3_and_thm4_are_exclusive(lambda in 0.05f64..6.0, epsilon in 0.01f64..1.0, probe in proptest::option::of(0.01f64..1.99)) {
        let params = CriteriaParams { epsilon, lambda_probe: probe, ..CriteriaParams::default() };
        let v = evaluate_criteria(&EnvironmentSpec::heavy_tail_example(lambda), &params);
        prop_assert!(!(v.group_passes("thm3.") && v.group_passes("thm4.")));
        match v.verdict {
            Verdict::RecurrentByThm3 => prop_assert!(v.group_passes("thm3.")),
            Verdict::TransientByThm4 => prop_assert!(v.group_passes("thm4.")),
            _ => {}
        }
    }
}

#[test]
fn exclusivity_sweep_and_determinism() {
    for lambda in [0.5, 1.0, 1.5, 2.5, 3.0] {
        let spec = EnvironmentSpec::heavy_tail_example(lambda);
        let a = evaluate_criteria(&spec, &CriteriaParams::default());
        let b = evaluate_criteria(&spec, &CriteriaParams::default());
        assert_eq!(a.to_json(), b.to_json());
        let expected = if lambda < 2.0 { Verdict::TransientByThm4 } else { Verdict::RecurrentByThm3 };
        assert_eq!(a.verdict, expected, "lambda = {lambda}");
    }
}
