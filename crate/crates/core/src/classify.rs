//! Analytic recurrence/transience criteria, empirical classification of
//! simulated paths, and the series versus log-moment probe.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::branching::{BranchingPath, BranchingSim, StartMode};
use crate::env::{EnvironmentSpec, Regime, DEFAULT_DELTA_GRID};
use crate::error::{Error, Result};
use crate::rng::{uniform_open01, Lane, StreamKey};
use crate::stats::{two_proportion_test, wilson_interval};
use crate::walk::{first_passage, WalkPath};

pub const DEFAULT_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaParams {
    /// `E[(log_+ M)^(2 + epsilon)]` is checked at this epsilon.
    pub epsilon: f64,
    pub delta_grid: Vec<f64>,
    /// Tail condition checked at this lambda only; `None` asks whether some
    /// lambda in (0, 2) works.
    pub lambda_probe: Option<f64>,
}

impl Default for CriteriaParams {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, delta_grid: DEFAULT_DELTA_GRID.to_vec(), lambda_probe: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    #[serde(rename = "recurrent-by-Thm3")]
    RecurrentByThm3,
    #[serde(rename = "transient-by-Thm4")]
    TransientByThm4,
    #[serde(rename = "positive-recurrent-by-Lemma1")]
    PositiveRecurrentByLemma1,
    Inconclusive,
    Invalid,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::RecurrentByThm3 => "recurrent-by-Thm3",
            Verdict::TransientByThm4 => "transient-by-Thm4",
            Verdict::PositiveRecurrentByLemma1 => "positive-recurrent-by-Lemma1",
            Verdict::Inconclusive => "inconclusive",
            Verdict::Invalid => "invalid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub id: String,
    pub description: String,
    /// The analytic quantity, when finite and computable.
    pub value: Option<f64>,
    pub passed: bool,
}

impl Condition {
    fn new(id: &str, description: impl Into<String>, value: Option<f64>, passed: bool) -> Self {
        Self { id: id.into(), description: description.into(), value, passed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionVerdict {
    pub regime: Regime,
    pub verdict: Verdict,
    pub conditions: Vec<Condition>,
    pub params: CriteriaParams,
    /// Set for invalid specs.
    pub error: Option<String>,
}

impl CriterionVerdict {
    pub fn group_passes(&self, prefix: &str) -> bool {
        self.conditions.iter().filter(|c| c.id.starts_with(prefix)).all(|c| c.passed)
    }

    /// Canonical JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Evaluates every condition analytically and assembles the verdict.
pub fn evaluate_criteria(spec: &EnvironmentSpec, params: &CriteriaParams) -> CriterionVerdict {
    if let Err(e) = spec.check() {
        return CriterionVerdict {
            regime: Regime::Invalid,
            verdict: Verdict::Invalid,
            conditions: Vec::new(),
            params: params.clone(),
            error: Some(e.to_string()),
        };
    }
    let regime = spec.regime();
    let mean = spec.mean_log_mu();
    let second = spec.abs_log_mu_moment(2.0);
    let mu_one = spec.prob_mu_one();
    let q = 2.0 + params.epsilon;
    let m_moment = spec.m_law.log_plus_moment(q);
    let tail = spec.m_law.tail_exponent();
    let mut c = Vec::new();

    c.push(Condition::new("thm3.iid", "environment pairs are i.i.d.", None, true));
    c.push(Condition::new("thm3.log_mu_second_moment", "E[|log mu|^2] < inf", finite(second), second.is_finite()));
    c.push(Condition::new("thm3.critical", "E[log mu] = 0", Some(mean), regime == Regime::Critical));
    c.push(Condition::new("thm3.nondegenerate", "Q[mu = 1] < 1", Some(mu_one), mu_one < 1.0));
    c.push(Condition::new(
        "thm3.immigration_moment",
        format!("E[(log_+ M)^{q}] < inf"),
        m_moment.value,
        m_moment.finite,
    ));

    c.push(Condition::new("thm4.iid", "environment pairs are i.i.d.", None, true));
    for &d in &params.delta_grid {
        let v = spec.abs_log_mu_moment(d);
        c.push(Condition::new("thm4.log_mu_moment", format!("E[|log mu|^{d}] < inf"), finite(v), v.is_finite()));
    }
    c.push(Condition::new("thm4.critical", "E[log mu] = 0", Some(mean), regime == Regime::Critical));
    let vr = spec.variance_ratio_moment();
    c.push(Condition::new(
        "thm4.variance_ratio",
        "E[(log_+(Var / mu^2))^2] < inf",
        finite(vr),
        vr.is_finite(),
    ));
    let (tail_ok, tail_desc) = match params.lambda_probe {
        Some(l) => (
            l > 0.0 && l < 2.0 && tail.is_some_and(|t| t <= l),
            format!("liminf t^{l} Q[log M > t] > 0"),
        ),
        None => (
            tail.is_some_and(|t| t < 2.0),
            "liminf t^lambda Q[log M > t] > 0 for some 0 < lambda < 2".to_string(),
        ),
    };
    c.push(Condition::new("thm4.immigration_tail", tail_desc, tail, tail_ok));

    let m1 = spec.m_law.log_plus_moment(1.0);
    c.push(Condition::new("lemma1.iid", "environment pairs are i.i.d.", None, true));
    c.push(Condition::new("lemma1.immigration_log_mean", "E[log_+ M] < inf", m1.value, m1.finite));
    let lp = spec.mean_log_plus_mu();
    c.push(Condition::new("lemma1.log_plus_mu", "E[log_+ mu] < inf", finite(lp), lp.is_finite()));
    c.push(Condition::new("lemma1.subcritical", "E[log mu] < 0", Some(mean), regime == Regime::Subcritical));

    let mut verdict = CriterionVerdict { regime, verdict: Verdict::Inconclusive, conditions: c, params: params.clone(), error: None };
    let thm3 = verdict.group_passes("thm3.");
    let thm4 = verdict.group_passes("thm4.");
    debug_assert!(!(thm3 && thm4), "recurrence and transience criteria both hold");
    verdict.verdict = if thm3 {
        Verdict::RecurrentByThm3
    } else if thm4 {
        Verdict::TransientByThm4
    } else if verdict.group_passes("lemma1.") {
        Verdict::PositiveRecurrentByLemma1
    } else {
        Verdict::Inconclusive
    };
    verdict
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassicalVerdict {
    Recurrent,
    Transient,
}

/// Classical cookie walk (`p ≡ 1/2`): recurrent iff `E[M] <= 1`.
pub fn classical_erw_oracle(mean_m: f64) -> ClassicalVerdict {
    if mean_m <= 1.0 {
        ClassicalVerdict::Recurrent
    } else {
        ClassicalVerdict::Transient
    }
}

/// What empirical classification needs from one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    /// First `n >= 1` with value 0 (population or walk position).
    pub first_zero: Option<u64>,
    /// `(n, ln value)` at the requested horizons; `None` if not observed.
    pub ln_at: Vec<(u64, Option<f64>)>,
    pub all_zero: bool,
}

impl PathSummary {
    pub fn from_branching(path: &BranchingPath, horizons: &[u64]) -> Self {
        Self {
            first_zero: path.hit_zero_at.map(|n| n as u64),
            ln_at: horizons
                .iter()
                .map(|&h| (h, path.populations.get(h as usize).map(|z| z.ln())))
                .collect(),
            all_zero: path.populations.iter().all(|z| z.is_zero()),
        }
    }

    pub fn from_walk(path: &WalkPath, horizons: &[u64]) -> Self {
        Self {
            first_zero: first_passage(path, 0),
            ln_at: horizons.iter().map(|&h| (h, None)).collect(),
            all_zero: false,
        }
    }

    fn ln_at(&self, h: u64) -> Option<f64> {
        self.ln_at.iter().find(|(n, _)| *n == h).and_then(|(_, v)| *v)
    }
}

/// Streams `replicas` BPIRE runs and keeps only their summaries.
pub fn summarize_branching(
    spec: &EnvironmentSpec,
    mode: StartMode,
    horizons: &[u64],
    replicas: u64,
    seed: u64,
) -> Result<Vec<PathSummary>> {
    let horizon = horizons.iter().copied().max().unwrap_or(0) as usize;
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let key = StreamKey::new(seed, r, Lane::Environment);
            let mut ln_at: Vec<(u64, Option<f64>)> = horizons.iter().map(|&h| (h, None)).collect();
            let mut all_zero = mode.initial().is_zero();
            let summary = BranchingSim::new(spec).mode(mode).run_streaming(horizon, &key, |n, z, _| {
                all_zero &= z.is_zero();
                for slot in ln_at.iter_mut().filter(|(h, _)| *h == n as u64) {
                    slot.1 = Some(z.ln());
                }
                true
            })?;
            Ok(PathSummary { first_zero: summary.hit_zero_at.map(|n| n as u64), ln_at, all_zero })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionBand {
    pub lo: f64,
    pub hi: f64,
}

impl Default for DecisionBand {
    fn default() -> Self {
        Self { lo: 0.2, hi: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmpiricalVerdict {
    Recurrent,
    Transient,
    Abstain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub horizon: u64,
    pub replicas: u64,
    pub hit_zero: u64,
    pub fraction: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub std_error: f64,
    /// Paths with `ln value > sqrt(horizon)`.
    pub exceed: u64,
    pub exceed_fraction: f64,
    pub exceed_std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    /// Hit-zero fraction at the last horizon minus the first.
    pub change: f64,
    pub z: f64,
    pub p_increasing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalReport {
    pub rows: Vec<HorizonRow>,
    pub trend: Trend,
    pub verdict: EmpiricalVerdict,
    pub degenerate: bool,
    pub replicas: u64,
    pub band: DecisionBand,
    pub alpha: f64,
}

impl EmpiricalReport {
    pub fn row(&self, horizon: u64) -> Option<&HorizonRow> {
        self.rows.iter().find(|r| r.horizon == horizon)
    }
}

pub const MIN_PATHS: usize = 30;

/// Return/hit-zero fractions with Wilson intervals, `e^sqrt(n)` exceedance,
/// a first-versus-last-horizon trend statistic, and a verdict that abstains
/// whenever the final interval meets the decision band.
pub fn empirical_classify(paths: &[PathSummary], horizons: &[u64], band: DecisionBand, alpha: f64) -> Result<EmpiricalReport> {
    if paths.len() < MIN_PATHS {
        return Err(Error::InsufficientReplicas { needed: MIN_PATHS, got: paths.len() });
    }
    if horizons.is_empty() {
        return Err(Error::Domain("at least one horizon is required".into()));
    }
    let n = paths.len() as u64;
    let rows: Vec<HorizonRow> = horizons
        .iter()
        .map(|&h| {
            let hit = paths.iter().filter(|p| p.first_zero.is_some_and(|t| t <= h)).count() as u64;
            let exceed = paths.iter().filter(|p| p.ln_at(h).is_some_and(|l| l > (h as f64).sqrt())).count() as u64;
            let f = hit as f64 / n as f64;
            let e = exceed as f64 / n as f64;
            let (ci_lo, ci_hi) = wilson_interval(hit, n, alpha);
            HorizonRow {
                horizon: h,
                replicas: n,
                hit_zero: hit,
                fraction: f,
                ci_lo,
                ci_hi,
                std_error: (f * (1.0 - f) / n as f64).sqrt(),
                exceed,
                exceed_fraction: e,
                exceed_std_error: (e * (1.0 - e) / n as f64).sqrt(),
            }
        })
        .collect();
    let first = rows.first().expect("non-empty");
    let last = rows.last().expect("non-empty");
    let t = two_proportion_test(last.hit_zero, n, first.hit_zero, n);
    let trend = Trend { change: last.fraction - first.fraction, z: t.z, p_increasing: t.p_value };
    let verdict = if last.ci_lo > band.hi {
        EmpiricalVerdict::Recurrent
    } else if last.ci_hi < band.lo {
        EmpiricalVerdict::Transient
    } else {
        EmpiricalVerdict::Abstain
    };
    Ok(EmpiricalReport {
        trend,
        verdict,
        degenerate: paths.iter().all(|p| p.all_zero),
        replicas: n,
        rows,
        band,
        alpha,
    })
}

/// Law of the nonnegative summands of the probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum VLaw {
    Constant { value: f64 },
    /// `P[log V > t] = t^(-index)` for `t >= 1`.
    LogPareto { index: f64 },
    Exponential { rate: f64 },
}

impl VLaw {
    pub fn sample_ln<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            VLaw::Constant { value } => value.ln(),
            VLaw::LogPareto { index } => uniform_open01(rng).powf(-1.0 / index),
            VLaw::Exponential { rate } => (-uniform_open01(rng).ln() / rate).ln(),
        }
    }

    /// `E[(log_+ V)^d] < inf`.
    pub fn log_moment_finite(&self, d: f64) -> bool {
        match self {
            VLaw::LogPareto { index } => d < *index,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesParams {
    pub d: u32,
    pub a: f64,
    pub c: f64,
    pub v_law: VLaw,
    /// Outer index `N`; partial sums are taken over `n < N, 2N, 4N`.
    pub partial_terms: u64,
    /// A tail increment above this marks the replica as diverging.
    pub divergence_cap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesReplica {
    /// `ln S_N`, or `None` if the head exceeded `e^700` and was not finished.
    pub ln_head: Option<f64>,
    /// `S_2N - S_N` (capped).
    pub increment_1: f64,
    /// `S_4N - S_2N` (capped).
    pub increment_2: f64,
    pub diverging: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub params: SeriesParams,
    pub replicas: Vec<SeriesReplica>,
    pub diverging_fraction: f64,
    pub median_increment_1: f64,
    pub median_increment_2: f64,
    pub log_moment_finite: bool,
}

/// Streaming `ln sum exp`.
#[derive(Debug, Clone, Copy)]
struct LogSum {
    max: f64,
    scaled: f64,
}

impl LogSum {
    fn new() -> Self {
        Self { max: f64::NEG_INFINITY, scaled: 0.0 }
    }

    fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.scaled += (x - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    fn ln(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

fn inner_count(n: u64, d: u32, c: f64) -> u64 {
    (c * (n as f64).powi(d as i32 - 1)).floor() as u64 + 1
}

/// `ln sum_{n in range} a^n sum_{i <= c n^(d-1)} V_{i,n}`, stopping early once
/// it exceeds `ln_cap`.
fn window<R: RngCore + ?Sized>(p: &SeriesParams, range: std::ops::Range<u64>, ln_cap: f64, rng: &mut R) -> f64 {
    let ln_a = p.a.ln();
    let mut acc = LogSum::new();
    for n in range {
        let base = n as f64 * ln_a;
        for _ in 0..inner_count(n, p.d, p.c) {
            acc.add(base + p.v_law.sample_ln(rng));
        }
        if acc.ln() > ln_cap {
            break;
        }
    }
    acc.ln()
}

/// Partial sums of the series at `N`, `2N`, `4N` per replica.
pub fn series_moment_probe(params: &SeriesParams, replicas: u64, seed: u64) -> Result<SeriesReport> {
    if params.d == 0 || !(params.a > 0.0 && params.a < 1.0) || !(params.c > 0.0) || params.partial_terms == 0 {
        return Err(Error::Domain("series probe needs d >= 1, 0 < a < 1, c > 0, N >= 1".into()));
    }
    let n = params.partial_terms;
    let ln_cap = params.divergence_cap.ln();
    let reps: Vec<SeriesReplica> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = StreamKey::new(seed, r, Lane::Auxiliary).stream(0);
            let head = window(params, 0..n, 700.0, &mut rng);
            let i1 = window(params, n..2 * n, ln_cap, &mut rng).exp();
            let i2 = window(params, 2 * n..4 * n, ln_cap, &mut rng).exp();
            SeriesReplica {
                ln_head: (head <= 700.0).then_some(head),
                increment_1: i1,
                increment_2: i2,
                diverging: i2 > params.divergence_cap,
            }
        })
        .collect();
    let median = |f: fn(&SeriesReplica) -> f64| {
        let mut v: Vec<f64> = reps.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v.get(v.len() / 2).copied().unwrap_or(0.0)
    };
    Ok(SeriesReport {
        params: *params,
        diverging_fraction: reps.iter().filter(|r| r.diverging).count() as f64 / replicas.max(1) as f64,
        median_increment_1: median(|r| r.increment_1),
        median_increment_2: median(|r| r.increment_2),
        log_moment_finite: params.v_law.log_moment_finite(params.d as f64),
        replicas: reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{MLaw, PLaw};

    #[test]
    fn example_verdicts() {
        let p = CriteriaParams::default();
        assert_eq!(evaluate_criteria(&EnvironmentSpec::heavy_tail_example(1.0), &p).verdict, Verdict::TransientByThm4);
        assert_eq!(evaluate_criteria(&EnvironmentSpec::heavy_tail_example(3.0), &p).verdict, Verdict::RecurrentByThm3);
        assert_eq!(evaluate_criteria(&EnvironmentSpec::heavy_tail_example(2.0), &p).verdict, Verdict::Inconclusive);
    }

    #[test]
    fn lambda_probe() {
        let spec = EnvironmentSpec::heavy_tail_example(1.5);
        let at = |l| CriteriaParams { lambda_probe: Some(l), ..CriteriaParams::default() };
        assert_eq!(evaluate_criteria(&spec, &at(1.8)).verdict, Verdict::TransientByThm4);
        assert_eq!(evaluate_criteria(&spec, &at(1.2)).verdict, Verdict::Inconclusive);
    }

    #[test]
    fn subcritical_and_invalid() {
        let sub = EnvironmentSpec::new(PLaw::constant(1.0 / 3.0), MLaw::Constant { value: 1 });
        let v = evaluate_criteria(&sub, &CriteriaParams::default());
        assert_eq!(v.regime, Regime::Subcritical);
        assert_eq!(v.verdict, Verdict::PositiveRecurrentByLemma1);
        let bad = EnvironmentSpec::heavy_tail_example(-1.0);
        let v = evaluate_criteria(&bad, &CriteriaParams::default());
        assert_eq!(v.verdict, Verdict::Invalid);
        assert!(v.error.unwrap().contains("lambda"));
    }

    #[test]
    fn degenerate_mu_is_not_thm3() {
        let spec = EnvironmentSpec::classical(MLaw::Constant { value: 0 });
        let v = evaluate_criteria(&spec, &CriteriaParams::default());
        assert!(!v.conditions.iter().find(|c| c.id == "thm3.nondegenerate").unwrap().passed);
        assert_eq!(v.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn oracle_boundary() {
        assert_eq!(classical_erw_oracle(1.0), ClassicalVerdict::Recurrent);
        assert_eq!(classical_erw_oracle(0.5), ClassicalVerdict::Recurrent);
        assert_eq!(classical_erw_oracle(2.0), ClassicalVerdict::Transient);
        assert_eq!(classical_erw_oracle(1.0 + 1e-12), ClassicalVerdict::Transient);
    }

    #[test]
    fn empirical_needs_paths() {
        let p = vec![PathSummary { first_zero: Some(1), ln_at: vec![], all_zero: true }; 10];
        assert!(matches!(
            empirical_classify(&p, &[10], DecisionBand::default(), 0.01),
            Err(Error::InsufficientReplicas { needed: 30, got: 10 })
        ));
    }

    #[test]
    fn all_returned_is_flat() {
        let p = vec![PathSummary { first_zero: Some(3), ln_at: vec![], all_zero: false }; 40];
        let r = empirical_classify(&p, &[10, 100], DecisionBand::default(), 0.01).unwrap();
        assert!(r.rows.iter().all(|row| row.fraction == 1.0));
        assert_eq!(r.trend.change, 0.0);
        assert_eq!(r.trend.z, 0.0);
        assert_eq!(r.verdict, EmpiricalVerdict::Recurrent);
    }

    #[test]
    fn zero_immigration_is_degenerate() {
        let spec = EnvironmentSpec::new(PLaw::TwoPoint { a: 1.0 / 3.0, weight: 0.5 }, MLaw::Constant { value: 0 });
        let paths = summarize_branching(&spec, StartMode::ZeroStart, &[10, 100], 40, 1).unwrap();
        let r = empirical_classify(&paths, &[10, 100], DecisionBand::default(), 0.01).unwrap();
        assert!(r.degenerate);
        assert!(r.rows.iter().all(|row| row.exceed == 0 && row.fraction == 1.0));
    }

    #[test]
    fn series_constant_converges() {
        // sum_n 2^-n (n + 1) = 4
        let params = SeriesParams {
            d: 2,
            a: 0.5,
            c: 1.0,
            v_law: VLaw::Constant { value: 1.0 },
            partial_terms: 60,
            divergence_cap: 1.0,
        };
        let r = series_moment_probe(&params, 3, 1).unwrap();
        for rep in &r.replicas {
            let total = rep.ln_head.unwrap().exp() + rep.increment_1 + rep.increment_2;
            assert!((total - 4.0).abs() < 1e-12);
            assert!(rep.increment_1 + rep.increment_2 < 1e-6);
        }
        let fast = SeriesParams { a: 0.01, partial_terms: 15, ..params };
        let r = series_moment_probe(&fast, 1, 1).unwrap();
        assert!(r.replicas[0].increment_1 + r.replicas[0].increment_2 < 1e-6);
    }
}
