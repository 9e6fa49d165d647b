//! Excited random walk in a cookie environment and its pathwise coupling with
//! the branching process of up-crossings.
//!
//! Site `x` forces a step to the right on each of its first `M_x` visits and
//! steps right with probability `p_x` afterwards. A non-forced decision at
//! visit `i` of site `x` reads the uniform keyed by `(x, i)`, so a walk and a
//! direct evaluation of the up-crossing recursion see the same randomness.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvironmentSpec, SiteEnv};
use crate::error::{Error, Result};
use crate::rng::{Lane, StreamKey};
use crate::stats::wilson_interval;

/// Stream index of site `x`. Site `k >= 1` shares its index with generation
/// `k` of the branching simulator.
pub fn site_index(x: i64) -> u64 {
    x as u64
}

/// Dense storage over the integers, grown on demand.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SiteTable<T> {
    nonneg: Vec<T>,
    neg: Vec<T>,
}

impl<T: Clone + Default> SiteTable<T> {
    pub fn get(&self, x: i64) -> Option<&T> {
        if x >= 0 {
            self.nonneg.get(x as usize)
        } else {
            self.neg.get((-x - 1) as usize)
        }
    }

    pub fn get_mut(&mut self, x: i64) -> &mut T {
        let (v, i) = if x >= 0 { (&mut self.nonneg, x as usize) } else { (&mut self.neg, (-x - 1) as usize) };
        if i >= v.len() {
            v.resize(i + 1, T::default());
        }
        &mut v[i]
    }
}

impl SiteTable<u64> {
    pub fn count(&self, x: i64) -> u64 {
        self.get(x).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
enum SiteSource {
    Spec { spec: EnvironmentSpec, key: StreamKey },
    Fixed { sites: BTreeMap<i64, SiteEnv>, default: SiteEnv },
}

/// Per-site `(p_x, M_x)`, realized on first access and cached.
#[derive(Debug, Clone)]
pub struct CookieEnvironment {
    source: SiteSource,
    cache: SiteTable<Option<SiteEnv>>,
}

impl CookieEnvironment {
    /// Site `x` is drawn from the environment stream `site_index(x)` of `key`.
    pub fn from_spec(spec: &EnvironmentSpec, key: &StreamKey) -> Self {
        Self {
            source: SiteSource::Spec { spec: spec.clone(), key: key.with_lane(Lane::Environment) },
            cache: SiteTable::default(),
        }
    }

    /// Explicit sites; everything else reads `default`.
    pub fn fixed(sites: impl IntoIterator<Item = (i64, SiteEnv)>, default: SiteEnv) -> Self {
        Self {
            source: SiteSource::Fixed { sites: sites.into_iter().collect(), default },
            cache: SiteTable::default(),
        }
    }

    pub fn site(&mut self, x: i64) -> SiteEnv {
        if let Some(Some(s)) = self.cache.get(x) {
            return *s;
        }
        let s = match &self.source {
            SiteSource::Spec { spec, key } => spec.sample_site(&mut key.stream(site_index(x))),
            SiteSource::Fixed { sites, default } => *sites.get(&x).unwrap_or(default),
        };
        *self.cache.get_mut(x) = Some(s);
        s
    }

    /// `M_x`, saturating at `u64::MAX` for log-domain counts.
    pub fn cookies(&mut self, x: i64) -> u64 {
        self.site(x).count().saturating_u64()
    }
}

/// `omega(x, i)`: 1 while cookies remain, `p_x` afterwards.
pub fn transition_prob(env: &mut CookieEnvironment, x: i64, visit: u64) -> Result<f64> {
    if visit == 0 {
        return Err(Error::Domain("visit indices start at 1".into()));
    }
    let site = env.site(x);
    Ok(if visit <= site.count().saturating_u64() { 1.0 } else { site.p })
}

/// Supplies the non-forced decisions.
pub trait DecisionSource {
    /// `Some((up, uniform))` for visit `visit` of site `x`; `None` when the
    /// source has run out.
    fn decide(&mut self, x: i64, visit: u64, p: f64) -> Option<(bool, Option<f64>)>;
}

/// Uniform at `(site, visit)` of the decision lane; up iff `u < p`.
#[derive(Debug, Clone, Copy)]
pub struct KeyedDecisions {
    key: StreamKey,
}

impl KeyedDecisions {
    pub fn new(key: &StreamKey) -> Self {
        Self { key: key.with_lane(Lane::Decisions) }
    }

    pub fn uniform(&self, x: i64, visit: u64) -> f64 {
        self.key.uniform_at(site_index(x), visit - 1)
    }
}

impl DecisionSource for KeyedDecisions {
    fn decide(&mut self, x: i64, visit: u64, p: f64) -> Option<(bool, Option<f64>)> {
        let u = self.uniform(x, visit);
        Some((u < p, Some(u)))
    }
}

/// A fixed list of steps (`true` = right), consumed by non-forced visits.
#[derive(Debug, Clone)]
pub struct ScriptedDecisions {
    steps: Vec<bool>,
    next: usize,
}

impl ScriptedDecisions {
    pub fn new(steps: Vec<bool>) -> Self {
        Self { steps, next: 0 }
    }

    /// From `±1` integers.
    pub fn from_signs(signs: &[i8]) -> Self {
        Self::new(signs.iter().map(|s| *s > 0).collect())
    }
}

impl DecisionSource for ScriptedDecisions {
    fn decide(&mut self, _x: i64, _visit: u64, _p: f64) -> Option<(bool, Option<f64>)> {
        let d = self.steps.get(self.next).copied()?;
        self.next += 1;
        Some((d, None))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub visit: u64,
    pub forced: bool,
    pub uniform: Option<f64>,
    pub up: bool,
}

/// Every decision of a walk, per site in visit order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CouplingLedger {
    pub sites: BTreeMap<i64, Vec<LedgerEntry>>,
}

impl CouplingLedger {
    pub fn record(&mut self, x: i64, entry: LedgerEntry) {
        self.sites.entry(x).or_default().push(entry);
    }

    pub fn entries(&self, x: i64) -> &[LedgerEntry] {
        self.sites.get(&x).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// When a walk stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopRule {
    /// First `n >= 1` with `S_n = target`.
    pub target: Option<i64>,
    pub horizon: u64,
}

impl StopRule {
    pub fn hit(target: i64, horizon: u64) -> Self {
        Self { target: Some(target), horizon }
    }

    pub fn horizon(horizon: u64) -> Self {
        Self { target: None, horizon }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WalkOutcome {
    HitTarget { time: u64 },
    HorizonReached,
    /// A scripted decision source ran out.
    DecisionsExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WalkOptions {
    pub coupling: bool,
    pub record_positions: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkPath {
    pub start: i64,
    pub positions: Option<Vec<i64>>,
    pub steps: u64,
    pub end: i64,
    pub outcome: WalkOutcome,
    pub visits: SiteTable<u64>,
    pub up_steps: SiteTable<u64>,
    pub ledger: Option<CouplingLedger>,
    /// Coupling was requested but a site carried a log-domain cookie count.
    pub coupling_dropped: bool,
    /// Started with a forced step `0 -> 1` and stops on return to 0.
    pub right_excursion: bool,
    pub max_position: i64,
    pub min_position: i64,
}

struct Walker<'a, D: DecisionSource + ?Sized> {
    env: &'a mut CookieEnvironment,
    decisions: &'a mut D,
    path: WalkPath,
}

impl<D: DecisionSource + ?Sized> Walker<'_, D> {
    fn visit(&mut self, x: i64) -> Option<bool> {
        let visit = {
            let v = self.path.visits.get_mut(x);
            *v += 1;
            *v
        };
        let site = self.env.site(x);
        let exact = site.m_exact;
        if self.path.ledger.is_some() && exact.is_none() {
            self.path.ledger = None;
            self.path.coupling_dropped = true;
        }
        let (up, uniform, forced) = if visit <= site.count().saturating_u64() {
            (true, None, true)
        } else {
            let (up, u) = self.decisions.decide(x, visit, site.p)?;
            (up, u, false)
        };
        if let Some(ledger) = self.path.ledger.as_mut() {
            ledger.record(x, LedgerEntry { visit, forced, uniform, up });
        }
        Some(up)
    }

    fn step_to(&mut self, next: i64) {
        if next > self.path.end {
            *self.path.up_steps.get_mut(self.path.end) += 1;
        }
        self.path.end = next;
        self.path.steps += 1;
        self.path.max_position = self.path.max_position.max(next);
        self.path.min_position = self.path.min_position.min(next);
        if let Some(p) = self.path.positions.as_mut() {
            p.push(next);
        }
    }

    fn run(mut self, stop: StopRule) -> WalkPath {
        while self.path.steps < stop.horizon {
            let x = self.path.end;
            let Some(up) = self.visit(x) else {
                self.path.outcome = WalkOutcome::DecisionsExhausted;
                return self.path;
            };
            self.step_to(if up { x + 1 } else { x - 1 });
            if stop.target == Some(self.path.end) {
                self.path.outcome = WalkOutcome::HitTarget { time: self.path.steps };
                return self.path;
            }
        }
        self.path.outcome = WalkOutcome::HorizonReached;
        self.path
    }
}

fn empty_path(start: i64, options: WalkOptions) -> WalkPath {
    WalkPath {
        start,
        positions: options.record_positions.then(|| vec![start]),
        steps: 0,
        end: start,
        outcome: WalkOutcome::HorizonReached,
        visits: SiteTable::default(),
        up_steps: SiteTable::default(),
        ledger: options.coupling.then(CouplingLedger::default),
        coupling_dropped: false,
        right_excursion: false,
        max_position: start,
        min_position: start,
    }
}

/// Runs the walk from `start` until `stop`.
pub fn simulate_walk<D: DecisionSource + ?Sized>(
    env: &mut CookieEnvironment,
    start: i64,
    stop: StopRule,
    decisions: &mut D,
    options: WalkOptions,
) -> WalkPath {
    Walker { env, decisions, path: empty_path(start, options) }.run(stop)
}

/// The first right excursion from 0: the step `0 -> 1` is taken as given
/// (it counts as visit 1 of site 0) and the walk runs until it returns to 0
/// or `horizon` steps have elapsed in total.
pub fn simulate_right_excursion<D: DecisionSource + ?Sized>(
    env: &mut CookieEnvironment,
    horizon: u64,
    decisions: &mut D,
    options: WalkOptions,
) -> WalkPath {
    let mut path = empty_path(0, options);
    path.right_excursion = true;
    let mut walker = Walker { env, decisions, path };
    *walker.path.visits.get_mut(0) += 1;
    walker.step_to(1);
    walker.run(StopRule::hit(0, horizon))
}

/// `T_k`: the smallest `n >= 1` with `S_n = k`.
pub fn first_passage(path: &WalkPath, k: i64) -> Option<u64> {
    match &path.positions {
        Some(pos) => pos.iter().skip(1).position(|&x| x == k).map(|i| i as u64 + 1),
        None => match path.outcome {
            WalkOutcome::HitTarget { time } if path.end == k => Some(time),
            _ => None,
        },
    }
}

/// Up-crossing counts of a right excursion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Upcrossings {
    /// `counts[k]` is the number of steps `k -> k+1`.
    pub counts: Vec<u64>,
    /// The excursion returned to 0.
    pub complete: bool,
}

/// `U_k` for `k = 0..=max level`. Rejects paths that are not right
/// excursions.
pub fn upcrossing_counts(path: &WalkPath) -> Result<Upcrossings> {
    let complete = matches!(path.outcome, WalkOutcome::HitTarget { .. }) && path.end == 0;
    if let Some(pos) = &path.positions {
        if pos.len() < 2 || pos[0] != 0 || pos[1] != 1 {
            return Err(Error::NotAnExcursion("a right excursion starts with the step 0 -> 1".into()));
        }
        if let Some(i) = pos[1..].iter().position(|&x| x <= 0) {
            if i + 2 != pos.len() || pos[i + 1] != 0 {
                return Err(Error::NotAnExcursion(format!("left the right half-line at step {}", i + 1)));
            }
        }
        let mut counts = vec![0u64; path.max_position.max(0) as usize + 1];
        for w in pos.windows(2) {
            if w[1] == w[0] + 1 {
                counts[w[0] as usize] += 1;
            }
        }
        return Ok(Upcrossings { counts, complete: pos.last() == Some(&0) });
    }
    if !path.right_excursion {
        return Err(Error::NotAnExcursion("path was not simulated as a right excursion".into()));
    }
    let counts = (0..=path.max_position).map(|k| path.up_steps.count(k)).collect();
    Ok(Upcrossings { counts, complete })
}

/// `V_0 = 1`, `V_k = xi_1^(k) + ... + xi_{V_{k-1}}^(k) + M_k` from the
/// ledger's marks, up to and including the first zero.
pub fn branching_from_ledger(ledger: &CouplingLedger, env: &mut CookieEnvironment) -> Result<Vec<u64>> {
    let mut v = vec![1u64];
    let mut k = 1i64;
    while *v.last().expect("non-empty") > 0 {
        let needed = *v.last().expect("non-empty");
        let cookies = env
            .site(k)
            .m_exact
            .ok_or_else(|| Error::IncompleteLedger { site: k, detail: "log-domain cookie count".into() })?;
        let mut failures = 0;
        let mut successes = 0;
        for e in ledger.entries(k).iter().filter(|e| !e.forced) {
            if failures == needed {
                break;
            }
            if e.up {
                successes += 1;
            } else {
                failures += 1;
            }
        }
        if failures < needed {
            return Err(Error::IncompleteLedger {
                site: k,
                detail: format!("found {failures} of {needed} failures"),
            });
        }
        v.push(successes + cookies);
        k += 1;
    }
    Ok(v)
}

/// The same recursion evaluated straight from the keyed uniforms, without a
/// walk. Stops at the first zero, or returns `None` once `2 sum V` would
/// exceed `budget` (the walk could not have returned within that many
/// steps).
pub fn coupled_branching(
    env: &mut CookieEnvironment,
    decisions: &KeyedDecisions,
    budget: u64,
) -> Result<Option<Vec<u64>>> {
    let mut v = vec![1u64];
    let mut total: u64 = 1;
    let mut k = 1i64;
    while *v.last().expect("non-empty") > 0 {
        let needed = *v.last().expect("non-empty");
        let site = env.site(k);
        let cookies = site
            .m_exact
            .ok_or_else(|| Error::IncompleteLedger { site: k, detail: "log-domain cookie count".into() })?;
        let mut next = cookies;
        if total.saturating_add(next).saturating_mul(2) > budget {
            return Ok(None);
        }
        let mut failures = 0;
        let mut visit = cookies;
        while failures < needed {
            visit += 1;
            if decisions.uniform(k, visit) < site.p {
                next += 1;
                if (total + next).saturating_mul(2) > budget {
                    return Ok(None);
                }
            } else {
                failures += 1;
            }
        }
        total += next;
        v.push(next);
        k += 1;
    }
    Ok(Some(v))
}

/// One right excursion checked three ways: walk up-crossings, the ledger
/// recursion and the keyed recursion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoupledExcursion {
    pub completed: bool,
    pub steps: u64,
    pub max_level: i64,
    pub upcrossings: Vec<u64>,
    pub ledger_v: Option<Vec<u64>>,
    pub keyed_v: Option<Vec<u64>>,
    pub exact_match: bool,
}

/// Runs one right excursion with the ledger on. Only completed excursions
/// can match.
pub fn couple_excursion(spec: &EnvironmentSpec, horizon: u64, key: &StreamKey) -> Result<CoupledExcursion> {
    let mut env = CookieEnvironment::from_spec(spec, key);
    let mut decisions = KeyedDecisions::new(key);
    let options = WalkOptions { coupling: true, record_positions: false };
    let path = simulate_right_excursion(&mut env, horizon, &mut decisions, options);
    let u = upcrossing_counts(&path)?;
    if !u.complete {
        return Ok(CoupledExcursion {
            completed: false,
            steps: path.steps,
            max_level: path.max_position,
            upcrossings: u.counts,
            ledger_v: None,
            keyed_v: None,
            exact_match: false,
        });
    }
    let ledger = path
        .ledger
        .as_ref()
        .ok_or_else(|| Error::IncompleteLedger { site: 0, detail: "coupling dropped".into() })?;
    let ledger_v = branching_from_ledger(ledger, &mut env)?;
    let keyed_v = coupled_branching(&mut env, &decisions, horizon)?;
    let exact_match = ledger_v == u.counts && keyed_v.as_ref() == Some(&u.counts);
    Ok(CoupledExcursion {
        completed: true,
        steps: path.steps,
        max_level: path.max_position,
        upcrossings: u.counts,
        ledger_v: Some(ledger_v),
        keyed_v,
        exact_match,
    })
}

/// Per-horizon return statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnRow {
    pub horizon: u64,
    pub returned: u64,
    pub fraction: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Coupled up-crossing processes that hit 0 within the same budget.
    pub branching_hit_zero: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RightRecurrenceReport {
    pub excursions: u64,
    pub rows: Vec<ReturnRow>,
    /// Excursions on which the walk and the coupled process agreed at every
    /// horizon.
    pub agreements: u64,
    /// Completed excursions whose up-crossings equal the coupled process.
    pub exact_coupling_matches: u64,
    pub completed: u64,
    /// Excursions run without coupling (log-domain cookie counts).
    pub uncoupled: u64,
    pub seed: u64,
}

struct ExcursionResult {
    length: Option<u64>,
    branching_mass: Option<u64>,
    exact_match: bool,
    uncoupled: bool,
}

fn run_excursion(spec: &EnvironmentSpec, horizon: u64, key: &StreamKey) -> Result<ExcursionResult> {
    let mut env = CookieEnvironment::from_spec(spec, key);
    let mut decisions = KeyedDecisions::new(key);
    let path = simulate_right_excursion(&mut env, horizon, &mut decisions, WalkOptions::default());
    let length = matches!(path.outcome, WalkOutcome::HitTarget { .. }).then_some(path.steps);
    let coupled = match coupled_branching(&mut env, &decisions, horizon) {
        Ok(v) => v,
        Err(Error::IncompleteLedger { .. }) => {
            return Ok(ExcursionResult { length, branching_mass: None, exact_match: false, uncoupled: true })
        }
        Err(e) => return Err(e),
    };
    let mut exact_match = false;
    if let (Some(_), Some(v)) = (length, coupled.as_ref()) {
        let u = upcrossing_counts(&path)?;
        exact_match = u.counts == *v;
    }
    Ok(ExcursionResult {
        length,
        branching_mass: coupled.map(|v| 2 * v.iter().sum::<u64>()),
        exact_match,
        uncoupled: false,
    })
}

/// Simulates `excursions` independent first right excursions, each in its
/// own environment, and the coupled up-crossing processes.
pub fn classify_right_recurrence(
    spec: &EnvironmentSpec,
    excursions: u64,
    horizons: &[u64],
    seed: u64,
) -> Result<RightRecurrenceReport> {
    spec.check()?;
    let max_h = horizons.iter().copied().max().unwrap_or(0);
    let results: Vec<ExcursionResult> = (0..excursions)
        .into_par_iter()
        .map(|r| run_excursion(spec, max_h, &StreamKey::new(seed, r, Lane::Environment)))
        .collect::<Result<_>>()?;
    let rows = horizons
        .iter()
        .map(|&h| {
            let returned = results.iter().filter(|r| r.length.is_some_and(|t| t <= h)).count() as u64;
            let hit = results.iter().filter(|r| r.branching_mass.is_some_and(|t| t <= h)).count() as u64;
            let (ci_lo, ci_hi) = wilson_interval(returned, excursions, 0.05);
            ReturnRow {
                horizon: h,
                returned,
                fraction: returned as f64 / excursions as f64,
                ci_lo,
                ci_hi,
                branching_hit_zero: hit,
            }
        })
        .collect();
    let agreements = results
        .iter()
        .filter(|r| !r.uncoupled && horizons.iter().all(|&h| r.length.is_some_and(|t| t <= h) == r.branching_mass.is_some_and(|t| t <= h)))
        .count() as u64;
    Ok(RightRecurrenceReport {
        excursions,
        rows,
        agreements,
        exact_coupling_matches: results.iter().filter(|r| r.exact_match).count() as u64,
        completed: results.iter().filter(|r| r.length.is_some()).count() as u64,
        uncoupled: results.iter().filter(|r| r.uncoupled).count() as u64,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{MLaw, PLaw};

    fn flat(p: f64, m: u64) -> CookieEnvironment {
        CookieEnvironment::fixed([], SiteEnv::new(p, m))
    }

    #[test]
    fn transition_probabilities() {
        let mut env = CookieEnvironment::fixed([(0, SiteEnv::new(0.4, 2)), (1, SiteEnv::new(0.7, 0))], SiteEnv::new(0.5, 0));
        assert_eq!(transition_prob(&mut env, 0, 1).unwrap(), 1.0);
        assert_eq!(transition_prob(&mut env, 0, 3).unwrap(), 0.4);
        assert_eq!(transition_prob(&mut env, 1, 1).unwrap(), 0.7);
        assert!(transition_prob(&mut env, 1, 0).is_err());
    }

    #[test]
    fn scripted_trace() {
        let mut env = flat(0.5, 0);
        let mut d = ScriptedDecisions::from_signs(&[1, 1, -1, 1, -1, -1]);
        let opts = WalkOptions { coupling: true, record_positions: true };
        let path = simulate_walk(&mut env, 0, StopRule::hit(0, 100), &mut d, opts);
        assert_eq!(path.positions.as_deref(), Some(&[0, 1, 2, 1, 2, 1, 0][..]));
        assert_eq!(first_passage(&path, 0), Some(6));
        assert_eq!(upcrossing_counts(&path).unwrap().counts, vec![1, 2, 0]);
        let v = branching_from_ledger(path.ledger.as_ref().unwrap(), &mut env).unwrap();
        assert_eq!(v, vec![1, 2, 0]);
    }

    #[test]
    fn first_passage_cases() {
        let mut env = flat(0.5, 0);
        let mut d = ScriptedDecisions::from_signs(&[1, 1, -1, -1]);
        let opts = WalkOptions { coupling: false, record_positions: true };
        let path = simulate_walk(&mut env, 0, StopRule::horizon(4), &mut d, opts);
        assert_eq!(path.positions.as_deref(), Some(&[0, 1, 2, 1, 0][..]));
        assert_eq!(first_passage(&path, 2), Some(2));
        assert_eq!(first_passage(&path, 0), Some(4));
        assert_eq!(first_passage(&path, 3), None);
    }

    #[test]
    fn short_excursions() {
        let mut env = flat(0.5, 0);
        let mut d = ScriptedDecisions::from_signs(&[-1]);
        let opts = WalkOptions { coupling: true, record_positions: true };
        let path = simulate_right_excursion(&mut env, 10, &mut d, opts);
        assert_eq!(upcrossing_counts(&path).unwrap().counts, vec![1, 0]);
        assert_eq!(branching_from_ledger(path.ledger.as_ref().unwrap(), &mut env).unwrap(), vec![1, 0]);

        // M_1 = 1: the first visit to 1 is forced right.
        let mut env = CookieEnvironment::fixed([(1, SiteEnv::new(0.5, 1))], SiteEnv::new(0.5, 0));
        let mut d = ScriptedDecisions::from_signs(&[-1, -1]);
        let path = simulate_right_excursion(&mut env, 10, &mut d, opts);
        assert_eq!(path.positions.as_deref(), Some(&[0, 1, 2, 1, 0][..]));
        assert_eq!(upcrossing_counts(&path).unwrap().counts, vec![1, 1, 0]);
        assert_eq!(branching_from_ledger(path.ledger.as_ref().unwrap(), &mut env).unwrap(), vec![1, 1, 0]);
    }

    #[test]
    fn cookie_forces_first_step() {
        for r in 0..100 {
            let spec = EnvironmentSpec::new(PLaw::TwoPoint { a: 0.2, weight: 0.5 }, MLaw::Constant { value: 1 });
            let key = StreamKey::new(5, r, Lane::Environment);
            let mut env = CookieEnvironment::from_spec(&spec, &key);
            let opts = WalkOptions { coupling: false, record_positions: true };
            let path = simulate_walk(&mut env, 0, StopRule::horizon(1), &mut KeyedDecisions::new(&key), opts);
            assert_eq!(path.positions.unwrap(), vec![0, 1]);
        }
    }

    #[test]
    fn rejects_non_excursions() {
        let mut env = flat(0.5, 0);
        let opts = WalkOptions { coupling: false, record_positions: true };
        let path = simulate_walk(&mut env, 0, StopRule::horizon(3), &mut ScriptedDecisions::from_signs(&[-1, 1, 1]), opts);
        assert!(matches!(upcrossing_counts(&path), Err(Error::NotAnExcursion(_))));
    }

    #[test]
    fn incomplete_ledger_is_reported() {
        let mut env = flat(0.5, 0);
        let opts = WalkOptions { coupling: true, record_positions: true };
        let path = simulate_right_excursion(&mut env, 3, &mut ScriptedDecisions::from_signs(&[1, 1, 1]), opts);
        assert!(!upcrossing_counts(&path).unwrap().complete);
        assert!(matches!(
            branching_from_ledger(path.ledger.as_ref().unwrap(), &mut env),
            Err(Error::IncompleteLedger { .. })
        ));
    }

    #[test]
    fn keyed_coupling_matches_walk() {
        let spec = EnvironmentSpec::new(
            PLaw::TwoPoint { a: 1.0 / 3.0, weight: 0.5 },
            MLaw::Finite { support: vec![0, 1, 2], weights: vec![0.5, 0.3, 0.2] },
        );
        let mut completed = 0;
        for r in 0..300 {
            let key = StreamKey::new(77, r, Lane::Environment);
            let mut env = CookieEnvironment::from_spec(&spec, &key);
            let mut d = KeyedDecisions::new(&key);
            let opts = WalkOptions { coupling: true, record_positions: false };
            let path = simulate_right_excursion(&mut env, 100_000, &mut d, opts);
            if !matches!(path.outcome, WalkOutcome::HitTarget { .. }) {
                continue;
            }
            completed += 1;
            let u = upcrossing_counts(&path).unwrap().counts;
            let v = branching_from_ledger(path.ledger.as_ref().unwrap(), &mut env).unwrap();
            assert_eq!(v, u);
            assert_eq!(coupled_branching(&mut env, &d, u64::MAX).unwrap().unwrap(), v);
            assert_eq!(path.steps, 2 * u.iter().sum::<u64>());
        }
        assert!(completed > 200, "{completed}");
    }

    #[test]
    fn classical_report_agrees() {
        let spec = EnvironmentSpec::classical(MLaw::Finite { support: vec![0, 1], weights: vec![0.5, 0.5] });
        let report = classify_right_recurrence(&spec, 200, &[100, 10_000], 3).unwrap();
        assert_eq!(report.agreements, 200);
        assert_eq!(report.exact_coupling_matches, report.completed);
        for row in &report.rows {
            assert_eq!(row.returned, row.branching_hit_zero);
        }
        assert!(report.rows[1].returned >= report.rows[0].returned);
    }
}
