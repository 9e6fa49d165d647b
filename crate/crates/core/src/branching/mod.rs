//! Branching process in random environment with immigration.
//!
//! `Z_0 = 0` (or 1 in one-ancestor mode) and
//! `Z_n = xi_1^(n) + ... + xi_{Z_{n-1}}^(n) + M_n`, where generation `n`
//! reads an offspring law and an immigrant count from the environment.
//! Offspring sums are sampled in O(1): negative binomial through a
//! gamma-Poisson mixture for geometric laws, binomial for Bernoulli laws and
//! sequential binomials for finite tables. Populations above the exact
//! threshold continue in log-domain with a Gaussian fluctuation of the
//! correct variance; such values are tagged and paths that touched them are
//! marked approximate.

pub mod exact;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{EnvironmentSpec, ImmigrantCount, OffspringFamily, Regime, SiteEnv};
use crate::error::{Error, Result};
use crate::rng::{Lane, StreamKey};

/// Default cap on generations stored by [`simulate`].
pub const DEFAULT_MEMORY_BUDGET: usize = 10_000_000;

/// Poisson means above this are drawn from the normal approximation.
const POISSON_NORMAL_CUTOVER: f64 = 1e12;

/// A population size: exact, or the natural log of a count beyond the exact
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Population {
    Exact(u64),
    Log(f64),
}

impl Population {
    pub const ZERO: Population = Population::Exact(0);

    pub fn is_zero(&self) -> bool {
        matches!(self, Population::Exact(0))
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Population::Exact(_))
    }

    pub fn exact(&self) -> Option<u64> {
        match self {
            Population::Exact(n) => Some(*n),
            Population::Log(_) => None,
        }
    }

    /// Natural log of the count, `-inf` for zero.
    pub fn ln(&self) -> f64 {
        match self {
            Population::Exact(0) => f64::NEG_INFINITY,
            Population::Exact(n) => (*n as f64).ln(),
            Population::Log(l) => *l,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            Population::Exact(n) => *n as f64,
            Population::Log(l) => l.exp(),
        }
    }

    /// Normalizes a nonnegative real count.
    pub fn from_f64(x: f64, threshold: u64) -> Self {
        if x <= threshold as f64 {
            Population::Exact(x.max(0.0).round() as u64)
        } else {
            Population::Log(x.ln())
        }
    }

    /// Normalizes a log-count.
    pub fn from_ln(l: f64, threshold: u64) -> Self {
        if l == f64::NEG_INFINITY {
            Population::ZERO
        } else if l <= (threshold as f64).ln() {
            Population::Exact(l.exp().round() as u64)
        } else {
            Population::Log(l)
        }
    }

    pub fn add(self, other: Population, threshold: u64) -> Population {
        match (self, other) {
            (Population::Exact(a), Population::Exact(b)) => match a.checked_add(b) {
                Some(s) if s <= threshold => Population::Exact(s),
                _ => Population::Log((a as f64 + b as f64).ln()),
            },
            (a, b) => Population::Log(log_add_exp(a.ln(), b.ln())),
        }
    }
}

impl From<ImmigrantCount> for Population {
    fn from(m: ImmigrantCount) -> Self {
        match m.m_exact {
            Some(n) => Population::Exact(n),
            None => Population::Log(m.ln_count()),
        }
    }
}

/// `ln(e^a + e^b)`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Offspring distribution of one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum OffspringLaw {
    /// Geometric on N0 with parameter `1 - p`: `P[xi = k] = p^k (1 - p)`.
    Geometric { p: f64 },
    Bernoulli { q: f64 },
    /// `pmf[k] = P[xi = k]`.
    Table { pmf: Vec<f64> },
}

impl OffspringLaw {
    pub fn from_site(site: &SiteEnv, family: OffspringFamily) -> Self {
        match family {
            OffspringFamily::Geometric => OffspringLaw::Geometric { p: site.p },
            OffspringFamily::Bernoulli => OffspringLaw::Bernoulli { q: site.p },
        }
    }

    pub fn check(&self) -> Result<()> {
        match self {
            OffspringLaw::Geometric { p } if !(0.0..1.0).contains(p) => {
                Err(Error::Domain(format!("geometric law needs 0 <= p < 1, got {p}")))
            }
            OffspringLaw::Bernoulli { q } if !(0.0..=1.0).contains(q) => {
                Err(Error::Domain(format!("bernoulli law needs 0 <= q <= 1, got {q}")))
            }
            OffspringLaw::Table { pmf } => {
                let total: f64 = pmf.iter().sum();
                if pmf.is_empty() || pmf.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                    Err(Error::Domain("offspring table must be a probability vector".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            OffspringLaw::Geometric { p } => p / (1.0 - p),
            OffspringLaw::Bernoulli { q } => *q,
            OffspringLaw::Table { pmf } => pmf.iter().enumerate().map(|(k, w)| k as f64 * w).sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            OffspringLaw::Geometric { p } => p / ((1.0 - p) * (1.0 - p)),
            OffspringLaw::Bernoulli { q } => q * (1.0 - q),
            OffspringLaw::Table { pmf } => {
                let m = self.mean();
                pmf.iter().enumerate().map(|(k, w)| (k as f64 - m).powi(2) * w).sum()
            }
        }
    }

    /// Generating function `E[s^xi]` on `[0, 1]`.
    pub fn pgf(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!("pgf argument must lie in [0, 1], got {s}")));
        }
        Ok(match self {
            OffspringLaw::Geometric { p } => (1.0 - p) / (1.0 - p * s),
            OffspringLaw::Bernoulli { q } => 1.0 - q + q * s,
            // Horner from the top coefficient.
            OffspringLaw::Table { pmf } => pmf.iter().rev().fold(0.0, |acc, w| acc * s + w),
        })
    }

    pub fn pmf(&self, k: usize) -> f64 {
        match self {
            OffspringLaw::Geometric { p } => p.powi(k as i32) * (1.0 - p),
            OffspringLaw::Bernoulli { q } => match k {
                0 => 1.0 - q,
                1 => *q,
                _ => 0.0,
            },
            OffspringLaw::Table { pmf } => pmf.get(k).copied().unwrap_or(0.0),
        }
    }

    /// Probability vector truncated once the remaining mass drops below
    /// `floor`; returns the vector and the discarded mass.
    pub fn truncated_pmf(&self, floor: f64) -> (Vec<f64>, f64) {
        match self {
            OffspringLaw::Geometric { p } => {
                let mut out = Vec::new();
                let mut tail = 1.0;
                let mut k = 0;
                while tail > floor {
                    let w = self.pmf(k);
                    out.push(w);
                    tail = p.powi(k as i32 + 1);
                    k += 1;
                    if *p == 0.0 {
                        tail = 0.0;
                    }
                }
                (out, tail)
            }
            OffspringLaw::Bernoulli { q } => (vec![1.0 - q, *q], 0.0),
            OffspringLaw::Table { pmf } => (pmf.clone(), 0.0),
        }
    }
}

pub fn law_mean(law: &OffspringLaw) -> f64 {
    law.mean()
}

pub fn law_variance(law: &OffspringLaw) -> f64 {
    law.variance()
}

pub fn pgf_eval(law: &OffspringLaw, s: f64) -> Result<f64> {
    law.pgf(s)
}

/// Sum of `k` independent draws from `law`.
///
/// Log-domain `k` is advanced by its mean with a CLT-scaled Gaussian
/// fluctuation; the result is then log-domain as well.
pub fn offspring_sum<R: RngCore + ?Sized>(
    law: &OffspringLaw,
    k: Population,
    threshold: u64,
    rng: &mut R,
) -> Population {
    match k {
        Population::Exact(0) => Population::ZERO,
        Population::Exact(n) => exact_offspring_sum(law, n, threshold, rng),
        Population::Log(lk) => {
            let mu = law.mean();
            if mu == 0.0 {
                return Population::ZERO;
            }
            let z: f64 = StandardNormal.sample(rng);
            let rel = z * law.variance().sqrt() / mu * (-0.5 * lk).exp();
            let l = lk + mu.ln() + rel.max(-0.5).ln_1p();
            Population::from_ln(l, threshold).max_log(threshold)
        }
    }
}

impl Population {
    // Keeps values that came out of the log-domain approximation in
    // log-domain unless they fell well inside the exact range.
    fn max_log(self, threshold: u64) -> Population {
        match self {
            Population::Exact(n) if n > threshold / 2 => Population::Log((n as f64).ln()),
            other => other,
        }
    }
}

fn exact_offspring_sum<R: RngCore + ?Sized>(law: &OffspringLaw, n: u64, threshold: u64, rng: &mut R) -> Population {
    match law {
        OffspringLaw::Geometric { p } => {
            if *p == 0.0 {
                return Population::ZERO;
            }
            // NegBin(n, 1 - p) as Poisson(Gamma(n, p / (1 - p))).
            let rate: f64 = Gamma::new(n as f64, p / (1.0 - p)).expect("valid gamma").sample(rng);
            let draw = poisson(rate, rng);
            Population::from_f64(draw, threshold)
        }
        OffspringLaw::Bernoulli { q } => {
            let draw = Binomial::new(n, *q).expect("valid binomial").sample(rng);
            Population::from_f64(draw as f64, threshold).exact_if_small(draw, threshold)
        }
        OffspringLaw::Table { pmf } => {
            let mut remaining = n;
            let mut remaining_mass = 1.0;
            let mut total: u128 = 0;
            for (v, &w) in pmf.iter().enumerate() {
                if remaining == 0 {
                    break;
                }
                let count = if v + 1 == pmf.len() || remaining_mass <= w {
                    remaining
                } else {
                    let prob = (w / remaining_mass).clamp(0.0, 1.0);
                    Binomial::new(remaining, prob).expect("valid binomial").sample(rng)
                };
                total += v as u128 * count as u128;
                remaining -= count;
                remaining_mass -= w;
            }
            if total <= threshold as u128 {
                Population::Exact(total as u64)
            } else {
                Population::Log((total as f64).ln())
            }
        }
    }
}

impl Population {
    fn exact_if_small(self, draw: u64, threshold: u64) -> Population {
        if draw <= threshold {
            Population::Exact(draw)
        } else {
            self
        }
    }
}

fn poisson<R: RngCore + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    if rate <= 0.0 {
        0.0
    } else if rate < POISSON_NORMAL_CUTOVER {
        Poisson::new(rate).expect("valid poisson").sample(rng)
    } else {
        let z: f64 = StandardNormal.sample(rng);
        (rate + rate.sqrt() * z).round().max(0.0)
    }
}

/// Reproduction law and immigrant count of one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub law: OffspringLaw,
    pub immigrants: Population,
}

impl Generation {
    pub fn new(law: OffspringLaw, immigrants: u64) -> Self {
        Self { law, immigrants: Population::Exact(immigrants) }
    }

    pub fn from_site(site: &SiteEnv, family: OffspringFamily) -> Self {
        Self { law: OffspringLaw::from_site(site, family), immigrants: site.count().into() }
    }
}

/// One BPIRE transition.
pub fn step<R: RngCore + ?Sized>(z: Population, generation: &Generation, threshold: u64, rng: &mut R) -> Population {
    offspring_sum(&generation.law, z, threshold, rng).add(generation.immigrants, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartMode {
    #[default]
    ZeroStart,
    OneAncestor,
}

impl StartMode {
    pub fn initial(&self) -> Population {
        match self {
            StartMode::ZeroStart => Population::ZERO,
            StartMode::OneAncestor => Population::Exact(1),
        }
    }
}

/// A simulated trajectory with its realized environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingPath {
    pub populations: Vec<Population>,
    /// `generations[n - 1]` drove the step to `populations[n]`.
    pub generations: Vec<Generation>,
    pub hit_zero_at: Option<usize>,
    pub mode: StartMode,
    /// Some generation was computed in log-domain.
    pub approximate: bool,
    pub seed: u64,
    pub replica: u64,
}

impl BranchingPath {
    pub fn horizon(&self) -> usize {
        self.populations.len() - 1
    }

    /// Recomputes generation `n` from the stored environment and the
    /// generation's offspring stream.
    pub fn regenerate(&self, n: usize, threshold: u64) -> Result<Population> {
        if n == 0 || n > self.horizon() {
            return Err(Error::Index { index: n, len: self.populations.len() });
        }
        let key = StreamKey::new(self.seed, self.replica, Lane::Offspring);
        Ok(step(self.populations[n - 1], &self.generations[n - 1], threshold, &mut key.stream(n as u64)))
    }
}

/// Summary of a streamed run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub last: Population,
    pub hit_zero_at: Option<usize>,
    pub approximate: bool,
}

/// Driver holding the spec and run options.
#[derive(Debug, Clone)]
pub struct BranchingSim<'a> {
    spec: &'a EnvironmentSpec,
    mode: StartMode,
    memory_budget: usize,
}

impl<'a> BranchingSim<'a> {
    pub fn new(spec: &'a EnvironmentSpec) -> Self {
        Self { spec, mode: StartMode::ZeroStart, memory_budget: DEFAULT_MEMORY_BUDGET }
    }

    pub fn mode(mut self, mode: StartMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn memory_budget(mut self, generations: usize) -> Self {
        self.memory_budget = generations;
        self
    }

    /// Generation `n`'s environment for replica `key`; shared with the walk
    /// at site `n`.
    pub fn generation(&self, key: &StreamKey, n: u64) -> Generation {
        let site = self.spec.sample_site(&mut key.with_lane(Lane::Environment).stream(n));
        Generation::from_site(&site, self.spec.offspring)
    }

    /// Runs without storing the path; `visit(n, z_n, generation_n)` is called
    /// for `n = 1..=horizon`. Stops early if `visit` returns `false`.
    pub fn run_streaming<F>(&self, horizon: usize, key: &StreamKey, mut visit: F) -> Result<StreamSummary>
    where
        F: FnMut(usize, Population, &Generation) -> bool,
    {
        self.spec.check()?;
        let threshold = self.spec.exact_threshold;
        let offspring = key.with_lane(Lane::Offspring);
        let mut z = self.mode.initial();
        let mut hit_zero_at = None;
        let mut approximate = false;
        for n in 1..=horizon {
            let generation = self.generation(key, n as u64);
            approximate |= !z.is_exact() || !generation.immigrants.is_exact();
            z = step(z, &generation, threshold, &mut offspring.stream(n as u64));
            approximate |= !z.is_exact();
            if hit_zero_at.is_none() && z.is_zero() {
                hit_zero_at = Some(n);
            }
            if !visit(n, z, &generation) {
                break;
            }
        }
        Ok(StreamSummary { last: z, hit_zero_at, approximate })
    }

    pub fn run(&self, horizon: usize, key: &StreamKey) -> Result<BranchingPath> {
        if horizon == 0 {
            return Err(Error::Domain("horizon must be at least 1".into()));
        }
        if horizon >= self.memory_budget {
            return Err(Error::Resource(format!(
                "horizon {horizon} exceeds the memory budget of {} stored generations; use streaming",
                self.memory_budget
            )));
        }
        let mut populations = Vec::with_capacity(horizon + 1);
        let mut generations = Vec::with_capacity(horizon);
        populations.push(self.mode.initial());
        let summary = self.run_streaming(horizon, key, |_, z, g| {
            populations.push(z);
            generations.push(g.clone());
            true
        })?;
        Ok(BranchingPath {
            populations,
            generations,
            hit_zero_at: summary.hit_zero_at,
            mode: self.mode,
            approximate: summary.approximate,
            seed: key.seed(),
            replica: key.replica(),
        })
    }
}

/// Simulates one replica with the default memory budget.
pub fn simulate(spec: &EnvironmentSpec, horizon: usize, mode: StartMode, key: &StreamKey) -> Result<BranchingPath> {
    BranchingSim::new(spec).mode(mode).run(horizon, key)
}

/// The line of immigrants arriving at some generation `j`: starts from
/// `start = M_j` and reproduces with `laws = (r_{j+1}, ..., r_{j+n})`
/// without further immigration. Returns `Z_0(j), ..., Z_n(j)`.
pub fn immigrant_line<R: RngCore + ?Sized>(
    start: Population,
    laws: &[&OffspringLaw],
    threshold: u64,
    rng: &mut R,
) -> Vec<Population> {
    let mut line = Vec::with_capacity(laws.len() + 1);
    line.push(start);
    let mut z = start;
    for law in laws {
        z = offspring_sum(law, z, threshold, rng);
        line.push(z);
    }
    line
}

/// `Z_n` through the immigrant-line construction
/// `Z_n = sum_{j=1}^n Z_{n-j}(j)` (plus the ancestor's line in one-ancestor
/// mode), with independent randomness per line.
pub fn simulate_by_lines<R: RngCore + ?Sized>(
    generations: &[Generation],
    mode: StartMode,
    threshold: u64,
    rng: &mut R,
) -> Population {
    let n = generations.len();
    let laws: Vec<&OffspringLaw> = generations.iter().map(|g| &g.law).collect();
    let mut total = *immigrant_line(mode.initial(), &laws, threshold, rng).last().expect("non-empty");
    for j in 1..=n {
        let line = immigrant_line(generations[j - 1].immigrants, &laws[j..], threshold, rng);
        total = total.add(*line.last().expect("non-empty"), threshold);
    }
    total
}

/// One draw of the backward process `sum_{j=1}^k Z_j(-j)`: immigrants that
/// arrived at times `-k..-1` observed at time 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackwardDraw {
    pub value: Population,
    /// `false` when the spec is not subcritical; the draw is still valid but
    /// no stationary limit exists.
    pub subcritical: bool,
}

/// Environment and offspring streams are indexed by distance into the past,
/// so draws with different lookbacks share their most recent generations.
pub fn backward_process(k: usize, spec: &EnvironmentSpec, key: &StreamKey) -> Result<BackwardDraw> {
    spec.check()?;
    if k == 0 {
        return Err(Error::Domain("lookback must be at least 1".into()));
    }
    let threshold = spec.exact_threshold;
    let env = key.with_lane(Lane::Environment);
    let offspring = key.with_lane(Lane::Offspring);
    let generation_at = |back: usize| {
        Generation::from_site(&spec.sample_site(&mut env.stream(back as u64)), spec.offspring)
    };
    let mut z = Population::ZERO;
    let mut arriving = generation_at(k);
    for back in (0..k).rev() {
        z = z.add(arriving.immigrants, threshold);
        let next = generation_at(back);
        z = offspring_sum(&next.law, z, threshold, &mut offspring.stream(back as u64));
        arriving = next;
    }
    Ok(BackwardDraw { value: z, subcritical: spec.regime() == Regime::Subcritical })
}

/// Sequential per-generation stream, exposed for drivers that need their own
/// schedule.
pub fn offspring_stream(key: &StreamKey, n: u64) -> ChaCha8Rng {
    key.with_lane(Lane::Offspring).stream(n)
}
