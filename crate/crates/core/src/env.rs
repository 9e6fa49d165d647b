//! The random environment: i.i.d. pairs `(p, M)` of a right-step
//! probability and a cookie/immigrant count.
//!
//! A walk reads `(p_x, M_x)` at site `x`; a branching process reads the same
//! pair at generation `n` as an offspring law (geometric with mean
//! `p/(1-p)` by default) and an immigrant count. All families shipped here
//! have closed-form (or bounded-integrand) moments so that validation and
//! criteria evaluation are deterministic.

use std::f64::consts::LN_2;
use std::fmt;

use rand::RngCore;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Discrete, DiscreteCDF};

use crate::error::{Error, Result};
use crate::rng::uniform_open01;

/// Default cut-over between exact integers and log-domain counts.
pub const DEFAULT_EXACT_THRESHOLD: u64 = 1 << 62;

/// Largest log-count a sampler will return; keeps arithmetic finite.
pub const MAX_LOG_COUNT: f64 = 1e300;

/// Default exponents for the `E[|log rho|^delta]` diagnostics.
pub const DEFAULT_DELTA_GRID: [f64; 6] = [1.0, 2.0, 3.0, 4.0, 5.0, 5.9];

/// Nodes of the midpoint rule used for functionals of the logit-uniform law.
const QUADRATURE_NODES: usize = 20_000;

/// `rho(p) = (1-p)/p`.
pub fn rho(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("rho needs 0 < p < 1, got {p}")));
    }
    Ok((1.0 - p) / p)
}

/// `log rho(p)` computed as `ln(1-p) - ln p`.
pub fn log_rho(p: f64) -> f64 {
    (-p).ln_1p() - p.ln()
}

/// Law of the right-step probability `p` on (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PLaw {
    /// `p = a` with probability `weight`, `p = 1 - a` otherwise.
    TwoPoint { a: f64, weight: f64 },
    /// Arbitrary finite support.
    Finite { support: Vec<f64>, weights: Vec<f64> },
    /// `log(p / (1-p))` uniform on `[-half_width, half_width]`.
    LogitUniform { half_width: f64 },
}

impl PLaw {
    /// Degenerate law `p ≡ value`.
    pub fn constant(value: f64) -> Self {
        PLaw::Finite { support: vec![value], weights: vec![1.0] }
    }

    fn check(&self) -> Result<()> {
        let in_unit = |p: f64| p > 0.0 && p < 1.0;
        match self {
            PLaw::TwoPoint { a, weight } => {
                if !in_unit(*a) {
                    return Err(Error::InvalidSpec(format!("two-point p-law needs 0 < a < 1, got {a}")));
                }
                if !(0.0..=1.0).contains(weight) {
                    return Err(Error::InvalidSpec(format!("two-point weight {weight} not in [0, 1]")));
                }
            }
            PLaw::Finite { support, weights } => {
                if let Some(p) = support.iter().find(|p| !in_unit(**p)) {
                    return Err(Error::InvalidSpec(format!("p-law support point {p} not in (0, 1)")));
                }
                check_weights("p-law", support.len(), weights)?;
            }
            PLaw::LogitUniform { half_width } => {
                if !(*half_width > 0.0 && half_width.is_finite()) {
                    return Err(Error::InvalidSpec(format!(
                        "logit-uniform half_width must be positive and finite, got {half_width}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Atoms `(p, log rho(p), weight)` for discrete laws. The two-point law
    /// uses `±log rho(a)` so that symmetric weights cancel exactly.
    fn atoms(&self) -> Option<Vec<(f64, f64, f64)>> {
        match self {
            PLaw::TwoPoint { a, weight } => {
                let l = log_rho(*a);
                Some(vec![(*a, l, *weight), (1.0 - a, -l, 1.0 - weight)])
            }
            PLaw::Finite { support, weights } => Some(
                support.iter().zip(weights).map(|(&p, &w)| (p, log_rho(p), w)).collect(),
            ),
            PLaw::LogitUniform { .. } => None,
        }
    }

    /// `E[g(p, log rho(p))]`; exact for discrete laws, midpoint rule for the
    /// logit-uniform law.
    pub fn expect<G: Fn(f64, f64) -> f64>(&self, g: G) -> f64 {
        match self.atoms() {
            Some(atoms) => atoms.iter().filter(|a| a.2 > 0.0).map(|&(p, l, w)| w * g(p, l)).sum(),
            None => {
                let PLaw::LogitUniform { half_width: c } = self else { unreachable!() };
                let h = 2.0 * c / QUADRATURE_NODES as f64;
                (0..QUADRATURE_NODES)
                    .map(|i| {
                        let x = -c + (i as f64 + 0.5) * h;
                        let p = 1.0 / (1.0 + (-x).exp());
                        g(p, -x)
                    })
                    .sum::<f64>()
                    / QUADRATURE_NODES as f64
            }
        }
    }

    /// `E[log rho]`.
    pub fn mean_log_rho(&self) -> f64 {
        match self {
            PLaw::LogitUniform { .. } => 0.0,
            _ => self.expect(|_, l| l),
        }
    }

    /// `E[|log rho|^delta]`.
    pub fn abs_log_rho_moment(&self, delta: f64) -> f64 {
        match self {
            PLaw::LogitUniform { half_width } => half_width.powf(delta) / (delta + 1.0),
            _ => self.expect(|_, l| l.abs().powf(delta)),
        }
    }

    /// `P[p = 1/2]`.
    pub fn prob_half(&self) -> f64 {
        match self {
            PLaw::LogitUniform { .. } => 0.0,
            _ => self.expect(|p, _| if p == 0.5 { 1.0 } else { 0.0 }),
        }
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = uniform_open01(rng);
        match self {
            PLaw::TwoPoint { a, weight } => {
                if u < *weight {
                    *a
                } else {
                    1.0 - a
                }
            }
            PLaw::Finite { support, weights } => support[pick_index(weights, u)],
            PLaw::LogitUniform { half_width } => {
                let x = -half_width + 2.0 * half_width * u;
                1.0 / (1.0 + (-x).exp())
            }
        }
    }
}

/// Law of the cookie/immigrant count `M` on the nonnegative integers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum MLaw {
    Constant { value: u64 },
    Finite { support: Vec<u64>, weights: Vec<f64> },
    Poisson { mean: f64 },
    /// `P[M >= k] = (1 + ln k)^(-lambda)` for `k >= 2`, `P[M = 1] = 0`.
    HeavyTail { lambda: f64 },
}

/// Finiteness (and value, when computable) of a moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moment {
    pub finite: bool,
    pub value: Option<f64>,
}

impl Moment {
    fn exact(value: f64) -> Self {
        Self { finite: value.is_finite(), value: Some(value) }
    }
}

impl MLaw {
    fn check(&self) -> Result<()> {
        match self {
            MLaw::Constant { .. } => {}
            MLaw::Finite { support, weights } => check_weights("m-law", support.len(), weights)?,
            MLaw::Poisson { mean } => {
                if !(*mean >= 0.0 && mean.is_finite()) {
                    return Err(Error::InvalidSpec(format!("poisson mean must be finite and >= 0, got {mean}")));
                }
            }
            MLaw::HeavyTail { lambda } => {
                if !(*lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::InvalidSpec(format!("heavy-tail lambda must be > 0, got {lambda}")));
                }
            }
        }
        Ok(())
    }

    /// `P[M = 0]`.
    pub fn prob_zero(&self) -> f64 {
        match self {
            MLaw::Constant { value } => f64::from(*value == 0),
            MLaw::Finite { support, weights } => {
                support.iter().zip(weights).filter(|(m, _)| **m == 0).map(|(_, w)| w).sum()
            }
            MLaw::Poisson { mean } => (-mean).exp(),
            MLaw::HeavyTail { lambda } => 1.0 - heavy_tail_survival(2.0_f64.ln(), *lambda),
        }
    }

    /// `E[M]`; `None` when infinite.
    pub fn mean(&self) -> Option<f64> {
        match self {
            MLaw::Constant { value } => Some(*value as f64),
            MLaw::Finite { support, weights } => {
                Some(support.iter().zip(weights).map(|(&m, &w)| m as f64 * w).sum())
            }
            MLaw::Poisson { mean } => Some(*mean),
            // sum_k (1 + ln k)^-lambda diverges for every lambda.
            MLaw::HeavyTail { .. } => None,
        }
    }

    /// `E[(log_+ M)^q]`.
    pub fn log_plus_moment(&self, q: f64) -> Moment {
        let lp = |m: u64| if m > 1 { (m as f64).ln().powf(q) } else { 0.0 };
        match self {
            MLaw::Constant { value } => Moment::exact(lp(*value)),
            MLaw::Finite { support, weights } => {
                Moment::exact(support.iter().zip(weights).map(|(&m, &w)| w * lp(m)).sum())
            }
            MLaw::Poisson { mean } => {
                if *mean == 0.0 {
                    return Moment::exact(0.0);
                }
                let law = statrs::distribution::Poisson::new(*mean).expect("checked mean");
                let upper = (mean + 40.0 * mean.sqrt() + 40.0).ceil() as u64;
                Moment::exact((2..=upper).map(|k| law.pmf(k) * lp(k)).sum())
            }
            MLaw::HeavyTail { lambda } => Moment { finite: q < *lambda, value: None },
        }
    }

    /// Power-law exponent of `t -> P[log M > t]`, if the family has one.
    pub fn tail_exponent(&self) -> Option<f64> {
        match self {
            MLaw::HeavyTail { lambda } => Some(*lambda),
            _ => None,
        }
    }

    /// `log P[log M > t]`, exact for every family.
    pub fn log_survival_log_m(&self, t: f64) -> f64 {
        // P[log M > t] = P[M > e^t] = P[M >= floor(e^t) + 1] for t >= 0,
        // and P[M >= 1] for t < 0.
        let k_min = if t < 0.0 { 1.0 } else { t.exp().floor() + 1.0 };
        match self {
            MLaw::Constant { value } => {
                if (*value as f64) >= k_min {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            MLaw::Finite { support, weights } => support
                .iter()
                .zip(weights)
                .filter(|(m, _)| (**m as f64) >= k_min)
                .map(|(_, w)| w)
                .sum::<f64>()
                .ln(),
            MLaw::Poisson { mean } => {
                if *mean == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let law = statrs::distribution::Poisson::new(*mean).expect("checked mean");
                if k_min > 1e18 {
                    return f64::NEG_INFINITY;
                }
                law.sf(k_min as u64 - 1).ln()
            }
            MLaw::HeavyTail { lambda } => {
                if k_min <= 2.0 {
                    return heavy_tail_survival(2.0_f64.ln(), *lambda).ln();
                }
                // ln(floor(e^t) + 1) equals t to double precision for large t.
                let ln_k = if t > 36.0 { t } else { k_min.ln() };
                -lambda * ln_k.ln_1p()
            }
        }
    }

    pub fn sample<R: RngCore + ?Sized>(&self, threshold: u64, rng: &mut R) -> ImmigrantCount {
        match self {
            MLaw::Constant { value } => ImmigrantCount::from_exact(*value, threshold),
            MLaw::Finite { support, weights } => {
                let u = uniform_open01(rng);
                ImmigrantCount::from_exact(support[pick_index(weights, u)], threshold)
            }
            MLaw::Poisson { mean } => {
                if *mean == 0.0 {
                    return ImmigrantCount::ZERO;
                }
                let draw: f64 = Poisson::new(*mean).expect("checked mean").sample(rng);
                ImmigrantCount::from_exact(draw as u64, threshold)
            }
            MLaw::HeavyTail { lambda } => sample_heavy_tail_m(*lambda, threshold, rng),
        }
    }
}

/// `P[M >= k]` for the heavy-tail family at `ln k`, `k >= 2`.
fn heavy_tail_survival(ln_k: f64, lambda: f64) -> f64 {
    (1.0 + ln_k).powf(-lambda)
}

/// A count carried as `log(1 + M)` with an exact sidecar below the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImmigrantCount {
    pub log_m: f64,
    pub m_exact: Option<u64>,
}

impl ImmigrantCount {
    pub const ZERO: ImmigrantCount = ImmigrantCount { log_m: 0.0, m_exact: Some(0) };

    pub fn from_exact(m: u64, threshold: u64) -> Self {
        Self { log_m: (m as f64).ln_1p(), m_exact: (m <= threshold).then_some(m) }
    }

    /// Log-domain only; `log_m = log(1 + M)`.
    pub fn from_log(log_m: f64) -> Self {
        Self { log_m, m_exact: None }
    }

    pub fn is_zero(&self) -> bool {
        self.m_exact == Some(0)
    }

    /// `ln M`, `-inf` for `M = 0`.
    pub fn ln_count(&self) -> f64 {
        match self.m_exact {
            Some(0) => f64::NEG_INFINITY,
            Some(m) => (m as f64).ln(),
            None => self.log_m + (-(-self.log_m).exp_m1()).ln(),
        }
    }

    /// Exact value, or `u64::MAX` for log-domain counts.
    pub fn saturating_u64(&self) -> u64 {
        self.m_exact.unwrap_or(u64::MAX)
    }
}

/// One realized environment entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteEnv {
    pub p: f64,
    pub log_m: f64,
    pub m_exact: Option<u64>,
}

impl SiteEnv {
    pub fn new(p: f64, m: u64) -> Self {
        Self::from_count(p, ImmigrantCount::from_exact(m, u64::MAX))
    }

    pub fn from_count(p: f64, m: ImmigrantCount) -> Self {
        Self { p, log_m: m.log_m, m_exact: m.m_exact }
    }

    pub fn count(&self) -> ImmigrantCount {
        ImmigrantCount { log_m: self.log_m, m_exact: self.m_exact }
    }

    pub fn rho(&self) -> f64 {
        (1.0 - self.p) / self.p
    }
}

/// Offspring family a generation's `p` induces in the branching process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OffspringFamily {
    /// Geometric on N0 with parameter `1 - p`: mean `p/(1-p) = 1/rho`.
    /// This is the law the walk coupling produces.
    #[default]
    Geometric,
    /// Bernoulli(p): mean `p`.
    Bernoulli,
}

impl OffspringFamily {
    /// `log mu` given `p` and `log rho(p)`.
    pub fn log_mean(&self, p: f64, log_rho: f64) -> f64 {
        match self {
            OffspringFamily::Geometric => -log_rho,
            OffspringFamily::Bernoulli => p.ln(),
        }
    }

    /// `Var / mu^2` given `p`.
    pub fn variance_ratio(&self, p: f64) -> f64 {
        match self {
            OffspringFamily::Geometric => 1.0 / p,
            OffspringFamily::Bernoulli => (1.0 - p) / p,
        }
    }
}

/// Whether `(p, M)` is recorded as one jointly i.i.d. pair per site or as
/// independent marginals. Shipped families always draw `p` first, then `M`,
/// from the same per-site stream, so both modes sample identically; the
/// flag is carried into manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingMode {
    IndependentPair,
    #[default]
    Product,
}

fn default_exact_threshold() -> u64 {
    DEFAULT_EXACT_THRESHOLD
}

/// Distributional description of the i.i.d. environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub p_law: PLaw,
    pub m_law: MLaw,
    #[serde(default)]
    pub offspring: OffspringFamily,
    #[serde(default)]
    pub coupling_mode: CouplingMode,
    #[serde(default = "default_exact_threshold")]
    pub exact_threshold: u64,
    /// Suppresses the `P[p = 1/2] < 1` requirement for classical comparisons.
    #[serde(default)]
    pub classical_mode: bool,
}

impl EnvironmentSpec {
    pub fn new(p_law: PLaw, m_law: MLaw) -> Self {
        Self {
            p_law,
            m_law,
            offspring: OffspringFamily::Geometric,
            coupling_mode: CouplingMode::Product,
            exact_threshold: DEFAULT_EXACT_THRESHOLD,
            classical_mode: false,
        }
    }

    /// Symmetric two-point `p ∈ {1/3, 2/3}` (so `mu ∈ {1/2, 2}`) with the
    /// heavy-tailed cookie law of exponent `lambda`.
    pub fn heavy_tail_example(lambda: f64) -> Self {
        Self::new(PLaw::TwoPoint { a: 1.0 / 3.0, weight: 0.5 }, MLaw::HeavyTail { lambda })
    }

    /// Simple symmetric walk with i.i.d. cookies.
    pub fn classical(m_law: MLaw) -> Self {
        Self { classical_mode: true, ..Self::new(PLaw::constant(0.5), m_law) }
    }

    pub fn with_offspring(mut self, offspring: OffspringFamily) -> Self {
        self.offspring = offspring;
        self
    }

    pub fn with_exact_threshold(mut self, threshold: u64) -> Self {
        self.exact_threshold = threshold;
        self
    }

    /// Structural checks only (parameter ranges, weights).
    pub fn check(&self) -> Result<()> {
        self.p_law.check()?;
        self.m_law.check()?;
        if self.exact_threshold == 0 {
            return Err(Error::InvalidSpec("exact_threshold must be at least 1".into()));
        }
        Ok(())
    }

    pub fn sample_site<R: RngCore + ?Sized>(&self, rng: &mut R) -> SiteEnv {
        let p = self.p_law.sample(rng);
        let m = self.m_law.sample(self.exact_threshold, rng);
        SiteEnv::from_count(p, m)
    }

    /// `E[log mu]` of the induced offspring law.
    pub fn mean_log_mu(&self) -> f64 {
        match self.offspring {
            OffspringFamily::Geometric => -self.p_law.mean_log_rho(),
            OffspringFamily::Bernoulli => self.p_law.expect(|p, _| p.ln()),
        }
    }

    /// `E[|log mu|^delta]`.
    pub fn abs_log_mu_moment(&self, delta: f64) -> f64 {
        match self.offspring {
            OffspringFamily::Geometric => self.p_law.abs_log_rho_moment(delta),
            OffspringFamily::Bernoulli => self.p_law.expect(|p, _| p.ln().abs().powf(delta)),
        }
    }

    /// `E[log_+ mu]`.
    pub fn mean_log_plus_mu(&self) -> f64 {
        let f = self.offspring;
        self.p_law.expect(|p, l| f.log_mean(p, l).max(0.0))
    }

    /// `P[mu = 1]`.
    pub fn prob_mu_one(&self) -> f64 {
        match self.offspring {
            OffspringFamily::Geometric => self.p_law.prob_half(),
            // mu = p < 1 always.
            OffspringFamily::Bernoulli => 0.0,
        }
    }

    /// `E[(log_+(Var / mu^2))^2]`.
    pub fn variance_ratio_moment(&self) -> f64 {
        let f = self.offspring;
        self.p_law.expect(|p, _| f.variance_ratio(p).ln().max(0.0).powi(2))
    }

    /// Sign of `E[log mu]` with a tolerance for finite-support sums.
    pub fn regime(&self) -> Regime {
        let mean = self.mean_log_mu();
        let scale = self.abs_log_mu_moment(1.0).max(1.0);
        if mean.abs() <= CRITICALITY_TOLERANCE * scale {
            Regime::Critical
        } else if mean < 0.0 {
            Regime::Subcritical
        } else {
            Regime::Supercritical
        }
    }
}

/// `|E[log mu]|` below this (relative to `max(1, E|log mu|)`) counts as zero.
pub const CRITICALITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Critical,
    Subcritical,
    Supercritical,
    Invalid,
}

/// Draws one environment entry.
pub fn sample_site<R: RngCore + ?Sized>(spec: &EnvironmentSpec, rng: &mut R) -> SiteEnv {
    spec.sample_site(rng)
}

/// Exact inverse-CDF draw from the heavy-tail family.
pub fn sample_heavy_tail_m<R: RngCore + ?Sized>(lambda: f64, threshold: u64, rng: &mut R) -> ImmigrantCount {
    heavy_tail_from_uniform(uniform_open01(rng), lambda, threshold)
}

/// Inverse of `P[M >= k] = (1 + ln k)^-lambda` at uniform `u`.
pub fn heavy_tail_from_uniform(u: f64, lambda: f64, threshold: u64) -> ImmigrantCount {
    if u >= heavy_tail_survival(LN_2, lambda) {
        return ImmigrantCount::ZERO;
    }
    // M >= k  <=>  u < (1 + ln k)^-lambda  <=>  ln k < u^(-1/lambda) - 1 =: t
    let t = ((-u.ln() / lambda).exp() - 1.0).min(MAX_LOG_COUNT);
    if t > (threshold as f64).ln_1p() || t > 43.0 {
        return ImmigrantCount::from_log(t);
    }
    // Largest integer k with ln k < t.
    let mut k = (t.exp().ceil() as u64).saturating_sub(1).max(2);
    while k > 2 && (k as f64).ln() >= t {
        k -= 1;
    }
    while ((k + 1) as f64).ln() < t {
        k += 1;
    }
    ImmigrantCount::from_exact(k, threshold)
}

fn check_weights(what: &str, n: usize, weights: &[f64]) -> Result<()> {
    if n == 0 || weights.len() != n {
        return Err(Error::InvalidSpec(format!(
            "{what}: support and weights must be non-empty and of equal length ({n} vs {})",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidSpec(format!("{what}: negative or NaN weight")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSpec(format!("{what}: weights sum to {total}, not 1")));
    }
    Ok(())
}

fn pick_index(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Rounding left a sliver above the last cumulative weight.
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Assumption a spec can violate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Assumption {
    /// Parameters out of range; the spec cannot be sampled.
    Structural,
    /// `P[p = 1/2] < 1`.
    A1,
    /// `E|log rho| < inf` and `E[log rho] = 0`.
    A3,
    /// `P[M = 0] > 0` and `P[M = inf] = 0`.
    A4,
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Assumption::Structural => "structural",
            Assumption::A1 => "A.1",
            Assumption::A3 => "A.3",
            Assumption::A4 => "A.4",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub assumption: Assumption,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMomentReport {
    pub q: f64,
    pub finite: bool,
    pub value: Option<f64>,
}

/// Analytic validation of a spec. Never fails on a violating spec; the
/// violations are listed instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub mean_log_rho: Option<f64>,
    pub mean_log_rho_is_zero: bool,
    pub prob_p_half: Option<f64>,
    pub prob_m_zero: Option<f64>,
    pub abs_log_rho_moments: Vec<(f64, f64)>,
    pub m_log_moments: Vec<LogMomentReport>,
    pub tail_exponent: Option<f64>,
    pub classical_mode: bool,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn is_structurally_valid(&self) -> bool {
        !self.violations.iter().any(|v| v.assumption == Assumption::Structural)
    }

    pub fn violates(&self, a: Assumption) -> bool {
        self.violations.iter().any(|v| v.assumption == a)
    }
}

/// Validates with the default diagnostic grids.
pub fn validate_spec(spec: &EnvironmentSpec) -> ValidationReport {
    validate_spec_with(spec, &DEFAULT_DELTA_GRID, &[1.0, 2.0, 3.0])
}

pub fn validate_spec_with(spec: &EnvironmentSpec, deltas: &[f64], qs: &[f64]) -> ValidationReport {
    let mut report = ValidationReport {
        violations: Vec::new(),
        mean_log_rho: None,
        mean_log_rho_is_zero: false,
        prob_p_half: None,
        prob_m_zero: None,
        abs_log_rho_moments: Vec::new(),
        m_log_moments: Vec::new(),
        tail_exponent: None,
        classical_mode: spec.classical_mode,
    };
    if let Err(e) = spec.check() {
        report.violations.push(Violation { assumption: Assumption::Structural, message: e.to_string() });
        return report;
    }

    let half = spec.p_law.prob_half();
    report.prob_p_half = Some(half);
    if half >= 1.0 && !spec.classical_mode {
        report.violations.push(Violation {
            assumption: Assumption::A1,
            message: "A.1 requires P[p_x = 1/2] < 1, but p_x = 1/2 almost surely".into(),
        });
    }

    let mean = spec.p_law.mean_log_rho();
    let abs1 = spec.p_law.abs_log_rho_moment(1.0);
    let zero = mean.abs() <= CRITICALITY_TOLERANCE * abs1.max(1.0);
    report.mean_log_rho = Some(if zero { 0.0 } else { mean });
    report.mean_log_rho_is_zero = zero;
    if !abs1.is_finite() {
        report.violations.push(Violation {
            assumption: Assumption::A3,
            message: "A.3 requires E[|log rho|] < inf".into(),
        });
    } else if !zero {
        report.violations.push(Violation {
            assumption: Assumption::A3,
            message: format!("A.3 requires E[log rho] = 0, got {mean}"),
        });
    }
    report.abs_log_rho_moments = deltas.iter().map(|&d| (d, spec.p_law.abs_log_rho_moment(d))).collect();

    let p0 = spec.m_law.prob_zero();
    report.prob_m_zero = Some(p0);
    if p0 <= 0.0 {
        report.violations.push(Violation {
            assumption: Assumption::A4,
            message: "A.4 requires P[M_0 = 0] > 0".into(),
        });
    }
    report.m_log_moments = qs
        .iter()
        .map(|&q| {
            let m = spec.m_law.log_plus_moment(q);
            LogMomentReport { q, finite: m.finite, value: m.value }
        })
        .collect();
    report.tail_exponent = spec.m_law.tail_exponent();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Lane, StreamKey};

    #[test]
    fn rho_values() {
        assert_eq!(rho(0.5).unwrap(), 1.0);
        assert!((rho(2.0 / 3.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((rho(0.9).unwrap() - 1.0 / 9.0).abs() < 1e-15);
        assert!(rho(0.0).is_err());
        assert!(rho(1.0).is_err());
        assert!(rho(f64::NAN).is_err());
    }

    #[test]
    fn rho_identity_and_monotone() {
        let mut prev = f64::INFINITY;
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            let r = rho(p).unwrap();
            assert!((r * p / (1.0 - p) - 1.0).abs() < 1e-12);
            assert!(r > 0.0 && r < prev);
            prev = r;
        }
    }

    #[test]
    fn degenerate_site() {
        let spec = EnvironmentSpec::classical(MLaw::Constant { value: 0 });
        let mut rng = StreamKey::new(1, 0, Lane::Environment).stream(0);
        for _ in 0..100 {
            let s = spec.sample_site(&mut rng);
            assert_eq!(s.p, 0.5);
            assert_eq!(s.m_exact, Some(0));
        }
    }

    #[test]
    fn heavy_tail_threshold_value() {
        // (1 + ln 2)^-1 ≈ 0.5906
        let s2 = heavy_tail_survival(LN_2, 1.0);
        assert!((s2 - 0.590_616_109_6).abs() < 1e-9);
        assert!(heavy_tail_from_uniform(0.99, 1.0, DEFAULT_EXACT_THRESHOLD).is_zero());
        assert!(!heavy_tail_from_uniform(0.5, 1.0, DEFAULT_EXACT_THRESHOLD).is_zero());
    }

    #[test]
    fn heavy_tail_inversion_matches_survival() {
        // For each k the boundary uniform S(k) maps to k - 1 and just below
        // it to at least k.
        for lambda in [0.5, 1.0, 3.0] {
            for k in 2u64..200 {
                let s = heavy_tail_survival((k as f64).ln(), lambda);
                let below = heavy_tail_from_uniform(s * (1.0 - 1e-12), lambda, u64::MAX);
                assert!(below.m_exact.unwrap() >= k, "k={k} lambda={lambda}");
                let above = heavy_tail_from_uniform((s * (1.0 + 1e-12)).min(0.999_999), lambda, u64::MAX);
                assert!(above.m_exact.unwrap_or(u64::MAX) < k || above.is_zero());
            }
        }
    }

    #[test]
    fn heavy_tail_monotone_to_infinity() {
        let mut prev = -1.0;
        for e in 1..300 {
            let u = 10f64.powi(-e);
            let c = heavy_tail_from_uniform(u, 1.0, DEFAULT_EXACT_THRESHOLD);
            assert!(c.log_m >= prev);
            prev = c.log_m;
        }
        assert!(prev > 1e200);
        // Above the threshold the count is log-domain only.
        let big = heavy_tail_from_uniform(1e-9, 1.0, DEFAULT_EXACT_THRESHOLD);
        assert!(big.m_exact.is_none());
        assert!((big.log_m - (1e9 - 1.0)).abs() < 1e-3);
    }

    #[test]
    fn heavy_tail_log_survival_power_law() {
        let law = MLaw::HeavyTail { lambda: 1.5 };
        let errs: Vec<f64> = [10.0, 20.0, 40.0]
            .iter()
            .map(|&t: &f64| (t.powf(1.5) * law.log_survival_log_m(t).exp() - 1.0).abs())
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn log_survival_other_families() {
        let c = MLaw::Constant { value: 5 };
        assert_eq!(c.log_survival_log_m(1.0), 0.0);
        assert_eq!(c.log_survival_log_m(2.0), f64::NEG_INFINITY);
        let f = MLaw::Finite { support: vec![0, 1, 10], weights: vec![0.5, 0.25, 0.25] };
        assert!((f.log_survival_log_m(-1.0).exp() - 0.5).abs() < 1e-15);
        assert!((f.log_survival_log_m(1.0).exp() - 0.25).abs() < 1e-15);
        let p = MLaw::Poisson { mean: 2.0 };
        let p_ge_1 = 1.0 - (-2.0f64).exp();
        assert!((p.log_survival_log_m(-0.5).exp() - p_ge_1).abs() < 1e-12);
    }

    #[test]
    fn validate_flags_a1() {
        let spec = EnvironmentSpec::new(PLaw::constant(0.5), MLaw::Constant { value: 0 });
        let r = validate_spec(&spec);
        assert!(r.violates(Assumption::A1));
        assert!(r.violations.iter().any(|v| v.message.contains("A.1")));
        let classical = EnvironmentSpec::classical(MLaw::Finite { support: vec![0, 1], weights: vec![0.5, 0.5] });
        assert!(validate_spec(&classical).is_valid());
    }

    #[test]
    fn validate_symmetric_two_point_exact_zero() {
        let spec = EnvironmentSpec::heavy_tail_example(3.0);
        let r = validate_spec(&spec);
        assert!(r.is_valid(), "{:?}", r.violations);
        assert_eq!(spec.p_law.mean_log_rho(), 0.0);
        assert_eq!(r.mean_log_rho, Some(0.0));
        assert_eq!(r.tail_exponent, Some(3.0));
        for m in &r.m_log_moments {
            assert_eq!(m.finite, m.q < 3.0);
        }
    }

    #[test]
    fn validate_structural_and_a3_a4() {
        let bad = EnvironmentSpec::new(PLaw::TwoPoint { a: 1.2, weight: 0.5 }, MLaw::Constant { value: 0 });
        assert!(!validate_spec(&bad).is_structurally_valid());
        let drift = EnvironmentSpec::new(PLaw::TwoPoint { a: 0.3, weight: 0.9 }, MLaw::Constant { value: 0 });
        assert!(validate_spec(&drift).violates(Assumption::A3));
        let no_zero = EnvironmentSpec::heavy_tail_example(1.0);
        let no_zero = EnvironmentSpec { m_law: MLaw::Constant { value: 2 }, ..no_zero };
        assert!(validate_spec(&no_zero).violates(Assumption::A4));
        let bad_lambda = EnvironmentSpec::heavy_tail_example(0.0);
        assert!(!validate_spec(&bad_lambda).is_structurally_valid());
    }

    #[test]
    fn logit_uniform_moments() {
        let law = PLaw::LogitUniform { half_width: 2.0 };
        assert_eq!(law.mean_log_rho(), 0.0);
        // E|U|^2 for U uniform on [-2, 2] is 4/3.
        assert!((law.abs_log_rho_moment(2.0) - 4.0 / 3.0).abs() < 1e-15);
        let quad = law.expect(|_, l| l * l);
        assert!((quad - 4.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn finite_law_inverse_cdf() {
        let law = PLaw::Finite { support: vec![0.2, 0.4, 0.8], weights: vec![0.2, 0.3, 0.5] };
        let mut rng = StreamKey::new(9, 0, Lane::Auxiliary).stream(0);
        let n = 100_000;
        let hits = (0..n).filter(|_| law.sample(&mut rng) == 0.4).count() as f64 / n as f64;
        let sd = (0.3 * 0.7 / n as f64).sqrt();
        assert!((hits - 0.3).abs() < 5.0 * sd);
    }
}
