//! Log-mean walk, strict descending ladder epochs and the ladder
//! subprocess.
//!
//! Between two ladder epochs the composed generating function
//! `lambda_n = phi_{L_{n-1}+1} o ... o phi_{L_n}` reproduces and the lines of
//! immigrants that arrived inside the block are collected into `M~_n`.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::branching::{offspring_sum, BranchingPath, Generation, OffspringLaw, Population};
use crate::env::{EnvironmentSpec, Regime};
use crate::error::{Error, Result};
use crate::rng::{Lane, StreamKey};

/// Slack below which a decrease of `Y` is not a new strict minimum. Sums of
/// `±log 2` are not exact in floating point.
pub const LADDER_TOLERANCE: f64 = 1e-9;

/// `Y_0 = 0`, `Y_n = Y_{n-1} + log mu_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMeanWalk {
    pub values: Vec<f64>,
    pub mus: Vec<f64>,
}

impl LogMeanWalk {
    pub fn from_mus(mus: Vec<f64>) -> Result<Self> {
        if let Some(m) = mus.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::Domain(format!("offspring means must be positive and finite, got {m}")));
        }
        let mut values = Vec::with_capacity(mus.len() + 1);
        values.push(0.0);
        let mut y = 0.0;
        for m in &mus {
            y += m.ln();
            values.push(y);
        }
        Ok(Self { values, mus })
    }

    /// Builds the walk from its values; `values[0]` must be 0.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.first() != Some(&0.0) {
            return Err(Error::Domain("a log-mean walk starts at 0".into()));
        }
        let mus = values.windows(2).map(|w| (w[1] - w[0]).exp()).collect();
        Ok(Self { values, mus })
    }

    pub fn from_generations(gens: &[Generation]) -> Result<Self> {
        Self::from_mus(gens.iter().map(|g| g.law.mean()).collect())
    }

    /// Number of increments.
    pub fn len(&self) -> usize {
        self.values.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ladder epochs found within a horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderEpochs {
    /// `L_0 = 0, L_1, ...`
    pub epochs: Vec<usize>,
    /// Epochs after `L_0`.
    pub count: usize,
    /// The block after the last epoch is cut by the horizon.
    pub incomplete: bool,
    /// Every increment is zero, so `Y` never descends.
    pub degenerate: bool,
}

/// All strict descending ladder epochs of `y` up to `horizon`.
pub fn descending_ladder_epochs(y: &LogMeanWalk, horizon: usize) -> Result<LadderEpochs> {
    if horizon > y.len() {
        return Err(Error::Index { index: horizon, len: y.len() });
    }
    let mut epochs = vec![0];
    let mut floor = 0.0;
    for k in 1..=horizon {
        if y.values[k] < floor - LADDER_TOLERANCE {
            epochs.push(k);
            floor = y.values[k];
        }
    }
    let last = *epochs.last().expect("non-empty");
    Ok(LadderEpochs {
        count: epochs.len() - 1,
        incomplete: last < horizon,
        degenerate: y.mus.iter().all(|m| *m == 1.0),
        epochs,
    })
}

/// `phi_1(phi_2(...phi_k(s)))` for `laws = (phi_1, ..., phi_k)`; the
/// identity for an empty block.
pub fn composed_pgf(laws: &[OffspringLaw], s: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Domain(format!("pgf argument must lie in [0, 1], got {s}")));
    }
    laws.iter().rev().try_fold(s, |acc, law| law.pgf(acc))
}

/// `lambda'(1)`, the product of the block means.
pub fn composed_mean(laws: &[OffspringLaw]) -> f64 {
    laws.iter().map(OffspringLaw::mean).product()
}

/// `log lambda'(1)`.
pub fn composed_log_mean(laws: &[OffspringLaw]) -> f64 {
    laws.iter().map(|l| l.mean().ln()).sum()
}

/// `(Z_{L_0}, Z_{L_1}, ...)`.
pub fn subprocess_extract(populations: &[Population], epochs: &[usize]) -> Result<Vec<Population>> {
    epochs
        .iter()
        .map(|&e| populations.get(e).copied().ok_or(Error::Index { index: e, len: populations.len() }))
        .collect()
}

/// [`subprocess_extract`] on a stored path.
pub fn subprocess_of_path(path: &BranchingPath, epochs: &[usize]) -> Result<Vec<Population>> {
    subprocess_extract(&path.populations, epochs)
}

/// `M~ = sum_j Z_{L-j}(j)` over the block's generations: every immigrant
/// group that arrived inside the block, reproduced to the block end.
pub fn block_immigrants<R: RngCore + ?Sized>(block: &[Generation], threshold: u64, rng: &mut R) -> Population {
    let mut total = Population::ZERO;
    for (j, g) in block.iter().enumerate() {
        let mut z = g.immigrants;
        for later in &block[j + 1..] {
            if z.is_zero() {
                break;
            }
            z = offspring_sum(&later.law, z, threshold, rng);
        }
        total = total.add(z, threshold);
    }
    total
}

/// `E[M~ | env] = sum_j M_j mu_{j+1} ... mu_L`.
pub fn block_immigrant_mean(block: &[Generation]) -> f64 {
    let mut acc = 0.0;
    for g in block {
        acc = acc * g.law.mean() + g.immigrants.as_f64();
    }
    acc
}

/// `E[s^M~ | env] = prod_j lambda_{j+1..L}(s)^{M_j}`.
pub fn block_immigrant_pgf(block: &[Generation], s: f64) -> Result<f64> {
    let laws: Vec<OffspringLaw> = block.iter().map(|g| g.law.clone()).collect();
    let mut log_total = 0.0;
    for (j, g) in block.iter().enumerate() {
        let m = g.immigrants.as_f64();
        if m == 0.0 {
            continue;
        }
        log_total += m * composed_pgf(&laws[j + 1..], s)?.ln();
    }
    Ok(log_total.exp())
}

/// One step of the subprocess: `z` individuals reproduce through the whole
/// block, then the block immigrants are added.
pub fn block_step<R: RngCore + ?Sized>(z: Population, block: &[Generation], threshold: u64, rng: &mut R) -> Population {
    let mut x = z;
    for g in block {
        if x.is_zero() {
            break;
        }
        x = offspring_sum(&g.law, x, threshold, rng);
    }
    x.add(block_immigrants(block, threshold, rng), threshold)
}

/// One ladder block `(L_{n-1}, L_n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderBlock {
    pub start: usize,
    pub end: usize,
    pub laws: Vec<OffspringLaw>,
    /// One realized draw of `M~_n`.
    pub immigrants: Population,
}

impl LadderBlock {
    pub fn pgf(&self, s: f64) -> Result<f64> {
        composed_pgf(&self.laws, s)
    }

    pub fn log_mean(&self) -> f64 {
        composed_log_mean(&self.laws)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderDecomposition {
    pub epochs: LadderEpochs,
    pub blocks: Vec<LadderBlock>,
}

impl LadderDecomposition {
    /// Decomposes a realized environment; `generations[n - 1]` is generation
    /// `n`. Block immigrants are drawn from `rng`.
    pub fn build<R: RngCore + ?Sized>(
        generations: &[Generation],
        horizon: usize,
        threshold: u64,
        rng: &mut R,
    ) -> Result<Self> {
        let walk = LogMeanWalk::from_generations(generations)?;
        let epochs = descending_ladder_epochs(&walk, horizon)?;
        let blocks = epochs
            .epochs
            .windows(2)
            .map(|w| {
                let block = &generations[w[0]..w[1]];
                LadderBlock {
                    start: w[0],
                    end: w[1],
                    laws: block.iter().map(|g| g.law.clone()).collect(),
                    immigrants: block_immigrants(block, threshold, rng),
                }
            })
            .collect();
        Ok(Self { epochs, blocks })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderTailRow {
    pub n: usize,
    pub survival: f64,
    pub std_error: f64,
    /// `sqrt(n) * P[L > n]`
    pub scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderTailTable {
    pub rows: Vec<LadderTailRow>,
    pub replicas: u64,
    pub critical: bool,
    pub degenerate: bool,
}

impl LadderTailTable {
    pub fn at(&self, n: usize) -> Option<&LadderTailRow> {
        self.rows.iter().find(|r| r.n == n)
    }
}

/// First strict descending ladder epoch of a fresh walk, capped at `n_max`
/// (returns `n_max + 1` if no descent happened).
pub fn sample_first_epoch(spec: &EnvironmentSpec, n_max: usize, key: &StreamKey) -> usize {
    let mut rng = key.with_lane(Lane::Ladder).stream(0);
    let mut y = 0.0;
    for k in 1..=n_max {
        let p = spec.p_law.sample(&mut rng);
        y += spec.offspring.log_mean(p, crate::env::log_rho(p));
        if y < -LADDER_TOLERANCE {
            return k;
        }
    }
    n_max + 1
}

/// Monte Carlo survival `P[L_1 > n]` for `n = 1..=n_max`.
pub fn ladder_tail_estimate(spec: &EnvironmentSpec, n_max: usize, replicas: u64, seed: u64) -> Result<LadderTailTable> {
    spec.check()?;
    let degenerate = spec.prob_mu_one() >= 1.0;
    let critical = spec.regime() == Regime::Critical;
    // survivors[n] counts replicas with L > n.
    let survivors = (0..replicas)
        .into_par_iter()
        .fold(
            || vec![0u64; n_max + 1],
            |mut acc, r| {
                let l = sample_first_epoch(spec, n_max, &StreamKey::new(seed, r, Lane::Ladder));
                for slot in acc.iter_mut().take(l.min(n_max + 1)) {
                    *slot += 1;
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; n_max + 1],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let rows = (1..=n_max)
        .map(|n| {
            let f = survivors[n] as f64 / replicas as f64;
            LadderTailRow {
                n,
                survival: f,
                std_error: (f * (1.0 - f) / replicas as f64).sqrt(),
                scaled: f * (n as f64).sqrt(),
            }
        })
        .collect();
    Ok(LadderTailTable { rows, replicas, critical, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{MLaw, PLaw};

    #[test]
    fn epochs_of_small_walk() {
        let y = LogMeanWalk::from_values(vec![0.0, 0.5, -0.3, 0.1, -0.7]).unwrap();
        let e = descending_ladder_epochs(&y, 4).unwrap();
        assert_eq!(e.epochs, vec![0, 2, 4]);
        assert_eq!(e.count, 2);
        assert!(!e.incomplete);
        let e3 = descending_ladder_epochs(&y, 3).unwrap();
        assert_eq!(e3.epochs, vec![0, 2]);
        assert!(e3.incomplete);
    }

    #[test]
    fn strictly_decreasing_walk() {
        let y = LogMeanWalk::from_mus(vec![0.5; 10]).unwrap();
        let e = descending_ladder_epochs(&y, 10).unwrap();
        assert_eq!(e.epochs, (0..=10).collect::<Vec<_>>());
    }

    #[test]
    fn ties_are_not_descents() {
        // 2, 1/2 returns to 0 up to rounding; that is not a new minimum.
        let y = LogMeanWalk::from_mus(vec![2.0, 0.5, 2.0, 0.5, 0.5]).unwrap();
        assert_eq!(descending_ladder_epochs(&y, 5).unwrap().epochs, vec![0, 5]);
    }

    #[test]
    fn constant_walk_is_degenerate() {
        let y = LogMeanWalk::from_mus(vec![1.0; 50]).unwrap();
        let e = descending_ladder_epochs(&y, 50).unwrap();
        assert!(e.degenerate && e.incomplete);
        assert_eq!(e.count, 0);
        assert!(descending_ladder_epochs(&y, 51).is_err());
    }

    #[test]
    fn composed_pgf_two_geometric() {
        let g = OffspringLaw::Geometric { p: 0.5 };
        let laws = [g.clone(), g.clone()];
        for s in [0.0, 0.3, 0.9] {
            let expect = (2.0 - s) / (3.0 - 2.0 * s);
            assert!((composed_pgf(&laws, s).unwrap() - expect).abs() < 1e-15);
        }
        assert!((composed_pgf(&[g.clone()], 0.4).unwrap() - g.pgf(0.4).unwrap()).abs() < 1e-15);
        assert!((composed_pgf(&laws, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(composed_pgf(&laws, 1.1).is_err());
    }

    #[test]
    fn composed_mean_is_derivative_at_one() {
        let laws = [OffspringLaw::Geometric { p: 0.6 }, OffspringLaw::Bernoulli { q: 0.7 }];
        let h = 1e-6;
        let numeric = (composed_pgf(&laws, 1.0).unwrap() - composed_pgf(&laws, 1.0 - h).unwrap()) / h;
        assert!((numeric - composed_mean(&laws)).abs() < 1e-5);
    }

    #[test]
    fn subprocess_extraction() {
        let pops: Vec<Population> = (0..8).map(Population::Exact).collect();
        let sub = subprocess_extract(&pops, &[0, 2, 5, 6]).unwrap();
        assert_eq!(sub, vec![Population::Exact(0), Population::Exact(2), Population::Exact(5), Population::Exact(6)]);
        assert_eq!(subprocess_extract(&pops, &[0]).unwrap(), vec![Population::Exact(0)]);
        assert!(matches!(subprocess_extract(&pops, &[0, 9]), Err(Error::Index { index: 9, .. })));
    }

    #[test]
    fn block_immigrant_cases() {
        let mut rng = StreamKey::new(1, 0, Lane::Auxiliary).stream(0);
        let single = [Generation::new(OffspringLaw::Geometric { p: 0.9 }, 7)];
        assert_eq!(block_immigrants(&single, u64::MAX, &mut rng), Population::Exact(7));
        let empty = [
            Generation::new(OffspringLaw::Geometric { p: 0.9 }, 0),
            Generation::new(OffspringLaw::Bernoulli { q: 0.5 }, 0),
        ];
        assert!(block_immigrants(&empty, u64::MAX, &mut rng).is_zero());

        let q = 0.35;
        let block = [
            Generation::new(OffspringLaw::Bernoulli { q: 0.9 }, 1),
            Generation::new(OffspringLaw::Bernoulli { q }, 0),
        ];
        assert!((block_immigrant_mean(&block) - q).abs() < 1e-15);
        let n = 100_000;
        let mean = (0..n).map(|_| block_immigrants(&block, u64::MAX, &mut rng).as_f64()).sum::<f64>() / n as f64;
        assert!((mean - q).abs() < 4.0 * (q * (1.0 - q) / n as f64).sqrt());
    }

    #[test]
    fn decomposition_blocks_descend() {
        let spec = EnvironmentSpec::new(PLaw::TwoPoint { a: 1.0 / 3.0, weight: 0.5 }, MLaw::Constant { value: 1 });
        let path = crate::branching::simulate(
            &spec,
            500,
            crate::branching::StartMode::ZeroStart,
            &StreamKey::new(4, 0, Lane::Environment),
        )
        .unwrap();
        let mut rng = StreamKey::new(4, 0, Lane::Auxiliary).stream(0);
        let d = LadderDecomposition::build(&path.generations, 500, u64::MAX, &mut rng).unwrap();
        assert!(d.epochs.count > 0);
        for b in &d.blocks {
            assert!(b.log_mean() < 0.0);
        }
    }

    #[test]
    fn degenerate_tail_estimate() {
        let spec = EnvironmentSpec::classical(MLaw::Constant { value: 0 });
        let t = ladder_tail_estimate(&spec, 20, 100, 1).unwrap();
        assert!(t.degenerate);
        assert!(t.rows.iter().all(|r| r.survival == 1.0));
    }
}
