//! Quenched laws of small populations by exact propagation of probability
//! vectors, for both constructions of the process.

use super::{Generation, OffspringLaw, Population};
use crate::error::{Error, Result};

/// Per-branch probability floor for truncated laws.
pub const DEFAULT_FLOOR: f64 = 1e-14;

/// A generation with a finite offspring table and an exact immigrant count.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactGeneration {
    pub pmf: Vec<f64>,
    pub immigrants: usize,
}

impl ExactGeneration {
    pub fn new(pmf: Vec<f64>, immigrants: usize) -> Self {
        Self { pmf, immigrants }
    }

    /// Returns the generation and the offspring mass discarded by the floor.
    pub fn from_generation(g: &Generation, floor: f64) -> Result<(Self, f64)> {
        let Population::Exact(m) = g.immigrants else {
            return Err(Error::Domain("exact laws need exact immigrant counts".into()));
        };
        let (pmf, lost) = g.law.truncated_pmf(floor);
        Ok((Self { pmf, immigrants: m as usize }, lost))
    }

    pub fn law(&self) -> OffspringLaw {
        OffspringLaw::Table { pmf: self.pmf.clone() }
    }
}

pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if *x == 0.0 {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Law of `xi_1 + ... + xi_z` given the law of `z`.
pub fn compound(dist: &[f64], offspring: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0];
    let mut power = vec![1.0];
    for (z, w) in dist.iter().enumerate() {
        if z > 0 {
            power = convolve(&power, offspring);
        }
        if *w == 0.0 {
            continue;
        }
        if out.len() < power.len() {
            out.resize(power.len(), 0.0);
        }
        for (k, v) in power.iter().enumerate() {
            out[k] += w * v;
        }
    }
    out
}

fn shift(dist: &[f64], by: usize) -> Vec<f64> {
    let mut out = vec![0.0; by];
    out.extend_from_slice(dist);
    out
}

fn point_mass(k: usize) -> Vec<f64> {
    shift(&[1.0], k)
}

/// One quenched transition of a probability vector.
pub fn propagate(dist: &[f64], g: &ExactGeneration) -> Vec<f64> {
    shift(&compound(dist, &g.pmf), g.immigrants)
}

/// Laws of `Z_0, ..., Z_n` by the recursion.
pub fn recursion_laws(start: usize, gens: &[ExactGeneration]) -> Vec<Vec<f64>> {
    let mut laws = vec![point_mass(start)];
    for g in gens {
        let next = propagate(laws.last().expect("non-empty"), g);
        laws.push(next);
    }
    laws
}

/// Law of one immigrant line `Z_n(j)` started from `start` individuals.
pub fn line_law(start: usize, gens: &[ExactGeneration]) -> Vec<f64> {
    gens.iter().fold(point_mass(start), |d, g| compound(&d, &g.pmf))
}

/// Law of `Z_n` as the independent sum of immigrant lines (plus the
/// ancestor's line when `start > 0`).
pub fn lines_law(start: usize, gens: &[ExactGeneration]) -> Vec<f64> {
    let mut total = line_law(start, gens);
    for j in 1..=gens.len() {
        total = convolve(&total, &line_law(gens[j - 1].immigrants, &gens[j..]));
    }
    total
}

/// Maximum absolute difference of two probability vectors.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    (0..a.len().max(b.len()))
        .map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs())
        .fold(0.0, f64::max)
}
