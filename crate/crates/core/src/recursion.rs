//! The critical random difference equation `X_n = mu_n X_{n-1} + M_n` with
//! `X_0 = 0`, its dual `W_n = M_1 + mu_1 M_2 + ... + mu_1...mu_{n-1} M_n`,
//! and growth-event frequencies `P[X_n > e^sqrt(n)]`.
//!
//! Values are carried as natural logs (`-inf` for zero) so heavy-tailed
//! immigration cannot overflow.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::branching::{log_add_exp, BranchingSim, Generation, StartMode};
use crate::env::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::rng::{Lane, StreamKey};

/// `mu x + m`.
pub fn ar_step(x: f64, mu: f64, m: f64) -> f64 {
    mu * x + m
}

/// `ln(mu x + m)` from `ln x`, `ln mu` and `ln m`.
pub fn ar_step_log(ln_x: f64, ln_mu: f64, ln_m: f64) -> f64 {
    log_add_exp(ln_mu + ln_x, ln_m)
}

/// One `(mu_n, M_n)` pair in log form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArEnv {
    pub ln_mu: f64,
    pub ln_m: f64,
}

impl ArEnv {
    pub fn new(mu: f64, m: f64) -> Self {
        Self { ln_mu: mu.ln(), ln_m: m.ln() }
    }

    pub fn from_generation(g: &Generation) -> Self {
        Self { ln_mu: g.law.mean().ln(), ln_m: g.immigrants.ln() }
    }
}

/// `(X_0, ..., X_n)` in log form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArPath {
    pub ln_xs: Vec<f64>,
    pub envs: Vec<ArEnv>,
}

impl ArPath {
    pub fn from_envs(envs: Vec<ArEnv>) -> Self {
        let mut ln_xs = Vec::with_capacity(envs.len() + 1);
        ln_xs.push(f64::NEG_INFINITY);
        let mut x = f64::NEG_INFINITY;
        for e in &envs {
            x = ar_step_log(x, e.ln_mu, e.ln_m);
            ln_xs.push(x);
        }
        Self { ln_xs, envs }
    }

    pub fn value(&self, n: usize) -> f64 {
        self.ln_xs[n].exp()
    }
}

/// `ln X_n` through the expansion `M_n + mu_n M_{n-1} + ... + mu_2...mu_n M_1`.
pub fn expanded_x(envs: &[ArEnv], n: usize) -> Result<f64> {
    check_len(envs, n)?;
    let mut acc = f64::NEG_INFINITY;
    let mut weight = 0.0;
    for e in envs[..n].iter().rev() {
        acc = log_add_exp(acc, weight + e.ln_m);
        weight += e.ln_mu;
    }
    Ok(acc)
}

/// `ln W_n`.
pub fn dual_w(envs: &[ArEnv], n: usize) -> Result<f64> {
    check_len(envs, n)?;
    let mut acc = f64::NEG_INFINITY;
    let mut weight = 0.0;
    for e in &envs[..n] {
        acc = log_add_exp(acc, weight + e.ln_m);
        weight += e.ln_mu;
    }
    Ok(acc)
}

fn check_len(envs: &[ArEnv], n: usize) -> Result<()> {
    if n > envs.len() {
        return Err(Error::Index { index: n, len: envs.len() });
    }
    Ok(())
}

/// The first `n` generations of a replica, shared with the branching
/// simulator.
pub fn sample_envs(spec: &EnvironmentSpec, n: usize, key: &StreamKey) -> Vec<ArEnv> {
    let sim = BranchingSim::new(spec);
    (1..=n as u64).map(|k| ArEnv::from_generation(&sim.generation(key, k))).collect()
}

/// Which process the growth events are measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthProcess {
    Difference,
    Branching(StartMode),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub n: usize,
    pub exceed: u64,
    pub replicas: u64,
    pub fraction: f64,
    pub std_error: f64,
}

/// Per-checkpoint frequency of `ln X_n > sqrt(n)` (or `ln Z_n > sqrt(n)`).
pub fn growth_event_frequency(
    spec: &EnvironmentSpec,
    checkpoints: &[usize],
    replicas: u64,
    seed: u64,
    process: GrowthProcess,
) -> Result<Vec<GrowthRow>> {
    spec.check()?;
    let horizon = checkpoints.iter().copied().max().unwrap_or(0);
    let counts = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let key = StreamKey::new(seed, r, Lane::Environment);
            growth_hits(spec, checkpoints, horizon, &key, process)
        })
        .try_reduce(
            || vec![0u64; checkpoints.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    Ok(checkpoints
        .iter()
        .zip(counts)
        .map(|(&n, exceed)| {
            let f = exceed as f64 / replicas as f64;
            GrowthRow { n, exceed, replicas, fraction: f, std_error: (f * (1.0 - f) / replicas as f64).sqrt() }
        })
        .collect())
}

fn growth_hits(
    spec: &EnvironmentSpec,
    checkpoints: &[usize],
    horizon: usize,
    key: &StreamKey,
    process: GrowthProcess,
) -> Result<Vec<u64>> {
    let mut ln_at = vec![f64::NEG_INFINITY; horizon + 1];
    match process {
        GrowthProcess::Difference => {
            let sim = BranchingSim::new(spec);
            let mut x = f64::NEG_INFINITY;
            for n in 1..=horizon {
                let e = ArEnv::from_generation(&sim.generation(key, n as u64));
                x = ar_step_log(x, e.ln_mu, e.ln_m);
                ln_at[n] = x;
            }
        }
        GrowthProcess::Branching(mode) => {
            BranchingSim::new(spec).mode(mode).run_streaming(horizon, key, |n, z, _| {
                ln_at[n] = z.ln();
                true
            })?;
        }
    }
    Ok(checkpoints.iter().map(|&n| u64::from(ln_at[n] > (n as f64).sqrt())).collect())
}
