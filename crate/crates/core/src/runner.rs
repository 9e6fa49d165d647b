//! Batch runner behind the `bpire-lab` binary.
//!
//! Every run writes `manifest.json` (marked incomplete until the end),
//! a row file (`rows.csv` or `rows.json`) and `summary.json` into the output
//! directory. Replica `r` always draws from `StreamKey(seed, r, ..)`, and
//! rows and summaries are assembled in replica order, so results do not
//! depend on the worker count.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::branching::{BranchingSim, Population};
use crate::classify::{empirical_classify, evaluate_criteria, summarize_branching, PathSummary, MIN_PATHS};
use crate::config::{ArProcess, ClassifySource, ExperimentConfig, ExperimentKind, OutputFormat};
use crate::env::{validate_spec, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::ladder::{descending_ladder_epochs, LogMeanWalk};
use crate::recursion::{growth_event_frequency, GrowthProcess};
use crate::rng::{Lane, StreamKey};
use crate::stats::wilson_interval;
use crate::walk::{
    couple_excursion, first_passage, simulate_right_excursion, simulate_walk, CookieEnvironment, KeyedDecisions,
    StopRule, WalkOptions, WalkOutcome,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SPEC: i32 = 3;
pub const EXIT_RESOURCE: i32 = 4;

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InsufficientReplicas { .. } | Error::Domain(_) => EXIT_CONFIG,
        Error::InvalidSpec(_) => EXIT_SPEC,
        Error::Resource(_) => EXIT_RESOURCE,
        _ => EXIT_IO,
    }
}

/// A table cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    U(u64),
    I(i64),
    F(f64),
    B(bool),
    S(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::U(v) => v.to_string(),
            Cell::I(v) => v.to_string(),
            Cell::F(v) => v.to_string(),
            Cell::B(v) => u8::from(*v).to_string(),
            Cell::S(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::S(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<Option<u64>> for Cell {
    fn from(v: Option<u64>) -> Self {
        v.map_or(Cell::Empty, Cell::U)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::F)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    /// `#schema=<kind>/v1`, then the header, then one line per row.
    pub fn to_csv(&self, kind: ExperimentKind) -> String {
        let mut out = format!("#schema={kind}/v1\n{}\n", self.header.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn to_json(&self, kind: ExperimentKind) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let obj: serde_json::Map<String, Value> = self
                    .header
                    .iter()
                    .zip(r)
                    .map(|(h, c)| (h.to_string(), serde_json::to_value(c).unwrap_or(Value::Null)))
                    .collect();
                Value::Object(obj)
            })
            .collect();
        json!({ "schema": format!("{kind}/v1"), "rows": rows })
    }
}

/// What a kind produced before anything is written.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub table: Table,
    pub summary: Value,
    /// Set when the run finished but the environment violates an assumption.
    pub violation: Option<String>,
}

/// Outcome of [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub exit_code: i32,
    pub message: Option<String>,
    pub summary: Option<Value>,
    pub out_dir: PathBuf,
}

/// Computes the artifacts in the current thread pool.
pub fn execute(config: &ExperimentConfig) -> Result<Artifacts> {
    config.validate()?;
    match config.kind {
        ExperimentKind::Validate => run_validate(config),
        ExperimentKind::Bpire => run_bpire(config),
        ExperimentKind::Walk => run_walk(config),
        ExperimentKind::Couple => run_couple(config),
        ExperimentKind::Ladder => run_ladder(config),
        ExperimentKind::Ar => run_ar(config),
        ExperimentKind::Classify => run_classify(config),
        ExperimentKind::ReproduceExample => run_example(config),
    }
}

/// Computes the artifacts on a pool of `config.workers` threads.
pub fn execute_with_workers(config: &ExperimentConfig) -> Result<Artifacts> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Resource(e.to_string()))?;
    pool.install(|| execute(config))
}

/// Runs the experiment and writes its artifacts.
pub fn run(config: &ExperimentConfig) -> RunReport {
    let dir = config.out_dir.clone();
    let report = |code, message: Option<String>, summary| RunReport { exit_code: code, message, summary, out_dir: dir.clone() };
    if let Err(e) = fs::create_dir_all(&dir).map_err(Error::from).and_then(|_| write_manifest(config, false, &[], None)) {
        return report(EXIT_IO, Some(e.to_string()), None);
    }
    let artifacts = match execute_with_workers(config) {
        Ok(a) => a,
        Err(e) => {
            let code = exit_code(&e);
            let _ = write_manifest(config, false, &[], Some((code, &e.to_string())));
            return report(code, Some(e.to_string()), None);
        }
    };
    let rows_name = match config.format {
        OutputFormat::Csv => "rows.csv",
        OutputFormat::Json => "rows.json",
    };
    let written = (|| -> Result<()> {
        let rows = match config.format {
            OutputFormat::Csv => artifacts.table.to_csv(config.kind),
            OutputFormat::Json => serde_json::to_string_pretty(&artifacts.table.to_json(config.kind))? + "\n",
        };
        fs::write(dir.join(rows_name), rows)?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&artifacts.summary)? + "\n")?;
        Ok(())
    })();
    if let Err(e) = written {
        let _ = write_manifest(config, false, &[], Some((EXIT_IO, &e.to_string())));
        return report(EXIT_IO, Some(e.to_string()), None);
    }
    let code = if artifacts.violation.is_some() { EXIT_SPEC } else { EXIT_OK };
    let status = artifacts.violation.as_deref().map(|m| (code, m));
    if let Err(e) = write_manifest(config, true, &[rows_name, "summary.json"], status) {
        return report(EXIT_IO, Some(e.to_string()), Some(artifacts.summary));
    }
    report(code, artifacts.violation, Some(artifacts.summary))
}

fn write_manifest(config: &ExperimentConfig, complete: bool, outputs: &[&str], status: Option<(i32, &str)>) -> Result<()> {
    let manifest = json!({
        "complete": complete,
        "kind": config.kind,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": config.seed,
        "replicas": config.replicas,
        "workers": config.workers,
        "outputs": outputs,
        "exit_code": status.map_or(EXIT_OK, |s| s.0),
        "message": status.map(|s| s.1),
        "config": config,
    });
    fs::write(manifest_path(&config.out_dir), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

fn key(config: &ExperimentConfig, r: u64) -> StreamKey {
    StreamKey::new(config.seed, r, Lane::Environment)
}

fn run_validate(config: &ExperimentConfig) -> Result<Artifacts> {
    let report = validate_spec(&config.environment);
    let mut table = Table::new(&["quantity", "value"]);
    let mut push = |q: String, v: Cell| table.rows.push(vec![Cell::S(q), v]);
    push("mean_log_rho".into(), report.mean_log_rho.into());
    push("prob_p_half".into(), report.prob_p_half.into());
    push("prob_m_zero".into(), report.prob_m_zero.into());
    for (d, v) in &report.abs_log_rho_moments {
        push(format!("abs_log_rho_moment[{d}]"), Cell::F(*v));
    }
    for m in &report.m_log_moments {
        push(format!("log_plus_m_moment[{}]", m.q), m.value.into());
    }
    push("tail_exponent".into(), report.tail_exponent.into());
    let violation = (!report.is_valid()).then(|| {
        report.violations.iter().map(|v| v.message.clone()).collect::<Vec<_>>().join("; ")
    });
    let summary = json!({
        "kind": "validate",
        "valid": report.is_valid(),
        "violated": report.violations.iter().map(|v| v.assumption.to_string()).collect::<Vec<_>>(),
        "regime": config.environment.regime(),
        "report": report,
    });
    Ok(Artifacts { table, summary, violation })
}

fn pop_cells(z: Population) -> (Cell, Cell) {
    match z {
        Population::Exact(v) => (Cell::U(v), Cell::B(false)),
        Population::Log(l) => (Cell::F(l), Cell::B(true)),
    }
}

fn run_bpire(config: &ExperimentConfig) -> Result<Artifacts> {
    let spec = &config.environment;
    let horizon = config.max_horizon() as usize;
    let per_replica: Vec<(Vec<Population>, Option<usize>, bool)> = (0..config.replicas)
        .into_par_iter()
        .map(|r| {
            let mut pops = Vec::with_capacity(horizon + 1);
            pops.push(config.bpire.mode.initial());
            let s = BranchingSim::new(spec).mode(config.bpire.mode).run_streaming(horizon, &key(config, r), |_, z, _| {
                pops.push(z);
                true
            })?;
            Ok((pops, s.hit_zero_at, s.approximate))
        })
        .collect::<Result<_>>()?;
    let mut table = Table::new(&["replica", "generation", "population_or_log", "is_log", "hit_zero_at"]);
    for (r, (pops, hit, _)) in per_replica.iter().enumerate() {
        for (n, z) in pops.iter().enumerate() {
            let (v, is_log) = pop_cells(*z);
            table.rows.push(vec![Cell::U(r as u64), Cell::U(n as u64), v, is_log, (*hit).map(|h| h as u64).into()]);
        }
    }
    let n = config.replicas;
    let rows: Vec<Value> = config
        .horizons
        .iter()
        .map(|&h| {
            let hit = per_replica.iter().filter(|p| p.1.is_some_and(|t| t as u64 <= h)).count() as u64;
            let exceed =
                per_replica.iter().filter(|p| p.0.get(h as usize).is_some_and(|z| z.ln() > (h as f64).sqrt())).count();
            let (lo, hi) = wilson_interval(hit, n, 0.05);
            json!({ "horizon": h, "hit_zero": hit, "hit_zero_fraction": hit as f64 / n as f64,
                    "ci_lo": lo, "ci_hi": hi, "exceed": exceed, "replicas": n })
        })
        .collect();
    let summary = json!({
        "kind": "bpire",
        "mode": config.bpire.mode,
        "regime": spec.regime(),
        "replicas": n,
        "approximate_paths": per_replica.iter().filter(|p| p.2).count(),
        "horizons": rows,
    });
    Ok(Artifacts { table, summary, violation: None })
}

fn run_walk(config: &ExperimentConfig) -> Result<Artifacts> {
    let horizon = config.max_horizon();
    let start = config.walk.start;
    let paths: Vec<(Vec<i64>, Option<u64>)> = (0..config.replicas)
        .into_par_iter()
        .map(|r| {
            let k = key(config, r);
            let mut env = CookieEnvironment::from_spec(&config.environment, &k);
            let mut d = KeyedDecisions::new(&k);
            let opts = WalkOptions { coupling: false, record_positions: true };
            let path = simulate_walk(&mut env, start, StopRule::horizon(horizon), &mut d, opts);
            let ret = first_passage(&path, start);
            (path.positions.unwrap_or_default(), ret)
        })
        .collect();
    let mut table = Table::new(&["replica", "step", "position"]);
    for (r, (pos, _)) in paths.iter().enumerate() {
        for (t, x) in pos.iter().enumerate() {
            table.rows.push(vec![Cell::U(r as u64), Cell::U(t as u64), Cell::I(*x)]);
        }
    }
    let n = config.replicas;
    let rows: Vec<Value> = config
        .horizons
        .iter()
        .map(|&h| {
            let ret = paths.iter().filter(|p| p.1.is_some_and(|t| t <= h)).count() as u64;
            let (lo, hi) = wilson_interval(ret, n, 0.05);
            json!({ "horizon": h, "returned": ret, "fraction": ret as f64 / n as f64, "ci_lo": lo, "ci_hi": hi })
        })
        .collect();
    let finals: Vec<i64> = paths.iter().map(|p| *p.0.last().unwrap_or(&start)).collect();
    let mean_final = finals.iter().map(|&x| x as f64).sum::<f64>() / n.max(1) as f64;
    let summary = json!({
        "kind": "walk",
        "replicas": n,
        "start": start,
        "mean_final_position": mean_final,
        "positive_final": finals.iter().filter(|&&x| x > start).count(),
        "returns": rows,
    });
    Ok(Artifacts { table, summary, violation: None })
}

fn run_couple(config: &ExperimentConfig) -> Result<Artifacts> {
    let horizon = config.max_horizon();
    let wanted = config.replicas;
    let max_attempts = config.couple.max_attempts.unwrap_or(wanted.saturating_mul(10).max(10));
    let mut results = Vec::new();
    let mut completed = 0u64;
    let mut next = 0u64;
    while completed < wanted {
        if next >= max_attempts {
            return Err(Error::Resource(format!(
                "only {completed} of {wanted} excursions completed within {horizon} steps after {next} attempts"
            )));
        }
        let end = (next + (wanted - completed)).min(max_attempts);
        let batch: Vec<_> = (next..end)
            .into_par_iter()
            .map(|r| couple_excursion(&config.environment, horizon, &key(config, r)).map(|c| (r, c)))
            .collect::<Result<_>>()?;
        for (r, c) in batch {
            if completed == wanted {
                break;
            }
            completed += u64::from(c.completed);
            results.push((r, c));
        }
        next = end;
    }
    let mut table = Table::new(&["replica", "completed", "steps", "max_level", "exact_match"]);
    for (r, c) in &results {
        table.rows.push(vec![
            Cell::U(*r),
            Cell::B(c.completed),
            Cell::U(c.steps),
            Cell::I(c.max_level),
            if c.completed { Cell::B(c.exact_match) } else { Cell::Empty },
        ]);
    }
    let matches = results.iter().filter(|(_, c)| c.exact_match).count() as u64;
    let summary = json!({
        "kind": "couple",
        "horizon": horizon,
        "excursions": completed,
        "attempts": results.len(),
        "truncated": results.len() as u64 - completed,
        "exact_coupling_matches": format!("{matches}/{completed}"),
        "all_matched": matches == completed,
    });
    Ok(Artifacts { table, summary, violation: None })
}

fn run_ladder(config: &ExperimentConfig) -> Result<Artifacts> {
    let spec = &config.environment;
    let horizon = config.max_horizon();
    let epochs: Vec<Vec<usize>> = (0..config.replicas)
        .into_par_iter()
        .map(|r| {
            let sim = BranchingSim::new(spec);
            let k = key(config, r);
            let gens: Vec<_> = (1..=horizon).map(|n| sim.generation(&k, n)).collect();
            let walk = LogMeanWalk::from_generations(&gens)?;
            Ok(descending_ladder_epochs(&walk, horizon as usize)?.epochs)
        })
        .collect::<Result<_>>()?;
    let mut table = Table::new(&["replica", "n", "L_n"]);
    for (r, e) in epochs.iter().enumerate() {
        for (n, l) in e.iter().enumerate().skip(1) {
            table.rows.push(vec![Cell::U(r as u64), Cell::U(n as u64), Cell::U(*l as u64)]);
        }
    }
    let n = config.replicas as f64;
    let tail: Vec<Value> = config
        .horizons
        .iter()
        .map(|&h| {
            let survive = epochs.iter().filter(|e| e.get(1).is_none_or(|&l| l as u64 > h)).count() as f64 / n;
            json!({ "n": h, "survival": survive, "std_error": (survive * (1.0 - survive) / n).sqrt(),
                    "scaled": survive * (h as f64).sqrt() })
        })
        .collect();
    let counts: u64 = epochs.iter().map(|e| e.len() as u64 - 1).sum();
    let summary = json!({
        "kind": "ladder",
        "replicas": config.replicas,
        "horizon": horizon,
        "regime": spec.regime(),
        "degenerate": spec.prob_mu_one() >= 1.0,
        "total_epochs": counts,
        "first_epoch_tail": tail,
    });
    Ok(Artifacts { table, summary, violation: None })
}

fn run_ar(config: &ExperimentConfig) -> Result<Artifacts> {
    let process = match config.ar.process {
        ArProcess::Difference => GrowthProcess::Difference,
        ArProcess::Branching => GrowthProcess::Branching(config.bpire.mode),
    };
    let checkpoints: Vec<usize> = config.horizons.iter().map(|&h| h as usize).collect();
    let rows = growth_event_frequency(&config.environment, &checkpoints, config.replicas, config.seed, process)?;
    let mut table = Table::new(&["n", "exceed", "replicas", "fraction", "std_error"]);
    for r in &rows {
        table.rows.push(vec![
            Cell::U(r.n as u64),
            Cell::U(r.exceed),
            Cell::U(r.replicas),
            Cell::F(r.fraction),
            Cell::F(r.std_error),
        ]);
    }
    let summary = json!({
        "kind": "ar",
        "process": process,
        "regime": config.environment.regime(),
        "checkpoints": rows,
    });
    Ok(Artifacts { table, summary, violation: None })
}

fn empirical_paths(config: &ExperimentConfig, spec: &EnvironmentSpec) -> Result<Vec<PathSummary>> {
    match config.classify.source {
        ClassifySource::Bpire => summarize_branching(spec, config.bpire.mode, &config.horizons, config.replicas, config.seed),
        ClassifySource::Walk => {
            let horizon = config.max_horizon();
            Ok((0..config.replicas)
                .into_par_iter()
                .map(|r| {
                    let k = key(config, r);
                    let mut env = CookieEnvironment::from_spec(spec, &k);
                    let mut d = KeyedDecisions::new(&k);
                    let path = simulate_right_excursion(&mut env, horizon, &mut d, WalkOptions::default());
                    let first_zero = match path.outcome {
                        WalkOutcome::HitTarget { time } => Some(time),
                        _ => None,
                    };
                    PathSummary { first_zero, ln_at: Vec::new(), all_zero: false }
                })
                .collect())
        }
    }
}

fn classification(config: &ExperimentConfig, spec: &EnvironmentSpec) -> Result<(Table, Value)> {
    let analytic = evaluate_criteria(spec, &config.classify.criteria());
    let paths = empirical_paths(config, spec)?;
    let mut table = Table::new(&["horizon", "fraction", "ci_lo", "ci_hi"]);
    let empirical = if paths.len() >= MIN_PATHS {
        let report = empirical_classify(&paths, &config.horizons, config.classify.band(), config.classify.alpha)?;
        for r in &report.rows {
            table.rows.push(vec![Cell::U(r.horizon), Cell::F(r.fraction), Cell::F(r.ci_lo), Cell::F(r.ci_hi)]);
        }
        Some(report)
    } else if config.kind == ExperimentKind::Classify {
        return Err(Error::InsufficientReplicas { needed: MIN_PATHS, got: paths.len() });
    } else {
        None
    };
    let summary = json!({
        "kind": config.kind,
        "verdict": analytic.verdict.as_str(),
        "regime": analytic.regime,
        "empirical_verdict": empirical.as_ref().map(|e| e.verdict),
        "criteria": analytic,
        "empirical": empirical,
    });
    Ok((table, summary))
}

fn run_classify(config: &ExperimentConfig) -> Result<Artifacts> {
    let (table, summary) = classification(config, &config.environment)?;
    Ok(Artifacts { table, summary, violation: None })
}

fn run_example(config: &ExperimentConfig) -> Result<Artifacts> {
    let (table, mut summary) = classification(config, &config.environment)?;
    summary["lambda"] = json!(config.example.lambda);
    Ok(Artifacts { table, summary, violation: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn csv_cells() {
        let mut t = Table::new(&["a", "b", "c"]);
        t.rows.push(vec![Cell::U(1), Cell::S("x,y".into()), Cell::Empty]);
        t.rows.push(vec![Cell::F(0.5), Cell::B(true), Cell::I(-2)]);
        assert_eq!(t.to_csv(ExperimentKind::Walk), "#schema=walk/v1\na,b,c\n1,\"x,y\",\n0.5,1,-2\n");
    }

    #[test]
    fn example_summary_has_verdict() {
        let c = parse_config("kind = \"reproduce-example\"\nreplicas = 30\nhorizon = 50\n").unwrap();
        let a = execute(&c).unwrap();
        assert_eq!(a.summary["verdict"], "recurrent-by-Thm3");
        assert_eq!(a.table.rows.len(), 1);
    }

    #[test]
    fn error_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Resource("x".into())), EXIT_RESOURCE);
        assert_eq!(exit_code(&Error::InvalidSpec("x".into())), EXIT_SPEC);
    }
}
