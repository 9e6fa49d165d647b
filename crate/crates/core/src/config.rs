//! Experiment configuration: a sectioned TOML file (JSON also accepted).
//!
//! ```toml
//! kind = "bpire"
//! seed = 7
//! replicas = 200
//! horizon = 1000
//!
//! [environment.p_law]
//! family = "two-point"
//! a = 0.3333333333333333
//! weight = 0.5
//!
//! [environment.m_law]
//! family = "heavy-tail"
//! lambda = 3.0
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::branching::StartMode;
use crate::classify::{CriteriaParams, DecisionBand, DEFAULT_EPSILON};
use crate::env::{EnvironmentSpec, DEFAULT_DELTA_GRID};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Validate,
    Bpire,
    Walk,
    Couple,
    Ladder,
    Ar,
    Classify,
    ReproduceExample,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        Self::Validate,
        Self::Bpire,
        Self::Walk,
        Self::Couple,
        Self::Ladder,
        Self::Ar,
        Self::Classify,
        Self::ReproduceExample,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Validate => "validate",
            Self::Bpire => "bpire",
            Self::Walk => "walk",
            Self::Couple => "couple",
            Self::Ladder => "ladder",
            Self::Ar => "ar",
            Self::Classify => "classify",
            Self::ReproduceExample => "reproduce-example",
        }
    }

    fn default_horizons(&self) -> Vec<u64> {
        match self {
            Self::Validate => vec![],
            Self::Bpire | Self::Ladder => vec![100],
            Self::Walk | Self::ReproduceExample => vec![1000],
            Self::Couple => vec![100_000],
            Self::Ar | Self::Classify => vec![100, 1000, 10_000],
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArProcess {
    #[default]
    Difference,
    Branching,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifySource {
    #[default]
    Bpire,
    Walk,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BpireSection {
    pub mode: StartMode,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalkSection {
    pub start: i64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoupleSection {
    /// Excursions tried before giving up on reaching `replicas` completions;
    /// defaults to ten times `replicas`.
    pub max_attempts: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArSection {
    pub process: ArProcess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifySection {
    pub epsilon: f64,
    pub delta_grid: Vec<f64>,
    pub lambda_probe: Option<f64>,
    pub band_lo: f64,
    pub band_hi: f64,
    pub alpha: f64,
    pub source: ClassifySource,
}

impl Default for ClassifySection {
    fn default() -> Self {
        let band = DecisionBand::default();
        Self {
            epsilon: DEFAULT_EPSILON,
            delta_grid: DEFAULT_DELTA_GRID.to_vec(),
            lambda_probe: None,
            band_lo: band.lo,
            band_hi: band.hi,
            alpha: 0.01,
            source: ClassifySource::Bpire,
        }
    }
}

impl ClassifySection {
    pub fn criteria(&self) -> CriteriaParams {
        CriteriaParams { epsilon: self.epsilon, delta_grid: self.delta_grid.clone(), lambda_probe: self.lambda_probe }
    }

    pub fn band(&self) -> DecisionBand {
        DecisionBand { lo: self.band_lo, hi: self.band_hi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExampleSection {
    pub lambda: f64,
}

impl Default for ExampleSection {
    fn default() -> Self {
        Self { lambda: 3.0 }
    }
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub replicas: u64,
    pub horizons: Vec<u64>,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub format: OutputFormat,
    pub environment: EnvironmentSpec,
    pub bpire: BpireSection,
    pub walk: WalkSection,
    pub couple: CoupleSection,
    pub ar: ArSection,
    pub classify: ClassifySection,
    pub example: ExampleSection,
}

pub const DEFAULT_OUT_DIR: &str = "bpire-out";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kind: Option<ExperimentKind>,
    seed: Option<u64>,
    replicas: Option<u64>,
    horizon: Option<u64>,
    horizons: Option<Vec<u64>>,
    workers: Option<usize>,
    out_dir: Option<PathBuf>,
    format: Option<OutputFormat>,
    environment: Option<EnvironmentSpec>,
    #[serde(default)]
    bpire: BpireSection,
    #[serde(default)]
    walk: WalkSection,
    #[serde(default)]
    couple: CoupleSection,
    #[serde(default)]
    ar: ArSection,
    #[serde(default)]
    classify: ClassifySection,
    #[serde(default)]
    example: ExampleSection,
}

/// One problem found while parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

fn issues_error(issues: &[ConfigIssue]) -> Error {
    Error::Config(issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("\n"))
}

const ROOT_KEYS: &[&str] = &[
    "kind", "seed", "replicas", "horizon", "horizons", "workers", "out_dir", "format", "environment", "bpire", "walk",
    "couple", "ar", "classify", "example",
];
const ENV_KEYS: &[&str] = &["p_law", "m_law", "offspring", "coupling_mode", "exact_threshold", "classical_mode"];

fn section_keys(path: &str) -> Option<&'static [&'static str]> {
    Some(match path {
        "" => ROOT_KEYS,
        "environment" => ENV_KEYS,
        "bpire" => &["mode"],
        "walk" => &["start"],
        "couple" => &["max_attempts"],
        "ar" => &["process"],
        "classify" => &["epsilon", "delta_grid", "lambda_probe", "band_lo", "band_hi", "alpha", "source"],
        "example" => &["lambda"],
        _ => return None,
    })
}

fn family_keys(path: &str, family: Option<&str>) -> &'static [&'static str] {
    match (path, family) {
        ("environment.p_law", Some("two-point")) => &["family", "a", "weight"],
        ("environment.p_law", Some("finite")) => &["family", "support", "weights"],
        ("environment.p_law", Some("logit-uniform")) => &["family", "half_width"],
        ("environment.p_law", _) => &["family", "a", "weight", "support", "weights", "half_width"],
        ("environment.m_law", Some("constant")) => &["family", "value"],
        ("environment.m_law", Some("finite")) => &["family", "support", "weights"],
        ("environment.m_law", Some("poisson")) => &["family", "mean"],
        ("environment.m_law", Some("heavy-tail")) => &["family", "lambda"],
        _ => &["family", "value", "support", "weights", "mean", "lambda"],
    }
}

/// Line of `key = ...` inside the table `path`, for TOML text.
fn locate(text: &str, path: &str, key: &str) -> Option<usize> {
    let mut section = String::new();
    let mut fallback = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[').and_then(|h| h.strip_suffix(']')) {
            section = h.trim().to_string();
            continue;
        }
        let assigns = |s: &str| s.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='));
        if section == path && assigns(line) {
            return Some(i + 1);
        }
        if fallback.is_none() && line.split(['{', ',']).any(|part| assigns(part.trim())) {
            fallback = Some(i + 1);
        }
        if let Some((lhs, _)) = line.split_once('=') {
            // dotted keys such as `p_law.lamda = 1`
            if lhs.trim().rsplit('.').next() == Some(key) && fallback.is_none() {
                fallback = Some(i + 1);
            }
        }
    }
    fallback
}

fn nearest(key: &str, candidates: &[&str]) -> Option<String> {
    candidates
        .iter()
        .map(|c| (strsim::jaro_winkler(key, c), *c))
        .filter(|(s, _)| *s > 0.7)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c.to_string())
}

fn check_keys(value: &Value, path: &str, text: Option<&str>, issues: &mut Vec<ConfigIssue>) {
    let Value::Object(map) = value else { return };
    let allowed: &[&str] = match section_keys(path) {
        Some(k) => k,
        None if path.ends_with("p_law") || path.ends_with("m_law") => {
            family_keys(path, map.get("family").and_then(Value::as_str))
        }
        None => return,
    };
    for (k, v) in map {
        let field = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        if !allowed.contains(&k.as_str()) {
            let hint = nearest(k, allowed).map(|n| format!("; did you mean {n:?}?")).unwrap_or_default();
            issues.push(ConfigIssue {
                line: text.and_then(|t| locate(t, path, k)),
                field,
                message: format!("unknown key {k:?}{hint}"),
            });
        } else {
            check_keys(v, &field, text, issues);
        }
    }
}

/// Parses TOML, or JSON if the text starts with `{`. `kind` must be present.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_for(text, None)
}

/// As [`parse_config`]; `kind` fills in or must agree with the file's kind.
pub fn parse_config_for(text: &str, kind: Option<ExperimentKind>) -> Result<ExperimentConfig> {
    let is_json = text.trim_start().starts_with('{');
    let value: Value = if is_json {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("line {}: {e}", e.line())))?
    } else {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(toml_message(text, &e)))?;
        serde_json::to_value(table).map_err(|e| Error::Config(e.to_string()))?
    };
    let mut issues = Vec::new();
    check_keys(&value, "", (!is_json).then_some(text), &mut issues);
    if !issues.is_empty() {
        return Err(issues_error(&issues));
    }
    let raw: RawConfig = if is_json {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("line {}: {e}", e.line())))?
    } else {
        toml::from_str(text).map_err(|e| Error::Config(toml_message(text, &e)))?
    };
    resolve(raw, kind)
}

fn toml_message(text: &str, e: &toml::de::Error) -> String {
    let msg = e.message().trim().to_string();
    match e.span() {
        Some(span) => format!("line {}: {msg}", text[..span.start.min(text.len())].lines().count().max(1)),
        None => msg,
    }
}

fn resolve(raw: RawConfig, kind: Option<ExperimentKind>) -> Result<ExperimentConfig> {
    let kind = match (raw.kind, kind) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::Config(format!("config declares kind {a:?} but {b:?} was requested")))
        }
        (Some(k), _) | (None, Some(k)) => k,
        (None, None) => return Err(Error::Config("kind: missing experiment kind".into())),
    };
    let horizons = match (raw.horizon, raw.horizons) {
        (Some(_), Some(_)) => return Err(Error::Config("horizon: give either horizon or horizons, not both".into())),
        (Some(h), None) => vec![h],
        (None, Some(h)) => h,
        (None, None) => kind.default_horizons(),
    };
    let environment = match (raw.environment, kind) {
        (Some(_), ExperimentKind::ReproduceExample) => {
            return Err(Error::Config(
                "environment: reproduce-example builds its environment from [example] lambda".into(),
            ))
        }
        (Some(e), _) => e,
        (None, ExperimentKind::ReproduceExample) => EnvironmentSpec::heavy_tail_example(raw.example.lambda),
        (None, _) => return Err(Error::Config("environment: missing [environment] section".into())),
    };
    let config = ExperimentConfig {
        kind,
        seed: raw.seed.unwrap_or(0),
        replicas: raw.replicas.unwrap_or(100),
        horizons,
        workers: raw.workers.unwrap_or(1),
        out_dir: raw.out_dir.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
        format: raw.format.unwrap_or_default(),
        environment,
        bpire: raw.bpire,
        walk: raw.walk,
        couple: raw.couple,
        ar: raw.ar,
        classify: raw.classify,
        example: raw.example,
    };
    config.validate()?;
    Ok(config)
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicas: Option<u64>,
    pub horizon: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub classical_mode: bool,
    pub exact_threshold: Option<u64>,
}

impl ExperimentConfig {
    /// Defaults for `kind` with the given environment.
    pub fn new(kind: ExperimentKind, environment: EnvironmentSpec) -> Self {
        Self {
            kind,
            seed: 0,
            replicas: 100,
            horizons: kind.default_horizons(),
            workers: 1,
            out_dir: PathBuf::from(DEFAULT_OUT_DIR),
            format: OutputFormat::Csv,
            environment,
            bpire: BpireSection::default(),
            walk: WalkSection::default(),
            couple: CoupleSection::default(),
            ar: ArSection::default(),
            classify: ClassifySection::default(),
            example: ExampleSection::default(),
        }
    }

    pub fn apply(mut self, o: &Overrides) -> Result<Self> {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.replicas {
            self.replicas = v;
        }
        if let Some(v) = o.horizon {
            self.horizons = vec![v];
        }
        if let Some(v) = o.workers {
            self.workers = v;
        }
        if let Some(v) = &o.out_dir {
            self.out_dir = v.clone();
        }
        if let Some(v) = o.format {
            self.format = v;
        }
        if o.classical_mode {
            self.environment.classical_mode = true;
        }
        if let Some(v) = o.exact_threshold {
            self.environment.exact_threshold = v;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn max_horizon(&self) -> u64 {
        self.horizons.iter().copied().max().unwrap_or(0)
    }

    /// Range and consistency checks. Assumption violations of the
    /// environment are not errors here.
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        let mut bad = |field: &str, message: String| {
            issues.push(ConfigIssue { line: None, field: field.into(), message });
        };
        if let Err(e) = self.environment.check() {
            bad("environment", e.to_string());
        }
        if self.workers == 0 {
            bad("workers", "must be at least 1".into());
        }
        if self.kind != ExperimentKind::Validate && self.horizons.is_empty() {
            bad("horizons", "at least one horizon is required".into());
        }
        if self.kind == ExperimentKind::ReproduceExample && !(self.example.lambda > 0.0) {
            bad("example.lambda", format!("must be positive, got {}", self.example.lambda));
        }
        let c = &self.classify;
        if !(c.epsilon > 0.0) {
            bad("classify.epsilon", "must be positive".into());
        }
        if !(0.0 <= c.band_lo && c.band_lo <= c.band_hi && c.band_hi <= 1.0) {
            bad("classify.band_lo", "need 0 <= band_lo <= band_hi <= 1".into());
        }
        if !(c.alpha > 0.0 && c.alpha < 1.0) {
            bad("classify.alpha", "must lie in (0, 1)".into());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues_error(&issues))
        }
    }
}
