//! TOML scenario files.
//!
//! ```toml
//! [network]
//! p = [0.85, 0.9, 0.93, 0.87, 0.95]
//! q = { "2" = 0.92, "3" = 0.87, "4" = 0.83, "5" = 0.8 }
//! memory = 10
//!
//! [requests]
//! max_cardinality = 5          # or: explicit = [[1, 2], [2, 3, 4]]
//!
//! [run]
//! horizon = 100000
//! replications = 20
//! seed = 1
//!
//! [[policy]]
//! kind = "kawi"
//!
//! [[policy]]
//! kind = "swis"
//! tune = { start = 0.0, step = 0.5, end = 10.0 }   # or gamma = 1.5, or tune = true
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::model::{generate_all_requests, validate, Instance, ModelError, NetworkConfig, RequestSet};
use crate::policy::{PolicyKind, ScanMode};

/// `line:column` in a scenario file, both one-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub line: usize,
    pub column: usize,
}

impl Location {
    fn of(source: &str, offset: usize) -> Self {
        let before = &source[..offset.min(source.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
        Location { line, column }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("{file}:{location}: {message}")]
    Parse { file: String, location: Location, message: String },
    #[error("{file}: {message}")]
    ParseUnlocated { file: String, message: String },
    #[error("{file}:{location}: {field}: {message}")]
    Invalid { file: String, location: Location, field: String, message: String },
    #[error("{file}: {field}: {message}")]
    InvalidUnlocated { file: String, field: String, message: String },
    #[error("{file}: nothing to run: the scenario lists no policies")]
    NoPolicies { file: String },
    #[error("{file}: {0}", file = .1)]
    Model(ModelError, String),
    #[error("reading {file}: {message}")]
    Io { file: String, message: String },
}

/// Evenly spaced parameter values `start, start + step, ..., end`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct Grid {
    pub start: f64,
    pub step: f64,
    pub end: f64,
}

impl Grid {
    pub const GAMMA: Grid = Grid { start: 0.0, step: 0.5, end: 10.0 };
    pub const BETA: Grid = Grid { start: 1.0, step: 0.5, end: 10.0 };

    /// Values computed as `start + k * step` so no rounding accumulates.
    pub fn values(&self) -> Vec<f64> {
        if !(self.step > 0.0) || self.end < self.start || !self.start.is_finite() || !self.end.is_finite() {
            return Vec::new();
        }
        let count = ((self.end - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|k| self.start + k as f64 * self.step).collect()
    }

    /// Parses `START:STEP:END`.
    pub fn parse(text: &str) -> Result<Grid, String> {
        let parts: Vec<&str> = text.split(':').collect();
        let [start, step, end] = parts.as_slice() else {
            return Err(format!("expected START:STEP:END, got {text:?}"));
        };
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
        let grid = Grid { start: num(start)?, step: num(step)?, end: num(end)? };
        if grid.values().is_empty() {
            return Err(format!("grid {text:?} is empty"));
        }
        Ok(grid)
    }
}

/// One `[[policy]]` entry after parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    /// For a tuned entry the parameter is a placeholder replaced per grid value.
    pub kind: PolicyKind,
    pub scan: ScanMode,
    pub tune: Option<Grid>,
}

impl PolicySpec {
    pub fn fixed(kind: PolicyKind) -> Self {
        PolicySpec { kind, scan: ScanMode::Skip, tune: None }
    }

    pub fn tuned(kind: PolicyKind, grid: Grid) -> Self {
        PolicySpec { kind, scan: ScanMode::Skip, tune: Some(grid) }
    }

    /// The concrete policies this entry stands for, one per grid value.
    pub fn candidates(&self) -> Vec<PolicyKind> {
        match (self.tune, self.kind) {
            (Some(grid), PolicyKind::Swis { .. }) => grid.values().into_iter().map(|gamma| PolicyKind::Swis { gamma }).collect(),
            (Some(grid), PolicyKind::Swid { .. }) => grid.values().into_iter().map(|beta| PolicyKind::Swid { beta }).collect(),
            _ => vec![self.kind],
        }
    }
}

/// Where the request set comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum RequestSource {
    Explicit(RequestSet),
    AllUpTo(usize),
}

impl RequestSource {
    pub fn describe(&self) -> String {
        match self {
            RequestSource::Explicit(set) => format!("{} explicit requests", set.len()),
            RequestSource::AllUpTo(k) => format!("all subsets of size 2..={k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub horizon: u64,
    pub replications: usize,
    pub master_seed: u64,
    pub record_trace: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings { horizon: 100_000, replications: 20, master_seed: 1, record_trace: false }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub network: NetworkConfig,
    pub requests: RequestSource,
    pub run: RunSettings,
    pub policies: Vec<PolicySpec>,
}

impl Scenario {
    pub fn request_set(&self) -> Result<RequestSet, ModelError> {
        match &self.requests {
            RequestSource::Explicit(set) => Ok(set.clone()),
            RequestSource::AllUpTo(max) => generate_all_requests(self.network.user_count(), *max),
        }
    }

    pub fn instance(&self) -> Result<Instance, ModelError> {
        validate(self.network.clone(), self.request_set()?)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io { file: file.clone(), message: e.to_string() })?;
        Scenario::parse(&text, &file)
    }

    /// Parses and validates; `file` only labels error messages.
    pub fn parse(source: &str, file: &str) -> Result<Scenario, ScenarioError> {
        let raw: RawScenario = toml::from_str(source).map_err(|e| match e.span() {
            Some(span) => ScenarioError::Parse {
                file: file.to_string(),
                location: Location::of(source, span.start),
                message: e.message().to_string(),
            },
            None => ScenarioError::ParseUnlocated { file: file.to_string(), message: e.message().to_string() },
        })?;
        Checker { source, file }.build(raw)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    network: RawNetwork,
    requests: RawRequests,
    #[serde(default)]
    run: RawRun,
    #[serde(default)]
    policy: Vec<Spanned<RawPolicy>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    p: Vec<Spanned<f64>>,
    q: BTreeMap<String, Spanned<f64>>,
    memory: Spanned<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRequests {
    max_cardinality: Option<Spanned<usize>>,
    explicit: Option<Vec<Spanned<Vec<usize>>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    horizon: Option<Spanned<u64>>,
    replications: Option<Spanned<usize>>,
    seed: Option<u64>,
    #[serde(default)]
    trace: bool,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawTune {
    Flag(bool),
    Grid(Grid),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawKind {
    Kawi,
    Greedy,
    Swis,
    Swid,
    MaxAgeKnapsack,
    RandomAdmissible,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    kind: RawKind,
    gamma: Option<f64>,
    beta: Option<f64>,
    tune: Option<RawTune>,
    #[serde(default)]
    scan: ScanMode,
}

struct Checker<'a> {
    source: &'a str,
    file: &'a str,
}

impl Checker<'_> {
    fn invalid(&self, span: Range<usize>, field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
        ScenarioError::Invalid {
            file: self.file.to_string(),
            location: Location::of(self.source, span.start),
            field: field.into(),
            message: message.into(),
        }
    }

    fn build(&self, raw: RawScenario) -> Result<Scenario, ScenarioError> {
        let network = self.network(raw.network)?;
        let requests = self.requests(raw.requests, &network)?;
        let run = self.run(raw.run)?;
        if raw.policy.is_empty() {
            return Err(ScenarioError::NoPolicies { file: self.file.to_string() });
        }
        let policies = raw
            .policy
            .into_iter()
            .enumerate()
            .map(|(k, p)| self.policy(k, p))
            .collect::<Result<Vec<_>, _>>()?;
        let scenario = Scenario { network, requests, run, policies };
        scenario.instance().map_err(|e| ScenarioError::Model(e, self.file.to_string()))?;
        Ok(scenario)
    }

    fn network(&self, raw: RawNetwork) -> Result<NetworkConfig, ScenarioError> {
        let mut lle_prob = Vec::with_capacity(raw.p.len());
        for (j, p) in raw.p.iter().enumerate() {
            let value = *p.get_ref();
            if !(value > 0.0 && value <= 1.0) {
                return Err(self.invalid(p.span(), format!("network.p[{j}]"), format!("probability {value} is outside (0, 1]")));
            }
            lle_prob.push(value);
        }
        if lle_prob.len() < 2 {
            return Err(ScenarioError::InvalidUnlocated {
                file: self.file.to_string(),
                field: "network.p".into(),
                message: "at least 2 users are required".into(),
            });
        }
        let mut swap_prob = BTreeMap::new();
        for (key, q) in &raw.q {
            let field = format!("network.q.{key}");
            let lambda: usize = key
                .parse()
                .map_err(|_| self.invalid(q.span(), field.clone(), "keys must be cardinalities"))?;
            let value = *q.get_ref();
            if lambda < 2 {
                return Err(self.invalid(q.span(), field, "cardinality must be at least 2"));
            }
            if !(value > 0.0 && value <= 1.0) {
                return Err(self.invalid(q.span(), field, format!("probability {value} is outside (0, 1]")));
            }
            swap_prob.insert(lambda, value);
        }
        let memory = *raw.memory.get_ref();
        if memory < 2 {
            return Err(self.invalid(raw.memory.span(), "network.memory", "memory must be at least 2"));
        }
        Ok(NetworkConfig { lle_prob, swap_prob, memory })
    }

    fn requests(&self, raw: RawRequests, network: &NetworkConfig) -> Result<RequestSource, ScenarioError> {
        match (raw.max_cardinality, raw.explicit) {
            (Some(max), None) => {
                let value = *max.get_ref();
                if value < 2 || value > network.user_count() {
                    return Err(self.invalid(
                        max.span(),
                        "requests.max_cardinality",
                        format!("must lie in 2..={}", network.user_count()),
                    ));
                }
                Ok(RequestSource::AllUpTo(value))
            }
            (None, Some(list)) => {
                for (k, group) in list.iter().enumerate() {
                    let field = format!("requests.explicit[{k}]");
                    for &user in group.get_ref() {
                        if user == 0 || user > network.user_count() {
                            return Err(self.invalid(group.span(), field, format!("unknown user {user}")));
                        }
                    }
                    if let Err(e) = RequestSet::from_groups([group.get_ref()]) {
                        return Err(self.invalid(group.span(), field, e.to_string()));
                    }
                }
                let set = RequestSet::from_groups(list.iter().map(|g| g.get_ref()))
                    .map_err(|e| ScenarioError::Model(e, self.file.to_string()))?;
                Ok(RequestSource::Explicit(set))
            }
            _ => Err(ScenarioError::InvalidUnlocated {
                file: self.file.to_string(),
                field: "requests".into(),
                message: "give exactly one of max_cardinality or explicit".into(),
            }),
        }
    }

    fn run(&self, raw: RawRun) -> Result<RunSettings, ScenarioError> {
        let mut run = RunSettings::default();
        if let Some(h) = raw.horizon {
            if *h.get_ref() == 0 {
                return Err(self.invalid(h.span(), "run.horizon", "must be at least 1"));
            }
            run.horizon = h.into_inner();
        }
        if let Some(r) = raw.replications {
            if *r.get_ref() == 0 {
                return Err(self.invalid(r.span(), "run.replications", "must be at least 1"));
            }
            run.replications = r.into_inner();
        }
        if let Some(seed) = raw.seed {
            run.master_seed = seed;
        }
        run.record_trace = raw.trace;
        Ok(run)
    }

    fn policy(&self, k: usize, raw: Spanned<RawPolicy>) -> Result<PolicySpec, ScenarioError> {
        let span = raw.span();
        let raw = raw.into_inner();
        let field = format!("policy[{k}]");
        let err = |message: &str| self.invalid(span.clone(), field.clone(), message);
        let tune = match raw.tune {
            None | Some(RawTune::Flag(false)) => None,
            Some(RawTune::Flag(true)) => match raw.kind {
                RawKind::Swis => Some(Grid::GAMMA),
                RawKind::Swid => Some(Grid::BETA),
                _ => return Err(err("only swis and swid can be tuned")),
            },
            Some(RawTune::Grid(grid)) => {
                if grid.values().is_empty() {
                    return Err(err("tuning grid is empty"));
                }
                Some(grid)
            }
        };
        let kind = match raw.kind {
            RawKind::Kawi => PolicyKind::Kawi,
            RawKind::Greedy => PolicyKind::GreedyWhittle,
            RawKind::MaxAgeKnapsack => PolicyKind::MaxAgeKnapsack,
            RawKind::RandomAdmissible => PolicyKind::RandomAdmissible,
            RawKind::Swis => match (raw.gamma, tune) {
                (Some(_), Some(_)) => return Err(err("give gamma or tune, not both")),
                (Some(gamma), None) => PolicyKind::Swis { gamma },
                (None, Some(_)) => PolicyKind::Swis { gamma: 0.0 },
                (None, None) => return Err(err("swis needs gamma or tune")),
            },
            RawKind::Swid => match (raw.beta, tune) {
                (Some(_), Some(_)) => return Err(err("give beta or tune, not both")),
                (Some(beta), None) => PolicyKind::Swid { beta },
                (None, Some(_)) => PolicyKind::Swid { beta: 1.0 },
                (None, None) => return Err(err("swid needs beta or tune")),
            },
        };
        let spec = PolicySpec { kind, scan: raw.scan, tune };
        if !matches!(kind, PolicyKind::Swis { .. }) && raw.gamma.is_some()
            || !matches!(kind, PolicyKind::Swid { .. }) && raw.beta.is_some()
        {
            return Err(err("parameter does not apply to this policy"));
        }
        for candidate in spec.candidates() {
            candidate.validate().map_err(|e| err(&e.to_string()))?;
        }
        Ok(spec)
    }
}
