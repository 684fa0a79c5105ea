//! Memory sweeps, request-set sweeps and parameter tuning.
//!
//! Every (sweep point, policy candidate) pair is an independent job run on
//! the current rayon pool. Rows are sorted before they are written, so the
//! output does not depend on scheduling.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::scenario::{Grid, PolicySpec, Scenario};
use crate::model::{generate_all_requests, validate, Instance, ModelError};
use crate::policy::PolicyKind;
use crate::sim::{run_replicated, RunConfig, RunSummary, SimError};

pub const CSV_HEADER: &str = "policy,M,lambda_max,R,gamma,beta,master_seed,horizon,replications,mean_aoee,ci95";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("memory {memory} is below the largest request cardinality {cardinality}")]
    MemoryBelowCardinality { memory: usize, cardinality: usize },
    #[error("maximum cardinality {value} is outside 2..={users}")]
    CardinalityOutOfRange { value: usize, users: usize },
    #[error("empty range {0}")]
    EmptyRange(String),
    #[error("tuning grid is empty")]
    EmptyGrid,
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub policy: &'static str,
    pub memory: usize,
    pub lambda_max: usize,
    pub requests: usize,
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub master_seed: u64,
    pub horizon: u64,
    pub replications: usize,
    pub mean_aoee: f64,
    pub ci95: f64,
    /// Plot series name: the label, plus the parameter for untuned entries.
    #[serde(skip)]
    pub series: String,
}

impl SweepRow {
    fn new(point: &Point, spec: &PolicySpec, settings: &RunSettingsView, summary: &RunSummary) -> Self {
        let series = match (spec.tune, summary.policy) {
            (None, kind @ (PolicyKind::Swis { .. } | PolicyKind::Swid { .. })) => kind.to_string(),
            _ => summary.policy.label().to_string(),
        };
        SweepRow {
            policy: summary.policy.label(),
            memory: point.instance.memory(),
            lambda_max: point.lambda_max,
            requests: point.instance.len(),
            gamma: summary.policy.gamma(),
            beta: summary.policy.beta(),
            master_seed: settings.master_seed,
            horizon: settings.horizon,
            replications: settings.replications,
            mean_aoee: summary.mean_aoee,
            ci95: summary.ci95_halfwidth,
            series,
        }
    }

    fn sort_key(&self, other: &Self) -> Ordering {
        let opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (a, b) => a.is_some().cmp(&b.is_some()),
        };
        self.policy
            .cmp(other.policy)
            .then(self.memory.cmp(&other.memory))
            .then(self.lambda_max.cmp(&other.lambda_max))
            .then(opt(self.gamma, other.gamma))
            .then(opt(self.beta, other.beta))
    }

    pub fn to_csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        format!(
            "{},{},{},{},{},{},{},{},{},{:.6},{:.6}",
            self.policy,
            self.memory,
            self.lambda_max,
            self.requests,
            opt(self.gamma),
            opt(self.beta),
            self.master_seed,
            self.horizon,
            self.replications,
            self.mean_aoee,
            self.ci95
        )
    }
}

/// Which column is the x axis of the plot table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Memory,
    LambdaMax,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    fn sorted(mut rows: Vec<SweepRow>) -> Self {
        rows.sort_by(SweepRow::sort_key);
        SweepResult { rows }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.to_csv_line());
            out.push('\n');
        }
        out
    }

    /// Whitespace table for gnuplot: one line per x value, a mean and a CI
    /// column per series, `NaN` where a series has no point.
    pub fn to_plot_table(&self, axis: Axis) -> String {
        let x_of = |row: &SweepRow| match axis {
            Axis::Memory => row.memory,
            Axis::LambdaMax => row.lambda_max,
        };
        let mut series: Vec<&str> = self.rows.iter().map(|r| r.series.as_str()).collect();
        series.sort_unstable();
        series.dedup();
        let mut xs: Vec<usize> = self.rows.iter().map(x_of).collect();
        xs.sort_unstable();
        xs.dedup();

        let mut out = String::new();
        out.push_str(match axis {
            Axis::Memory => "# M",
            Axis::LambdaMax => "# lambda_max",
        });
        for name in &series {
            let name = name.replace(' ', "_");
            write!(out, " {name} {name}_ci95").unwrap();
        }
        out.push('\n');
        for x in xs {
            write!(out, "{x}").unwrap();
            for name in &series {
                match self.rows.iter().find(|r| x_of(r) == x && r.series == *name) {
                    Some(r) => write!(out, " {:.6} {:.6}", r.mean_aoee, r.ci95).unwrap(),
                    None => out.push_str(" NaN NaN"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Run fields shared by every row of a sweep.
#[derive(Debug, Clone, Copy)]
struct RunSettingsView {
    horizon: u64,
    replications: usize,
    master_seed: u64,
}

/// A sweep point: one request set at one memory size.
struct Point {
    instance: Instance,
    lambda_max: usize,
}

fn settings_of(scenario: &Scenario) -> RunSettingsView {
    RunSettingsView {
        horizon: scenario.run.horizon,
        replications: scenario.run.replications,
        master_seed: scenario.run.master_seed,
    }
}

fn run_config(scenario: &Scenario, spec: &PolicySpec, kind: PolicyKind) -> RunConfig {
    let mut rc = RunConfig::new(kind, scenario.run.horizon, scenario.run.replications, scenario.run.master_seed);
    rc.scan = spec.scan;
    rc
}

/// Runs every candidate of every spec at every point. Results come back as
/// `out[point][spec][candidate]`.
fn run_grid(scenario: &Scenario, points: &[Point]) -> Result<Vec<Vec<Vec<RunSummary>>>, ExperimentError> {
    let jobs: Vec<(usize, usize, PolicyKind)> = points
        .iter()
        .enumerate()
        .flat_map(|(p, _)| {
            scenario
                .policies
                .iter()
                .enumerate()
                .flat_map(move |(s, spec)| spec.candidates().into_iter().map(move |kind| (p, s, kind)))
        })
        .collect();
    let summaries = jobs
        .par_iter()
        .map(|&(p, s, kind)| run_replicated(&points[p].instance, &run_config(scenario, &scenario.policies[s], kind)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut out: Vec<Vec<Vec<RunSummary>>> = points.iter().map(|_| vec![Vec::new(); scenario.policies.len()]).collect();
    for (&(p, s, _), summary) in jobs.iter().zip(summaries) {
        out[p][s].push(summary);
    }
    Ok(out)
}

/// Lowest mean age; candidates are in ascending parameter order, so the
/// first minimum is the smaller parameter.
pub fn select_best(summaries: &[RunSummary]) -> Option<&RunSummary> {
    summaries.iter().fold(None, |best: Option<&RunSummary>, s| match best {
        Some(b) if b.mean_aoee <= s.mean_aoee => Some(b),
        _ => Some(s),
    })
}

fn sweep_rows(scenario: &Scenario, points: &[Point]) -> Result<SweepResult, ExperimentError> {
    let settings = settings_of(scenario);
    let results = run_grid(scenario, points)?;
    let mut rows = Vec::new();
    for (point, per_spec) in points.iter().zip(&results) {
        for (spec, candidates) in scenario.policies.iter().zip(per_spec) {
            let best = select_best(candidates).expect("every spec has at least one candidate");
            rows.push(SweepRow::new(point, spec, &settings, best));
        }
    }
    Ok(SweepResult::sorted(rows))
}

fn lambda_max_of(instance: &Instance) -> usize {
    instance.requests().max_cardinality()
}

/// Every policy at the scenario's own memory size; tuned entries report
/// their best grid value.
pub fn simulate_scenario(scenario: &Scenario) -> Result<SweepResult, ExperimentError> {
    let instance = scenario.instance()?;
    let lambda_max = lambda_max_of(&instance);
    sweep_rows(scenario, &[Point { instance, lambda_max }])
}

fn check_range(range: &RangeInclusive<usize>) -> Result<(), ExperimentError> {
    if range.is_empty() {
        Err(ExperimentError::EmptyRange(format!("{}..{}", range.start(), range.end())))
    } else {
        Ok(())
    }
}

/// One point per memory size; tuning is redone at each point.
pub fn sweep_memory(scenario: &Scenario, memory: RangeInclusive<usize>) -> Result<SweepResult, ExperimentError> {
    check_range(&memory)?;
    let base = validate(scenario.network.clone(), scenario.request_set()?).or_else(|e| match e {
        // the scenario's own memory is irrelevant here
        ModelError::RequestLargerThanMemory { .. } => {
            let mut network = scenario.network.clone();
            network.memory = usize::MAX / 2;
            validate(network, scenario.request_set()?)
        }
        other => Err(other),
    })?;
    let cardinality = lambda_max_of(&base);
    let points = memory
        .map(|m| {
            if m < cardinality {
                return Err(ExperimentError::MemoryBelowCardinality { memory: m, cardinality });
            }
            Ok(Point { instance: base.with_memory(m)?, lambda_max: cardinality })
        })
        .collect::<Result<Vec<_>, _>>()?;
    sweep_rows(scenario, &points)
}

/// One point per maximum cardinality, each with all subsets up to that size.
pub fn sweep_requests(scenario: &Scenario, lambda_max: RangeInclusive<usize>) -> Result<SweepResult, ExperimentError> {
    check_range(&lambda_max)?;
    let users = scenario.network.user_count();
    let points = lambda_max
        .map(|k| {
            if k < 2 || k > users {
                return Err(ExperimentError::CardinalityOutOfRange { value: k, users });
            }
            let instance = validate(scenario.network.clone(), generate_all_requests(users, k)?)?;
            Ok(Point { instance, lambda_max: k })
        })
        .collect::<Result<Vec<_>, _>>()?;
    sweep_rows(scenario, &points)
}

/// Which parameter to tune.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneTarget {
    Swis,
    Swid,
}

impl TuneTarget {
    pub fn default_grid(self) -> Grid {
        match self {
            TuneTarget::Swis => Grid::GAMMA,
            TuneTarget::Swid => Grid::BETA,
        }
    }

    fn placeholder(self) -> PolicyKind {
        match self {
            TuneTarget::Swis => PolicyKind::Swis { gamma: 0.0 },
            TuneTarget::Swid => PolicyKind::Swid { beta: 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneResult {
    pub best: f64,
    pub best_mean_aoee: f64,
    /// One row per grid value.
    pub grid: SweepResult,
}

/// Evaluates the scenario's instance at every grid value of one parameter.
pub fn tune(scenario: &Scenario, target: TuneTarget, grid: Grid) -> Result<TuneResult, ExperimentError> {
    if grid.values().is_empty() {
        return Err(ExperimentError::EmptyGrid);
    }
    let instance = scenario.instance()?;
    let lambda_max = lambda_max_of(&instance);
    let spec = PolicySpec::tuned(target.placeholder(), grid);
    let tuning = Scenario { policies: vec![spec.clone()], ..scenario.clone() };
    let point = Point { instance, lambda_max };
    let results = run_grid(&tuning, std::slice::from_ref(&point))?;
    let candidates = &results[0][0];
    let best = select_best(candidates).expect("grid is not empty");
    let settings = settings_of(scenario);
    let rows = candidates.iter().map(|s| SweepRow::new(&point, &spec, &settings, s)).collect();
    Ok(TuneResult {
        best: best.policy.gamma().or(best.policy.beta()).expect("tuned policies carry a parameter"),
        best_mean_aoee: best.mean_aoee,
        grid: SweepResult::sorted(rows),
    })
}

/// Request counts expected from the generator: `Σ_{k=2..λ} C(n, k)`.
pub fn expected_request_count(users: usize, lambda_max: usize) -> usize {
    let mut total = 0usize;
    let mut binom = 1usize;
    for k in 1..=lambda_max.min(users) {
        binom = binom * (users - k + 1) / k;
        if k >= 2 {
            total += binom;
        }
    }
    total
}
