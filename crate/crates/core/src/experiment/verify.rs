//! Self-contained check battery: the closed-form index against the MDP
//! oracle, and KAWI's knapsack against exhaustive search.
//!
//! Each check yields one [`CheckRow`] per arm or per batch. The index and
//! knapsack solver are injected through [`Hooks`] so that a deliberately
//! broken implementation can be shown to fail.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::oracle::{
    average_cost, cycle_cost, numerical_whittle, optimal_threshold, passive_set, tau_eq, tau_star, value_iteration,
    Arm, OracleError, ValueIterationConfig,
};
use crate::policy::{solve_knapsack, KnapsackSolution};

pub type IndexFn = fn(f64, usize, u64) -> f64;
pub type KnapsackFn = fn(&[f64], &[usize], usize) -> KnapsackSolution;

/// Implementations under test.
#[derive(Clone, Copy)]
pub struct Hooks {
    /// `(serve_success, cardinality, age) -> index`.
    pub index: IndexFn,
    pub knapsack: KnapsackFn,
}

fn closed_form(r: f64, lambda: usize, s: u64) -> f64 {
    crate::index::whittle(r, lambda, s).expect("battery arms are valid")
}

impl Default for Hooks {
    fn default() -> Self {
        Hooks { index: closed_form, knapsack: solve_knapsack }
    }
}

/// Grid sizes. `quick` trims the expensive grids for use in tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryConfig {
    pub quick: bool,
    pub seed: u64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        BatteryConfig { quick: false, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub params: String,
    pub expected: String,
    pub actual: String,
    pub pass: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<CheckRow>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRow> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,params,expected,actual,pass\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{}", r.check, quote(&r.params), quote(&r.expected), quote(&r.actual), r.pass)
                .unwrap();
        }
        out
    }
}

fn quote(field: &str) -> String {
    if field.contains([',', '"']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

const SERVE: [f64; 5] = [0.1, 0.3, 0.5, 0.7038, 1.0];
const CARDINALITY: [usize; 4] = [2, 3, 4, 5];

fn arms() -> Vec<Arm> {
    SERVE
        .iter()
        .flat_map(|&r| CARDINALITY.iter().map(move |&l| Arm::new(r, l).expect("valid arm")))
        .collect()
}

fn arm_label(arm: &Arm) -> String {
    format!("r={} lambda={}", arm.serve_success, arm.cardinality)
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

fn row(check: &str, params: String, expected: impl Into<String>, actual: String, pass: bool) -> CheckRow {
    CheckRow { check: check.to_string(), params, expected: expected.into(), actual, pass }
}

fn oracle_failure(check: &str, params: String, err: OracleError) -> CheckRow {
    row(check, params, "no error", err.to_string(), false)
}

/// Runs every check.
pub fn run_battery(config: &BatteryConfig, hooks: &Hooks) -> Report {
    let mut rows = Vec::new();
    rows.extend(identity(config, hooks));
    rows.extend(sandwich());
    rows.extend(nesting());
    rows.extend(thresholds());
    rows.extend(value_structure(config));
    rows.extend(numerical_index(config, hooks));
    rows.push(knapsack(config, hooks));
    Report { rows }
}

/// The index equals the charge that equalizes thresholds `s` and `s + 1`.
pub fn identity(config: &BatteryConfig, hooks: &Hooks) -> Vec<CheckRow> {
    let top = if config.quick { 200 } else { 1000 };
    arms()
        .iter()
        .map(|arm| {
            let params = format!("{} s=1..{top}", arm_label(arm));
            let mut worst = 0.0f64;
            for s in 1..=top {
                match tau_eq(arm, s) {
                    Ok(t) => worst = worst.max(rel((hooks.index)(arm.serve_success, arm.cardinality, s), t)),
                    Err(e) => return oracle_failure("identity", params, e),
                }
            }
            row("identity", params, "max rel err <= 1e-12", format!("{worst:e}"), worst <= 1e-12)
        })
        .collect()
}

/// `τ_eq(s - 1) < τ*(s) < τ_eq(s)` for `s = 2..1000`.
pub fn sandwich() -> Vec<CheckRow> {
    arms()
        .iter()
        .map(|arm| {
            let params = format!("{} s=2..1000", arm_label(arm));
            let mut violations = 0usize;
            for s in 2..=1000u64 {
                let (lo, mid, hi) = (tau_eq(arm, s - 1), tau_star(arm, s), tau_eq(arm, s));
                match (lo, mid, hi) {
                    (Ok(lo), Ok(mid), Ok(hi)) => violations += usize::from(!(lo < mid && mid < hi)),
                    (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => return oracle_failure("sandwich", params, e),
                }
            }
            row("sandwich", params, "0 violations", violations.to_string(), violations == 0)
        })
        .collect()
}

/// Passive sets grow with the charge and eventually cover the probe range.
pub fn nesting() -> Vec<CheckRow> {
    let mut rows = Vec::new();
    for arm in arms() {
        let params = format!("{} tau=0:0.1:50", arm_label(&arm));
        let mut violations = 0usize;
        let mut prev = match passive_set(&arm, 0.0) {
            Ok(p) => p,
            Err(e) => {
                rows.push(oracle_failure("nesting", params, e));
                continue;
            }
        };
        let mut failed = None;
        for k in 1..=500 {
            match passive_set(&arm, k as f64 * 0.1) {
                Ok(next) => {
                    violations += usize::from(!prev.is_subset_of(&next));
                    prev = next;
                }
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        rows.push(match failed {
            Some(e) => oracle_failure("nesting", params, e),
            None => row("nesting", params, "0 violations", violations.to_string(), violations == 0),
        });

        let params = format!("{} tau=1e6 s=1..250", arm_label(&arm));
        rows.push(match passive_set(&arm, 1e6) {
            Ok(set) => {
                let covered = (1..=250).all(|s| set.contains(s));
                row("coverage", params, "1..250 passive", format!("passive below {}", set.threshold), covered)
            }
            Err(e) => oracle_failure("coverage", params, e),
        });
    }
    rows
}

/// Threshold analytics at `τ = 0, 0.5, ..., 20` over `Δ = 1..1000`.
pub fn thresholds() -> Vec<CheckRow> {
    let mut rows = Vec::new();
    for arm in arms() {
        let label = arm_label(&arm);
        let mut argmin_misses = Vec::new();
        let mut worst_routes = 0.0f64;
        let mut convexity_violations = 0usize;
        let mut error = None;
        'tau: for k in 0..=40 {
            let tau = k as f64 * 0.5;
            let mut costs = Vec::with_capacity(1000);
            for delta in 1..=1000u64 {
                let pair = cycle_cost(&arm, tau, delta).and_then(|c| Ok((c.average_cost, average_cost(&arm, tau, delta)?)));
                match pair {
                    Ok((ratio, closed)) => {
                        worst_routes = worst_routes.max(rel(ratio, closed));
                        costs.push(closed);
                    }
                    Err(e) => {
                        error = Some(e);
                        break 'tau;
                    }
                }
            }
            let argmin = costs
                .iter()
                .enumerate()
                .fold((0usize, f64::INFINITY), |best, (i, &j)| if j < best.1 { (i, j) } else { best })
                .0 as u64
                + 1;
            match optimal_threshold(&arm, tau) {
                Ok(opt) if opt.contains(argmin) => {}
                Ok(opt) => argmin_misses.push(format!("tau={tau}: {argmin} not in {{{},{}}}", opt.floor, opt.ceil)),
                Err(e) => {
                    error = Some(e);
                    break;
                }
            }
            for w in costs.windows(3) {
                let slack = 1e-12 * w[1].abs();
                convexity_violations += usize::from(w[0] + w[2] < 2.0 * w[1] - slack);
            }
        }
        if let Some(e) = error {
            rows.push(oracle_failure("threshold", label, e));
            continue;
        }
        let params = format!("{label} tau=0:0.5:20 delta=1..1000");
        let actual = if argmin_misses.is_empty() { "all in range".to_string() } else { argmin_misses.join("; ") };
        rows.push(row("threshold", params.clone(), "argmin in {floor,ceil}", actual, argmin_misses.is_empty()));
        rows.push(row("routes", params.clone(), "max rel err <= 1e-9", format!("{worst_routes:e}"), worst_routes <= 1e-9));
        rows.push(row("convexity", params, "0 violations", convexity_violations.to_string(), convexity_violations == 0));
    }
    rows
}

/// Value iteration: `V` non-decreasing and a single-switch action vector.
pub fn value_structure(config: &BatteryConfig) -> Vec<CheckRow> {
    let taus: &[f64] = if config.quick { &[0.0, 2.0] } else { &[0.0, 0.5, 2.0, 10.0, 40.0] };
    let cfg = ValueIterationConfig::default();
    let jobs: Vec<(Arm, f64)> = arms().into_iter().flat_map(|a| taus.iter().map(move |&t| (a, t))).collect();
    jobs.par_iter()
        .map(|(arm, tau)| {
            let params = format!("{} tau={tau} alpha={} S={}", arm_label(arm), cfg.discount, cfg.max_state);
            match value_iteration(arm, *tau, &cfg) {
                Ok(vf) => {
                    let monotone = vf.is_non_decreasing();
                    let threshold = vf.threshold();
                    let actual = format!(
                        "non-decreasing={monotone} threshold={}",
                        threshold.map_or("none".to_string(), |t| t.to_string())
                    );
                    row("value-structure", params, "non-decreasing=true, single switch", actual, monotone && threshold.is_some())
                }
                Err(e) => oracle_failure("value-structure", params, e),
            }
        })
        .collect()
}

/// Bisection over the charge with discounted value iteration recovers the index.
pub fn numerical_index(config: &BatteryConfig, hooks: &Hooks) -> Vec<CheckRow> {
    let (serve, cards, states): (&[f64], &[usize], Vec<u64>) = if config.quick {
        (&[0.7038], &[2], vec![1, 3, 10])
    } else {
        (&[0.3, 0.7038, 1.0], &[2, 4], (1..=20).collect())
    };
    let cfg = ValueIterationConfig::default();
    let mut rows = Vec::new();
    for &r in serve {
        for &lambda in cards {
            let arm = Arm::new(r, lambda).expect("valid arm");
            let params = format!("{} s={}..{} tol=1e-3", arm_label(&arm), states[0], states[states.len() - 1]);
            let results: Vec<_> = states
                .par_iter()
                .map(|&s| numerical_whittle(&arm, s, &cfg, 1e-3).map(|n| (s, n)))
                .collect();
            let mut worst = (0u64, 0.0f64);
            let mut warned = false;
            let mut error = None;
            for result in results {
                match result {
                    Ok((s, n)) => {
                        let e = rel(n.value, (hooks.index)(r, lambda, s));
                        if e > worst.1 {
                            worst = (s, e);
                        }
                        warned |= n.truncation_warning;
                    }
                    Err(e) => error = error.or(Some(e)),
                }
            }
            rows.push(match error {
                Some(e) => oracle_failure("numerical-index", params, e),
                None => row(
                    "numerical-index",
                    params,
                    "max rel err <= 0.05",
                    format!("{:.4e} at s={}{}", worst.1, worst.0, if warned { " (truncation warning)" } else { "" }),
                    worst.1 <= 0.05,
                ),
            });
        }
    }
    rows
}

/// A random knapsack instance: weights are Whittle rewards of random arms.
#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackCase {
    pub weights: Vec<f64>,
    pub sizes: Vec<usize>,
    pub capacity: usize,
}

pub fn random_knapsack_case<R: Rng + ?Sized>(rng: &mut R) -> KnapsackCase {
    let n = rng.random_range(1..=12);
    let capacity = rng.random_range(0..=20);
    let mut weights = Vec::with_capacity(n);
    let mut sizes = Vec::with_capacity(n);
    for _ in 0..n {
        let r: f64 = rng.random_range(0.05..=1.0);
        let age: u64 = rng.random_range(1..=60);
        weights.push(crate::index::reward_unchecked(r, age));
        sizes.push(rng.random_range(2..=7));
    }
    KnapsackCase { weights, sizes, capacity }
}

/// Best admissible subset by enumeration; sums run in ascending index order
/// and ties keep the larger mask, which is the set the backtracking picks.
pub fn brute_force_knapsack(case: &KnapsackCase) -> (f64, Vec<usize>) {
    let n = case.weights.len();
    let mut best = (0.0, Vec::new());
    for mask in 0u32..(1 << n) {
        let members: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let size: usize = members.iter().map(|&i| case.sizes[i]).sum();
        if size > case.capacity {
            continue;
        }
        let value = members.iter().fold(0.0, |acc, &i| acc + case.weights[i]);
        if value >= best.0 {
            best = (value, members);
        }
    }
    best
}

/// The DP value and selection equal exhaustive search on random instances.
pub fn knapsack(config: &BatteryConfig, hooks: &Hooks) -> CheckRow {
    let cases = if config.quick { 200 } else { 1000 };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mismatches = Vec::new();
    for k in 0..cases {
        let case = random_knapsack_case(&mut rng);
        let solution = (hooks.knapsack)(&case.weights, &case.sizes, case.capacity);
        let (value, members) = brute_force_knapsack(&case);
        if solution.value != value || solution.selected != members {
            mismatches.push(k);
        }
    }
    let actual = match mismatches.first() {
        None => "0 mismatches".to_string(),
        Some(first) => format!("{} mismatches (first at case {first})", mismatches.len()),
    };
    row(
        "kawi-brute-force",
        format!("{cases} instances R<=12 M<=20 seed={}", config.seed),
        "0 mismatches",
        actual,
        mismatches.is_empty(),
    )
}
