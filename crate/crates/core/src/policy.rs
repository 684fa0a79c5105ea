//! Per-slot scheduling rules.
//!
//! Every rule returns an admissible [`Decision`]: the cardinalities of the
//! scheduled requests never exceed the memory size.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::index::{check_beta, check_gamma, reward_unchecked, IndexError};
use crate::model::{Decision, Instance, RequestId, SwitchState};

/// Anything that picks an admissible set from the current ages.
pub trait Scheduler {
    fn decide<R: Rng + ?Sized>(&mut self, state: &SwitchState, instance: &Instance, rng: &mut R) -> Decision;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PolicyKind {
    /// Exact knapsack over the Whittle rewards.
    Kawi,
    /// Sequential scan ranked by the knapsack reward.
    GreedyWhittle,
    Swis { gamma: f64 },
    Swid { beta: f64 },
    /// Exact knapsack with the raw age as the reward.
    MaxAgeKnapsack,
    /// Uniformly shuffled sequential scan.
    RandomAdmissible,
}

impl PolicyKind {
    pub fn label(&self) -> &'static str {
        match self {
            PolicyKind::Kawi => "KAWI",
            PolicyKind::GreedyWhittle => "GreedyWhittle",
            PolicyKind::Swis { .. } => "SWIS",
            PolicyKind::Swid { .. } => "SWID",
            PolicyKind::MaxAgeKnapsack => "MaxAgeKnapsack",
            PolicyKind::RandomAdmissible => "RandomAdmissible",
        }
    }

    pub fn validate(&self) -> Result<(), IndexError> {
        match *self {
            PolicyKind::Swis { gamma } => check_gamma(gamma),
            PolicyKind::Swid { beta } => check_beta(beta),
            _ => Ok(()),
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            PolicyKind::Swis { gamma } => Some(gamma),
            _ => None,
        }
    }

    pub fn beta(&self) -> Option<f64> {
        match *self {
            PolicyKind::Swid { beta } => Some(beta),
            _ => None,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Swis { gamma } => write!(f, "SWIS(gamma={gamma})"),
            PolicyKind::Swid { beta } => write!(f, "SWID(beta={beta})"),
            other => f.write_str(other.label()),
        }
    }
}

/// What a sequential scan does with a request that does not fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    /// Skip it and keep scanning.
    #[default]
    Skip,
    /// End the scan.
    Stop,
}

/// Ranking used by a sequential scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ranking {
    KnapsackReward,
    Swis { gamma: f64 },
    Swid { beta: f64 },
}

impl Ranking {
    #[inline]
    fn score(self, serve_success: f64, cardinality: usize, age: u64) -> f64 {
        let w = reward_unchecked(serve_success, age);
        match self {
            Ranking::KnapsackReward => w,
            Ranking::Swis { gamma } => w - gamma * cardinality as f64,
            Ranking::Swid { beta } => w / (beta + cardinality as f64),
        }
    }
}

/// `(R + 1) × (M + 1)` dynamic-programming table; row 0 and column 0 are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DpTable {
    capacity: usize,
    values: Vec<f64>,
}

impl DpTable {
    fn reset(&mut self, items: usize, capacity: usize) {
        self.capacity = capacity;
        self.values.clear();
        self.values.resize((items + 1) * (capacity + 1), 0.0);
    }

    pub fn items(&self) -> usize {
        self.values.len() / (self.capacity + 1) - 1
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    #[inline]
    pub fn get(&self, item: usize, capacity: usize) -> f64 {
        self.values[item * (self.capacity + 1) + capacity]
    }

    #[inline]
    fn set(&mut self, item: usize, capacity: usize, value: f64) {
        self.values[item * (self.capacity + 1) + capacity] = value;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackSolution {
    /// Zero-based item positions, ascending.
    pub selected: Vec<usize>,
    /// `DP(R, M)`.
    pub value: f64,
    pub table: DpTable,
}

#[derive(Debug, Default)]
struct KnapsackScratch {
    table: DpTable,
    selected: Vec<usize>,
}

impl Default for DpTable {
    fn default() -> Self {
        DpTable { capacity: 0, values: vec![0.0] }
    }
}

fn fill_and_backtrack(weights: &[f64], sizes: &[usize], capacity: usize, scratch: &mut KnapsackScratch) -> f64 {
    assert_eq!(weights.len(), sizes.len());
    let n = weights.len();
    let table = &mut scratch.table;
    table.reset(n, capacity);
    for i in 1..=n {
        let (w, size) = (weights[i - 1], sizes[i - 1]);
        debug_assert!(size >= 1);
        for c in 1..=capacity {
            let skip = table.get(i - 1, c);
            let value = if size <= c {
                let take = w + table.get(i - 1, c - size);
                if take > skip { take } else { skip }
            } else {
                skip
            };
            table.set(i, c, value);
        }
    }
    scratch.selected.clear();
    let mut c = capacity;
    for i in (1..=n).rev() {
        let size = sizes[i - 1];
        if size <= c && table.get(i, c) == weights[i - 1] + table.get(i - 1, c - size) {
            scratch.selected.push(i - 1);
            c -= size;
        }
    }
    scratch.selected.reverse();
    table.get(n, capacity)
}

/// Exact 0-1 knapsack by the row recursion over items, followed by
/// backtracking from `(R, M)` that includes item `i` whenever
/// `DP(i, c) == w_i + DP(i - 1, c - size_i)`.
///
/// Sizes must be at least 1.
pub fn solve_knapsack(weights: &[f64], sizes: &[usize], capacity: usize) -> KnapsackSolution {
    let mut scratch = KnapsackScratch::default();
    let value = fill_and_backtrack(weights, sizes, capacity, &mut scratch);
    KnapsackSolution { selected: scratch.selected, value, table: scratch.table }
}

/// A [`PolicyKind`] with its scan mode and reusable buffers.
#[derive(Debug)]
pub struct Policy {
    kind: PolicyKind,
    scan: ScanMode,
    weights: Vec<f64>,
    sizes: Vec<usize>,
    order: Vec<usize>,
    scores: Vec<f64>,
    knapsack: KnapsackScratch,
}

impl Clone for Policy {
    fn clone(&self) -> Self {
        Policy::with_scan(self.kind, self.scan)
    }
}

impl Policy {
    pub fn new(kind: PolicyKind) -> Self {
        Policy::with_scan(kind, ScanMode::Skip)
    }

    pub fn with_scan(kind: PolicyKind, scan: ScanMode) -> Self {
        Policy {
            kind,
            scan,
            weights: Vec::new(),
            sizes: Vec::new(),
            order: Vec::new(),
            scores: Vec::new(),
            knapsack: KnapsackScratch::default(),
        }
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn scan(&self) -> ScanMode {
        self.scan
    }

    fn knapsack_decide(&mut self, instance: &Instance, weight: impl Fn(usize) -> f64) -> Decision {
        let n = instance.len();
        self.weights.clear();
        self.weights.extend((0..n).map(weight));
        self.sizes.clear();
        self.sizes.extend(instance.profiles().iter().map(|p| p.cardinality));
        fill_and_backtrack(&self.weights, &self.sizes, instance.memory(), &mut self.knapsack);
        let used_memory = self.knapsack.selected.iter().map(|&i| self.sizes[i]).sum();
        let scheduled = self.knapsack.selected.iter().map(|&i| RequestId::from_index(i)).collect();
        Decision { scheduled, used_memory }
    }

    fn deterministic_knapsack(&mut self, state: &SwitchState, instance: &Instance) -> Decision {
        let ages = &state.ages;
        if self.kind == PolicyKind::MaxAgeKnapsack {
            self.knapsack_decide(instance, |i| ages[i] as f64)
        } else {
            let profiles = instance.profiles();
            self.knapsack_decide(instance, |i| reward_unchecked(profiles[i].serve_success, ages[i]))
        }
    }

    fn ranked_decide(&mut self, state: &SwitchState, instance: &Instance, ranking: Ranking) -> Decision {
        let profiles = instance.profiles();
        self.scores.clear();
        self.scores.extend(
            profiles.iter().zip(&state.ages).map(|(p, &age)| ranking.score(p.serve_success, p.cardinality, age)),
        );
        self.order.clear();
        self.order.extend(0..profiles.len());
        let scores = &self.scores;
        self.order.sort_unstable_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then(profiles[a].cardinality.cmp(&profiles[b].cardinality))
                .then(a.cmp(&b))
        });
        scan(&self.order, instance, self.scan)
    }
}

fn scan(order: &[usize], instance: &Instance, mode: ScanMode) -> Decision {
    let profiles = instance.profiles();
    let min_size = profiles.iter().map(|p| p.cardinality).min().unwrap_or(0);
    let mut remaining = instance.memory();
    let mut decision = Decision::empty();
    for &i in order {
        if remaining < min_size {
            break;
        }
        let size = profiles[i].cardinality;
        if size <= remaining {
            decision.scheduled.push(RequestId::from_index(i));
            decision.used_memory += size;
            remaining -= size;
        } else if mode == ScanMode::Stop {
            break;
        }
    }
    decision
}

impl Scheduler for Policy {
    fn decide<R: Rng + ?Sized>(&mut self, state: &SwitchState, instance: &Instance, rng: &mut R) -> Decision {
        match self.kind {
            PolicyKind::Kawi | PolicyKind::MaxAgeKnapsack => self.deterministic_knapsack(state, instance),
            PolicyKind::GreedyWhittle => self.ranked_decide(state, instance, Ranking::KnapsackReward),
            PolicyKind::Swis { gamma } => self.ranked_decide(state, instance, Ranking::Swis { gamma }),
            PolicyKind::Swid { beta } => self.ranked_decide(state, instance, Ranking::Swid { beta }),
            PolicyKind::RandomAdmissible => {
                self.order.clear();
                self.order.extend(0..instance.len());
                self.order.shuffle(rng);
                scan(&self.order, instance, self.scan)
            }
        }
    }
}

/// KAWI: knapsack over `w_i(t) = λ_i W_i(h_i(t))`.
pub fn kawi_decide(state: &SwitchState, instance: &Instance) -> Decision {
    Policy::new(PolicyKind::Kawi).deterministic_knapsack(state, instance)
}

/// The DP table and selection KAWI computes for `state`.
pub fn kawi_solution(state: &SwitchState, instance: &Instance) -> KnapsackSolution {
    let weights: Vec<f64> = instance
        .profiles()
        .iter()
        .zip(&state.ages)
        .map(|(p, &age)| reward_unchecked(p.serve_success, age))
        .collect();
    let sizes: Vec<usize> = instance.profiles().iter().map(|p| p.cardinality).collect();
    solve_knapsack(&weights, &sizes, instance.memory())
}

/// Sorts by the ranking (descending; ties to smaller cardinality, then
/// smaller id) and scans the list against the remaining memory.
pub fn sequential_decide(state: &SwitchState, instance: &Instance, ranking: Ranking, mode: ScanMode) -> Decision {
    Policy::with_scan(PolicyKind::GreedyWhittle, mode).ranked_decide(state, instance, ranking)
}

pub fn max_age_knapsack_decide(state: &SwitchState, instance: &Instance) -> Decision {
    Policy::new(PolicyKind::MaxAgeKnapsack).deterministic_knapsack(state, instance)
}

pub fn random_admissible_decide<R: Rng + ?Sized>(state: &SwitchState, instance: &Instance, rng: &mut R) -> Decision {
    Policy::new(PolicyKind::RandomAdmissible).decide(state, instance, rng)
}
