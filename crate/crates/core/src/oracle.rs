//! Single-request MDP analytics: the transition kernel, discounted value
//! iteration, renewal-reward cost of threshold policies, and the critical
//! multipliers `τ_eq` and `τ*`.
//!
//! A request is an arm with serve probability `r` and cardinality `λ`. At
//! charge `τ`, activating it in state `s` costs `s + τλ` and passivity costs
//! `s`. These routines check the closed-form index in [`crate::index`]
//! independently.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("serve probability {0} is outside (0, 1]")]
    ServeProbability(f64),
    #[error("cardinality must be at least 2, got {0}")]
    Cardinality(usize),
    #[error("charge must be finite and nonnegative, got {0}")]
    Tau(f64),
    #[error("state must be at least 1")]
    ZeroState,
    #[error("threshold must be at least 1")]
    ZeroThreshold,
    #[error("invalid action {0}; expected 0 or 1")]
    InvalidAction(u8),
    #[error("invalid value-iteration config: {0}")]
    Config(&'static str),
    #[error("value iteration did not converge in {iterations} iterations (last change {last_change})")]
    NoConvergence { iterations: usize, last_change: f64 },
    #[error("state {state} exceeds half the truncation bound {max_state}")]
    StateTooLarge { state: u64, max_state: usize },
    #[error("could not bracket the index below charge {0}")]
    NoBracket(f64),
}

/// Serve probability and cardinality of one request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub serve_success: f64,
    pub cardinality: usize,
}

impl Arm {
    pub fn new(serve_success: f64, cardinality: usize) -> Result<Self, OracleError> {
        if !(serve_success > 0.0 && serve_success <= 1.0) {
            return Err(OracleError::ServeProbability(serve_success));
        }
        if cardinality < 2 {
            return Err(OracleError::Cardinality(cardinality));
        }
        Ok(Arm { serve_success, cardinality })
    }

    fn lambda(&self) -> f64 {
        self.cardinality as f64
    }
}

fn check_tau(tau: f64) -> Result<(), OracleError> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(OracleError::Tau(tau))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Passive,
    Active,
}

impl TryFrom<u8> for Action {
    type Error = OracleError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            0 => Ok(Action::Passive),
            1 => Ok(Action::Active),
            other => Err(OracleError::InvalidAction(other)),
        }
    }
}

/// Nonzero transition probabilities out of `state` as `(next_state, probability)`.
pub fn transition_probs(state: u64, action: Action, arm: &Arm) -> Result<Vec<(u64, f64)>, OracleError> {
    if state == 0 {
        return Err(OracleError::ZeroState);
    }
    let r = arm.serve_success;
    Ok(match action {
        Action::Passive => vec![(state + 1, 1.0)],
        Action::Active if r == 1.0 => vec![(1, 1.0)],
        Action::Active => vec![(1, r), (state + 1, 1.0 - r)],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueIterationConfig {
    /// Discount factor `α`.
    pub discount: f64,
    /// States `1..=max_state` are kept; the top state absorbs passive moves.
    pub max_state: usize,
    /// Stop once the sup-norm change drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ValueIterationConfig {
    fn default() -> Self {
        ValueIterationConfig { discount: 0.999, max_state: 500, tolerance: 1e-9, max_iterations: 200_000 }
    }
}

impl ValueIterationConfig {
    fn check(&self) -> Result<(), OracleError> {
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(OracleError::Config("discount must be in (0, 1)"));
        }
        if self.max_state < 10 {
            return Err(OracleError::Config("max_state must be at least 10"));
        }
        if !(self.tolerance > 0.0) {
            return Err(OracleError::Config("tolerance must be positive"));
        }
        Ok(())
    }
}

/// Discounted value function and a minimizing action for states `1..=S_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    /// Entry `s - 1` holds `V(s)`.
    pub values: Vec<f64>,
    pub actions: Vec<Action>,
    pub iterations: usize,
}

impl ValueFunction {
    pub fn value(&self, state: u64) -> f64 {
        self.values[state as usize - 1]
    }

    pub fn action(&self, state: u64) -> Action {
        self.actions[state as usize - 1]
    }

    /// First active state, if the actions are passive on a prefix and
    /// active on the remaining suffix. `None` if the vector is not of that shape.
    pub fn threshold(&self) -> Option<u64> {
        let first_active = self.actions.iter().position(|&a| a == Action::Active);
        match first_active {
            None => Some(self.actions.len() as u64 + 1),
            Some(k) if self.actions[k..].iter().all(|&a| a == Action::Active) => Some(k as u64 + 1),
            Some(_) => None,
        }
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] >= w[0])
    }
}

/// Value iteration for the discounted single-arm problem at charge `tau`,
/// starting from `V = 0`. Ties between actions resolve to passive.
pub fn value_iteration(arm: &Arm, tau: f64, config: &ValueIterationConfig) -> Result<ValueFunction, OracleError> {
    check_tau(tau)?;
    config.check()?;
    let n = config.max_state;
    let alpha = config.discount;
    let r = arm.serve_success;
    let charge = tau * arm.lambda();
    let states: Vec<f64> = (1..=n).map(|s| s as f64).collect();
    let mut values = vec![0.0f64; n];
    let mut next = vec![0.0f64; n];
    let mut last_change = f64::INFINITY;
    for iteration in 1..=config.max_iterations {
        let reset_term = charge + alpha * r * values[0];
        let keep = alpha * (1.0 - r);
        let bellman = |s: f64, up: f64| {
            let (passive, active) = (s + alpha * up, s + reset_term + keep * up);
            if active < passive { active } else { passive }
        };
        // running maxima of the change, one per lane
        let mut lanes = [0.0f64; 4];
        let body = n - 1;
        let chunks = next[..body]
            .chunks_exact_mut(4)
            .zip(values[..body].chunks_exact(4))
            .zip(values[1..].chunks_exact(4))
            .zip(states[..body].chunks_exact(4));
        for (((out, cur), up), st) in chunks {
            for j in 0..4 {
                let v = bellman(st[j], up[j]);
                let d = (v - cur[j]).abs();
                lanes[j] = if d > lanes[j] { d } else { lanes[j] };
                out[j] = v;
            }
        }
        let mut change = lanes.iter().fold(0.0f64, |a, &b| a.max(b));
        // the remainder, then the top state, which is its own passive successor
        for k in body - body % 4..n {
            let up = values[if k + 1 < n { k + 1 } else { k }];
            let v = bellman(states[k], up);
            change = change.max((v - values[k]).abs());
            next[k] = v;
        }
        std::mem::swap(&mut values, &mut next);
        last_change = change;
        if change < config.tolerance {
            let actions = greedy_actions(&values, r, charge, alpha);
            return Ok(ValueFunction { values, actions, iterations: iteration });
        }
    }
    Err(OracleError::NoConvergence { iterations: config.max_iterations, last_change })
}

fn greedy_actions(values: &[f64], r: f64, charge: f64, alpha: f64) -> Vec<Action> {
    let n = values.len();
    (0..n)
        .map(|k| {
            let s = (k + 1) as f64;
            let up = values[(k + 1).min(n - 1)];
            let passive = s + alpha * up;
            let active = s + charge + alpha * (r * values[0] + (1.0 - r) * up);
            if passive <= active { Action::Passive } else { Action::Active }
        })
        .collect()
}

/// Renewal-reward statistics of the threshold policy `π_Δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAnalysis {
    pub threshold: u64,
    /// `E[ℓ] = Δ - 1 + 1/r`.
    pub expected_cycle_length: f64,
    /// Expected age plus activation cost accumulated over one cycle.
    pub expected_cycle_cost: f64,
    /// `E[J] / E[ℓ]`.
    pub average_cost: f64,
}

/// Cycle statistics of `π_Δ` at charge `tau`.
///
/// A cycle is `Δ - 1` passive slots followed by a geometric number of
/// active slots; ages run `1, 2, ..., ℓ` over a cycle of length `ℓ`.
pub fn cycle_cost(arm: &Arm, tau: f64, threshold: u64) -> Result<ThresholdAnalysis, OracleError> {
    check_tau(tau)?;
    if threshold == 0 {
        return Err(OracleError::ZeroThreshold);
    }
    let r = arm.serve_success;
    let d = (threshold - 1) as f64;
    let length = d + 1.0 / r;
    let second_moment = d * d + 2.0 * d / r + (2.0 - r) / (r * r);
    let cost = tau * arm.lambda() / r + 0.5 * second_moment + length / 2.0;
    Ok(ThresholdAnalysis {
        threshold,
        expected_cycle_length: length,
        expected_cycle_cost: cost,
        average_cost: cost / length,
    })
}

/// Closed form of the average cost of `π_Δ`.
pub fn average_cost(arm: &Arm, tau: f64, threshold: u64) -> Result<f64, OracleError> {
    check_tau(tau)?;
    if threshold == 0 {
        return Err(OracleError::ZeroThreshold);
    }
    let r = arm.serve_success;
    let delta = threshold as f64;
    let numerator = tau * arm.lambda() + (1.0 - r) / (2.0 * r);
    Ok(delta / 2.0 + 1.0 / (2.0 * r) + numerator / (r * (delta - 1.0) + 1.0))
}

/// Real minimizer `Δ*` of the average cost and its two integer neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalThreshold {
    pub real: f64,
    pub floor: u64,
    pub ceil: u64,
}

impl OptimalThreshold {
    pub fn contains(&self, threshold: u64) -> bool {
        threshold == self.floor || threshold == self.ceil
    }
}

pub fn optimal_threshold(arm: &Arm, tau: f64) -> Result<OptimalThreshold, OracleError> {
    check_tau(tau)?;
    let r = arm.serve_success;
    let root = (1.0 - r + 2.0 * r * tau * arm.lambda()).sqrt();
    let real = f64::max(1.0, 1.0 + (root - 1.0) / r);
    Ok(OptimalThreshold { real, floor: real.floor() as u64, ceil: real.ceil() as u64 })
}

/// Integer minimizer of the average cost found by descending from `Δ = 1`
/// until the cost stops decreasing; ties keep the smaller threshold.
pub fn best_threshold(arm: &Arm, tau: f64) -> Result<u64, OracleError> {
    check_tau(tau)?;
    let mut delta = 1u64;
    let mut current = average_cost(arm, tau, 1)?;
    loop {
        let next = average_cost(arm, tau, delta + 1)?;
        if next >= current {
            return Ok(delta);
        }
        delta += 1;
        current = next;
    }
}

/// Charge at which thresholds `s` and `s + 1` cost the same.
pub fn tau_eq(arm: &Arm, state: u64) -> Result<f64, OracleError> {
    if state == 0 {
        return Err(OracleError::ZeroState);
    }
    let (r, s) = (arm.serve_success, state as f64);
    Ok(s * (r * s - r + 2.0) / (2.0 * arm.lambda()))
}

/// Charge at which `Δ*` equals `s`.
pub fn tau_star(arm: &Arm, state: u64) -> Result<f64, OracleError> {
    if state == 0 {
        return Err(OracleError::ZeroState);
    }
    let (r, d) = (arm.serve_success, (state - 1) as f64);
    Ok((r * d * d + 2.0 * d + 1.0) / (2.0 * arm.lambda()))
}

/// States where passivity is optimal at a given charge: `{1, ..., threshold - 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassiveSet {
    /// First state outside the set.
    pub threshold: u64,
}

impl PassiveSet {
    pub fn contains(&self, state: u64) -> bool {
        state >= 1 && state < self.threshold
    }

    pub fn len(&self) -> u64 {
        self.threshold - 1
    }

    pub fn is_empty(&self) -> bool {
        self.threshold <= 1
    }

    pub fn is_subset_of(&self, other: &PassiveSet) -> bool {
        self.is_empty() || self.threshold <= other.threshold
    }
}

/// Passive set of the average-cost problem at charge `tau`, from the
/// integer minimizer of the threshold cost.
pub fn passive_set(arm: &Arm, tau: f64) -> Result<PassiveSet, OracleError> {
    Ok(PassiveSet { threshold: best_threshold(arm, tau)? })
}

/// Index recovered numerically: the smallest charge at which passivity is
/// optimal in `state` under discounted value iteration, found by bisection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericalIndex {
    pub value: f64,
    /// Some probed charge had its optimal threshold above `S_max / 2`.
    pub truncation_warning: bool,
    pub probes: usize,
}

pub fn numerical_whittle(
    arm: &Arm,
    state: u64,
    config: &ValueIterationConfig,
    tolerance: f64,
) -> Result<NumericalIndex, OracleError> {
    if state == 0 {
        return Err(OracleError::ZeroState);
    }
    if state as usize > config.max_state / 2 {
        return Err(OracleError::StateTooLarge { state, max_state: config.max_state });
    }
    let half = (config.max_state / 2) as u64;
    let mut probes = 0usize;
    let mut warning = false;
    let mut passive_at = |tau: f64| -> Result<bool, OracleError> {
        let vf = value_iteration(arm, tau, config)?;
        probes += 1;
        if vf.threshold().map_or(true, |t| t > half) {
            warning = true;
        }
        Ok(vf.action(state) == Action::Passive)
    };

    let mut lo = 0.0;
    let mut hi = 2.0 * tau_eq(arm, state)?;
    let mut doublings = 0;
    while !passive_at(hi)? {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Err(OracleError::NoBracket(hi));
        }
    }
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        if passive_at(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(NumericalIndex { value: 0.5 * (lo + hi), truncation_warning: warning, probes })
}
