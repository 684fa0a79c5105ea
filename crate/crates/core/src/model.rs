//! Switch, request and age types together with the one-slot stochastic dynamics.
//!
//! Users are numbered `1..=N` and requests `1..=R`; both are exposed with
//! one-based identifiers and stored in zero-based vectors.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{what} = {value} is outside (0, 1]")]
    ProbabilityOutOfRange { what: String, value: f64 },
    #[error("no swap probability for cardinality {0}")]
    MissingSwapProbability(usize),
    #[error("request {id} has cardinality {cardinality} but memory holds only {memory}")]
    RequestLargerThanMemory { id: usize, cardinality: usize, memory: usize },
    #[error("request {id} lists user {user} more than once")]
    DuplicateUser { id: usize, user: usize },
    #[error("request {id} names user {user}, but the network has {user_count} users")]
    UnknownUser { id: usize, user: usize, user_count: usize },
    #[error("request {id} has cardinality {cardinality}; requests need at least 2 users")]
    RequestTooSmall { id: usize, cardinality: usize },
    #[error("network needs at least 2 users, got {0}")]
    TooFewUsers(usize),
    #[error("memory must be at least 2 registers, got {0}")]
    MemoryTooSmall(usize),
    #[error("request set is empty")]
    NoRequests,
    #[error("invalid generator bounds: need 2 <= max_cardinality ({max_cardinality}) <= user_count ({user_count})")]
    InvalidGeneratorBounds { user_count: usize, max_cardinality: usize },
}

/// One-based request identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestId(pub usize);

impl RequestId {
    pub fn from_index(index: usize) -> Self {
        RequestId(index + 1)
    }

    pub fn index(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Star network around the switch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Entry `j - 1` is the LLE success probability of user `j`.
    pub lle_prob: Vec<f64>,
    /// Swap success probability keyed by request cardinality.
    pub swap_prob: BTreeMap<usize, f64>,
    /// Number of memory registers.
    pub memory: usize,
}

impl NetworkConfig {
    pub fn user_count(&self) -> usize {
        self.lle_prob.len()
    }

    /// The five-user network used for the memory sweep.
    pub fn five_user(memory: usize) -> Self {
        NetworkConfig {
            lle_prob: vec![0.85, 0.9, 0.93, 0.87, 0.95],
            swap_prob: [(2, 0.92), (3, 0.87), (4, 0.83), (5, 0.8)].into_iter().collect(),
            memory,
        }
    }

    /// The seven-user network used for the request-set sweep.
    pub fn seven_user(memory: usize) -> Self {
        NetworkConfig {
            lle_prob: vec![0.85, 0.9, 0.93, 0.87, 0.95, 0.83, 0.92],
            swap_prob: [(2, 0.92), (3, 0.87), (4, 0.83), (5, 0.8), (6, 0.78), (7, 0.75)]
                .into_iter()
                .collect(),
            memory,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    /// Member users, sorted ascending.
    pub users: Vec<usize>,
}

impl Request {
    pub fn cardinality(&self) -> usize {
        self.users.len()
    }
}

/// Ordered request list with the cardinality classes `C(λ)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestSet {
    requests: Vec<Request>,
    cardinality_index: BTreeMap<usize, Vec<RequestId>>,
}

impl RequestSet {
    /// Builds a set from user groups; ids follow the input order.
    pub fn from_groups<I, G>(groups: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = G>,
        G: AsRef<[usize]>,
    {
        let mut requests = Vec::new();
        for (index, group) in groups.into_iter().enumerate() {
            let id = RequestId::from_index(index);
            let mut users = group.as_ref().to_vec();
            users.sort_unstable();
            if let Some(w) = users.windows(2).find(|w| w[0] == w[1]) {
                return Err(ModelError::DuplicateUser { id: id.0, user: w[0] });
            }
            if users.len() < 2 {
                return Err(ModelError::RequestTooSmall { id: id.0, cardinality: users.len() });
            }
            requests.push(Request { id, users });
        }
        if requests.is_empty() {
            return Err(ModelError::NoRequests);
        }
        let mut cardinality_index: BTreeMap<usize, Vec<RequestId>> = BTreeMap::new();
        for r in &requests {
            cardinality_index.entry(r.cardinality()).or_default().push(r.id);
        }
        Ok(RequestSet { requests, cardinality_index })
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn requests(&self) -> &[Request] {
        &self.requests
    }

    pub fn get(&self, id: RequestId) -> &Request {
        &self.requests[id.index()]
    }

    /// The classes `C(λ)`, keyed by cardinality.
    pub fn cardinality_index(&self) -> &BTreeMap<usize, Vec<RequestId>> {
        &self.cardinality_index
    }

    /// The distinct cardinalities `Λ`.
    pub fn cardinalities(&self) -> impl Iterator<Item = usize> + '_ {
        self.cardinality_index.keys().copied()
    }

    pub fn max_cardinality(&self) -> usize {
        self.cardinality_index.keys().next_back().copied().unwrap_or(0)
    }
}

/// All subsets of `{1..N}` with `2 <= |S| <= max_cardinality`, ordered by size
/// and then lexicographically.
pub fn generate_all_requests(user_count: usize, max_cardinality: usize) -> Result<RequestSet, ModelError> {
    if max_cardinality < 2 || max_cardinality > user_count {
        return Err(ModelError::InvalidGeneratorBounds { user_count, max_cardinality });
    }
    let mut groups = Vec::new();
    for size in 2..=max_cardinality {
        push_combinations(user_count, size, &mut groups);
    }
    RequestSet::from_groups(groups)
}

fn push_combinations(n: usize, k: usize, out: &mut Vec<Vec<usize>>) {
    let mut current: Vec<usize> = (1..=k).collect();
    loop {
        out.push(current.clone());
        // rightmost position that can still be incremented
        let Some(pos) = (0..k).rev().find(|&i| current[i] < n - (k - 1 - i)) else {
            return;
        };
        current[pos] += 1;
        for i in pos + 1..k {
            current[i] = current[i - 1] + 1;
        }
    }
}

/// Success probabilities derived for one request under a network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceProfile {
    pub cardinality: usize,
    /// `v(i)`: every member establishes its LLE.
    pub lle_success: f64,
    /// `q_λ v(i)`: the request is served when scheduled.
    pub serve_success: f64,
}

/// A validated network and request set.
#[derive(Debug, Clone)]
pub struct Instance {
    config: NetworkConfig,
    requests: RequestSet,
    profiles: Vec<ServiceProfile>,
}

impl Instance {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn requests(&self) -> &RequestSet {
        &self.requests
    }

    pub fn memory(&self) -> usize {
        self.config.memory
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn profile(&self, id: RequestId) -> &ServiceProfile {
        &self.profiles[id.index()]
    }

    pub fn profiles(&self) -> &[ServiceProfile] {
        &self.profiles
    }

    /// Same requests under a different memory size.
    pub fn with_memory(&self, memory: usize) -> Result<Instance, ModelError> {
        let mut config = self.config.clone();
        config.memory = memory;
        validate(config, self.requests.clone())
    }
}

fn check_probability(what: impl FnOnce() -> String, value: f64) -> Result<(), ModelError> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(ModelError::ProbabilityOutOfRange { what: what(), value })
    }
}

/// Checks every network and request invariant and precomputes `v(i)` and `q_λ v(i)`.
pub fn validate(config: NetworkConfig, requests: RequestSet) -> Result<Instance, ModelError> {
    let n = config.user_count();
    if n < 2 {
        return Err(ModelError::TooFewUsers(n));
    }
    if config.memory < 2 {
        return Err(ModelError::MemoryTooSmall(config.memory));
    }
    for (j, &p) in config.lle_prob.iter().enumerate() {
        check_probability(|| format!("p_{}", j + 1), p)?;
    }
    for (&lambda, &q) in &config.swap_prob {
        check_probability(|| format!("q_{lambda}"), q)?;
    }
    let mut profiles = Vec::with_capacity(requests.len());
    for r in requests.requests() {
        for &user in &r.users {
            if user == 0 || user > n {
                return Err(ModelError::UnknownUser { id: r.id.0, user, user_count: n });
            }
        }
        let cardinality = r.cardinality();
        if cardinality > config.memory {
            return Err(ModelError::RequestLargerThanMemory {
                id: r.id.0,
                cardinality,
                memory: config.memory,
            });
        }
        let q = *config
            .swap_prob
            .get(&cardinality)
            .ok_or(ModelError::MissingSwapProbability(cardinality))?;
        let lle_success: f64 = r.users.iter().map(|&u| config.lle_prob[u - 1]).product();
        profiles.push(ServiceProfile { cardinality, lle_success, serve_success: q * lle_success });
    }
    Ok(Instance { config, requests, profiles })
}

/// Current slot and per-request ages `h_i(t)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchState {
    pub slot: u64,
    pub ages: Vec<u64>,
}

impl SwitchState {
    /// State at `t = 1`: with no past service every age is 1.
    pub fn initial(request_count: usize) -> Self {
        SwitchState { slot: 1, ages: vec![1; request_count] }
    }

    /// Age update: served requests drop to 1, the rest grow by one slot.
    pub fn advance(&mut self, served: &[bool]) {
        debug_assert_eq!(served.len(), self.ages.len());
        for (age, &hit) in self.ages.iter_mut().zip(served) {
            *age = if hit { 1 } else { *age + 1 };
        }
        self.slot += 1;
    }
}

/// Functional form of [`SwitchState::advance`].
pub fn advance_age(state: &SwitchState, outcome: &SlotOutcome) -> SwitchState {
    let mut next = state.clone();
    next.advance(&outcome.served);
    next
}

/// The admissible set scheduled in one slot.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub scheduled: Vec<RequestId>,
    pub used_memory: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecisionError {
    #[error("decision uses {used} registers but memory is {memory}")]
    OverMemory { used: usize, memory: usize },
    #[error("decision schedules unknown request {0}")]
    UnknownRequest(RequestId),
    #[error("decision schedules request {0} twice")]
    Duplicate(RequestId),
    #[error("decision reports {reported} registers but its requests need {actual}")]
    WrongMemoryCount { reported: usize, actual: usize },
}

impl Decision {
    pub fn empty() -> Self {
        Decision::default()
    }

    pub fn from_ids(ids: Vec<RequestId>, instance: &Instance) -> Self {
        let used_memory = ids.iter().map(|&id| instance.profile(id).cardinality).sum();
        Decision { scheduled: ids, used_memory }
    }

    pub fn contains(&self, id: RequestId) -> bool {
        self.scheduled.contains(&id)
    }

    /// Checks the per-slot memory constraint and id validity.
    pub fn check_admissible(&self, instance: &Instance) -> Result<(), DecisionError> {
        let mut seen = vec![false; instance.len()];
        let mut actual = 0;
        for &id in &self.scheduled {
            if id.0 == 0 || id.0 > instance.len() {
                return Err(DecisionError::UnknownRequest(id));
            }
            if std::mem::replace(&mut seen[id.index()], true) {
                return Err(DecisionError::Duplicate(id));
            }
            actual += instance.profile(id).cardinality;
        }
        if actual != self.used_memory {
            return Err(DecisionError::WrongMemoryCount { reported: self.used_memory, actual });
        }
        if actual > instance.memory() {
            return Err(DecisionError::OverMemory { used: actual, memory: instance.memory() });
        }
        Ok(())
    }
}

/// Sampled indicators for one slot, indexed by request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotOutcome {
    /// Per-member LLE indicators `b_{i,j}`, in the order of `Request::users`;
    /// empty for requests that were not scheduled.
    pub lle: Vec<Vec<bool>>,
    /// `c_i`: all members established their LLE.
    pub all_lle: Vec<bool>,
    /// `d_i`: the request was served.
    pub served: Vec<bool>,
}

impl SlotOutcome {
    pub fn served_ids(&self) -> Vec<RequestId> {
        self.served
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(i, _)| RequestId::from_index(i))
            .collect()
    }
}

/// Samples LLE establishment per (request, user) pair and then the swap.
///
/// Successful LLEs of a request that is not fully established are dropped.
pub fn sample_slot<R: Rng + ?Sized>(instance: &Instance, decision: &Decision, rng: &mut R) -> SlotOutcome {
    let r = instance.len();
    let mut outcome = SlotOutcome { lle: vec![Vec::new(); r], all_lle: vec![false; r], served: vec![false; r] };
    let config = instance.config();
    for &id in &decision.scheduled {
        let request = instance.requests().get(id);
        let bits: Vec<bool> = request
            .users
            .iter()
            .map(|&u| rng.random::<f64>() < config.lle_prob[u - 1])
            .collect();
        let all = bits.iter().all(|&b| b);
        let i = id.index();
        outcome.all_lle[i] = all;
        if all {
            let q = config.swap_prob[&request.cardinality()];
            outcome.served[i] = rng.random::<f64>() < q;
        }
        outcome.lle[i] = bits;
    }
    outcome
}

/// Fast path: one Bernoulli(`q_λ v(i)`) per scheduled request, written into `served`.
pub fn sample_served<R: Rng + ?Sized>(instance: &Instance, decision: &Decision, rng: &mut R, served: &mut [bool]) {
    served.iter_mut().for_each(|s| *s = false);
    for &id in &decision.scheduled {
        served[id.index()] = rng.random::<f64>() < instance.profile(id).serve_success;
    }
}
