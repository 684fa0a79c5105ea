//! Time-slotted simulation: decide, sample, update ages, accumulate.
//!
//! Each replication owns a ChaCha8 stream seeded from the master seed and
//! switched to stream number `replication`, so results do not depend on
//! the order in which replications run.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{sample_served, sample_slot, Decision, Instance, RequestId, SwitchState};
use crate::policy::{Policy, PolicyKind, ScanMode, Scheduler};

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("slot {slot}: {reason}")]
    Inadmissible { slot: u64, reason: String },
    #[error("invalid run config: {0}")]
    Config(&'static str),
    #[error("invalid policy parameters: {0}")]
    Policy(#[from] crate::index::IndexError),
    #[error("writing trace: {0}")]
    Trace(#[from] std::io::Error),
}

/// Random stream for one replication.
pub fn replication_rng(master_seed: u64, replication: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replication);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub horizon: u64,
    pub replications: usize,
    pub master_seed: u64,
    pub policy: PolicyKind,
    #[serde(default)]
    pub scan: ScanMode,
    #[serde(default)]
    pub record_trace: bool,
}

impl RunConfig {
    pub fn new(policy: PolicyKind, horizon: u64, replications: usize, master_seed: u64) -> Self {
        RunConfig { horizon, replications, master_seed, policy, scan: ScanMode::Skip, record_trace: false }
    }

    fn check(&self) -> Result<(), SimError> {
        if self.horizon == 0 {
            return Err(SimError::Config("horizon must be at least 1"));
        }
        if self.replications == 0 {
            return Err(SimError::Config("replications must be at least 1"));
        }
        self.policy.validate()?;
        Ok(())
    }
}

/// One line of the per-slot trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u64,
    pub scheduled: Vec<RequestId>,
    pub served: Vec<RequestId>,
    /// Ages at the start of slot `t`.
    pub ages: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub replication: u64,
    pub per_request_mean_age: Vec<f64>,
    pub serve_rate: Vec<f64>,
    pub mean_aoee: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: PolicyKind,
    /// Average of `per_request_mean_age`.
    pub mean_aoee: f64,
    pub per_request_mean_age: Vec<f64>,
    /// Served slots per slot, per request.
    pub serve_rate: Vec<f64>,
    /// Normal-approximation 95% halfwidth across replications; 0 for one replication.
    pub ci95_halfwidth: f64,
    pub slots: u64,
    pub replications: usize,
}

/// Runs `scheduler` for `horizon` slots from all-ones ages.
///
/// A trace sink switches sampling to the detailed per-user path.
pub fn simulate<S: Scheduler, R: Rng>(
    instance: &Instance,
    scheduler: &mut S,
    horizon: u64,
    rng: &mut R,
    mut trace: Option<&mut dyn Write>,
) -> Result<(Vec<f64>, Vec<f64>), SimError> {
    let n = instance.len();
    let memory = instance.memory();
    let mut state = SwitchState::initial(n);
    let mut age_sums = vec![0u64; n];
    let mut serve_counts = vec![0u64; n];
    let mut served = vec![false; n];
    let mut marks = vec![false; n];
    for _ in 0..horizon {
        let decision = scheduler.decide(&state, instance, rng);
        check_decision(&decision, instance, memory, &mut marks, state.slot)?;
        for (sum, &age) in age_sums.iter_mut().zip(&state.ages) {
            *sum += age;
        }
        match trace.as_mut() {
            Some(sink) => {
                let outcome = sample_slot(instance, &decision, rng);
                let record = TraceRecord {
                    t: state.slot,
                    scheduled: decision.scheduled.clone(),
                    served: outcome.served_ids(),
                    ages: state.ages.clone(),
                };
                serde_json::to_writer(&mut *sink, &record).map_err(std::io::Error::from)?;
                sink.write_all(b"\n")?;
                served.copy_from_slice(&outcome.served);
            }
            None => sample_served(instance, &decision, rng, &mut served),
        }
        for (count, &hit) in serve_counts.iter_mut().zip(&served) {
            *count += hit as u64;
        }
        state.advance(&served);
    }
    let t = horizon as f64;
    Ok((
        age_sums.iter().map(|&s| s as f64 / t).collect(),
        serve_counts.iter().map(|&c| c as f64 / t).collect(),
    ))
}

fn check_decision(
    decision: &Decision,
    instance: &Instance,
    memory: usize,
    marks: &mut [bool],
    slot: u64,
) -> Result<(), SimError> {
    let fail = |reason: String| SimError::Inadmissible { slot, reason };
    let mut used = 0;
    let mut result = Ok(());
    for &id in &decision.scheduled {
        if id.0 == 0 || id.0 > instance.len() {
            result = Err(fail(format!("unknown request {id}")));
            break;
        }
        if std::mem::replace(&mut marks[id.index()], true) {
            result = Err(fail(format!("request {id} scheduled twice")));
            break;
        }
        used += instance.profile(id).cardinality;
    }
    for &id in &decision.scheduled {
        if id.0 >= 1 && id.0 <= instance.len() {
            marks[id.index()] = false;
        }
    }
    result?;
    if used > memory {
        return Err(fail(format!("decision uses {used} registers, memory is {memory}")));
    }
    Ok(())
}

/// One replication of `run_config`.
pub fn run_one(instance: &Instance, run_config: &RunConfig, replication: u64) -> Result<ReplicationSummary, SimError> {
    run_one_traced(instance, run_config, replication, None)
}

pub fn run_one_traced(
    instance: &Instance,
    run_config: &RunConfig,
    replication: u64,
    trace: Option<&mut dyn Write>,
) -> Result<ReplicationSummary, SimError> {
    run_config.check()?;
    let mut policy = Policy::with_scan(run_config.policy, run_config.scan);
    let mut rng = replication_rng(run_config.master_seed, replication);
    let (per_request_mean_age, serve_rate) = simulate(instance, &mut policy, run_config.horizon, &mut rng, trace)?;
    let mean_aoee = mean(&per_request_mean_age);
    Ok(ReplicationSummary { replication, per_request_mean_age, serve_rate, mean_aoee })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Aggregates replications in index order.
pub fn summarize(policy: PolicyKind, horizon: u64, reps: &[ReplicationSummary]) -> RunSummary {
    let n = reps.len();
    let r = reps[0].per_request_mean_age.len();
    let mut per_request_mean_age = vec![0.0; r];
    let mut serve_rate = vec![0.0; r];
    for rep in reps {
        for i in 0..r {
            per_request_mean_age[i] += rep.per_request_mean_age[i];
            serve_rate[i] += rep.serve_rate[i];
        }
    }
    per_request_mean_age.iter_mut().for_each(|x| *x /= n as f64);
    serve_rate.iter_mut().for_each(|x| *x /= n as f64);
    let ci95_halfwidth = if n < 2 {
        0.0
    } else {
        let m = reps.iter().map(|r| r.mean_aoee).sum::<f64>() / n as f64;
        let var = reps.iter().map(|r| (r.mean_aoee - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        1.96 * (var / n as f64).sqrt()
    };
    RunSummary {
        policy,
        mean_aoee: mean(&per_request_mean_age),
        per_request_mean_age,
        serve_rate,
        ci95_halfwidth,
        slots: horizon,
        replications: n,
    }
}

/// All replications, in parallel, aggregated deterministically.
pub fn run_replicated(instance: &Instance, run_config: &RunConfig) -> Result<RunSummary, SimError> {
    run_config.check()?;
    let reps = (0..run_config.replications as u64)
        .into_par_iter()
        .map(|k| run_one(instance, run_config, k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(run_config.policy, run_config.horizon, &reps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_all_requests, validate, NetworkConfig, RequestSet};

    fn five_user(memory: usize) -> Instance {
        validate(NetworkConfig::five_user(memory), generate_all_requests(5, 5).unwrap()).unwrap()
    }

    struct Overfull;

    impl Scheduler for Overfull {
        fn decide<R: Rng + ?Sized>(&mut self, _: &SwitchState, instance: &Instance, _: &mut R) -> Decision {
            Decision::from_ids((1..=instance.len()).map(RequestId).collect(), instance)
        }
    }

    #[test]
    fn one_slot_means_all_ones() {
        let inst = five_user(6);
        for policy in [PolicyKind::Kawi, PolicyKind::RandomAdmissible, PolicyKind::Swid { beta: 2.0 }] {
            let s = run_replicated(&inst, &RunConfig::new(policy, 1, 3, 9)).unwrap();
            assert_eq!(s.mean_aoee, 1.0);
            assert!(s.per_request_mean_age.iter().all(|&a| a == 1.0));
        }
    }

    #[test]
    fn single_replication_has_zero_ci() {
        let s = run_replicated(&five_user(6), &RunConfig::new(PolicyKind::Kawi, 500, 1, 1)).unwrap();
        assert_eq!(s.ci95_halfwidth, 0.0);
        assert_eq!(s.replications, 1);
    }

    #[test]
    fn same_seed_same_summary() {
        let inst = five_user(8);
        let cfg = RunConfig::new(PolicyKind::RandomAdmissible, 2_000, 4, 1234);
        let a = run_replicated(&inst, &cfg).unwrap();
        let b = run_replicated(&inst, &cfg).unwrap();
        assert_eq!(a, b);
        let serial: Vec<_> = (0..4).rev().map(|k| run_one(&inst, &cfg, k).unwrap()).rev().collect();
        assert_eq!(summarize(cfg.policy, cfg.horizon, &serial), a);
    }

    #[test]
    fn inadmissible_decision_is_fatal() {
        let inst = five_user(5);
        let mut rng = replication_rng(1, 0);
        let err = simulate(&inst, &mut Overfull, 10, &mut rng, None).unwrap_err();
        assert!(matches!(err, SimError::Inadmissible { slot: 1, .. }));
    }

    #[test]
    fn rejects_bad_run_config() {
        let inst = five_user(5);
        assert!(run_replicated(&inst, &RunConfig::new(PolicyKind::Kawi, 0, 1, 1)).is_err());
        assert!(run_replicated(&inst, &RunConfig::new(PolicyKind::Kawi, 10, 0, 1)).is_err());
        assert!(run_replicated(&inst, &RunConfig::new(PolicyKind::Swid { beta: 0.0 }, 10, 1, 1)).is_err());
    }

    #[test]
    fn serve_rate_bounded_by_success_probability() {
        let inst = five_user(7);
        for policy in [PolicyKind::Kawi, PolicyKind::GreedyWhittle, PolicyKind::MaxAgeKnapsack] {
            let s = run_replicated(&inst, &RunConfig::new(policy, 20_000, 2, 5)).unwrap();
            for (i, p) in inst.profiles().iter().enumerate() {
                let sigma = (p.serve_success * (1.0 - p.serve_success) / 40_000.0).sqrt();
                assert!(s.serve_rate[i] <= p.serve_success + 4.0 * sigma);
            }
            assert!(s.mean_aoee >= 1.0);
        }
    }

    #[test]
    fn trace_lines_describe_each_slot() {
        let config = NetworkConfig {
            lle_prob: vec![0.8, 0.9, 0.7],
            swap_prob: [(2, 0.9)].into_iter().collect(),
            memory: 2,
        };
        let inst = validate(config, RequestSet::from_groups([vec![1, 2], vec![2, 3]]).unwrap()).unwrap();
        let mut cfg = RunConfig::new(PolicyKind::Kawi, 50, 1, 3);
        cfg.record_trace = true;
        let mut buf = Vec::new();
        run_one_traced(&inst, &cfg, 0, Some(&mut buf)).unwrap();
        let lines: Vec<TraceRecord> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 50);
        assert_eq!(lines[0].t, 1);
        assert_eq!(lines[0].ages, vec![1, 1]);
        for pair in lines.windows(2) {
            for i in 0..2 {
                let id = RequestId::from_index(i);
                let served = pair[0].served.contains(&id);
                assert!(!served || pair[0].scheduled.contains(&id));
                let expect = if served { 1 } else { pair[0].ages[i] + 1 };
                assert_eq!(pair[1].ages[i], expect);
            }
        }
    }
}
