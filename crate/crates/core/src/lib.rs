//! Whittle-index scheduling for a quantum switch with a limited number of
//! memory registers.
//!
//! Requests for multipartite entanglement among subsets of users compete
//! for the switch memory each slot. The crate provides:
//!
//! * [`model`]: network, requests, ages and the one-slot dynamics;
//! * [`index`]: the closed-form Whittle index and the rewards built on it;
//! * [`policy`]: KAWI (exact knapsack), the sequential SWIS/SWID/greedy
//!   scans and two baselines;
//! * [`oracle`]: single-request MDP analytics used to check the index;
//! * [`sim`]: the seeded, replicated slot simulator;
//! * [`experiment`]: scenario files, sweeps, tuning and the check battery.

pub mod experiment;
pub mod index;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod sim;

pub use index::{knapsack_reward, swid_index, swis_index, whittle, IndexParams};
pub use model::{
    generate_all_requests, validate, Decision, Instance, NetworkConfig, Request, RequestId, RequestSet,
    SlotOutcome, SwitchState,
};
pub use policy::{Policy, PolicyKind, ScanMode, Scheduler};
pub use sim::{run_one, run_replicated, RunConfig, RunSummary};
