//! Scenario files, sweeps, tuning and the verification battery.

pub mod scenario;
pub mod sweep;
pub mod verify;

pub use scenario::{Grid, PolicySpec, RequestSource, RunSettings, Scenario, ScenarioError};
pub use sweep::{
    simulate_scenario, sweep_memory, sweep_requests, tune, Axis, ExperimentError, SweepResult, SweepRow, TuneResult,
    TuneTarget, CSV_HEADER,
};
pub use verify::{run_battery, BatteryConfig, Hooks, Report};
