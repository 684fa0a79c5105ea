use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qswitch::experiment::{
    run_battery, simulate_scenario, sweep_memory, sweep_requests, tune, Axis, BatteryConfig, Grid, Hooks, Scenario,
    SweepResult, TuneTarget,
};
use qswitch::model::generate_all_requests;
use qswitch::sim::{run_one_traced, RunConfig};

#[derive(Parser)]
#[command(name = "qswitch", version, about = "Whittle-index scheduling experiments for a quantum switch")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scenario's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every policy of a scenario once and print one row per policy.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Write per-slot traces of replication 0 into this directory.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Sweep the memory size.
    SweepMemory {
        #[command(flatten)]
        common: Common,
        /// Inclusive memory range, e.g. 5..20.
        #[arg(long, value_parser = parse_range)]
        m_range: RangeInclusive<usize>,
        /// Gnuplot table path (default: the --out path with extension .dat).
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Sweep the maximum request cardinality.
    SweepRequests {
        #[command(flatten)]
        common: Common,
        /// Inclusive range of maximum cardinalities, e.g. 2..7.
        #[arg(long, value_parser = parse_range)]
        lmax_range: RangeInclusive<usize>,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Grid-search the SWIS or SWID parameter.
    Tune {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        which: Which,
        /// START:STEP:END (default 0:0.5:10 for swis, 1:0.5:10 for swid).
        #[arg(long, value_parser = Grid::parse)]
        grid: Option<Grid>,
    },
    /// Run the oracle and knapsack check battery; exits nonzero on failure.
    Verify {
        /// Write the report CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Smaller grids.
        #[arg(long)]
        quick: bool,
        /// Seed for the random knapsack instances.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print a generated request set, one request per line.
    GenRequests {
        #[arg(long)]
        users: usize,
        #[arg(long)]
        max_cardinality: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Swis,
    Swid,
}

fn parse_range(text: &str) -> Result<RangeInclusive<usize>, String> {
    let num = |s: &str| s.trim().parse::<usize>().map_err(|e| format!("{s:?}: {e}"));
    let (a, b) = match text.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.strip_prefix('=').unwrap_or(b))?),
        None => {
            let v = num(text)?;
            (v, v)
        }
    };
    if a > b {
        return Err(format!("range {text:?} is empty"));
    }
    Ok(a..=b)
}

fn load(common: &Common) -> Result<Scenario> {
    let mut scenario = Scenario::load(&common.scenario)?;
    if let Some(seed) = common.seed {
        scenario.run.master_seed = seed;
    }
    Ok(scenario)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn emit_sweep(result: &SweepResult, axis: Axis, out: Option<&Path>, plot: Option<PathBuf>) -> Result<()> {
    emit(out, &result.to_csv())?;
    if let Some(path) = plot.or_else(|| out.map(|o| o.with_extension("dat"))) {
        fs::write(&path, result.to_plot_table(axis)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn write_traces(scenario: &Scenario, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let instance = scenario.instance()?;
    for spec in scenario.policies.iter().filter(|s| s.tune.is_none()) {
        let mut rc = RunConfig::new(spec.kind, scenario.run.horizon, 1, scenario.run.master_seed);
        rc.scan = spec.scan;
        rc.record_trace = true;
        let name = spec.kind.to_string().replace(['(', ')', '='], "_");
        let path = dir.join(format!("{}-rep0.jsonl", name.trim_end_matches('_')));
        let mut file = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        run_one_traced(&instance, &rc, 0, Some(&mut file))?;
        file.flush()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { common, trace } => {
            let scenario = load(&common)?;
            let result = simulate_scenario(&scenario)?;
            emit(common.out.as_deref(), &result.to_csv())?;
            let trace_dir = trace.or_else(|| scenario.run.record_trace.then(|| PathBuf::from("traces")));
            if let Some(dir) = trace_dir {
                write_traces(&scenario, &dir)?;
            }
        }
        Command::SweepMemory { common, m_range, plot } => {
            let scenario = load(&common)?;
            let result = sweep_memory(&scenario, m_range)?;
            emit_sweep(&result, Axis::Memory, common.out.as_deref(), plot)?;
        }
        Command::SweepRequests { common, lmax_range, plot } => {
            let scenario = load(&common)?;
            let result = sweep_requests(&scenario, lmax_range)?;
            emit_sweep(&result, Axis::LambdaMax, common.out.as_deref(), plot)?;
        }
        Command::Tune { common, which, grid } => {
            let scenario = load(&common)?;
            let (target, name) = match which {
                Which::Swis => (TuneTarget::Swis, "gamma"),
                Which::Swid => (TuneTarget::Swid, "beta"),
            };
            let result = tune(&scenario, target, grid.unwrap_or(target.default_grid()))?;
            emit(common.out.as_deref(), &result.grid.to_csv())?;
            eprintln!("best {name} = {} (mean_aoee {:.6})", result.best, result.best_mean_aoee);
        }
        Command::Verify { out, quick, seed } => {
            let report = run_battery(&BatteryConfig { quick, seed }, &Hooks::default());
            emit(out.as_deref(), &report.to_csv())?;
            let failed = report.failures().count();
            eprintln!("{} checks, {failed} failed", report.rows.len());
            if failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::GenRequests { users, max_cardinality } => {
            if max_cardinality < 2 || max_cardinality > users {
                bail!("max cardinality {max_cardinality} is outside 2..={users}");
            }
            let set = generate_all_requests(users, max_cardinality)?;
            let mut text = String::new();
            for request in set.requests() {
                let users: Vec<String> = request.users.iter().map(|u| u.to_string()).collect();
                text.push_str(&format!("{} {}\n", request.id.0, users.join(" ")));
            }
            emit(None, &text)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        pool = pool.num_threads(jobs.max(1));
    }
    let result = match pool.build() {
        Ok(pool) => pool.install(|| run(cli)),
        Err(e) => Err(e.into()),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
