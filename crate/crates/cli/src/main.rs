//! `cellfree` command-line front end.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | I/O or other runtime failure |
//! | 2 | usage error (unknown flag, missing or conflicting arguments) |
//! | 3 | configuration failed validation |
//! | 4 | some grid cells failed, the rest were written |
//! | 5 | numerical failure, or an oracle check did not pass |

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use cellfree_core::config::PRESET_NAMES;
use cellfree_core::experiment::{aggregate_cdf, run_experiment_with, CellOutcome};
use cellfree_core::oracle::run_analytic_suite;
use cellfree_core::output::{summarize, write_bundle};
use cellfree_core::{Config, Error, Mode, ResolvedConfig, ScenarioId};
use clap::{Args, Parser, Subcommand};

const EXIT_OTHER: u8 = 1;
const EXIT_VALIDATION: u8 = 3;
const EXIT_PARTIAL: u8 = 4;
const EXIT_NUMERICAL: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "cellfree", version, about = "Cell-free massive MIMO-OFDM hardware-impairment simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the scenario/mode grid and write the result bundle.
    Run(RunArgs),
    /// Check a configuration and print its derived constants.
    Validate(ConfigArgs),
    /// Print a built-in configuration as TOML.
    Preset {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
        name: String,
    },
    /// Run the analytic oracle suite.
    Oracle {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
    preset: Option<String>,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    drops: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// Restrict the grid to this scenario; repeatable.
    #[arg(long = "scenario", value_parser = parse_scenario)]
    scenarios: Vec<ScenarioId>,
    /// Restrict the grid to this precoding mode; repeatable.
    #[arg(long = "mode", value_parser = parse_mode)]
    modes: Vec<Mode>,
    /// Keep only the per-AP blocks of the distortion covariance.
    #[arg(long)]
    block_diag_distortion: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory.
    #[arg(long, env = "CELLFREE_OUT", default_value = "results")]
    out: PathBuf,
    /// Omit the timestamp line so output files are byte-reproducible.
    #[arg(long)]
    no_timestamp: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn parse_scenario(s: &str) -> Result<ScenarioId, String> {
    ScenarioId::parse(s).ok_or_else(|| {
        let names: Vec<_> = ScenarioId::ALL.iter().map(|s| s.as_str()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).ok_or_else(|| "expected `centralized` or `distributed`".into())
}

#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_validation() {
            EXIT_VALIDATION
        } else if e.is_numerical() {
            EXIT_NUMERICAL
        } else {
            EXIT_OTHER
        };
        Failure { code, error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: EXIT_OTHER, error }
    }
}

fn load_config(args: &ConfigArgs) -> Result<ResolvedConfig, Failure> {
    let mut cfg = match (&args.source.config, &args.source.preset) {
        (Some(path), _) => Config::load(path)?,
        (None, Some(name)) => Config::preset(name).expect("clap restricts preset names"),
        (None, None) => unreachable!("clap requires a config source"),
    };
    let sim = &mut cfg.simulation;
    if let Some(seed) = args.seed {
        sim.seed = seed;
    }
    if let Some(drops) = args.drops {
        sim.drops = drops;
    }
    if let Some(trials) = args.trials {
        sim.trials = trials;
    }
    if !args.scenarios.is_empty() {
        sim.scenarios = args.scenarios.clone();
    }
    if !args.modes.is_empty() {
        sim.modes = args.modes.clone();
    }
    if args.block_diag_distortion {
        sim.block_diag_distortion = true;
    }
    Ok(cfg.resolve()?)
}

fn validate(args: &ConfigArgs) -> Result<(), Failure> {
    let r = load_config(args)?;
    let s = &r.system;
    let d = s.dims;
    println!("configuration ok");
    println!(
        "  L={} K={} N={} M={} R={}",
        d.aps, d.ues, d.antennas, d.subcarriers, d.taps
    );
    println!("  bandwidth        {:.6e} Hz", s.bandwidth_hz);
    println!("  noise power      {:.4} dBm ({:.6e} W)", s.noise_power_dbm, s.noise_power_w);
    println!("  rzf lambda       {:.6e} W", s.rzf_lambda_w);
    let pn = &r.impairments.phase_noise[0];
    println!("  phase innovation {:.6e} rad^2", pn.innovation_variance);
    println!("  phase stationary {:.6e} rad^2", pn.stationary_variance());
    println!("  pa backoff       {:.6} (linear)", r.impairments.pa.backoff_linear);
    let sim = &r.config.simulation;
    println!(
        "  grid             {} scenario(s) x {} mode(s), {} drops, {} trials",
        sim.scenarios.len(),
        sim.modes.len(),
        sim.drops,
        sim.trials
    );
    Ok(())
}

fn log_cell(o: &CellOutcome) {
    match &o.result {
        Ok(cell) => match aggregate_cdf(cell) {
            Ok(cdf) => eprintln!(
                "{}: {} samples, median SE {:.4} bit/s/Hz",
                o.spec.label(),
                cdf.len(),
                cdf.median
            ),
            Err(e) => eprintln!("{}: {e}", o.spec.label()),
        },
        Err(e) => eprintln!("{}: FAILED: {e}", o.spec.label()),
    }
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let resolved = load_config(&args.config)?;
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let result = run_experiment_with(&resolved, log_cell);
    let timestamp = (!args.no_timestamp).then(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    let summary = summarize(&result, &resolved.config, timestamp);
    write_bundle(&args.out, &result, &summary)?;
    eprintln!("results written to {}", args.out.display());

    let failures: Vec<_> = result.failures().collect();
    if failures.is_empty() {
        return Ok(());
    }
    let all_failed = failures.len() == result.outcomes.len();
    let code = if all_failed && failures.iter().all(|(_, e)| e.is_numerical()) {
        EXIT_NUMERICAL
    } else if all_failed && failures.iter().all(|(_, e)| e.is_validation()) {
        EXIT_VALIDATION
    } else {
        EXIT_PARTIAL
    };
    Err(Failure {
        code,
        error: anyhow::anyhow!("{} of {} grid cells failed", failures.len(), result.outcomes.len()),
    })
}

fn oracle(seed: u64) -> Result<(), Failure> {
    let reference = Config::reference().resolve()?;
    let reports = run_analytic_suite(seed, &reference.impairments.phase_noise[0])?;
    let mut ok = true;
    for r in &reports {
        println!(
            "{} {:<22} measured={:.6e} expected={:.6e} tolerance={:.1e}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.measured,
            r.expected,
            r.tolerance
        );
        ok &= r.passed;
    }
    if ok {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NUMERICAL,
            error: anyhow::anyhow!("oracle suite failed"),
        })
    }
}

fn print_preset(name: &str) -> Result<(), Failure> {
    let cfg = Config::preset(name).expect("clap restricts preset names");
    print!("{}", cfg.to_toml_string());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run(args) => run(args),
        Command::Validate(args) => validate(args),
        Command::Preset { name } => print_preset(name),
        Command::Oracle { seed } => oracle(*seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
