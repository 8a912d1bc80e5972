use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value as Json;

use forkscale::controller::{CountModel, ControlSpec, DEFAULT_CLAMP_FACTOR};
use forkscale::harness::{
    self, emit, emit_gnuplot, gating_comparison, run_sweep, validate_poisson, Destination, Format,
    GatingComparisonSpec, SweepSpec,
};
use forkscale::{
    collision_probability, collision_probability_approx, run_controlled, run_trials, stability_threshold,
    GatingRule, SystemConfig, DEFAULT_SEED,
};

const SEED_ENV: &str = "FORKSCALE_SEED";

#[derive(Parser)]
#[command(
    name = "forkscale",
    version,
    about = "Density-delay fork stability: closed forms, simulators and experiment sweeps",
    after_help = "Seeds: --seed wins, then a master_seed in the config file, then the \
                  FORKSCALE_SEED environment variable, then the built-in default (42).\n\
                  Exit codes: 0 success, 1 validation error, 2 I/O error."
)]
struct Cli {
    /// Worker threads for parallel trials (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Density-delay product at which the collision probability equals q.
    Threshold {
        #[arg(long, default_value_t = 0.5)]
        q: f64,
    },
    /// Collision probability for intensity lambda and delay delta.
    Pcoll {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        delta: f64,
        /// Use the rare-event approximation (lambda*delta)^2/2, which overestimates.
        #[arg(long)]
        approx: bool,
    },
    /// Run the birth-death fork simulation for one configuration.
    Simulate(SimulateArgs),
    /// Run an n x delta grid sweep.
    Sweep(SweepArgs),
    /// Compare constant and inverse gating across node counts at fixed delay.
    CompareGating(CompareArgs),
    /// Check simulated Poisson window collisions against the closed form.
    ValidatePoisson(ValidateArgs),
    /// Run the difficulty-adjustment controller over a participation schedule.
    Controlled(ControlledArgs),
}

#[derive(Args)]
struct Output {
    /// Output file; standard output when omitted or `-`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: Format,
}

impl Output {
    fn destination(&self) -> Destination {
        self.out.clone().into()
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON file mirroring the system configuration fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    /// `constant:<g0>` or `inverse:<c>`.
    #[arg(long)]
    gating: Option<GatingRule>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON file mirroring the sweep fields; defaults reproduce the full protocol grid.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    delta: Option<Vec<f64>>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    gating: Option<GatingRule>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write a two-column `x mean_depth` file for gnuplot.
    #[arg(long)]
    gnuplot: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<u64>>,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long, default_value_t = 0.05)]
    g0: f64,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 0.5)]
    q: f64,
    #[arg(long, default_value_t = 6000)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1.0,1.678")]
    x: Vec<f64>,
    /// Unit-length windows simulated per grid point.
    #[arg(long, default_value_t = 1_000_000)]
    windows: u64,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct ControlledArgs {
    /// JSON array of `{"window": w, "n": n}` objects or `[w, n]` pairs.
    #[arg(long)]
    schedule: PathBuf,
    /// Target aggregate event rate.
    #[arg(long)]
    target: f64,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long, default_value_t = 0.5)]
    q: f64,
    #[arg(long, default_value_t = 200)]
    windows: usize,
    /// Length of one adjustment window in time units.
    #[arg(long, default_value_t = 2016.0)]
    window_span: f64,
    #[arg(long, default_value_t = DEFAULT_CLAMP_FACTOR)]
    clamp: f64,
    /// Starting per-node rate; defaults to the target rate.
    #[arg(long)]
    initial_gate: Option<f64>,
    #[arg(long, default_value_t = 100)]
    epochs_per_window: usize,
    /// Use expected event counts instead of Poisson draws.
    #[arg(long)]
    expected_counts: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: Output,
}

fn env_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().with_context(|| format!("{SEED_ENV}={v} is not a u64")),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

/// Reads a JSON config object, filling a missing `master_seed` from the environment.
fn load_config<T: serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<T> {
    let mut value = match path {
        Some(p) => harness::load_json::<Json>(p)?,
        None => Json::Object(Default::default()),
    };
    let Json::Object(map) = &mut value else {
        bail!(forkscale::Error::Config("config file must hold a JSON object".into()));
    };
    if !map.contains_key("master_seed") {
        map.insert("master_seed".into(), Json::from(env_seed()?));
    }
    serde_json::from_value(value).map_err(|e| forkscale::Error::Config(e.to_string()).into())
}

fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    flag.map_or_else(env_seed, Ok)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("failed to configure worker threads")?;
    }
    match cli.command {
        Command::Threshold { q } => println!("{}", stability_threshold(q)?),
        Command::Pcoll { lambda, delta, approx } => {
            let p = if approx {
                collision_probability_approx(lambda, delta)?
            } else {
                collision_probability(lambda, delta)?
            };
            println!("{p}");
        }
        Command::Simulate(a) => {
            let mut cfg: SystemConfig = load_config(a.config.as_deref())?;
            cfg.n = a.n.unwrap_or(cfg.n);
            cfg.delta = a.delta.unwrap_or(cfg.delta);
            cfg.q = a.q.unwrap_or(cfg.q);
            cfg.gating = a.gating.unwrap_or(cfg.gating);
            cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
            cfg.trials = a.trials.unwrap_or(cfg.trials);
            cfg.master_seed = a.seed.unwrap_or(cfg.master_seed);
            let summary = run_trials(&cfg)?;
            emit(&[summary], a.output.format, &a.output.destination())?;
        }
        Command::Sweep(a) => {
            let mut spec: SweepSpec = load_config(a.config.as_deref())?;
            spec.n_values = a.n.unwrap_or(spec.n_values);
            spec.delta_values = a.delta.unwrap_or(spec.delta_values);
            spec.q = a.q.unwrap_or(spec.q);
            spec.gating = a.gating.unwrap_or(spec.gating);
            spec.epochs = a.epochs.unwrap_or(spec.epochs);
            spec.trials = a.trials.unwrap_or(spec.trials);
            spec.master_seed = a.seed.unwrap_or(spec.master_seed);
            let rows = run_sweep(&spec)?;
            emit(&rows, a.output.format, &a.output.destination())?;
            if let Some(path) = a.gnuplot {
                emit_gnuplot(&rows, &Destination::File(path))?;
            }
        }
        Command::CompareGating(a) => {
            let spec = GatingComparisonSpec {
                n_values: a.n.unwrap_or_else(|| GatingComparisonSpec::default().n_values),
                delta: a.delta,
                g0: a.g0,
                c: a.c,
                q: a.q,
                epochs: a.epochs,
                trials: a.trials,
                master_seed: resolve_seed(a.seed)?,
            };
            let pairs = gating_comparison(&spec)?;
            let rows: Vec<_> = pairs.iter().flat_map(|p| p.rows()).collect();
            emit(&rows, a.output.format, &a.output.destination())?;
        }
        Command::ValidatePoisson(a) => {
            let report = validate_poisson(&a.x, a.windows, resolve_seed(a.seed)?)?;
            emit(&report.rows, a.output.format, &a.output.destination())?;
            if !report.pass {
                bail!(forkscale::Error::Domain("empirical collision fraction outside 4 standard errors".into()));
            }
        }
        Command::Controlled(a) => {
            let spec = ControlSpec {
                n_schedule: harness::load_schedule(&a.schedule)?,
                delta: a.delta,
                target_rate: a.target,
                q: a.q,
                windows: a.windows,
                window_span: a.window_span,
                clamp_factor: a.clamp,
                initial_gate: a.initial_gate,
                epochs_per_window: a.epochs_per_window,
                count_model: if a.expected_counts { CountModel::Expected } else { CountModel::Poisson },
                seed: resolve_seed(a.seed)?,
            };
            let run = run_controlled(&spec)?;
            emit(&run.window_rows(), a.output.format, &a.output.destination())?;
            let s = &run.fork_summary;
            eprintln!(
                "fork depth: mean {:.6} (se {:.6}), final {}, diverged {}",
                s.mean_depth, s.std_err, s.final_depth_mean, s.diverged
            );
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<forkscale::Error>() {
        Some(e) if !e.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
