use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ridepool_core::config::{Policy, SimConfig};
use ridepool_core::experiment::{self, ExperimentSpec};
use ridepool_core::sim::{self, Learners, RunMode, Scenario, SimOptions};

#[derive(Parser)]
#[command(name = "ridepool", version, about = "Ride-pooling pricing and matching simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one policy and write per-epoch metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Policy code, e.g. M&N-E or F&IR (defaults to the config's policy).
        #[arg(long)]
        policy: Option<Policy>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "train")]
        mode: RunMode,
        #[arg(long)]
        out: PathBuf,
        /// Override the config horizon (epochs).
        #[arg(long)]
        horizon: Option<u32>,
        /// Directory to load learner checkpoints from.
        #[arg(long)]
        load: Option<PathBuf>,
        /// Directory to write learner checkpoints to.
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Mean revenue per policy over seeds, relative to F&N-E.
    Compare {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Smallest fleet reaching a revenue target, per policy in the spec.
    FleetSearch {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        target: Option<f64>,
        /// Train once at the configured fleet size and reuse the learners.
        #[arg(long)]
        frozen: bool,
    },
    /// Kilometers per vehicle per hour from metrics CSVs.
    Distance {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        fleet: usize,
        #[arg(long, default_value_t = 60)]
        epoch_seconds: u64,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { config, policy, seed, mode, out, horizon, load, save } => {
            let mut c = SimConfig::from_file(&config).with_context(|| format!("loading config {}", config.display()))?;
            if let Some(p) = policy {
                c.policy = p;
            }
            if let Some(s) = seed {
                c.seed = s;
            }
            if let Some(h) = horizon {
                c.horizon = h;
            }
            let learners = match &load {
                Some(dir) => Some(Learners::load(dir).with_context(|| format!("loading checkpoints from {}", dir.display()))?),
                None if mode == RunMode::Eval => bail!("eval mode needs trained learners (--load <dir>)"),
                None => None,
            };
            let scenario = Scenario::from_config(&c)?;
            let result = sim::run(&c, &scenario, learners, mode, SimOptions::default())?;
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            sim::write_metrics_csv(BufWriter::new(file), &result.metrics)?;
            let revenue = experiment::total_revenue(&result.metrics);
            log::info!("{} seed {}: {} epochs, revenue {revenue:.2}", c.policy, c.seed, result.metrics.len());
            if let Some(dir) = &save {
                result.learners.save(dir).with_context(|| format!("saving checkpoints to {}", dir.display()))?;
            }
        }
        Command::Compare { spec } => {
            let s = ExperimentSpec::from_file(&spec).with_context(|| format!("loading spec {}", spec.display()))?;
            let rows = experiment::compare(&s)?;
            print!("{}", experiment::format_comparison(&rows));
        }
        Command::FleetSearch { spec, target, frozen } => {
            let s = ExperimentSpec::from_file(&spec).with_context(|| format!("loading spec {}", spec.display()))?;
            let Some(target) = target.or(s.target_revenue) else {
                bail!("no revenue target: pass --target or set target_revenue in the spec");
            };
            println!("{:<8} {:>6}", "policy", "fleet");
            for &p in &s.policies {
                let n = experiment::fleet_search(&s, p, target, frozen)?;
                println!("{:<8} {:>6}", p.code(), n);
            }
        }
        Command::Distance { inputs, fleet, epoch_seconds } => {
            let mut streams = Vec::with_capacity(inputs.len());
            for path in &inputs {
                let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                streams.push(sim::read_metrics_csv(f).with_context(|| format!("reading {}", path.display()))?);
            }
            let km = experiment::distance_report(&streams, fleet, epoch_seconds)?;
            println!("{km:.2}");
        }
    }
    Ok(())
}
