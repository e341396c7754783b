use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use cmc_core::run::{run, RunOptions};
use cmc_core::scenario::{gen_btn, gen_rtp, Scenario};
use cmc_core::Error;

const EXIT_PRECHECK: u8 = 2;
const EXIT_HARD_ERROR: u8 = 3;

#[derive(Parser)]
#[command(name = "cmc", version, about = "Contingency model-based control for agent swarms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trajectories, distances, events, summary and plots.
    Run {
        /// Scenario file, or `rtp` / `btn` to generate one from --seed.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed. Only affects generated scenarios.
        #[arg(long)]
        seed: Option<u64>,
        /// Planning threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Write every conic program in CBF format under OUT/programs.
        #[arg(long)]
        dump_programs: bool,
        #[arg(long)]
        no_plots: bool,
    },
    /// Generate a randomized-target-points scenario.
    GenRtp {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a bottleneck scenario.
    GenBtn {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Feasibility pre-check only.
    Check {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Re-draw the plots of a finished run.
    Plot {
        #[arg(long)]
        run: PathBuf,
    },
}

fn load_scenario(spec: &str, seed: Option<u64>) -> anyhow::Result<Scenario> {
    Ok(match spec {
        "rtp" => gen_rtp(seed.unwrap_or(0))?,
        "btn" => gen_btn(seed.unwrap_or(0))?,
        path => {
            let mut s = Scenario::load(Path::new(path)).with_context(|| format!("loading {path}"))?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            s
        }
    })
}

fn is_precheck(e: &anyhow::Error) -> bool {
    matches!(e.downcast_ref::<Error>(), Some(Error::Precheck(_) | Error::OutOfWorkspace { .. }))
}

fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { scenario, out, seed, threads, dump_programs, no_plots } => {
            let scenario = load_scenario(&scenario, seed)?;
            let options = RunOptions { threads, dump_programs, no_plots };
            let report = run(&scenario, &out, &options)?;
            let s = &report.summary;
            println!(
                "{} seed {}: {} ticks, min distance {}, branches {:?}, fallbacks {}, deadlock suspects {}",
                s.scenario,
                s.seed,
                s.ticks_completed,
                s.min_pair_distance.map_or("n/a".into(), |d| format!("{d:.6}")),
                s.branch_counts,
                s.fallback_count,
                s.deadlock_suspects.len()
            );
            println!("artifacts in {}", out.display());
            if let Some(e) = report.error {
                eprintln!("error: {e}");
                return Ok(ExitCode::from(EXIT_HARD_ERROR));
            }
        }
        Command::GenRtp { seed, out } => {
            gen_rtp(seed)?.save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::GenBtn { seed, out } => {
            gen_btn(seed)?.save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Check { scenario } => {
            Scenario::load(&scenario)?.precheck()?;
            println!("{}: ok", scenario.display());
        }
        Command::Plot { run } => {
            for p in cmc_core::plot::plot_run(&run)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_precheck(&e) {
                ExitCode::from(EXIT_PRECHECK)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
