//! Runs a scenario end to end and writes the artifacts.
//!
//! Files in the output directory:
//!
//! | file | content |
//! |------|---------|
//! | `scenario.toml` | the scenario that was run |
//! | `trajectories.csv` | `tick,agent,x,y[,z],vx,vy[,vz],ax,ay[,az],branch,candidate_horizon,validated,status` |
//! | `distances.csv` | `tick,id_i,id_j,d` |
//! | `events.jsonl` | one JSON event per line |
//! | `summary.json` | run statistics (deterministic) |
//! | `timing.json` | wall-clock timings (not deterministic) |
//! | `*.svg` | plots |
//!
//! Everything except `timing.json` is byte-identical across reruns of the
//! same scenario, whatever the thread count.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::Branch;
use crate::dynamics::Vector;
use crate::error::{Error, Result};
use crate::geometry::AgentId;
use crate::plot;
use crate::scenario::Scenario;
use crate::sim::{Event, SimLog, Simulator};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub threads: usize,
    pub dump_programs: bool,
    /// Skip the SVG plots.
    pub no_plots: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub scenario: PathBuf,
    pub trajectories: PathBuf,
    pub distances: PathBuf,
    pub events: PathBuf,
    pub summary: PathBuf,
    pub timing: PathBuf,
    pub plots: Vec<PathBuf>,
}

impl RunArtifacts {
    pub fn in_dir(dir: &Path) -> Self {
        RunArtifacts {
            dir: dir.to_path_buf(),
            scenario: dir.join("scenario.toml"),
            trajectories: dir.join("trajectories.csv"),
            distances: dir.join("distances.csv"),
            events: dir.join("events.jsonl"),
            summary: dir.join("summary.json"),
            timing: dir.join("timing.json"),
            plots: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosestPair {
    pub tick: u64,
    pub i: AgentId,
    pub j: AgentId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadlockEntry {
    pub agent: AgentId,
    pub tick: u64,
    pub since: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub duration_ticks: u64,
    pub ticks_completed: u64,
    pub agents: usize,
    pub min_pair_distance: Option<f64>,
    pub closest_pair: Option<ClosestPair>,
    pub branch_counts: BTreeMap<String, usize>,
    pub fallback_count: usize,
    pub hard_error: Option<String>,
    pub safety_violations: usize,
    pub horizon_law_violations: usize,
    pub max_workspace_violation: f64,
    pub max_kkt_residual: f64,
    pub deadlock_suspects: Vec<DeadlockEntry>,
    pub admissions_accepted: usize,
    pub admissions_rejected: usize,
    /// Distance to the last active target at the end of the run, per agent.
    pub final_tracking_errors: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub mean_tick_seconds: f64,
    pub max_tick_seconds: f64,
    pub mean_solve_seconds: f64,
    pub solves: usize,
    pub threads: usize,
}

/// Outcome of a run that got past the precheck. `error` holds the hard
/// controller error that stopped it early, if any.
#[derive(Debug)]
pub struct RunReport {
    pub artifacts: RunArtifacts,
    pub summary: Summary,
    pub log: SimLog,
    pub error: Option<Error>,
}

fn io_err(path: &Path, e: impl ToString) -> Error {
    Error::Artifact { path: path.to_path_buf(), reason: e.to_string() }
}

/// Executes `scenario` and writes all artifacts into `out_dir`.
pub fn run(scenario: &Scenario, out_dir: &Path, options: &RunOptions) -> Result<RunReport> {
    scenario.precheck()?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let started = std::time::Instant::now();
    let (sim, error) = simulate(scenario, out_dir, options)?;
    let total = started.elapsed().as_secs_f64();
    let mut artifacts = RunArtifacts::in_dir(out_dir);
    let summary = summarize(scenario, &sim, error.as_ref());
    scenario.save(&artifacts.scenario)?;
    write_trajectories(&artifacts.trajectories, &sim.log, scenario.params.dim.get())?;
    write_distances(&artifacts.distances, &sim.log)?;
    write_events(&artifacts.events, &sim.log.events)?;
    write_json(&artifacts.summary, &summary)?;
    write_json(&artifacts.timing, &timing(&sim.log, total, options.threads.max(1)))?;
    if !options.no_plots {
        artifacts.plots = plot::plot_run(out_dir)?;
    }
    Ok(RunReport { artifacts, summary, log: sim.log, error })
}

/// Runs the closed loop without writing the main artifacts.
pub fn simulate(scenario: &Scenario, out_dir: &Path, options: &RunOptions) -> Result<(Simulator, Option<Error>)> {
    scenario.precheck()?;
    let mut config = scenario.controller_config();
    if options.dump_programs {
        let dir = out_dir.join("programs");
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        config.dump_dir = Some(dir);
    }
    let mut sim = Simulator::new(scenario.initial_agents(), scenario.navigation()?, config, options.threads)?;
    let ids: Vec<AgentId> = scenario.agents.iter().map(|a| a.id).collect();
    let mut error = None;
    for tick in 0..scenario.duration_ticks {
        if let Some(set) = scenario.targets.iter().find(|t| t.tick == tick && tick > 0) {
            for (id, p) in ids.iter().zip(&set.positions) {
                if sim.world().agents.contains_key(id) {
                    sim.set_target(*id, Vector::from_column_slice(p))?;
                }
            }
            sim.mark_targets_changed();
        }
        for d in scenario.departures.iter().filter(|d| d.tick == tick) {
            sim.remove_agent(d.agent)?;
        }
        for a in scenario.admissions.iter().filter(|a| a.tick == tick) {
            sim.admit_agent(a.id, a.state(), Vector::from_column_slice(&a.target))?;
        }
        if let Err(e) = sim.tick() {
            error = Some(e);
            break;
        }
    }
    sim.finish(&scenario.deadlock);
    Ok((sim, error))
}

pub fn summarize(scenario: &Scenario, sim: &Simulator, error: Option<&Error>) -> Summary {
    let log = &sim.log;
    let params = sim.params();
    let closest = log.pairs.iter().min_by(|a, b| a.d.total_cmp(&b.d));
    let nav = sim.nav();
    let max_workspace_violation = log
        .agents
        .iter()
        .map(|r| {
            let best = nav.workspace().inset_margins(&r.state.p, params.rho).into_iter().fold(f64::NEG_INFINITY, f64::max);
            (-best).max(0.0)
        })
        .fold(0.0, f64::max);
    let max_kkt_residual = log
        .agents
        .iter()
        .filter_map(|r| r.decision.as_ref().and_then(|d| d.kkt_residual))
        .fold(0.0, f64::max);
    let mut final_tracking_errors = BTreeMap::new();
    for id in log.agent_ids() {
        if let Some(last) = log.agent_series(id).last() {
            final_tracking_errors.insert(id.to_string(), (&last.state.p - &last.target).norm());
        }
    }
    let count = |f: fn(&Event) -> bool| log.events.iter().filter(|e| f(e)).count();
    Summary {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        duration_ticks: scenario.duration_ticks,
        ticks_completed: sim.world().tick,
        agents: log.agent_ids().len(),
        min_pair_distance: closest.map(|p| p.d),
        closest_pair: closest.map(|p| ClosestPair { tick: p.tick, i: p.i, j: p.j }),
        branch_counts: log.branch_counts().into_iter().map(|(b, n)| (b.to_string(), n)).collect(),
        fallback_count: log.fallback_count(),
        hard_error: error.map(|e| e.to_string()),
        safety_violations: count(|e| matches!(e, Event::SafetyViolation { .. })),
        horizon_law_violations: log.horizon_law_violations(params).len(),
        max_workspace_violation,
        max_kkt_residual,
        deadlock_suspects: log
            .events
            .iter()
            .filter_map(|e| match e {
                Event::DeadlockSuspect { tick, agent, since } => {
                    Some(DeadlockEntry { agent: *agent, tick: *tick, since: *since })
                }
                _ => None,
            })
            .collect(),
        admissions_accepted: count(|e| matches!(e, Event::Admission { accepted: true, .. })),
        admissions_rejected: count(|e| matches!(e, Event::Admission { accepted: false, .. })),
        final_tracking_errors,
    }
}

fn timing(log: &SimLog, total: f64, threads: usize) -> Timing {
    let solve_times: Vec<f64> = log
        .agents
        .iter()
        .filter_map(|r| r.decision.as_ref())
        .flat_map(|d| d.attempts.iter().map(|a| a.solve_time))
        .collect();
    let n = log.tick_times.len().max(1) as f64;
    Timing {
        total_seconds: total,
        mean_tick_seconds: log.tick_times.iter().sum::<f64>() / n,
        max_tick_seconds: log.tick_times.iter().copied().fold(0.0, f64::max),
        mean_solve_seconds: solve_times.iter().sum::<f64>() / solve_times.len().max(1) as f64,
        solves: solve_times.len(),
        threads,
    }
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

const AXES: [&str; 3] = ["x", "y", "z"];

pub fn trajectory_header(dim: usize) -> Vec<String> {
    let mut cols = vec!["tick".to_string(), "agent".to_string()];
    cols.extend(AXES[..dim].iter().map(|a| a.to_string()));
    cols.extend(AXES[..dim].iter().map(|a| format!("v{a}")));
    cols.extend(AXES[..dim].iter().map(|a| format!("a{a}")));
    cols.extend(["branch", "candidate_horizon", "validated", "status"].map(String::from));
    cols
}

fn write_trajectories(path: &Path, log: &SimLog, dim: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(trajectory_header(dim))?;
    for r in &log.agents {
        let mut row = vec![r.tick.to_string(), r.agent.to_string()];
        row.extend(r.state.p.iter().map(|&x| fmt_f64(x)));
        row.extend(r.state.v.iter().map(|&x| fmt_f64(x)));
        match &r.decision {
            Some(d) => {
                row.extend(d.input.a.iter().map(|&x| fmt_f64(x)));
                row.push(d.branch.to_string());
                row.push(d.candidate_horizon.to_string());
                row.push(d.validated.to_string());
                row.push(d.status.as_str().to_string());
            }
            None => row.extend(std::iter::repeat_n(String::new(), dim + 4)),
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

fn write_distances(path: &Path, log: &SimLog) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["tick", "id_i", "id_j", "d"])?;
    for p in &log.pairs {
        w.write_record([p.tick.to_string(), p.i.to_string(), p.j.to_string(), fmt_f64(p.d)])?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

fn write_events(path: &Path, events: &[Event]) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// One row of `trajectories.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub tick: u64,
    pub agent: AgentId,
    pub p: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Option<Vec<f64>>,
    pub branch: Option<Branch>,
}

pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let dim = headers.iter().filter(|h| AXES.contains(h)).count();
    if dim == 0 || headers.len() != 2 + 3 * dim + 4 {
        return Err(io_err(path, "unexpected trajectory columns"));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> { rec[k].parse().map_err(|e| io_err(path, e)) };
        let vec_at = |start: usize| -> Result<Vec<f64>> { (start..start + dim).map(num).collect() };
        let a = if rec[2 + 2 * dim].is_empty() { None } else { Some(vec_at(2 + 2 * dim)?) };
        let branch = match &rec[2 + 3 * dim] {
            "" => None,
            "A" => Some(Branch::A),
            "B" => Some(Branch::B),
            "C" => Some(Branch::C),
            "FALLBACK" => Some(Branch::Fallback),
            other => return Err(io_err(path, format!("unknown branch {other}"))),
        };
        out.push(TrajectoryRow {
            tick: rec[0].parse().map_err(|e| io_err(path, e))?,
            agent: rec[1].parse().map_err(|e| io_err(path, e))?,
            p: vec_at(2)?,
            v: vec_at(2 + dim)?,
            a,
            branch,
        });
    }
    Ok(out)
}

pub fn read_distances(path: &Path) -> Result<Vec<crate::sim::PairRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse_err = |e: std::num::ParseIntError| io_err(path, e);
        out.push(crate::sim::PairRecord {
            tick: rec[0].parse().map_err(parse_err)?,
            i: rec[1].parse().map_err(parse_err)?,
            j: rec[2].parse().map_err(parse_err)?,
            d: rec[3].parse().map_err(|e: std::num::ParseFloatError| io_err(path, e))?,
        });
    }
    Ok(out)
}
