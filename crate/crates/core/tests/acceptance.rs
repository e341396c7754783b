//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits nonzero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use cmc_core::agent::{Branch, ControllerConfig, PlanningFrame};
use cmc_core::ftocp::{self, validate_candidate};
use cmc_core::geometry::{pairwise_constraint, NavigationMap};
use cmc_core::run::{run, RunOptions, RunReport};
use cmc_core::scenario::{gen_btn, gen_rtp, AdmissionSpec, Scenario};
use cmc_core::sim::Event;
use cmc_core::{
    contingency_plan, AgentInput, AgentState, ClarabelBackend, CostWeights, FtocpProblem, Measurement, ModelParams,
    SpaceDim, Vector, Workspace,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;
const SAMPLES: usize = 10_000;
const DIST_SLACK: f64 = 1e-4;
const EPS_NUM: f64 = 1e-6;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict { pass, detail: detail.into() }
    }
}

struct ClosedLoop {
    kind: &'static str,
    seed: u64,
    scenario: Scenario,
    report: RunReport,
    dir: tempfile::TempDir,
}

fn closed_loop_runs() -> Vec<ClosedLoop> {
    let mut out = Vec::new();
    for seed in 1..=SEEDS {
        for kind in ["rtp", "btn"] {
            let scenario = if kind == "rtp" { gen_rtp(seed) } else { gen_btn(seed) }.expect("generator");
            let dir = tempfile::tempdir().expect("tempdir");
            let report = run(&scenario, dir.path(), &RunOptions { threads: 1, no_plots: true, ..Default::default() })
                .expect("run passes the precheck");
            out.push(ClosedLoop { kind, seed, scenario, report, dir });
        }
    }
    out
}

// Smallest n with speed <= n * quantum, allowing 1e-7 m/s of round-off.
fn oracle_horizon(speed: f64, params: &ModelParams) -> usize {
    let q = params.a_max * params.dt;
    let mut n = 0;
    while speed > n as f64 * q + 1e-7 {
        n += 1;
    }
    n
}

fn integrate(p: &Vector, v: &Vector, a: &Vector, dt: f64) -> (Vector, Vector) {
    (p + v * dt + a * (0.5 * dt * dt), v + a * dt)
}

// Minimum pairwise distance recomputed from the logged positions.
fn min_distance_from_states(report: &RunReport) -> f64 {
    let mut by_tick: BTreeMap<u64, Vec<&Vector>> = BTreeMap::new();
    for r in &report.log.agents {
        by_tick.entry(r.tick).or_default().push(&r.state.p);
    }
    let mut min = f64::INFINITY;
    for ps in by_tick.values() {
        for (k, a) in ps.iter().enumerate() {
            for b in &ps[k + 1..] {
                min = min.min((*a - *b).norm());
            }
        }
    }
    min
}

fn criterion_1(runs: &[ClosedLoop]) -> Verdict {
    let limit = 2.0 - DIST_SLACK;
    let mut worst = (f64::INFINITY, "", 0);
    for r in runs {
        let d = min_distance_from_states(&r.report);
        let logged = r.report.summary.min_pair_distance.unwrap_or(f64::INFINITY);
        if d.min(logged) < worst.0 {
            worst = (d.min(logged), r.kind, r.seed);
        }
    }
    Verdict::new(
        worst.0 >= limit,
        format!("min pair distance {:.9} m ({} seed {}) over {} runs, limit {limit}", worst.0, worst.1, worst.2, runs.len()),
    )
}

fn criterion_2(runs: &[ClosedLoop]) -> Verdict {
    let mut hard = 0;
    let mut fallbacks = 0;
    let mut unresolved = 0;
    let mut counts: BTreeMap<Branch, usize> = BTreeMap::new();
    for r in runs {
        hard += r.report.log.hard_errors() + usize::from(r.report.error.is_some());
        if r.report.summary.ticks_completed != r.scenario.duration_ticks {
            unresolved += 1;
        }
        for rec in r.report.log.agents.iter().filter(|a| a.tick < r.scenario.duration_ticks) {
            match &rec.decision {
                Some(d) => {
                    *counts.entry(d.branch).or_default() += 1;
                    if d.branch == Branch::Fallback {
                        fallbacks += 1;
                    }
                }
                None => unresolved += 1,
            }
        }
    }
    let mix: Vec<String> = counts.iter().map(|(b, n)| format!("{b}={n}")).collect();
    Verdict::new(
        hard == 0 && fallbacks == 0 && unresolved == 0,
        format!("hard errors {hard}, fallbacks {fallbacks}, unresolved ticks {unresolved} ({})", mix.join(" ")),
    )
}

fn criterion_3(runs: &[ClosedLoop]) -> Verdict {
    let mut violations = 0;
    let mut transitions = 0;
    for r in runs {
        let params = &r.scenario.params;
        let mut series: BTreeMap<usize, Vec<(u64, usize)>> = BTreeMap::new();
        for rec in &r.report.log.agents {
            series.entry(rec.agent).or_default().push((rec.tick, oracle_horizon(rec.state.v.norm(), params)));
        }
        for s in series.values() {
            for w in s.windows(2) {
                transitions += 1;
                let ((_, a), (_, b)) = (w[0], w[1]);
                if a.abs_diff(b) > 1 || b > 5 {
                    violations += 1;
                }
            }
        }
        violations += r.report.summary.horizon_law_violations;
    }
    Verdict::new(violations == 0, format!("{violations} violations in {transitions} transitions"))
}

fn random_velocity(rng: &mut ChaCha8Rng, dim: usize, max: f64) -> Vector {
    let dir = loop {
        let v = Vector::from_iterator(dim, (0..dim).map(|_| rng.gen_range(-1.0..1.0)));
        if v.norm() > 1e-3 && v.norm() <= 1.0 {
            break v.normalize();
        }
    };
    dir * rng.gen_range(0.0..=max)
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = Vec::new();
    let mut worst = [0.0f64; 4];
    let mut check = |state: AgentState, params: &ModelParams, failures: &mut Vec<String>| {
        let plan = contingency_plan(&state, params).expect("admissible state");
        let speed = state.v.norm();
        let n = oracle_horizon(speed, params);
        if plan.horizon != n {
            failures.push(format!("horizon {} vs oracle {n} at speed {speed}", plan.horizon));
        }
        let decel = plan.accels.iter().map(|a| a.a.norm()).fold(0.0, f64::max);
        worst[0] = worst[0].max(decel - params.a_max);
        if decel > params.a_max + 1e-12 {
            failures.push(format!("deceleration {decel}"));
        }
        let (mut p, mut v) = (state.p.clone(), state.v.clone());
        for a in &plan.accels {
            (p, v) = integrate(&p, &v, &a.a, params.dt);
        }
        worst[1] = worst[1].max(v.norm());
        if v.norm() > 1e-9 {
            failures.push(format!("residual speed {} after {n} steps", v.norm()));
        }
        let expected = speed * n as f64 * params.dt / 2.0;
        let travelled = (&p - &state.p).norm();
        worst[2] = worst[2].max((travelled - expected).abs());
        if (travelled - expected).abs() > 1e-9 || (&plan.stop_position - &p).norm() > 1e-9 {
            failures.push(format!("stopping distance {travelled} vs {expected}"));
        }
        if speed > 0.0 {
            let u = &state.v / speed;
            for q in &plan.positions {
                let d = q - &state.p;
                let off_line = (&d - &u * d.dot(&u)).norm();
                worst[3] = worst[3].max(off_line);
                if off_line > 1e-9 || d.dot(&u) < -1e-9 {
                    failures.push(format!("position {off_line} off the braking line"));
                }
            }
        }
    };

    let p2 = ModelParams::reference();
    let p3 = ModelParams { dim: SpaceDim::new(3).unwrap(), ..p2 };
    for k in 0..SAMPLES {
        let params = if k % 4 == 3 { &p3 } else { &p2 };
        let d = params.dim.get();
        let p = Vector::from_iterator(d, (0..d).map(|_| rng.gen_range(-20.0..20.0)));
        let mut v = random_velocity(&mut rng, d, params.v_max);
        if k % 50 == 0 {
            // exact multiples of the speed quantum, including v_max
            let m = (k / 50) % 6;
            v = v.normalize() * (m as f64 * params.a_max * params.dt);
        }
        check(AgentState::new(p, v), params, &mut failures);
    }

    // analytic case: braking from 3 m/s takes 1.5 m
    let analytic = contingency_plan(&AgentState::from_slices(&[0.0, 0.0], &[3.0, 0.0]), &p2).unwrap();
    let analytic_ok = analytic.horizon == 5 && (analytic.stop_position[0] - 1.5).abs() <= 1e-9;
    if !analytic_ok {
        failures.push(format!("v=3 stops at {} after {} steps", analytic.stop_position[0], analytic.horizon));
    }

    Verdict::new(
        failures.is_empty(),
        format!(
            "{SAMPLES} states, {} failures; worst decel excess {:.1e}, residual speed {:.1e}, distance error {:.1e}, \
             collinearity {:.1e}; v=3 stops after {:.12} m",
            failures.len(),
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            analytic.stop_position[0]
        ) + &failures.first().map(|f| format!("; first: {f}")).unwrap_or_default(),
    )
}

fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rho = 1.0;
    let mut worst_gap = 0.0f64;
    let mut failures = 0;
    for k in 0..SAMPLES {
        let dim = if k % 3 == 2 { 3 } else { 2 };
        let p_m = Vector::from_iterator(dim, (0..dim).map(|_| rng.gen_range(-40.0..40.0)));
        let dir = random_velocity(&mut rng, dim, 1.0).normalize();
        let mut d = if k % 100 == 0 { 2.0 * rho } else { rng.gen_range(2.0 * rho..2.0 * rho + 30.0) };
        // the sum can round to a distance just below 2 rho; nudge it back into the population
        let p_j = loop {
            let p_j = &p_m + &dir * d;
            if (&p_j - &p_m).norm() >= 2.0 * rho {
                break p_j;
            }
            d += 1e-15;
        };
        let own = pairwise_constraint(0, &p_m, 1, &p_j, rho, 1).unwrap();
        let other = pairwise_constraint(1, &p_j, 0, &p_m, rho, 1).unwrap();
        // owner half-space n'x <= h_m, other -n'x <= h_j; the planes are h_m and -h_j along n
        let gap = -other.offset - own.offset;
        let parallel = (&own.normal + &other.normal).norm();
        worst_gap = worst_gap.max((gap - 2.0 * rho).abs());
        let ok = (gap - 2.0 * rho).abs() <= 1e-9
            && parallel <= 1e-12
            && own.slack(&p_m) >= -1e-9
            && other.slack(&p_j) >= -1e-9
            && !own.collision_imminent;
        if !ok {
            failures += 1;
        }
    }
    Verdict::new(failures == 0, format!("{SAMPLES} pairs, {failures} failures, worst gap error {worst_gap:.1e} m"))
}

struct ShiftStats {
    tried: usize,
    feasible: usize,
    failures: Vec<String>,
    worst_violation: f64,
    min_distance: f64,
}

fn criterion_6() -> Verdict {
    let params = ModelParams::reference();
    let ws = Workspace::rectangle(vec![-30.0, -30.0], vec![30.0, 30.0]).unwrap();
    let nav = NavigationMap::new(ws, params.rho).unwrap();
    let config = ControllerConfig::new(params, CostWeights::reference());
    let backend = ClarabelBackend::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut stats =
        ShiftStats { tried: 0, feasible: 0, failures: Vec::new(), worst_violation: 0.0, min_distance: f64::INFINITY };

    while stats.feasible < SAMPLES {
        stats.tried += 1;
        let p0 = Vector::from_iterator(2, (0..2).map(|_| rng.gen_range(-15.0..15.0)));
        let sep = random_velocity(&mut rng, 2, 1.0).normalize() * rng.gen_range(2.0..9.0);
        let states = [
            AgentState::new(p0.clone(), random_velocity(&mut rng, 2, params.v_max)),
            AgentState::new(&p0 + sep, random_velocity(&mut rng, 2, params.v_max)),
        ];
        let targets: Vec<Vector> =
            (0..2).map(|_| Vector::from_iterator(2, (0..2).map(|_| rng.gen_range(-25.0..25.0)))).collect();
        let Some(solutions) = solve_pair(&states, &targets, &nav, &config, &backend) else { continue };
        stats.feasible += 1;
        check_shift(&states, &solutions, &targets, &nav, &config, &mut stats);
    }
    Verdict::new(
        stats.failures.is_empty(),
        format!(
            "{} feasible instances ({} sampled), {} failures, worst violation {:.1e}, min shifted distance {:.6} m",
            stats.feasible,
            stats.tried,
            stats.failures.len(),
            stats.worst_violation,
            stats.min_distance
        ) + &stats.failures.first().map(|f| format!("; first: {f}")).unwrap_or_default(),
    )
}

fn measurements(states: &[AgentState]) -> Vec<Measurement> {
    states.iter().enumerate().map(|(id, s)| Measurement { id, state: s.clone() }).collect()
}

// Validated A or B solution for both agents, or None if the instance is not feasible.
fn solve_pair(
    states: &[AgentState; 2],
    targets: &[Vector],
    nav: &NavigationMap,
    config: &ControllerConfig,
    backend: &ClarabelBackend,
) -> Option<Vec<ftocp::FtocpSolution>> {
    let snapshot = measurements(states);
    let mut out = Vec::new();
    for id in 0..2 {
        let frame = PlanningFrame::build(id, &states[id], &snapshot, nav, &targets[id], config).ok()?;
        let validated = frame
            .branch_plan(&config.params)
            .into_iter()
            .filter(|(b, _, _)| matches!(b, Branch::A | Branch::B))
            .find_map(|(_, cand, bound)| {
                let sol = ftocp::solve(&frame.problem(config, cand, bound), backend).ok()?;
                validate_candidate(&sol, cand, &config.params).then_some(sol)
            })?;
        out.push(validated);
    }
    Some(out)
}

fn check_shift(
    states: &[AgentState; 2],
    solutions: &[ftocp::FtocpSolution],
    targets: &[Vector],
    nav: &NavigationMap,
    config: &ControllerConfig,
    stats: &mut ShiftStats,
) {
    let params = &config.params;
    let n = params.n_pred;
    let next: [AgentState; 2] = [0, 1].map(|m| {
        let (p, v) = integrate(&states[m].p, &states[m].v, &solutions[m].first_input().a, params.dt);
        AgentState::new(p, v)
    });

    // Shifted candidate: the remaining braking inputs, then rest.
    let shifted: Vec<Vec<AgentInput>> = solutions
        .iter()
        .map(|s| {
            let mut inputs = s.contingency_inputs.clone();
            inputs.push(AgentInput::zero(2));
            inputs
        })
        .collect();
    let paths: Vec<Vec<AgentState>> = (0..2)
        .map(|m| {
            let (mut p, mut v) = (next[m].p.clone(), next[m].v.clone());
            shifted[m]
                .iter()
                .map(|a| {
                    (p, v) = integrate(&p, &v, &a.a, params.dt);
                    AgentState::new(p.clone(), v.clone())
                })
                .collect()
        })
        .collect();

    let mut fail = |msg: String| stats.failures.push(msg);
    for i in 0..n {
        let d = (&paths[0][i].p - &paths[1][i].p).norm();
        stats.min_distance = stats.min_distance.min(d);
        if d < 2.0 * params.rho - EPS_NUM {
            fail(format!("shifted plans {d} apart at step {}", i + 1));
        }
    }

    let snapshot = measurements(&next);
    for m in 0..2 {
        let speed = next[m].v.norm();
        let n_next = oracle_horizon(speed, params);
        if n_next != solutions[m].candidate_horizon {
            fail(format!("realized horizon {n_next} vs candidate {}", solutions[m].candidate_horizon));
            continue;
        }
        for (a, s) in shifted[m].iter().zip(&paths[m]) {
            if a.a.norm() > params.a_max + EPS_NUM || s.v.norm() > params.v_max + EPS_NUM {
                fail(format!("shifted input {} or speed {} out of bounds", a.a.norm(), s.v.norm()));
            }
        }
        let Ok(frame) = PlanningFrame::build(m, &next[m], &snapshot, nav, &targets[m], config) else {
            fail("next-step frame could not be built".into());
            continue;
        };
        let problem: FtocpProblem = frame.terminal_problem(config);
        let expected = n_next.saturating_sub(1);
        if problem.candidate_horizon != expected {
            fail(format!("terminal candidate {} instead of {expected}", problem.candidate_horizon));
        }
        let assembled = problem.assemble().expect("assembles");
        let layout = assembled.layout;
        let mut x = vec![0.0; layout.num_vars()];
        for i in 0..n {
            for k in 0..2 {
                x[layout.input(i, k)] = shifted[m][i].a[k];
                x[layout.pos(i + 1, k)] = paths[m][i].p[k];
                x[layout.vel(i + 1, k)] = paths[m][i].v[k];
            }
        }
        let violation = assembled.program.max_violation(&x);
        stats.worst_violation = stats.worst_violation.max(violation);
        if violation > EPS_NUM {
            fail(format!("shifted candidate violates the next program by {violation:.2e}"));
        }
    }
}

fn criterion_7(runs: &[ClosedLoop]) -> Verdict {
    let mut accepted = 0;
    let mut worst: f64 = 0.0;
    for r in runs {
        for d in r.report.log.agents.iter().filter_map(|a| a.decision.as_ref()) {
            if let Some(kkt) = d.kkt_residual {
                accepted += 1;
                worst = worst.max(kkt);
            }
        }
    }

    let params = ModelParams::reference();
    let target = Vector::from_column_slice(&[1.0, -2.0]);
    let ws = Workspace::rectangle(vec![-10.0, -10.0], vec![10.0, 10.0]).unwrap();
    let nav = NavigationMap::new(ws, params.rho).unwrap();
    let config = ControllerConfig::new(params, CostWeights::reference());
    let state = AgentState::at_rest(target.clone());
    let frame = PlanningFrame::build(0, &state, &[], &nav, &target, &config).unwrap();
    let sol = ftocp::solve(&frame.terminal_problem(&config), &ClarabelBackend::default()).unwrap();
    let max_input = sol.nominal_inputs.iter().map(|a| a.a.amax()).fold(0.0, f64::max);
    let trivial_ok = sol.is_optimal() && sol.objective.abs() <= 1e-9 && max_input <= 1e-9;

    Verdict::new(
        worst < EPS_NUM && trivial_ok,
        format!(
            "{accepted} accepted solves, worst residual {worst:.2e}; trivial instance objective {:.1e}, max |input| {:.1e}",
            sol.objective, max_input
        ),
    )
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    matches!((std::fs::read(a), std::fs::read(b)), (Ok(x), Ok(y)) if x == y)
}

fn criterion_8(runs: &[ClosedLoop]) -> Verdict {
    let mut compared = Vec::new();
    let mut ok = true;
    for r in runs.iter().filter(|r| r.seed == 1) {
        let dir = tempfile::tempdir().unwrap();
        run(&r.scenario, dir.path(), &RunOptions { threads: 8, no_plots: true, ..Default::default() }).unwrap();
        for f in ["trajectories.csv", "distances.csv", "summary.json", "events.jsonl"] {
            let same = same_bytes(&r.dir.path().join(f), &dir.path().join(f));
            ok &= same;
            if !same {
                compared.push(format!("{} {f} differs", r.kind));
            }
        }
        compared.push(format!("{} seed {}", r.kind, r.seed));
    }
    Verdict::new(ok, format!("threads 1 vs 8, byte-identical: {}", compared.join(", ")))
}

fn criterion_9(runs: &[ClosedLoop]) -> Verdict {
    let mut worst = f64::NEG_INFINITY;
    let mut positions = 0;
    for r in runs.iter().filter(|r| r.kind == "btn") {
        let rho = r.scenario.params.rho;
        for rec in &r.report.log.agents {
            positions += 1;
            // distance outside the nearest inset cell (negative when inside)
            let outside = r
                .scenario
                .workspace
                .cells
                .iter()
                .map(|c| {
                    c.half_spaces
                        .iter()
                        .map(|h| h.normal.iter().zip(rec.state.p.iter()).map(|(n, x)| n * x).sum::<f64>() - (h.offset - rho))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(outside);
        }
    }
    Verdict::new(worst <= DIST_SLACK, format!("{positions} positions, worst excursion {worst:.2e} m (limit {DIST_SLACK})"))
}

fn criterion_10() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    for seed in 1..=3 {
        let base = gen_rtp(seed).unwrap();
        let tick = 60;

        // where everyone is at the admission tick
        let mut probe = base.clone();
        probe.duration_ticks = tick;
        let dir = tempfile::tempdir().unwrap();
        let pre = run(&probe, dir.path(), &RunOptions { threads: 1, no_plots: true, ..Default::default() }).unwrap();
        let now: Vec<&AgentState> =
            pre.log.agents.iter().filter(|r| r.tick == tick).map(|r| &r.state).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let clear = loop {
            let c = Vector::from_iterator(2, (0..2).map(|_| rng.gen_range(2.0..18.0)));
            if now.iter().all(|s| (&s.p - &c).norm() >= 6.0) {
                break c;
            }
        };
        let crowded = &now[0].p + Vector::from_column_slice(&[0.5, 0.0]);
        let mut scenario = base.clone();
        for position in [clear, crowded] {
            scenario.admissions.push(AdmissionSpec {
                tick,
                id: None,
                position: position.iter().copied().collect(),
                velocity: Vec::new(),
                target: vec![rng.gen_range(2.0..18.0), rng.gen_range(2.0..18.0)],
            });
        }

        let dir = tempfile::tempdir().unwrap();
        let report = run(&scenario, dir.path(), &RunOptions { threads: 1, no_plots: true, ..Default::default() }).unwrap();
        let decisions: Vec<bool> = report
            .log
            .events
            .iter()
            .filter_map(|e| match e {
                Event::Admission { accepted, .. } => Some(*accepted),
                _ => None,
            })
            .collect();
        let s = &report.summary;
        let min = min_distance_from_states(&report);
        let seed_ok = decisions == [true, false]
            && s.agents == 6
            && report.error.is_none()
            && s.fallback_count == 0
            && s.horizon_law_violations == 0
            && min >= 2.0 - DIST_SLACK
            && report.log.agent_series(5).count() as u64 == scenario.duration_ticks - tick + 1;
        ok &= seed_ok;
        notes.push(format!(
            "seed {seed}: admissions {decisions:?}, min {min:.6}, fallbacks {}, horizon violations {}",
            s.fallback_count, s.horizon_law_violations
        ));
    }
    Verdict::new(ok, notes.join("; "))
}

fn main() {
    let started = Instant::now();
    let mut verdicts: Vec<(u32, &str, Verdict)> = Vec::new();

    eprintln!("running {} closed-loop scenarios...", 2 * SEEDS);
    let runs = closed_loop_runs();
    let closed_loop_secs = started.elapsed().as_secs_f64();

    verdicts.push((1, "collision avoidance", criterion_1(&runs)));
    verdicts.push((2, "recursive feasibility", criterion_2(&runs)));
    verdicts.push((3, "horizon-change law", criterion_3(&runs)));
    verdicts.push((4, "contingency correctness", criterion_4()));
    verdicts.push((5, "separation geometry", criterion_5()));
    verdicts.push((6, "shift feasibility", criterion_6()));
    verdicts.push((7, "FTOCP optimality", criterion_7(&runs)));
    verdicts.push((8, "determinism", criterion_8(&runs)));
    verdicts.push((9, "workspace containment", criterion_9(&runs)));
    verdicts.push((10, "plug & play", criterion_10()));

    for (k, name, v) in &verdicts {
        println!("[{}] criterion {k:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    let failed = verdicts.iter().filter(|(_, _, v)| !v.pass).count();
    println!(
        "acceptance: {}/{} passed ({closed_loop_secs:.0} s closed-loop runs, {:.0} s total)",
        verdicts.len() - failed,
        verdicts.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
