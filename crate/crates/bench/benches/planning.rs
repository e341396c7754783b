use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

use cmc_core::agent::{ControllerConfig, PlanningFrame};
use cmc_core::geometry::NavigationMap;
use cmc_core::scenario::gen_rtp;
use cmc_core::sim::Simulator;
use cmc_core::{ftocp, AgentState, ClarabelBackend, CostWeights, Measurement, ModelParams, Vector, Workspace};

fn crossing_frame() -> (PlanningFrame, ControllerConfig) {
    let params = ModelParams::reference();
    let config = ControllerConfig::new(params, CostWeights::reference());
    let nav = NavigationMap::new(Workspace::rectangle(vec![0.0, 0.0], vec![20.0, 20.0]).unwrap(), params.rho).unwrap();
    let me = AgentState::from_slices(&[5.0, 10.0], &[2.4, 0.0]);
    let others = [
        Measurement { id: 1, state: AgentState::from_slices(&[12.0, 10.5], &[-2.4, 0.0]) },
        Measurement { id: 2, state: AgentState::from_slices(&[9.0, 4.0], &[0.0, 2.0]) },
        Measurement { id: 3, state: AgentState::from_slices(&[9.0, 16.0], &[0.0, -1.0]) },
        Measurement { id: 4, state: AgentState::at_rest(Vector::from_column_slice(&[3.0, 3.0])) },
    ];
    let target = Vector::from_column_slice(&[17.0, 10.0]);
    let frame = PlanningFrame::build(0, &me, &others, &nav, &target, &config).unwrap();
    (frame, config)
}

fn ftocp_solve(c: &mut Criterion) {
    let (frame, config) = crossing_frame();
    let backend = ClarabelBackend::default();
    let (_, cand, bound) = frame.branch_plan(&config.params)[1];
    let problem = frame.problem(&config, cand, bound);
    c.bench_function("ftocp_assemble", |b| b.iter(|| black_box(problem.assemble().unwrap())));
    c.bench_function("ftocp_solve_4_neighbors", |b| b.iter(|| black_box(ftocp::solve(&problem, &backend).unwrap())));
}

fn swarm_tick(c: &mut Criterion) {
    let scenario = gen_rtp(1).unwrap();
    let make = || {
        Simulator::new(scenario.initial_agents(), scenario.navigation().unwrap(), scenario.controller_config(), 1)
            .unwrap()
    };
    c.bench_function("rtp_tick_5_agents", |b| {
        b.iter_batched(make, |mut sim| sim.tick().unwrap(), BatchSize::SmallInput)
    });
}

criterion_group!(benches, ftocp_solve, swarm_tick);
criterion_main!(benches);
