//! Per-agent decision procedure: try the candidate contingency horizons in
//! order, validate, and fall back to the stored braking maneuver.

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::conic::{ConicBackend, SolveStatus};
use crate::contingency::{contingency_horizon, contingency_plan, ContingencyPlan};
use crate::dynamics::{step_unchecked, AgentInput, AgentState, ModelParams, Vector, NUMERIC_TOLERANCE};
use crate::error::{Error, Result};
use crate::ftocp::{self, BoundShape, CostWeights, FtocpProblem, FtocpSolution};
use crate::geometry::{build_pair_constraints, sensor_range_filter, AgentId, HalfSpaceConstraint, NavigationMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Branch {
    A,
    B,
    C,
    #[serde(rename = "FALLBACK")]
    Fallback,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::A => "A",
            Branch::B => "B",
            Branch::C => "C",
            Branch::Fallback => "FALLBACK",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What an agent may know about another agent: its id and measured state.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub id: AgentId,
    pub state: AgentState,
}

/// One attempted solve within a tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchAttempt {
    pub branch: Branch,
    pub candidate_horizon: usize,
    pub status: SolveStatus,
    pub validated: bool,
    pub solve_time: f64,
}

#[derive(Debug, Clone)]
pub struct CmcDecision {
    pub applied_input: AgentInput,
    pub branch: Branch,
    /// Candidate horizon of the applied branch; for the fallback, the
    /// length of the stored braking sequence.
    pub candidate_horizon: usize,
    pub validated: bool,
    pub objective: Option<f64>,
    pub kkt_residual: Option<f64>,
    /// Status of the applied solve (of the last attempt for the fallback).
    pub status: SolveStatus,
    /// Contingency horizon of the measured state.
    pub current_horizon: usize,
    pub cell: usize,
    pub attempts: Vec<BranchAttempt>,
}

impl CmcDecision {
    pub fn solve_times(&self) -> Vec<(Branch, f64)> {
        self.attempts.iter().map(|a| (a.branch, a.solve_time)).collect()
    }
}

/// Braking inputs kept from the last step, head first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentMemory {
    pub last_contingency_inputs: Vec<AgentInput>,
}

impl AgentMemory {
    pub fn is_empty(&self) -> bool {
        self.last_contingency_inputs.is_empty()
    }

    /// Braking sequence of `plan`, or a single zero input at rest.
    pub fn from_plan(plan: &ContingencyPlan, dim: usize) -> Self {
        if plan.accels.is_empty() {
            AgentMemory { last_contingency_inputs: vec![AgentInput::zero(dim)] }
        } else {
            AgentMemory { last_contingency_inputs: plan.accels.clone() }
        }
    }

    /// Removes and returns the head; an exhausted sequence means staying at rest.
    pub fn pop(&mut self, dim: usize) -> AgentInput {
        if self.last_contingency_inputs.is_empty() {
            AgentInput::zero(dim)
        } else {
            self.last_contingency_inputs.remove(0)
        }
    }
}

/// Contingency inputs of an optimal solution, to be replayed if the next
/// step finds nothing better.
pub fn shift_memory(solution: &FtocpSolution) -> AgentMemory {
    let n = solution.candidate_horizon;
    let dim = solution.first_input().a.len();
    if n == 0 {
        return AgentMemory { last_contingency_inputs: vec![AgentInput::zero(dim)] };
    }
    AgentMemory { last_contingency_inputs: solution.contingency_inputs[..n].to_vec() }
}

/// Forces solver outcomes, for exercising the fallback paths in tests.
pub trait FaultInjection: Send + Sync {
    /// `Some(status)` replaces the solve of `branch` for `agent`.
    fn outcome(&self, agent: AgentId, branch: Branch) -> Option<SolveStatus>;
}

/// How the planning cell is picked each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellSelection {
    /// Cells holding the whole braking path, closest to the target first.
    #[default]
    RouteAware,
    /// Deepest cell holding the current position.
    MaxMargin,
}

#[derive(Clone)]
pub struct ControllerConfig {
    pub params: ModelParams,
    pub weights: CostWeights,
    pub bound_shape: BoundShape,
    pub sensor_range: f64,
    pub cell_selection: CellSelection,
    pub backend: Arc<dyn ConicBackend>,
    pub faults: Option<Arc<dyn FaultInjection>>,
    /// Directory for per-solve program dumps.
    pub dump_dir: Option<PathBuf>,
}

impl fmt::Debug for ControllerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControllerConfig")
            .field("params", &self.params)
            .field("weights", &self.weights)
            .field("bound_shape", &self.bound_shape)
            .field("sensor_range", &self.sensor_range)
            .field("cell_selection", &self.cell_selection)
            .field("faults", &self.faults.is_some())
            .field("dump_dir", &self.dump_dir)
            .finish()
    }
}

impl ControllerConfig {
    pub fn new(params: ModelParams, weights: CostWeights) -> Self {
        ControllerConfig {
            params,
            weights,
            bound_shape: BoundShape::Cone,
            sensor_range: f64::INFINITY,
            cell_selection: CellSelection::RouteAware,
            backend: Arc::new(crate::conic::ClarabelBackend::default()),
            faults: None,
            dump_dir: None,
        }
    }
}

/// Everything one agent derives from a snapshot before solving.
#[derive(Debug, Clone)]
pub struct PlanningFrame {
    pub state: AgentState,
    pub current_horizon: usize,
    pub own_plan: ContingencyPlan,
    pub avoid_constraints: Vec<HalfSpaceConstraint>,
    pub workspace_constraints: Vec<HalfSpaceConstraint>,
    pub cell: usize,
    pub goal: Vector,
}

impl PlanningFrame {
    pub fn build(
        id: AgentId,
        state: &AgentState,
        neighbors: &[Measurement],
        nav: &NavigationMap,
        target: &Vector,
        config: &ControllerConfig,
    ) -> Result<Self> {
        let params = &config.params;
        let own_plan = contingency_plan(state, params)?;
        let current_horizon = own_plan.horizon;
        let mut avoid_constraints = Vec::new();
        for n in neighbors {
            if n.id == id || !sensor_range_filter(&state.p, &n.state.p, config.sensor_range) {
                continue;
            }
            let plan_j = contingency_plan(&n.state, params)?;
            avoid_constraints.extend(build_pair_constraints(id, &own_plan, n.id, &plan_j, params)?);
        }
        let (cell, goal) = match config.cell_selection {
            CellSelection::RouteAware => {
                let braking = &own_plan.positions[..current_horizon.max(1)];
                let choice = nav.choose(&state.p, braking, target, NUMERIC_TOLERANCE)?;
                (choice.cell, choice.goal)
            }
            CellSelection::MaxMargin => {
                let cell = nav
                    .workspace()
                    .select_cell(&state.p, params.rho)
                    .ok_or_else(|| Error::OutOfWorkspace { position: state.p.iter().copied().collect() })?;
                (cell, target.clone())
            }
        };
        let workspace_constraints = nav.workspace().cell_constraints(id, cell, params.rho);
        Ok(PlanningFrame {
            state: state.clone(),
            current_horizon,
            own_plan,
            avoid_constraints,
            workspace_constraints,
            cell,
            goal,
        })
    }

    pub fn problem(&self, config: &ControllerConfig, candidate: usize, extra_speed_bound: Option<f64>) -> FtocpProblem {
        FtocpProblem {
            initial_state: self.state.clone(),
            candidate_horizon: candidate,
            avoid_constraints: self.avoid_constraints.clone(),
            workspace_constraints: self.workspace_constraints.clone(),
            cost: config.weights.with_target(self.goal.clone()),
            params: config.params,
            extra_speed_bound,
            bound_shape: config.bound_shape,
        }
    }

    /// Candidate horizon and extra speed bound of each branch, in the order
    /// they are tried.
    pub fn branch_plan(&self, params: &ModelParams) -> Vec<(Branch, usize, Option<f64>)> {
        let nk = self.current_horizon;
        let quantum = params.speed_quantum();
        // A speed snapped down onto a multiple of the quantum keeps its
        // excess in the bounds, so braking at the limit stays admissible.
        let excess = (self.state.speed() - quantum * nk as f64).max(0.0);
        let mut out = Vec::with_capacity(3);
        if nk < params.n_cont_max() {
            out.push((Branch::A, nk + 1, None));
        }
        out.push((Branch::B, nk, Some(quantum * nk as f64 + excess)));
        if nk >= 1 {
            out.push((Branch::C, nk - 1, Some(quantum * (nk - 1) as f64 + excess)));
        }
        out
    }

    /// Problem of the last-resort branch (C, or B at rest).
    pub fn terminal_problem(&self, config: &ControllerConfig) -> FtocpProblem {
        let (_, candidate, bound) = *self.branch_plan(&config.params).last().expect("branch B always present");
        self.problem(config, candidate, bound)
    }
}

/// One agent's controller: its id, configuration and braking memory.
#[derive(Debug, Clone)]
pub struct CmcController {
    pub id: AgentId,
    pub config: ControllerConfig,
    pub memory: AgentMemory,
}

impl CmcController {
    pub fn new(id: AgentId, config: ControllerConfig) -> Self {
        CmcController { id, config, memory: AgentMemory::default() }
    }

    fn attempt(&self, tick: u64, problem: &FtocpProblem, branch: Branch) -> Result<Option<FtocpSolution>> {
        if let Some(dir) = &self.config.dump_dir {
            let text = problem.assemble()?.program.to_cbf()?;
            let path = dir.join(format!("agent{}_tick{}_branch{}.cbf", self.id, tick, branch));
            std::fs::write(&path, text)
                .map_err(|e| Error::Artifact { path: path.clone(), reason: e.to_string() })?;
        }
        if let Some(faults) = &self.config.faults {
            if let Some(status) = faults.outcome(self.id, branch) {
                if status != SolveStatus::Optimal {
                    return Ok(None);
                }
            }
        }
        Ok(Some(ftocp::solve(problem, self.config.backend.as_ref())?))
    }

    /// Runs the branch sequence for one tick and updates the memory.
    pub fn plan_step(
        &mut self,
        tick: u64,
        state: &AgentState,
        neighbors: &[Measurement],
        nav: &NavigationMap,
        target: &Vector,
    ) -> Result<CmcDecision> {
        let params = self.config.params;
        let dim = params.dim.get();
        let frame = PlanningFrame::build(self.id, state, neighbors, nav, target, &self.config)?;
        let mut attempts = Vec::new();
        let mut last_status = SolveStatus::NumericalFailure;

        for (branch, candidate, bound) in frame.branch_plan(&params) {
            let problem = frame.problem(&self.config, candidate, bound);
            let solution = self.attempt(tick, &problem, branch)?;
            let (status, time) = solution.as_ref().map_or((SolveStatus::NumericalFailure, 0.0), |s| (s.status, s.solve_time));
            let validated = solution.as_ref().is_some_and(|s| ftocp::validate_candidate(s, candidate, &params));
            attempts.push(BranchAttempt { branch, candidate_horizon: candidate, status, validated, solve_time: time });
            last_status = status;
            let Some(solution) = solution.filter(|s| s.is_optimal()) else { continue };
            let accept = validated || branch == Branch::C;
            if !accept {
                continue;
            }
            self.memory = if validated {
                shift_memory(&solution)
            } else {
                AgentMemory::from_plan(&contingency_plan_lenient(solution.next_state(), &params), dim)
            };
            return Ok(CmcDecision {
                applied_input: solution.first_input().clone(),
                branch,
                candidate_horizon: candidate,
                validated,
                objective: Some(solution.objective),
                kkt_residual: Some(solution.kkt_residual),
                status,
                current_horizon: frame.current_horizon,
                cell: frame.cell,
                attempts,
            });
        }

        if self.memory.is_empty() {
            return Err(Error::InitialInfeasible { agent: self.id });
        }
        let stored = self.memory.last_contingency_inputs.len();
        let input = self.memory.pop(dim);
        let next = step_unchecked(state, &input.a, params.dt);
        self.memory = AgentMemory::from_plan(&contingency_plan_lenient(&next, &params), dim);
        Ok(CmcDecision {
            applied_input: input,
            branch: Branch::Fallback,
            candidate_horizon: stored,
            validated: false,
            objective: None,
            kkt_residual: None,
            status: last_status,
            current_horizon: frame.current_horizon,
            cell: frame.cell,
            attempts,
        })
    }
}

/// Braking plan that tolerates solver-level speed excess.
fn contingency_plan_lenient(state: &AgentState, params: &ModelParams) -> ContingencyPlan {
    match contingency_plan(state, params) {
        Ok(plan) => plan,
        Err(_) => {
            let mut clipped = state.clone();
            clipped.v *= params.v_max / state.speed();
            contingency_plan(&clipped, params).expect("clipped state is within bounds")
        }
    }
}

/// Contingency horizon, clamped for states a solver pushed just past the
/// speed limit.
pub fn observed_horizon(v: &Vector, params: &ModelParams) -> usize {
    contingency_horizon(v, params).unwrap_or(params.n_cont_max())
}
