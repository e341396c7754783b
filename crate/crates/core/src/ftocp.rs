//! Per-agent finite-time optimal control problem for one candidate
//! contingency horizon.
//!
//! Decision variables are the nominal accelerations `a_0..a_{N-1}` and the
//! nominal states `s_1..s_N` (tied together by the dynamics equalities).
//! The contingency trajectory that starts from `s_1` is not a variable: for
//! a fixed candidate horizon it is an affine function of `a_0`, and the
//! collision-avoidance constraints are imposed on that affine image.

use serde::{Deserialize, Serialize};

use crate::conic::{ConicBackend, ConicProgram, LinExpr, RowTag, SolveStatus};
use crate::contingency::braking_steps;
use crate::dynamics::{step_unchecked, AgentInput, AgentState, ModelParams, Vector};
use crate::error::{Error, Result};
use crate::geometry::HalfSpaceConstraint;

/// Quadratic tracking weights (scalar multiples of the identity).
#[derive(Debug, Clone, PartialEq)]
pub struct CostParams {
    /// Input weight.
    pub r_weight: f64,
    /// Terminal velocity weight.
    pub q_weight: f64,
    /// Terminal position weight.
    pub s_weight: f64,
    pub target: Vector,
}

/// Weights only; the target is per agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub r_weight: f64,
    pub q_weight: f64,
    pub s_weight: f64,
}

impl CostWeights {
    pub fn reference() -> Self {
        CostWeights { r_weight: 1.0, q_weight: 2.0, s_weight: 20.0 }
    }

    pub fn with_target(self, target: Vector) -> CostParams {
        CostParams { r_weight: self.r_weight, q_weight: self.q_weight, s_weight: self.s_weight, target }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("r_weight", self.r_weight), ("q_weight", self.q_weight), ("s_weight", self.s_weight)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("{name} must be nonnegative, got {w}")));
            }
        }
        Ok(())
    }
}

/// How norm bounds on accelerations and velocities are encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundShape {
    /// Exact second-order cones.
    #[default]
    Cone,
    /// Inner regular polygon with this many sides (2-D only).
    Polygon { sides: usize },
}

#[derive(Debug, Clone)]
pub struct FtocpProblem {
    pub initial_state: AgentState,
    pub candidate_horizon: usize,
    /// Collision half-spaces, grouped by neighbor in step order.
    pub avoid_constraints: Vec<HalfSpaceConstraint>,
    pub workspace_constraints: Vec<HalfSpaceConstraint>,
    pub cost: CostParams,
    pub params: ModelParams,
    /// Extra bound on the speed after the first step.
    pub extra_speed_bound: Option<f64>,
    pub bound_shape: BoundShape,
}

/// Column offsets of the decision vector.
#[derive(Debug, Clone, Copy)]
pub struct VarLayout {
    pub dim: usize,
    pub horizon: usize,
}

impl VarLayout {
    pub fn input(&self, i: usize, k: usize) -> usize {
        i * self.dim + k
    }

    /// Position of nominal state `i` (1-based), axis `k`.
    pub fn pos(&self, i: usize, k: usize) -> usize {
        self.horizon * self.dim + (i - 1) * 2 * self.dim + k
    }

    pub fn vel(&self, i: usize, k: usize) -> usize {
        self.pos(i, k) + self.dim
    }

    pub fn num_vars(&self) -> usize {
        3 * self.horizon * self.dim
    }
}

/// Contingency position at step `i` as `offset + gain * a_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePosition {
    pub offset: Vector,
    pub gain: f64,
}

/// Contingency positions for steps `1..=candidate + 1` as affine functions
/// of the first nominal input.
pub fn contingency_position_map(state: &AgentState, candidate: usize, params: &ModelParams) -> Vec<AffinePosition> {
    let dim = state.dim();
    let offsets = braking_positions(state, &Vector::zeros(dim), candidate, params.dt);
    let mut unit = Vector::zeros(dim);
    unit[0] = 1.0;
    let zero_state = AgentState::at_rest(Vector::zeros(dim));
    let gains = braking_positions(&zero_state, &unit, candidate, params.dt);
    offsets
        .into_iter()
        .zip(gains)
        .map(|(offset, g)| AffinePosition { offset, gain: g[0] })
        .collect()
}

/// Positions at steps `1..=candidate + 1` after applying `a0` and then
/// braking uniformly to rest over `candidate` steps.
fn braking_positions(state: &AgentState, a0: &Vector, candidate: usize, dt: f64) -> Vec<Vector> {
    braking_states(state, a0, candidate, dt).into_iter().map(|s| s.p).collect()
}

fn braking_states(state: &AgentState, a0: &Vector, candidate: usize, dt: f64) -> Vec<AgentState> {
    let first = step_unchecked(state, a0, dt);
    let mut out = Vec::with_capacity(candidate + 1);
    out.push(first.clone());
    if candidate > 0 {
        let decel = &first.v * (-1.0 / (candidate as f64 * dt));
        let mut current = first;
        for _ in 0..candidate {
            current = step_unchecked(&current, &decel, dt);
            out.push(current.clone());
        }
    }
    out
}

/// Assembled conic program plus the bookkeeping needed to read it back.
#[derive(Debug, Clone)]
pub struct AssembledFtocp {
    pub program: ConicProgram,
    pub layout: VarLayout,
    pub contingency_map: Vec<AffinePosition>,
}

impl FtocpProblem {
    fn check(&self) -> Result<()> {
        let params = &self.params;
        params.check_state(&self.initial_state)?;
        params.check_dim(self.cost.target.len())?;
        if self.candidate_horizon > params.n_cont_max() {
            return Err(Error::Config(format!(
                "candidate horizon {} exceeds n_cont_max {}",
                self.candidate_horizon,
                params.n_cont_max()
            )));
        }
        for c in self.avoid_constraints.iter().chain(&self.workspace_constraints) {
            params.check_dim(c.normal.len())?;
        }
        if let BoundShape::Polygon { .. } = self.bound_shape {
            if params.dim.get() != 2 {
                return Err(Error::Config("polygonal bounds need a 2-D model".into()));
            }
        }
        Ok(())
    }

    pub fn assemble(&self) -> Result<AssembledFtocp> {
        self.check()?;
        let params = &self.params;
        let d = params.dim.get();
        let n = params.n_pred;
        let dt = params.dt;
        let layout = VarLayout { dim: d, horizon: n };
        let mut prog = ConicProgram::new(layout.num_vars());
        let s0 = &self.initial_state;

        // Dynamics.
        for i in 1..=n {
            for k in 0..d {
                let mut pos = LinExpr::var(layout.pos(i, k)).with_term(layout.input(i - 1, k), -0.5 * dt * dt);
                let mut vel = LinExpr::var(layout.vel(i, k)).with_term(layout.input(i - 1, k), -dt);
                if i == 1 {
                    pos = pos.plus_constant(-s0.p[k] - dt * s0.v[k]);
                    vel = vel.plus_constant(-s0.v[k]);
                } else {
                    pos = pos.with_term(layout.pos(i - 1, k), -1.0).with_term(layout.vel(i - 1, k), -dt);
                    vel = vel.with_term(layout.vel(i - 1, k), -1.0);
                }
                prog.add_equality(&pos, RowTag::Dynamics);
                prog.add_equality(&vel, RowTag::Dynamics);
            }
        }

        // Acceleration and velocity bounds.
        for i in 0..n {
            let a: Vec<LinExpr> = (0..d).map(|k| LinExpr::var(layout.input(i, k))).collect();
            self.add_norm_bound(&mut prog, &a, params.a_max, RowTag::InputBound)?;
        }
        for i in 1..=n {
            let v: Vec<LinExpr> = (0..d).map(|k| LinExpr::var(layout.vel(i, k))).collect();
            self.add_norm_bound(&mut prog, &v, params.v_max, RowTag::VelocityBound)?;
        }

        // Workspace on nominal positions.
        for c in &self.workspace_constraints {
            for i in 1..=n {
                let mut row = LinExpr::constant(-c.offset);
                for k in 0..d {
                    row = row.with_term(layout.pos(i, k), c.normal[k]);
                }
                prog.add_le(&row, RowTag::Workspace);
            }
        }

        // Contingency positions, affine in a_0.
        let map = contingency_position_map(s0, self.candidate_horizon, params);
        let affine_row = |c: &HalfSpaceConstraint, at: &AffinePosition| -> LinExpr {
            let mut row = LinExpr::constant(c.normal.dot(&at.offset) - c.offset);
            for k in 0..d {
                row = row.with_term(layout.input(0, k), c.normal[k] * at.gain);
            }
            row
        };
        for c in &self.workspace_constraints {
            for at in map.iter().skip(1) {
                prog.add_le(&affine_row(c, at), RowTag::ContingencyWorkspace);
            }
        }
        // Past the candidate horizon the own contingency position is the
        // stop point, but a neighbor that brakes longer keeps moving, so its
        // later half-spaces still apply to that point. Rows identical to the
        // previous step of the same pair add nothing and are skipped.
        let stop = map.last().expect("map has at least one point");
        let mut previous: Option<&HalfSpaceConstraint> = None;
        for c in &self.avoid_constraints {
            if c.pred_step == 0 {
                return Err(Error::Config("collision constraints start at prediction step 1".into()));
            }
            let repeated = previous.is_some_and(|p| {
                p.other == c.other && p.pred_step + 1 == c.pred_step && p.normal == c.normal && p.offset == c.offset
            });
            previous = Some(c);
            match map.get(c.pred_step - 1) {
                Some(at) => prog.add_le(&affine_row(c, at), RowTag::Collision),
                None if !repeated => prog.add_le(&affine_row(c, stop), RowTag::Collision),
                None => {}
            }
        }

        if let Some(bound) = self.extra_speed_bound {
            let v1: Vec<LinExpr> = (0..d).map(|k| LinExpr::var(layout.vel(1, k))).collect();
            if bound <= 0.0 {
                // Zero-radius cones have no interior; pin the velocity instead.
                for e in &v1 {
                    prog.add_equality(e, RowTag::ExtraSpeedBound);
                }
            } else {
                self.add_norm_bound(&mut prog, &v1, bound, RowTag::ExtraSpeedBound)?;
            }
        }

        // Cost.
        let cost = &self.cost;
        for i in 0..n {
            for k in 0..d {
                prog.add_square(&LinExpr::var(layout.input(i, k)), cost.r_weight);
            }
        }
        for k in 0..d {
            prog.add_square(&LinExpr::var(layout.vel(n, k)), cost.q_weight);
            prog.add_square(&LinExpr::var(layout.pos(n, k)).plus_constant(-cost.target[k]), cost.s_weight);
        }

        Ok(AssembledFtocp { program: prog, layout, contingency_map: map })
    }

    fn add_norm_bound(&self, prog: &mut ConicProgram, exprs: &[LinExpr], bound: f64, tag: RowTag) -> Result<()> {
        match self.bound_shape {
            BoundShape::Cone => {
                prog.add_norm_le(exprs, bound, tag);
                Ok(())
            }
            BoundShape::Polygon { sides } => prog.add_polygon_norm_le(exprs, bound, sides, tag),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FtocpSolution {
    pub nominal_inputs: Vec<AgentInput>,
    /// Nominal states for steps `1..=N` as returned by the solver.
    pub nominal_states: Vec<AgentState>,
    /// Contingency inputs for steps `1..N` (zero after the candidate horizon).
    pub contingency_inputs: Vec<AgentInput>,
    /// Contingency states for steps `1..=N`, propagated exactly from the
    /// optimal first input. Constant after the candidate horizon.
    pub contingency_states: Vec<AgentState>,
    pub candidate_horizon: usize,
    pub objective: f64,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub status: SolveStatus,
    pub backend_status: String,
    pub solve_time: f64,
}

impl FtocpSolution {
    pub fn first_input(&self) -> &AgentInput {
        &self.nominal_inputs[0]
    }

    /// State after applying the first input exactly.
    pub fn next_state(&self) -> &AgentState {
        &self.contingency_states[0]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Builds the conic program, solves it and reads back the trajectories.
pub fn solve(problem: &FtocpProblem, backend: &dyn ConicBackend) -> Result<FtocpSolution> {
    let assembled = problem.assemble()?;
    let raw = backend.solve(&assembled.program)?;
    let params = &problem.params;
    let d = params.dim.get();
    let n = params.n_pred;
    let layout = assembled.layout;
    let x = &raw.x;

    let nominal_inputs: Vec<AgentInput> = (0..n)
        .map(|i| AgentInput::new(Vector::from_iterator(d, (0..d).map(|k| x[layout.input(i, k)]))))
        .collect();
    let nominal_states: Vec<AgentState> = (1..=n)
        .map(|i| AgentState {
            p: Vector::from_iterator(d, (0..d).map(|k| x[layout.pos(i, k)])),
            v: Vector::from_iterator(d, (0..d).map(|k| x[layout.vel(i, k)])),
        })
        .collect();

    let candidate = problem.candidate_horizon;
    let a0 = &nominal_inputs[0].a;
    let mut contingency_states = braking_states(&problem.initial_state, a0, candidate, params.dt);
    let last = contingency_states.last_mut().expect("at least one contingency state");
    if candidate > 0 {
        last.v.fill(0.0);
    }
    let rest = last.clone();
    contingency_states.resize(n, rest);

    let mut contingency_inputs = vec![AgentInput::zero(d); n - 1];
    if candidate > 0 {
        let v1 = &contingency_states[0].v;
        let decel = AgentInput::new(v1 * (-1.0 / (candidate as f64 * params.dt)));
        for slot in contingency_inputs.iter_mut().take(candidate) {
            *slot = decel.clone();
        }
    }

    Ok(FtocpSolution {
        nominal_inputs,
        nominal_states,
        contingency_inputs,
        contingency_states,
        candidate_horizon: candidate,
        objective: raw.objective,
        kkt_residual: raw.kkt_residual,
        max_violation: raw.max_violation,
        status: raw.status,
        backend_status: raw.backend_status,
        solve_time: raw.solve_time,
    })
}

/// Whether a one-step speed confirms the candidate horizon.
pub fn candidate_matches(speed: f64, candidate: usize, params: &ModelParams) -> bool {
    braking_steps(speed, params) == candidate
}

/// Confirms the candidate horizon against the optimal one-step speed.
pub fn validate_candidate(solution: &FtocpSolution, candidate: usize, params: &ModelParams) -> bool {
    solution.is_optimal() && candidate_matches(solution.next_state().speed(), candidate, params)
}
