//! Contingency (braking) plans.
//!
//! Every agent, at every step, has a contingency plan that brakes it to a
//! standstill along a straight line with constant deceleration in the
//! minimum number of whole steps. The plan depends only on the measured
//! state, so any agent can rebuild the plan of any other agent.

use crate::dynamics::{propagate, AgentInput, AgentState, ModelParams, Vector, NUMERIC_TOLERANCE};
use crate::error::{Error, Result};

/// Speeds this far (m/s) above an exact multiple of `a_max * dt` count as
/// that multiple when converting to a step count.
pub const CEIL_SNAP: f64 = 1e-7;

/// Smallest whole number of steps `n` with `speed <= n * a_max * dt`,
/// absorbing round-off just above a multiple.
pub(crate) fn braking_steps(speed: f64, params: &ModelParams) -> usize {
    let quantum = params.speed_quantum();
    let ratio = speed / quantum;
    let lower = ratio.floor();
    let steps = if speed - lower * quantum <= CEIL_SNAP { lower } else { ratio.ceil() };
    steps.max(0.0) as usize
}

/// Contingency horizon for velocity `v`.
pub fn contingency_horizon(v: &Vector, params: &ModelParams) -> Result<usize> {
    params.check_dim(v.len())?;
    let speed = v.norm();
    if !speed.is_finite() || speed > params.v_max + NUMERIC_TOLERANCE {
        return Err(Error::VelocityBound { speed, limit: params.v_max });
    }
    Ok(braking_steps(speed, params).min(params.n_cont_max()))
}

/// Braking plan of one agent, as seen from its measured state.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyPlan {
    /// Steps until standstill.
    pub horizon: usize,
    /// Constant deceleration, repeated `horizon` times.
    pub accels: Vec<AgentInput>,
    /// Positions for prediction steps `1..=n_cont_max + 1`; index `i - 1`
    /// holds step `i`. Constant once the agent has stopped.
    pub positions: Vec<Vector>,
    pub stop_position: Vector,
}

impl ContingencyPlan {
    /// Position at prediction step `step` (0 is the current position).
    pub fn position_at(&self, start: &Vector, step: usize) -> Vector {
        match step {
            0 => start.clone(),
            i if i <= self.positions.len() => self.positions[i - 1].clone(),
            _ => self.stop_position.clone(),
        }
    }

    pub fn deceleration(&self) -> f64 {
        self.accels.first().map_or(0.0, AgentInput::magnitude)
    }
}

/// Builds the braking plan for `state`.
pub fn contingency_plan(state: &AgentState, params: &ModelParams) -> Result<ContingencyPlan> {
    params.check_state(state)?;
    let horizon = contingency_horizon(&state.v, params)?;
    let len = params.n_cont_max() + 1;
    let dim = params.dim.get();

    if horizon == 0 {
        return Ok(ContingencyPlan {
            horizon,
            accels: Vec::new(),
            positions: vec![state.p.clone(); len],
            stop_position: state.p.clone(),
        });
    }

    let decel = AgentInput::new(&state.v * (-1.0 / (horizon as f64 * params.dt)));
    let accels = vec![decel; horizon];
    let braking = propagate(state, &accels, params)?;
    let stop_position = braking[horizon - 1].p.clone();

    let mut positions: Vec<Vector> = braking.into_iter().map(|s| s.p).collect();
    positions.resize(len.max(horizon), stop_position.clone());
    positions.truncate(len);
    debug_assert_eq!(positions[0].len(), dim);

    Ok(ContingencyPlan { horizon, accels, positions, stop_position })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        ModelParams::reference()
    }

    #[test]
    fn horizon_at_velocity_bound() {
        let v = Vector::from_column_slice(&[3.0, 0.0]);
        assert_eq!(contingency_horizon(&v, &params()).unwrap(), 5);
        let diag = Vector::from_column_slice(&[3.0 / 2f64.sqrt(), 3.0 / 2f64.sqrt()]);
        assert_eq!(contingency_horizon(&diag, &params()).unwrap(), 5);
    }

    #[test]
    fn horizon_examples() {
        assert_eq!(contingency_horizon(&Vector::zeros(2), &params()).unwrap(), 0);
        // 1.3 / 0.6 = 13/6
        let v = Vector::from_column_slice(&[1.3, 0.0]);
        assert_eq!(contingency_horizon(&v, &params()).unwrap(), 3);
        let v = Vector::from_column_slice(&[0.0, 0.6]);
        assert_eq!(contingency_horizon(&v, &params()).unwrap(), 1);
    }

    #[test]
    fn horizon_rejects_overspeed() {
        let v = Vector::from_column_slice(&[3.1, 0.0]);
        assert!(matches!(
            contingency_horizon(&v, &params()),
            Err(Error::VelocityBound { .. })
        ));
        // Solver-level excess is tolerated and clamped.
        let v = Vector::from_column_slice(&[3.0 + 1e-7, 0.0]);
        assert_eq!(contingency_horizon(&v, &params()).unwrap(), 5);
    }

    #[test]
    fn snapping_absorbs_roundoff() {
        let p = params();
        assert_eq!(braking_steps(1.2 + 1e-12, &p), 2);
        assert_eq!(braking_steps(1.2 + 5e-8, &p), 2);
        assert_eq!(braking_steps(1.2 + 1e-6, &p), 3);
        assert_eq!(braking_steps(1.2 - 1e-12, &p), 2);
    }

    #[test]
    fn full_speed_plan() {
        let s = AgentState::from_slices(&[0.0, 0.0], &[3.0, 0.0]);
        let plan = contingency_plan(&s, &params()).unwrap();
        assert_eq!(plan.horizon, 5);
        for a in &plan.accels {
            assert!((a.a[0] + 3.0).abs() < 1e-12);
            assert_eq!(a.a[1], 0.0);
        }
        assert!((plan.stop_position[0] - 1.5).abs() < 1e-12);
        assert_eq!(plan.positions.len(), 6);
        // 0.54, 0.96, 1.26, 1.44, 1.5
        let expected = [0.54, 0.96, 1.26, 1.44, 1.5, 1.5];
        for (pos, e) in plan.positions.iter().zip(expected) {
            assert!((pos[0] - e).abs() < 1e-12, "{} vs {e}", pos[0]);
        }
    }

    #[test]
    fn resting_plan() {
        let s = AgentState::from_slices(&[2.0, -1.0], &[0.0, 0.0]);
        let plan = contingency_plan(&s, &params()).unwrap();
        assert_eq!(plan.horizon, 0);
        assert!(plan.accels.is_empty());
        assert_eq!(plan.stop_position, s.p);
        assert!(plan.positions.iter().all(|p| *p == s.p));
        assert_eq!(plan.position_at(&s.p, 17), s.p);
    }

    #[test]
    fn one_step_plan() {
        let s = AgentState::from_slices(&[0.0, 0.0], &[0.0, 0.6]);
        let plan = contingency_plan(&s, &params()).unwrap();
        assert_eq!(plan.horizon, 1);
        assert!((plan.accels[0].a[1] + 3.0).abs() < 1e-12);
        assert!((plan.stop_position[1] - 0.06).abs() < 1e-12);
        assert!(plan.positions.iter().all(|p| *p == plan.stop_position));
    }
}
