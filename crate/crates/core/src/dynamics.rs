//! Discrete-time double-integrator model shared by every agent.
//!
//! Each spatial axis is an independent double integrator sampled with a
//! zero-order hold on the acceleration:
//!
//! ```text
//! p' = p + dt * v + dt^2 / 2 * a
//! v' = v + dt * a
//! ```

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimension-generic vector used for positions, velocities and accelerations.
pub type Vector = DVector<f64>;

/// Tolerance accepted on solver-produced bounds (m/s, m/s², m).
pub const NUMERIC_TOLERANCE: f64 = 1e-6;

/// Number of spatial axes, either 2 or 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct SpaceDim(usize);

impl SpaceDim {
    pub const TWO: SpaceDim = SpaceDim(2);
    pub const THREE: SpaceDim = SpaceDim(3);

    pub fn new(value: usize) -> Result<Self> {
        match value {
            2 | 3 => Ok(SpaceDim(value)),
            other => Err(Error::Config(format!("space dimension must be 2 or 3, got {other}"))),
        }
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for SpaceDim {
    type Error = Error;

    fn try_from(value: usize) -> Result<Self> {
        SpaceDim::new(value)
    }
}

impl From<SpaceDim> for usize {
    fn from(dim: SpaceDim) -> usize {
        dim.0
    }
}

/// Position and velocity of one agent. This is the only information agents
/// ever learn about each other.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub p: Vector,
    pub v: Vector,
}

impl AgentState {
    pub fn new(p: Vector, v: Vector) -> Self {
        AgentState { p, v }
    }

    pub fn from_slices(p: &[f64], v: &[f64]) -> Self {
        AgentState {
            p: Vector::from_column_slice(p),
            v: Vector::from_column_slice(v),
        }
    }

    pub fn at_rest(p: Vector) -> Self {
        let dim = p.len();
        AgentState { p, v: Vector::zeros(dim) }
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn speed(&self) -> f64 {
        self.v.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

/// Acceleration command.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentInput {
    pub a: Vector,
}

impl AgentInput {
    pub fn new(a: Vector) -> Self {
        AgentInput { a }
    }

    pub fn from_slice(a: &[f64]) -> Self {
        AgentInput { a: Vector::from_column_slice(a) }
    }

    pub fn zero(dim: usize) -> Self {
        AgentInput { a: Vector::zeros(dim) }
    }

    pub fn magnitude(&self) -> f64 {
        self.a.norm()
    }
}

/// Model and capability parameters, identical for all agents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dim: SpaceDim,
    /// Sampling time [s].
    pub dt: f64,
    /// Acceleration bound [m/s²].
    pub a_max: f64,
    /// Velocity bound [m/s].
    pub v_max: f64,
    /// Agent radius [m].
    pub rho: f64,
    /// Prediction horizon [steps].
    pub n_pred: usize,
}

impl ModelParams {
    /// Parameters used for all reference simulations (2-D).
    pub fn reference() -> Self {
        ModelParams {
            dim: SpaceDim::TWO,
            dt: 0.2,
            a_max: 3.0,
            v_max: 3.0,
            rho: 1.0,
            n_pred: 12,
        }
    }

    /// Speed change achievable in one step at full acceleration.
    pub fn speed_quantum(&self) -> f64 {
        self.a_max * self.dt
    }

    /// Largest contingency horizon any admissible velocity can produce.
    pub fn n_cont_max(&self) -> usize {
        crate::contingency::braking_steps(self.v_max, self)
    }

    /// Braking distance from the velocity bound under the contingency rule.
    pub fn max_braking_distance(&self) -> f64 {
        self.v_max * self.n_cont_max() as f64 * self.dt / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("a_max", self.a_max),
            ("v_max", self.v_max),
            ("rho", self.rho),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {value}")));
            }
        }
        let n_cont_max = self.n_cont_max();
        if self.n_pred < n_cont_max + 1 {
            return Err(Error::Config(format!(
                "prediction horizon {} must be at least n_cont_max + 1 = {}",
                self.n_pred,
                n_cont_max + 1
            )));
        }
        Ok(())
    }

    pub(crate) fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim.get() {
            return Err(Error::DimensionMismatch { expected: self.dim.get(), got: len });
        }
        Ok(())
    }

    pub(crate) fn check_state(&self, state: &AgentState) -> Result<()> {
        self.check_dim(state.p.len())?;
        self.check_dim(state.v.len())
    }
}

/// One exact step of the double integrator.
pub fn step(state: &AgentState, input: &AgentInput, params: &ModelParams) -> Result<AgentState> {
    params.check_state(state)?;
    params.check_dim(input.a.len())?;
    Ok(step_unchecked(state, &input.a, params.dt))
}

pub(crate) fn step_unchecked(state: &AgentState, a: &Vector, dt: f64) -> AgentState {
    let half_dt2 = 0.5 * dt * dt;
    let p = &state.p + &state.v * dt + a * half_dt2;
    let v = &state.v + a * dt;
    AgentState { p, v }
}

/// Predicted states for steps `1..=inputs.len()`.
pub fn propagate(state: &AgentState, inputs: &[AgentInput], params: &ModelParams) -> Result<Vec<AgentState>> {
    if inputs.is_empty() {
        return Err(Error::Config("propagate needs at least one input".into()));
    }
    params.check_state(state)?;
    let mut out = Vec::with_capacity(inputs.len());
    let mut current = state.clone();
    for input in inputs {
        params.check_dim(input.a.len())?;
        current = step_unchecked(&current, &input.a, params.dt);
        out.push(current.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn params_2d() -> ModelParams {
        ModelParams::reference()
    }

    /// `A^i s + sum A^(i-l-1) B a_l` with dense matrices.
    fn closed_form(state: &AgentState, inputs: &[AgentInput], params: &ModelParams, i: usize) -> Vec<f64> {
        let d = params.dim.get();
        let dt = params.dt;
        let mut a_mat = DMatrix::<f64>::identity(2 * d, 2 * d);
        let mut b_mat = DMatrix::<f64>::zeros(2 * d, d);
        for k in 0..d {
            a_mat[(k, d + k)] = dt;
            b_mat[(k, k)] = dt * dt / 2.0;
            b_mat[(d + k, k)] = dt;
        }
        let mut s0 = DVector::<f64>::zeros(2 * d);
        s0.rows_mut(0, d).copy_from(&state.p);
        s0.rows_mut(d, d).copy_from(&state.v);
        let mut acc = a_mat.pow(i as u32) * s0;
        for (l, input) in inputs.iter().enumerate().take(i) {
            acc += a_mat.pow((i - l - 1) as u32) * &b_mat * &input.a;
        }
        acc.iter().copied().collect()
    }

    #[test]
    fn zero_input_drift() {
        let s = AgentState::from_slices(&[0.0, 0.0], &[1.0, 0.0]);
        let next = step(&s, &AgentInput::zero(2), &params_2d()).unwrap();
        assert_eq!(next, AgentState::from_slices(&[0.2, 0.0], &[1.0, 0.0]));
    }

    #[test]
    fn constant_push_from_rest() {
        let s = AgentState::from_slices(&[0.0, 0.0], &[0.0, 0.0]);
        let next = step(&s, &AgentInput::from_slice(&[3.0, 0.0]), &params_2d()).unwrap();
        assert!((next.p[0] - 0.06).abs() < 1e-15);
        assert!((next.v[0] - 0.6).abs() < 1e-15);
        assert_eq!(next.p[1], 0.0);
        assert_eq!(next.v[1], 0.0);
    }

    #[test]
    fn rest_is_a_fixed_point() {
        let s = AgentState::from_slices(&[4.5, -2.0], &[0.0, 0.0]);
        let next = step(&s, &AgentInput::zero(2), &params_2d()).unwrap();
        assert_eq!(next, s);
        let states = propagate(&s, &vec![AgentInput::zero(2); 5], &params_2d()).unwrap();
        assert_eq!(states.len(), 5);
        assert!(states.iter().all(|x| *x == s));
    }

    #[test]
    fn single_input_matches_step() {
        let s = AgentState::from_slices(&[1.0, 2.0], &[0.5, -0.25]);
        let u = AgentInput::from_slice(&[0.3, 1.1]);
        let states = propagate(&s, std::slice::from_ref(&u), &params_2d()).unwrap();
        assert_eq!(states, vec![step(&s, &u, &params_2d()).unwrap()]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let s = AgentState::from_slices(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]);
        let err = step(&s, &AgentInput::zero(3), &params_2d()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 2, got: 3 }));
        let s2 = AgentState::from_slices(&[0.0, 0.0], &[0.0, 0.0]);
        assert!(step(&s2, &AgentInput::zero(3), &params_2d()).is_err());
        assert!(propagate(&s2, &[], &params_2d()).is_err());
    }

    #[test]
    fn reference_params_are_valid() {
        let p = ModelParams::reference();
        p.validate().unwrap();
        assert_eq!(p.n_cont_max(), 5);
        let mut bad = p;
        bad.n_pred = 5;
        assert!(bad.validate().is_err());
        bad = p;
        bad.dt = 0.0;
        assert!(bad.validate().is_err());
        assert!(SpaceDim::new(4).is_err());
    }

    proptest! {
        #[test]
        fn iteration_matches_matrix_powers(
            dim in 2usize..=3,
            n in 1usize..=20,
            seed in proptest::collection::vec(-3.0f64..3.0, 6 + 3 * 20),
        ) {
            let mut params = ModelParams::reference();
            params.dim = SpaceDim::new(dim).unwrap();
            let state = AgentState::from_slices(&seed[0..dim], &seed[3..3 + dim]);
            let inputs: Vec<AgentInput> = (0..n)
                .map(|i| AgentInput::from_slice(&seed[6 + 3 * i..6 + 3 * i + dim]))
                .collect();
            let states = propagate(&state, &inputs, &params).unwrap();
            for i in 1..=n {
                let expected = closed_form(&state, &inputs, &params, i);
                let got: Vec<f64> = states[i - 1].p.iter().chain(states[i - 1].v.iter()).copied().collect();
                for (e, g) in expected.iter().zip(&got) {
                    let scale = e.abs().max(1.0);
                    prop_assert!((e - g).abs() <= 1e-12 * scale, "step {i}: {e} vs {g}");
                }
            }
        }

        #[test]
        fn constant_acceleration_velocity_is_exact(k in 1usize..=30, ax in -3.0f64..3.0, ay in -3.0f64..3.0) {
            let params = ModelParams::reference();
            let state = AgentState::from_slices(&[0.0, 0.0], &[0.0, 0.0]);
            let inputs = vec![AgentInput::from_slice(&[ax, ay]); k];
            let last = propagate(&state, &inputs, &params).unwrap().pop().unwrap();
            let expected_x = k as f64 * params.dt * ax;
            let expected_y = k as f64 * params.dt * ay;
            prop_assert!((last.v[0] - expected_x).abs() <= 1e-12 * expected_x.abs().max(1.0));
            prop_assert!((last.v[1] - expected_y).abs() <= 1e-12 * expected_y.abs().max(1.0));
        }
    }
}
