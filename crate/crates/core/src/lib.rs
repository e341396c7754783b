//! Contingency model-based control for swarms of double-integrator agents.
//!
//! Every agent plans its own motion with a small convex program and keeps a
//! straight-line braking maneuver available at all times. Other agents are
//! only ever observed through their measured position and velocity.

pub mod agent;
pub mod conic;
pub mod contingency;
pub mod dynamics;
pub mod error;
pub mod ftocp;
pub mod geometry;
pub mod plot;
pub mod run;
pub mod scenario;
pub mod sim;

pub use agent::{Branch, CmcController, CmcDecision, ControllerConfig, Measurement};
pub use conic::{ClarabelBackend, ConicBackend, SolveStatus};
pub use contingency::{contingency_horizon, contingency_plan, ContingencyPlan};
pub use dynamics::{propagate, step, AgentInput, AgentState, ModelParams, SpaceDim, Vector};
pub use error::{Error, Result};
pub use ftocp::{BoundShape, CostParams, CostWeights, FtocpProblem, FtocpSolution};
pub use geometry::{AgentId, HalfSpaceConstraint, Peer, Workspace};
