//! Synchronous closed-loop world: every tick all agents read one frozen
//! snapshot, plan independently, and then all first inputs are applied at
//! once.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{Branch, BranchAttempt, CmcController, CmcDecision, ControllerConfig, Measurement, PlanningFrame};
use crate::conic::SolveStatus;
use crate::contingency::contingency_plan;
use crate::dynamics::{step_unchecked, AgentInput, AgentState, ModelParams, Vector, NUMERIC_TOLERANCE};
use crate::error::{Error, Result};
use crate::ftocp;
use crate::geometry::{pairwise_constraint, AgentId, NavigationMap};

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub tick: u64,
    pub agents: BTreeMap<AgentId, AgentState>,
    pub active: BTreeSet<AgentId>,
}

impl WorldState {
    /// Measured states of the active agents, ordered by id.
    pub fn snapshot(&self) -> Vec<Measurement> {
        self.active.iter().map(|&id| Measurement { id, state: self.agents[&id].clone() }).collect()
    }
}

/// Per (tick, agent) record. Decision fields are empty for the final tick,
/// whose input is never computed.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRecord {
    pub tick: u64,
    pub agent: AgentId,
    pub state: AgentState,
    pub target: Vector,
    pub current_horizon: usize,
    pub decision: Option<DecisionRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    pub input: AgentInput,
    pub branch: Branch,
    pub candidate_horizon: usize,
    pub validated: bool,
    pub status: SolveStatus,
    pub objective: Option<f64>,
    pub kkt_residual: Option<f64>,
    pub cell: usize,
    pub attempts: Vec<BranchAttempt>,
}

impl From<&CmcDecision> for DecisionRecord {
    fn from(d: &CmcDecision) -> Self {
        DecisionRecord {
            input: d.applied_input.clone(),
            branch: d.branch,
            candidate_horizon: d.candidate_horizon,
            validated: d.validated,
            status: d.status,
            objective: d.objective,
            kkt_residual: d.kkt_residual,
            cell: d.cell,
            attempts: d.attempts.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub tick: u64,
    pub i: AgentId,
    pub j: AgentId,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Event {
    SafetyViolation { tick: u64, i: AgentId, j: AgentId, d: f64 },
    Fallback { tick: u64, agent: AgentId, attempts: Vec<BranchAttempt> },
    DeadlockSuspect { tick: u64, agent: AgentId, since: u64 },
    Admission { tick: u64, agent: AgentId, accepted: bool, reason: String },
    Departure { tick: u64, agent: AgentId },
    TargetsChanged { tick: u64 },
    HardError { tick: u64, agent: Option<AgentId>, message: String },
}

impl Event {
    pub fn tick(&self) -> u64 {
        match self {
            Event::SafetyViolation { tick, .. }
            | Event::Fallback { tick, .. }
            | Event::DeadlockSuspect { tick, .. }
            | Event::Admission { tick, .. }
            | Event::Departure { tick, .. }
            | Event::TargetsChanged { tick }
            | Event::HardError { tick, .. } => *tick,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimLog {
    pub agents: Vec<AgentRecord>,
    pub pairs: Vec<PairRecord>,
    pub events: Vec<Event>,
    /// Wall time of each tick's planning phase [s]; not deterministic.
    pub tick_times: Vec<f64>,
}

impl SimLog {
    pub fn min_pair_distance(&self) -> Option<f64> {
        self.pairs.iter().map(|p| p.d).min_by(f64::total_cmp)
    }

    pub fn branch_counts(&self) -> BTreeMap<Branch, usize> {
        let mut out = BTreeMap::new();
        for b in [Branch::A, Branch::B, Branch::C, Branch::Fallback] {
            out.insert(b, 0);
        }
        for d in self.agents.iter().filter_map(|r| r.decision.as_ref()) {
            *out.entry(d.branch).or_default() += 1;
        }
        out
    }

    pub fn fallback_count(&self) -> usize {
        self.branch_counts()[&Branch::Fallback]
    }

    pub fn hard_errors(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, Event::HardError { .. })).count()
    }

    /// Records of one agent in tick order.
    pub fn agent_series(&self, agent: AgentId) -> impl Iterator<Item = &AgentRecord> {
        self.agents.iter().filter(move |r| r.agent == agent)
    }

    pub fn agent_ids(&self) -> BTreeSet<AgentId> {
        self.agents.iter().map(|r| r.agent).collect()
    }

    /// Unordered pairs that have at least one distance record.
    pub fn tracked_pairs(&self) -> BTreeSet<(AgentId, AgentId)> {
        self.pairs.iter().map(|p| (p.i, p.j)).collect()
    }

    /// Steps where the contingency horizon jumped by more than one, as
    /// `(agent, tick, before, after)`.
    pub fn horizon_law_violations(&self, params: &ModelParams) -> Vec<(AgentId, u64, usize, usize)> {
        let mut out = Vec::new();
        for id in self.agent_ids() {
            let series: Vec<&AgentRecord> = self.agent_series(id).collect();
            for w in series.windows(2) {
                let (a, b) = (w[0].current_horizon, w[1].current_horizon);
                let contiguous = w[1].tick == w[0].tick + 1;
                if contiguous && (a.abs_diff(b) > 1 || b > params.n_cont_max()) {
                    out.push((id, w[1].tick, a, b));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeadlockConfig {
    pub speed_threshold: f64,
    pub ticks: u64,
    pub distance_threshold: f64,
}

impl Default for DeadlockConfig {
    fn default() -> Self {
        DeadlockConfig { speed_threshold: 0.05, ticks: 25, distance_threshold: 0.5 }
    }
}

/// Flags every agent that stays slow and away from its target for
/// `config.ticks` consecutive ticks; one event per episode.
pub fn detect_deadlock(log: &SimLog, config: &DeadlockConfig) -> Vec<Event> {
    let mut out = Vec::new();
    for id in log.agent_ids() {
        let mut since: Option<u64> = None;
        let mut flagged = false;
        let mut last_tick: Option<u64> = None;
        for r in log.agent_series(id) {
            if last_tick.is_some_and(|t| r.tick != t + 1) {
                since = None;
                flagged = false;
            }
            last_tick = Some(r.tick);
            let stuck = r.state.speed() < config.speed_threshold
                && (&r.state.p - &r.target).norm() > config.distance_threshold;
            if !stuck {
                since = None;
                flagged = false;
                continue;
            }
            let start = *since.get_or_insert(r.tick);
            if !flagged && r.tick + 1 - start >= config.ticks {
                out.push(Event::DeadlockSuspect { tick: r.tick, agent: id, since: start });
                flagged = true;
            }
        }
    }
    out.sort_by_key(|e| e.tick());
    out
}

/// Outcome of an admission request.
#[derive(Debug, Clone, PartialEq)]
pub struct Admission {
    pub accepted: bool,
    pub agent: AgentId,
    /// Agent whose feasibility would be lost, if any.
    pub blocking: Option<AgentId>,
    pub reason: String,
}

pub struct Simulator {
    world: WorldState,
    controllers: Vec<CmcController>,
    targets: BTreeMap<AgentId, Vector>,
    nav: NavigationMap,
    config: ControllerConfig,
    pool: rayon::ThreadPool,
    pub log: SimLog,
}

impl Simulator {
    /// `agents` are `(id, initial state, initial target)`.
    pub fn new(
        agents: Vec<(AgentId, AgentState, Vector)>,
        nav: NavigationMap,
        config: ControllerConfig,
        threads: usize,
    ) -> Result<Self> {
        config.params.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let mut sim = Simulator {
            world: WorldState { tick: 0, agents: BTreeMap::new(), active: BTreeSet::new() },
            controllers: Vec::new(),
            targets: BTreeMap::new(),
            nav,
            config,
            pool,
            log: SimLog::default(),
        };
        for (id, state, target) in agents {
            sim.insert(id, state, target)?;
        }
        sim.log_distances();
        Ok(sim)
    }

    fn insert(&mut self, id: AgentId, state: AgentState, target: Vector) -> Result<()> {
        let params = &self.config.params;
        params.check_state(&state)?;
        params.check_dim(target.len())?;
        if self.world.agents.contains_key(&id) {
            return Err(Error::Config(format!("duplicate agent id {id}")));
        }
        self.world.agents.insert(id, state);
        self.world.active.insert(id);
        self.targets.insert(id, target);
        let pos = self.controllers.partition_point(|c| c.id < id);
        self.controllers.insert(pos, CmcController::new(id, self.config.clone()));
        Ok(())
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn nav(&self) -> &NavigationMap {
        &self.nav
    }

    pub fn params(&self) -> &ModelParams {
        &self.config.params
    }

    pub fn targets(&self) -> &BTreeMap<AgentId, Vector> {
        &self.targets
    }

    pub fn set_target(&mut self, id: AgentId, target: Vector) -> Result<()> {
        self.config.params.check_dim(target.len())?;
        match self.targets.get_mut(&id) {
            Some(t) => {
                *t = target;
                Ok(())
            }
            None => Err(Error::UnknownAgent(id)),
        }
    }

    pub fn next_free_id(&self) -> AgentId {
        self.world.agents.keys().next_back().map_or(0, |id| id + 1)
    }

    fn log_distances(&mut self) {
        let tick = self.world.tick;
        let ids: Vec<AgentId> = self.world.active.iter().copied().collect();
        let two_rho = 2.0 * self.config.params.rho;
        for (a, &i) in ids.iter().enumerate() {
            for &j in &ids[a + 1..] {
                let d = (&self.world.agents[&j].p - &self.world.agents[&i].p).norm();
                self.log.pairs.push(PairRecord { tick, i, j, d });
                if d < two_rho - NUMERIC_TOLERANCE {
                    self.log.events.push(Event::SafetyViolation { tick, i, j, d });
                }
            }
        }
    }

    fn record(&mut self, decisions: &BTreeMap<AgentId, CmcDecision>) {
        let params = self.config.params;
        for &id in &self.world.active {
            let state = self.world.agents[&id].clone();
            let current_horizon = crate::agent::observed_horizon(&state.v, &params);
            self.log.agents.push(AgentRecord {
                tick: self.world.tick,
                agent: id,
                state,
                target: self.targets[&id].clone(),
                current_horizon,
                decision: decisions.get(&id).map(DecisionRecord::from),
            });
        }
    }

    /// One synchronous tick: snapshot, plan in parallel, apply together.
    pub fn tick(&mut self) -> Result<()> {
        let snapshot = self.world.snapshot();
        let nav = &self.nav;
        let targets = &self.targets;
        let tick = self.world.tick;
        let active = &self.world.active;
        let started = Instant::now();
        let results: Vec<(AgentId, Result<CmcDecision>)> = self.pool.install(|| {
            self.controllers
                .par_iter_mut()
                .filter(|c| active.contains(&c.id))
                .map(|c| {
                    let own = snapshot.iter().find(|m| m.id == c.id).expect("active agent in snapshot");
                    let others: Vec<Measurement> = snapshot.iter().filter(|m| m.id != c.id).cloned().collect();
                    (c.id, c.plan_step(tick, &own.state, &others, nav, &targets[&c.id]))
                })
                .collect()
        });
        self.log.tick_times.push(started.elapsed().as_secs_f64());

        let mut decisions = BTreeMap::new();
        for (id, result) in results {
            match result {
                Ok(d) => {
                    decisions.insert(id, d);
                }
                Err(e) => {
                    self.log.events.push(Event::HardError { tick, agent: Some(id), message: e.to_string() });
                    return Err(e);
                }
            }
        }
        for (id, d) in &decisions {
            if d.branch == Branch::Fallback {
                self.log.events.push(Event::Fallback { tick, agent: *id, attempts: d.attempts.clone() });
            }
        }
        self.record(&decisions);
        let dt = self.config.params.dt;
        for (id, d) in &decisions {
            let state = self.world.agents.get_mut(id).expect("decided agent exists");
            *state = step_unchecked(state, &d.applied_input.a, dt);
        }
        self.world.tick += 1;
        self.log_distances();
        Ok(())
    }

    /// Records the final state without planning.
    pub fn finish(&mut self, deadlock: &DeadlockConfig) {
        self.record(&BTreeMap::new());
        let mut flagged = detect_deadlock(&self.log, deadlock);
        self.log.events.append(&mut flagged);
        self.log.events.sort_by_key(Event::tick);
    }

    /// Plug & play admission of a new agent at the current tick.
    pub fn admit_agent(&mut self, id: Option<AgentId>, state: AgentState, target: Vector) -> Result<Admission> {
        let id = id.unwrap_or_else(|| self.next_free_id());
        let tick = self.world.tick;
        let outcome = self.admission_check(id, &state, &target)?;
        self.log.events.push(Event::Admission {
            tick,
            agent: id,
            accepted: outcome.accepted,
            reason: outcome.reason.clone(),
        });
        if outcome.accepted {
            self.insert(id, state, target)?;
        }
        Ok(outcome)
    }

    fn admission_check(&self, id: AgentId, state: &AgentState, target: &Vector) -> Result<Admission> {
        let params = &self.config.params;
        let reject = |blocking: Option<AgentId>, reason: String| Admission { accepted: false, agent: id, blocking, reason };
        if self.world.agents.contains_key(&id) {
            return Ok(reject(None, format!("agent id {id} already used")));
        }
        if params.check_state(state).is_err() || contingency_plan(state, params).is_err() {
            return Ok(reject(None, "state violates the model bounds".into()));
        }
        if !self.nav.workspace().contains_inset(&state.p, params.rho, 0.0) {
            return Ok(reject(None, "outside the free space".into()));
        }
        let snapshot = self.world.snapshot();
        for m in &snapshot {
            let c = pairwise_constraint(id, &state.p, m.id, &m.state.p, params.rho, 1);
            if c.map_or(true, |c| c.collision_imminent) {
                return Ok(reject(Some(m.id), format!("overlaps agent {}", m.id)));
            }
        }
        let backend = self.config.backend.as_ref();

        let newcomer = PlanningFrame::build(id, state, &snapshot, &self.nav, target, &self.config)?;
        if !ftocp::solve(&newcomer.terminal_problem(&self.config), backend)?.is_optimal() {
            return Ok(reject(None, "newcomer has no feasible plan".into()));
        }
        let mut enlarged = snapshot.clone();
        enlarged.push(Measurement { id, state: state.clone() });
        for m in &snapshot {
            let frame = PlanningFrame::build(m.id, &m.state, &enlarged, &self.nav, &self.targets[&m.id], &self.config)?;
            if !ftocp::solve(&frame.terminal_problem(&self.config), backend)?.is_optimal() {
                return Ok(reject(Some(m.id), format!("agent {} would lose feasibility", m.id)));
            }
        }
        Ok(Admission { accepted: true, agent: id, blocking: None, reason: "accepted".into() })
    }

    /// Removes an agent immediately.
    pub fn remove_agent(&mut self, id: AgentId) -> Result<()> {
        if !self.world.active.remove(&id) {
            return Err(Error::UnknownAgent(id));
        }
        self.log.events.push(Event::Departure { tick: self.world.tick, agent: id });
        Ok(())
    }

    pub fn mark_targets_changed(&mut self) {
        self.log.events.push(Event::TargetsChanged { tick: self.world.tick });
    }
}
