//! Scenario files and the two reference scenario generators.
//!
//! Scenarios are TOML documents with an explicit `schema_version`. See
//! `docs/scenario-format.md` for the field reference.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::agent::{CellSelection, ControllerConfig};
use crate::dynamics::{AgentState, ModelParams, Vector};
use crate::error::{Error, Result};
use crate::ftocp::{BoundShape, CostWeights};
use crate::geometry::{AgentId, Aabb, ConvexCell, NavigationMap, Workspace};
use crate::sim::DeadlockConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Rejection-sampling budget of the generators.
pub const MAX_SAMPLING_ATTEMPTS: usize = 100_000;

/// Extra clearance between spawned agents on top of `2 * rho`.
pub const SPAWN_CLEARANCE: f64 = 0.2;

// Generator call sites draw from separate ChaCha8 streams of the same seed.
const STREAM_SPAWN: u64 = 1;
const STREAM_TARGETS: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: AgentId,
    pub position: Vec<f64>,
    #[serde(default)]
    pub velocity: Vec<f64>,
}

impl AgentSpec {
    pub fn state(&self) -> AgentState {
        let v = if self.velocity.is_empty() { vec![0.0; self.position.len()] } else { self.velocity.clone() };
        AgentState::from_slices(&self.position, &v)
    }
}

/// Targets that become active at `tick`, one per agent in `agents` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSet {
    pub tick: u64,
    pub positions: Vec<Vec<f64>>,
}

/// Scripted plug & play entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionSpec {
    pub tick: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<AgentId>,
    pub position: Vec<f64>,
    #[serde(default)]
    pub velocity: Vec<f64>,
    pub target: Vec<f64>,
}

impl AdmissionSpec {
    pub fn state(&self) -> AgentState {
        AgentSpec { id: 0, position: self.position.clone(), velocity: self.velocity.clone() }.state()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepartureSpec {
    pub tick: u64,
    pub agent: AgentId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(serialize_with = "ser_seed", deserialize_with = "de_seed")]
    pub seed: u64,
    pub duration_ticks: u64,
    /// Neighbor tracking range [m]; `inf` disables the filter.
    pub sensor_range: f64,
    #[serde(default)]
    pub bound_shape: BoundShape,
    #[serde(default)]
    pub cell_selection: CellSelection,
    #[serde(default)]
    pub deadlock: DeadlockConfig,
    pub params: ModelParams,
    pub weights: CostWeights,
    pub workspace: Workspace,
    pub agents: Vec<AgentSpec>,
    pub targets: Vec<TargetSet>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub admissions: Vec<AdmissionSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub departures: Vec<DepartureSpec>,
}

// TOML integers are signed 64-bit; larger seeds are written as strings.
fn ser_seed<S: Serializer>(seed: &u64, s: S) -> std::result::Result<S::Ok, S::Error> {
    match i64::try_from(*seed) {
        Ok(v) => s.serialize_i64(v),
        Err(_) => s.serialize_str(&seed.to_string()),
    }
}

fn de_seed<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<u64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(u64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Int(v) => Ok(v),
        Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let scenario: Scenario = toml::from_str(text)?;
        if scenario.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                scenario.schema_version
            )));
        }
        Ok(scenario)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Artifact { path: path.to_path_buf(), reason: e.to_string() })?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)
            .map_err(|e| Error::Artifact { path: path.to_path_buf(), reason: e.to_string() })
    }

    pub fn initial_targets(&self) -> Option<&TargetSet> {
        self.targets.iter().find(|t| t.tick == 0)
    }

    /// Everything a run needs before the first tick, or the first problem.
    pub fn precheck(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Precheck(msg));
        if let Err(e) = self.params.validate() {
            return fail(e.to_string());
        }
        if let Err(e) = self.weights.validate() {
            return fail(e.to_string());
        }
        let dim = self.params.dim.get();
        let rho = self.params.rho;
        if self.workspace.dim() != dim {
            return fail(format!("workspace is {}-D but the model is {dim}-D", self.workspace.dim()));
        }
        if let Err(e) = self.workspace.validate(rho) {
            return fail(e.to_string());
        }
        if !(self.sensor_range > 0.0) {
            return fail(format!("sensor_range must be positive, got {}", self.sensor_range));
        }
        if self.agents.is_empty() {
            return fail("no agents".into());
        }
        let mut ids: Vec<AgentId> = self.agents.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return fail("duplicate agent ids".into());
        }
        let mut states = Vec::new();
        for a in &self.agents {
            if a.position.len() != dim || !(a.velocity.is_empty() || a.velocity.len() == dim) {
                return fail(format!("agent {} has the wrong dimension", a.id));
            }
            let s = a.state();
            if !s.is_finite() {
                return fail(format!("agent {} has a non-finite state", a.id));
            }
            if s.speed() > self.params.v_max {
                return fail(format!("agent {} exceeds the speed limit", a.id));
            }
            if !self.workspace.contains_inset(&s.p, rho, 0.0) {
                return fail(format!("agent {} is outside the free space inset by rho", a.id));
            }
            states.push((a.id, s));
        }
        for (k, (i, si)) in states.iter().enumerate() {
            for (j, sj) in &states[k + 1..] {
                let d = (&si.p - &sj.p).norm();
                if d < 2.0 * rho {
                    return fail(format!("agents {i} and {j} are {d} apart, closer than 2 rho"));
                }
            }
        }
        if self.initial_targets().is_none() {
            return fail("no target set active at tick 0".into());
        }
        if self.targets.windows(2).any(|w| w[0].tick >= w[1].tick) {
            return fail("target sets must have strictly increasing ticks".into());
        }
        for t in &self.targets {
            if t.positions.len() != self.agents.len() || t.positions.iter().any(|p| p.len() != dim) {
                return fail(format!("target set at tick {} does not match the agents", t.tick));
            }
        }
        for a in &self.admissions {
            if a.position.len() != dim || a.target.len() != dim || !(a.velocity.is_empty() || a.velocity.len() == dim) {
                return fail(format!("admission at tick {} has the wrong dimension", a.tick));
            }
        }
        Ok(())
    }

    pub fn navigation(&self) -> Result<NavigationMap> {
        NavigationMap::new(self.workspace.clone(), self.params.rho)
    }

    pub fn controller_config(&self) -> ControllerConfig {
        let mut cfg = ControllerConfig::new(self.params, self.weights);
        cfg.sensor_range = self.sensor_range;
        cfg.bound_shape = self.bound_shape;
        cfg.cell_selection = self.cell_selection;
        cfg
    }

    /// `(id, state, initial target)` for every initial agent.
    pub fn initial_agents(&self) -> Vec<(AgentId, AgentState, Vector)> {
        let targets = self.initial_targets().map(|t| t.positions.clone()).unwrap_or_default();
        self.agents
            .iter()
            .zip(targets)
            .map(|(a, t)| (a.id, a.state(), Vector::from_vec(t)))
            .collect()
    }
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_in(rng: &mut ChaCha8Rng, region: &Aabb) -> Vec<f64> {
    region.min.iter().zip(&region.max).map(|(lo, hi)| rng.gen_range(*lo..=*hi)).collect()
}

/// `count` points in `region`, pairwise at least `min_gap` apart.
fn sample_separated(rng: &mut ChaCha8Rng, region: &Aabb, count: usize, min_gap: f64) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > MAX_SAMPLING_ATTEMPTS {
            return Err(Error::Generator(format!(
                "could not place {count} points {min_gap} m apart within {MAX_SAMPLING_ATTEMPTS} attempts"
            )));
        }
        let p = sample_in(rng, region);
        let clear = out.iter().all(|q| {
            let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() >= min_gap
        });
        if clear {
            out.push(p);
        }
    }
    Ok(out)
}

fn inset_box(b: &Aabb, by: f64) -> Result<Aabb> {
    Aabb::new(b.min.iter().map(|v| v + by).collect(), b.max.iter().map(|v| v - by).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RtpConfig {
    pub params: ModelParams,
    pub weights: CostWeights,
    pub agents: usize,
    pub size: f64,
    pub target_sets: usize,
    pub ticks_per_set: u64,
}

impl Default for RtpConfig {
    fn default() -> Self {
        RtpConfig {
            params: ModelParams::reference(),
            weights: CostWeights::reference(),
            agents: 5,
            size: 20.0,
            target_sets: 4,
            ticks_per_set: 100,
        }
    }
}

/// Randomized target points with the reference configuration.
pub fn gen_rtp(seed: u64) -> Result<Scenario> {
    gen_rtp_with(seed, &RtpConfig::default())
}

pub fn gen_rtp_with(seed: u64, cfg: &RtpConfig) -> Result<Scenario> {
    let dim = cfg.params.dim.get();
    let rho = cfg.params.rho;
    let workspace = Workspace::rectangle(vec![0.0; dim], vec![cfg.size; dim])?;
    let area = inset_box(&workspace.boundary, rho)?;
    let spawn = sample_separated(&mut stream(seed, STREAM_SPAWN), &area, cfg.agents, 2.0 * rho + SPAWN_CLEARANCE)?;
    let mut rng = stream(seed, STREAM_TARGETS);
    let targets = (0..cfg.target_sets as u64)
        .map(|k| TargetSet {
            tick: k * cfg.ticks_per_set,
            positions: (0..cfg.agents).map(|_| sample_in(&mut rng, &area)).collect(),
        })
        .collect();
    Ok(Scenario {
        schema_version: SCHEMA_VERSION,
        name: "rtp".into(),
        seed,
        duration_ticks: cfg.target_sets as u64 * cfg.ticks_per_set,
        sensor_range: f64::INFINITY,
        bound_shape: BoundShape::Cone,
        cell_selection: CellSelection::RouteAware,
        deadlock: DeadlockConfig::default(),
        params: cfg.params,
        weights: cfg.weights,
        workspace,
        agents: spawn
            .into_iter()
            .enumerate()
            .map(|(id, position)| AgentSpec { id, position, velocity: vec![0.0; dim] })
            .collect(),
        targets,
        admissions: Vec::new(),
        departures: Vec::new(),
    })
}

/// Bottleneck geometry. These numbers are configuration defaults, not
/// measured values.
#[derive(Debug, Clone, PartialEq)]
pub struct BtnConfig {
    pub params: ModelParams,
    pub weights: CostWeights,
    pub agents: usize,
    pub width: f64,
    pub height: f64,
    pub wall_thickness: f64,
    pub gap_width: f64,
    pub gap_center: f64,
    /// How far the corridor cell reaches into each room.
    pub corridor_overhang: f64,
    pub duration_ticks: u64,
}

impl Default for BtnConfig {
    fn default() -> Self {
        BtnConfig {
            params: ModelParams::reference(),
            weights: CostWeights::reference(),
            agents: 5,
            width: 60.0,
            height: 20.0,
            wall_thickness: 2.0,
            gap_width: 6.0,
            gap_center: 10.0,
            corridor_overhang: 4.0,
            duration_ticks: 150,
        }
    }
}

pub fn btn_workspace(cfg: &BtnConfig) -> Result<Workspace> {
    if cfg.params.dim.get() != 2 {
        return Err(Error::Config("the bottleneck scenario is 2-D".into()));
    }
    let wall_lo = 0.5 * (cfg.width - cfg.wall_thickness);
    let wall_hi = wall_lo + cfg.wall_thickness;
    let gap_lo = cfg.gap_center - 0.5 * cfg.gap_width;
    let gap_hi = cfg.gap_center + 0.5 * cfg.gap_width;
    if gap_lo < 0.0 || gap_hi > cfg.height {
        return Err(Error::Config("gap does not fit in the wall".into()));
    }
    let boundary = Aabb::new(vec![0.0, 0.0], vec![cfg.width, cfg.height])?;
    let mut obstacles = Vec::new();
    if gap_lo > 0.0 {
        obstacles.push(Aabb::new(vec![wall_lo, 0.0], vec![wall_hi, gap_lo])?);
    }
    if gap_hi < cfg.height {
        obstacles.push(Aabb::new(vec![wall_lo, gap_hi], vec![wall_hi, cfg.height])?);
    }
    let cells = vec![
        ConvexCell::from_box(&Aabb::new(vec![0.0, 0.0], vec![wall_lo, cfg.height])?),
        ConvexCell::from_box(&Aabb::new(
            vec![wall_lo - cfg.corridor_overhang, gap_lo],
            vec![wall_hi + cfg.corridor_overhang, gap_hi],
        )?),
        ConvexCell::from_box(&Aabb::new(vec![wall_hi, 0.0], vec![cfg.width, cfg.height])?),
    ];
    Ok(Workspace { boundary, obstacles, cells })
}

/// Bottleneck scenario with the reference configuration.
pub fn gen_btn(seed: u64) -> Result<Scenario> {
    gen_btn_with(seed, &BtnConfig::default())
}

pub fn gen_btn_with(seed: u64, cfg: &BtnConfig) -> Result<Scenario> {
    let rho = cfg.params.rho;
    let workspace = btn_workspace(cfg)?;
    let wall_lo = 0.5 * (cfg.width - cfg.wall_thickness);
    let wall_hi = wall_lo + cfg.wall_thickness;
    let left = inset_box(&Aabb::new(vec![0.0, 0.0], vec![wall_lo, cfg.height])?, rho)?;
    let right = inset_box(&Aabb::new(vec![wall_hi, 0.0], vec![cfg.width, cfg.height])?, rho)?;
    let min_gap = 2.0 * rho + SPAWN_CLEARANCE;
    let spawn = sample_separated(&mut stream(seed, STREAM_SPAWN), &left, cfg.agents, min_gap)?;
    let mut goals = sample_separated(&mut stream(seed, STREAM_TARGETS), &right, cfg.agents, min_gap)?;

    // Topmost spawn goes to the bottommost target.
    let mut by_height: Vec<usize> = (0..cfg.agents).collect();
    by_height.sort_by(|&a, &b| spawn[b][1].total_cmp(&spawn[a][1]));
    goals.sort_by(|a, b| a[1].total_cmp(&b[1]));
    let mut positions = vec![Vec::new(); cfg.agents];
    for (rank, &agent) in by_height.iter().enumerate() {
        positions[agent] = goals[rank].clone();
    }

    Ok(Scenario {
        schema_version: SCHEMA_VERSION,
        name: "btn".into(),
        seed,
        duration_ticks: cfg.duration_ticks,
        sensor_range: f64::INFINITY,
        bound_shape: BoundShape::Cone,
        cell_selection: CellSelection::RouteAware,
        deadlock: DeadlockConfig::default(),
        params: cfg.params,
        weights: cfg.weights,
        workspace,
        agents: spawn
            .into_iter()
            .enumerate()
            .map(|(id, position)| AgentSpec { id, position, velocity: vec![0.0, 0.0] })
            .collect(),
        targets: vec![TargetSet { tick: 0, positions }],
        admissions: Vec::new(),
        departures: Vec::new(),
    })
}
