//! Linear constraints: pairwise collision-avoidance half-spaces built from
//! contingency trajectories, and the static workspace.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::conic::{chebyshev_center, ClarabelBackend};
use crate::contingency::ContingencyPlan;
use crate::dynamics::{ModelParams, Vector};
use crate::error::{Error, Result};

pub type AgentId = usize;

/// Agents whose contingency positions fall short of `2 * rho` by at most
/// this much (m) get a plane through their own position instead of a
/// plane behind it.
pub const SEPARATION_SLACK: f64 = 1e-6;

/// Default extra distance (m) added to the sensor range.
pub const DEFAULT_SENSOR_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Peer {
    Agent(AgentId),
    Environment,
}

/// `normal' p <= offset` for the owner's position at `pred_step`.
///
/// Environment constraints carry `pred_step = 1` and hold at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpaceConstraint {
    pub normal: Vector,
    pub offset: f64,
    pub owner: AgentId,
    pub other: Peer,
    pub pred_step: usize,
    /// Set when the two positions the constraint was built from were
    /// already closer than `2 * rho`.
    pub collision_imminent: bool,
}

impl HalfSpaceConstraint {
    /// Signed slack `offset - normal' p` (nonnegative when satisfied).
    pub fn slack(&self, p: &Vector) -> f64 {
        self.offset - self.normal.dot(p)
    }

    pub fn is_satisfied(&self, p: &Vector, tol: f64) -> bool {
        self.slack(p) >= -tol
    }
}

/// Perpendicular bisector between `p_m` and `p_j`, pulled back by `rho`
/// towards the owner.
pub fn pairwise_constraint(
    owner: AgentId,
    p_m: &Vector,
    other: AgentId,
    p_j: &Vector,
    rho: f64,
    pred_step: usize,
) -> Result<HalfSpaceConstraint> {
    let diff = p_j - p_m;
    let d = diff.norm();
    if d == 0.0 || !d.is_finite() {
        return Err(Error::DegenerateGeometry { step: pred_step });
    }
    let normal = diff / d;
    let mut tightening = 0.5 * d - rho;
    let collision_imminent = d < 2.0 * rho;
    if collision_imminent && 2.0 * rho - d <= SEPARATION_SLACK {
        tightening = 0.0;
    }
    let offset = normal.dot(p_m) + tightening;
    Ok(HalfSpaceConstraint {
        normal,
        offset,
        owner,
        other: Peer::Agent(other),
        pred_step,
        collision_imminent,
    })
}

/// One constraint per prediction step `1..=n_cont_max + 1`, built from the
/// two agents' contingency positions at that step.
pub fn build_pair_constraints(
    owner: AgentId,
    plan_m: &ContingencyPlan,
    other: AgentId,
    plan_j: &ContingencyPlan,
    params: &ModelParams,
) -> Result<Vec<HalfSpaceConstraint>> {
    let steps = params.n_cont_max() + 1;
    (1..=steps)
        .map(|i| {
            let p_m = plan_at(plan_m, i);
            let p_j = plan_at(plan_j, i);
            pairwise_constraint(owner, p_m, other, p_j, params.rho, i)
        })
        .collect()
}

fn plan_at(plan: &ContingencyPlan, step: usize) -> &Vector {
    plan.positions.get(step - 1).unwrap_or(&plan.stop_position)
}

/// Default sensor range: twice the braking distance from full speed, plus
/// one agent diameter and `margin`.
pub fn default_sensor_range(params: &ModelParams, margin: f64) -> f64 {
    2.0 * params.max_braking_distance() + 2.0 * params.rho + margin
}

/// Whether agent `j` is close enough to `m` to be tracked.
pub fn sensor_range_filter(p_m: &Vector, p_j: &Vector, range: f64) -> bool {
    range.is_infinite() || (p_j - p_m).norm() <= range
}

/// `normal' x <= offset` with unit normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl HalfSpace {
    pub fn new(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() || !offset.is_finite() {
            return Err(Error::Config("half-space needs a nonzero finite normal".into()));
        }
        Ok(HalfSpace { normal: normal.iter().map(|v| v / norm).collect(), offset: offset / norm })
    }

    pub fn slack(&self, p: &Vector) -> f64 {
        self.offset - self.normal.iter().zip(p.iter()).map(|(n, x)| n * x).sum::<f64>()
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Aabb {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() || min.iter().zip(&max).any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Config(format!("invalid box {min:?}..{max:?}")));
        }
        Ok(Aabb { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn half_spaces(&self) -> Vec<HalfSpace> {
        let d = self.dim();
        let mut out = Vec::with_capacity(2 * d);
        for k in 0..d {
            let mut lower = vec![0.0; d];
            lower[k] = -1.0;
            out.push(HalfSpace { normal: lower, offset: -self.min[k] });
            let mut upper = vec![0.0; d];
            upper[k] = 1.0;
            out.push(HalfSpace { normal: upper, offset: self.max[k] });
        }
        out
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter().zip(&self.min).zip(&self.max).all(|((x, lo), hi)| lo <= x && x <= hi)
    }
}

/// Convex polytope given by unit-normal half-spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexCell {
    pub half_spaces: Vec<HalfSpace>,
}

impl ConvexCell {
    pub fn from_box(b: &Aabb) -> Self {
        ConvexCell { half_spaces: b.half_spaces() }
    }

    /// Every face moved inwards by `rho`.
    pub fn inset(&self, rho: f64) -> ConvexCell {
        ConvexCell {
            half_spaces: self
                .half_spaces
                .iter()
                .map(|h| HalfSpace { normal: h.normal.clone(), offset: h.offset - rho })
                .collect(),
        }
    }

    /// Distance from `p` to the nearest face; negative outside.
    pub fn margin(&self, p: &Vector) -> f64 {
        self.half_spaces.iter().map(|h| h.slack(p)).fold(f64::INFINITY, f64::min)
    }
}

/// Static environment: outer boundary, obstacles (for display), and a
/// cover of the free space by overlapping convex cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub boundary: Aabb,
    #[serde(default)]
    pub obstacles: Vec<Aabb>,
    pub cells: Vec<ConvexCell>,
}

impl Workspace {
    /// Obstacle-free box; the box itself is the only cell.
    pub fn rectangle(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        let boundary = Aabb::new(min, max)?;
        let cells = vec![ConvexCell::from_box(&boundary)];
        Ok(Workspace { boundary, obstacles: Vec::new(), cells })
    }

    pub fn dim(&self) -> usize {
        self.boundary.dim()
    }

    pub fn validate(&self, rho: f64) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::Config("workspace needs at least one cell".into()));
        }
        let backend = ClarabelBackend::default();
        for (idx, cell) in self.cells.iter().enumerate() {
            if cell.half_spaces.iter().any(|h| h.normal.len() != self.dim()) {
                return Err(Error::Config(format!("cell {idx} has the wrong dimension")));
            }
            let inset = cell.inset(rho);
            let hs: Vec<(Vec<f64>, f64)> = inset.half_spaces.iter().map(|h| (h.normal.clone(), h.offset)).collect();
            if chebyshev_center(&hs, self.dim(), 1e6, &backend)?.is_none() {
                return Err(Error::Config(format!("cell {idx} is empty once inset by rho = {rho}")));
            }
        }
        Ok(())
    }

    /// Margin of `p` inside each inset cell.
    pub fn inset_margins(&self, p: &Vector, rho: f64) -> Vec<f64> {
        self.cells.iter().map(|c| c.inset(rho).margin(p)).collect()
    }

    /// Deepest inset cell containing `p` (lowest index on ties).
    pub fn select_cell(&self, p: &Vector, rho: f64) -> Option<usize> {
        best_by_margin(self.inset_margins(p, rho).into_iter().enumerate(), 0.0)
    }

    /// Whether `p` lies in the union of inset cells, up to `tol`.
    pub fn contains_inset(&self, p: &Vector, rho: f64, tol: f64) -> bool {
        self.inset_margins(p, rho).into_iter().any(|m| m >= -tol)
    }

    /// Inset faces of `cell` as owner constraints.
    pub fn cell_constraints(&self, owner: AgentId, cell: usize, rho: f64) -> Vec<HalfSpaceConstraint> {
        self.cells[cell]
            .inset(rho)
            .half_spaces
            .into_iter()
            .map(|h| HalfSpaceConstraint {
                normal: Vector::from_vec(h.normal),
                offset: h.offset,
                owner,
                other: Peer::Environment,
                pred_step: 1,
                collision_imminent: false,
            })
            .collect()
    }
}

fn best_by_margin(margins: impl Iterator<Item = (usize, f64)>, tol: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (idx, m) in margins {
        if m < -tol {
            continue;
        }
        if best.is_none_or(|(_, bm)| m > bm) {
            best = Some((idx, m));
        }
    }
    best.map(|(idx, _)| idx)
}

/// Inset half-spaces of the cell chosen for `position`.
pub fn workspace_constraints(
    owner: AgentId,
    position: &Vector,
    workspace: &Workspace,
    rho: f64,
) -> Result<Vec<HalfSpaceConstraint>> {
    let cell = workspace
        .select_cell(position, rho)
        .ok_or_else(|| Error::OutOfWorkspace { position: position.iter().copied().collect() })?;
    Ok(workspace.cell_constraints(owner, cell, rho))
}

/// Cell adjacency and passage points through the free-space cover, used
/// to pick the planning cell and an intermediate goal when the target lies
/// in another cell.
#[derive(Debug, Clone)]
pub struct NavigationMap {
    workspace: Workspace,
    rho: f64,
    /// `portals[a][b]`: a point deep inside both inset cells, if they overlap.
    portals: Vec<Vec<Option<Vector>>>,
}

/// Planning cell and the goal to steer towards inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct CellChoice {
    pub cell: usize,
    pub goal: Vector,
    /// Cell hops left to the target (0 when the target is in `cell`).
    pub hops: Option<usize>,
}

impl NavigationMap {
    pub fn new(workspace: Workspace, rho: f64) -> Result<Self> {
        let n = workspace.cells.len();
        let dim = workspace.dim();
        let backend = ClarabelBackend::default();
        let mut portals = vec![vec![None; n]; n];
        for a in 0..n {
            for b in (a + 1)..n {
                let hs: Vec<(Vec<f64>, f64)> = workspace.cells[a]
                    .inset(rho)
                    .half_spaces
                    .iter()
                    .chain(workspace.cells[b].inset(rho).half_spaces.iter())
                    .map(|h| (h.normal.clone(), h.offset))
                    .collect();
                if let Some((center, _)) = chebyshev_center(&hs, dim, 1e6, &backend)? {
                    let point = Vector::from_vec(center);
                    portals[a][b] = Some(point.clone());
                    portals[b][a] = Some(point);
                }
            }
        }
        Ok(NavigationMap { workspace, rho, portals })
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn portal(&self, a: usize, b: usize) -> Option<&Vector> {
        self.portals[a][b].as_ref()
    }

    /// Hop distance from every cell to the nearest cell containing `target`.
    pub fn hops_to(&self, target: &Vector) -> Vec<Option<usize>> {
        let n = self.workspace.cells.len();
        let mut dist = vec![None; n];
        let mut queue = VecDeque::new();
        for (idx, m) in self.workspace.inset_margins(target, self.rho).into_iter().enumerate() {
            if m >= 0.0 {
                dist[idx] = Some(0);
                queue.push_back(idx);
            }
        }
        while let Some(a) = queue.pop_front() {
            let next = dist[a].map(|d| d + 1);
            for b in 0..n {
                if dist[b].is_none() && self.portals[a][b].is_some() {
                    dist[b] = next;
                    queue.push_back(b);
                }
            }
        }
        dist
    }

    /// Picks the planning cell for an agent at `position` whose braking
    /// positions are `braking`.
    ///
    /// Candidates are inset cells holding the position and every braking
    /// position (to `tol`). Among them the one fewest hops from the target
    /// wins, then the deepest, then the lowest index. Without candidates the
    /// deepest cell holding the position is used.
    pub fn choose(&self, position: &Vector, braking: &[Vector], target: &Vector, tol: f64) -> Result<CellChoice> {
        let hops = self.hops_to(target);
        let insets: Vec<ConvexCell> = self.workspace.cells.iter().map(|c| c.inset(self.rho)).collect();
        let mut best: Option<(usize, usize, f64)> = None;
        for (idx, cell) in insets.iter().enumerate() {
            let margin = cell.margin(position);
            if margin < -tol || braking.iter().any(|p| cell.margin(p) < -tol) {
                continue;
            }
            let h = hops[idx].unwrap_or(usize::MAX);
            let better = match best {
                None => true,
                Some((_, bh, bm)) => h < bh || (h == bh && margin > bm),
            };
            if better {
                best = Some((idx, h, margin));
            }
        }
        let cell = match best {
            Some((idx, _, _)) => idx,
            None => best_by_margin(insets.iter().map(|c| c.margin(position)).enumerate(), tol)
                .ok_or_else(|| Error::OutOfWorkspace { position: position.iter().copied().collect() })?,
        };
        let goal = match hops[cell] {
            Some(h) if h > 0 => (0..insets.len())
                .find(|&b| hops[b] == Some(h - 1) && self.portals[cell][b].is_some())
                .and_then(|b| self.portals[cell][b].clone())
                .unwrap_or_else(|| target.clone()),
            _ => target.clone(),
        };
        Ok(CellChoice { cell, goal, hops: hops[cell] })
    }
}
