//! Sparse conic programs and the solver backend behind them.
//!
//! Programs use the standard form
//!
//! ```text
//! minimize    1/2 x'Px + q'x + c
//! subject to  b - Ax in K
//! ```
//!
//! where `K` is a product of zero cones, nonnegative orthants and
//! second-order cones.

use std::fmt::Write as _;
use std::ops::Range;
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use crate::error::{Error, Result};

/// Affine expression `sum(coef * x[col]) + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(value: f64) -> Self {
        LinExpr { terms: Vec::new(), constant: value }
    }

    pub fn var(col: usize) -> Self {
        LinExpr { terms: vec![(col, 1.0)], constant: 0.0 }
    }

    pub fn with_term(mut self, col: usize, coef: f64) -> Self {
        if coef != 0.0 {
            self.terms.push((col, coef));
        }
        self
    }

    pub fn plus_constant(mut self, value: f64) -> Self {
        self.constant += value;
        self
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        for (_, c) in &mut self.terms {
            *c *= factor;
        }
        self.constant *= factor;
        self
    }

    pub fn add(mut self, other: &LinExpr) -> Self {
        self.terms.extend_from_slice(&other.terms);
        self.constant += other.constant;
        self
    }

    /// Terms with repeated columns combined, sorted by column.
    pub fn merged_terms(&self) -> Vec<(usize, f64)> {
        let mut terms = self.terms.clone();
        terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (j, c) in terms {
            match out.last_mut() {
                Some(last) if last.0 == j => last.1 += c,
                _ => out.push((j, c)),
            }
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, c)| c * x[j]).sum::<f64>() + self.constant
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    Zero,
    Nonnegative,
    SecondOrder,
}

/// What a block of rows encodes. Used for diagnostics and row counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowTag {
    Dynamics,
    InputBound,
    VelocityBound,
    Workspace,
    ContingencyWorkspace,
    Collision,
    ExtraSpeedBound,
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBlock {
    pub kind: ConeKind,
    pub rows: Range<usize>,
    pub tag: RowTag,
}

/// Sparse conic program in triplet form.
#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    num_vars: usize,
    p_entries: Vec<(usize, usize, f64)>,
    q: Vec<f64>,
    objective_constant: f64,
    a_entries: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
    blocks: Vec<ConstraintBlock>,
}

impl ConicProgram {
    pub fn new(num_vars: usize) -> Self {
        ConicProgram { num_vars, q: vec![0.0; num_vars], ..Default::default() }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    pub fn blocks(&self) -> &[ConstraintBlock] {
        &self.blocks
    }

    /// Number of rows carrying `tag`.
    pub fn rows_tagged(&self, tag: RowTag) -> usize {
        self.blocks.iter().filter(|b| b.tag == tag).map(|b| b.rows.len()).sum()
    }

    /// Number of second-order cones carrying `tag`.
    pub fn cones_tagged(&self, tag: RowTag) -> usize {
        self.blocks.iter().filter(|b| b.tag == tag && b.kind == ConeKind::SecondOrder).count()
    }

    /// Adds `weight * expr^2` to the objective.
    pub fn add_square(&mut self, expr: &LinExpr, weight: f64) {
        if weight == 0.0 {
            return;
        }
        let terms = expr.merged_terms();
        for (ia, &(i, ci)) in terms.iter().enumerate() {
            for &(j, cj) in &terms[ia..] {
                let (r, c) = if i <= j { (i, j) } else { (j, i) };
                self.p_entries.push((r, c, 2.0 * weight * ci * cj));
            }
            self.q[i] += 2.0 * weight * expr.constant * ci;
        }
        self.objective_constant += weight * expr.constant * expr.constant;
    }

    pub fn add_linear_cost(&mut self, col: usize, coef: f64) {
        self.q[col] += coef;
    }

    fn push_row(&mut self, expr: &LinExpr, negate: bool) {
        let row = self.b.len();
        let sign = if negate { -1.0 } else { 1.0 };
        for &(j, c) in &expr.terms {
            debug_assert!(j < self.num_vars);
            self.a_entries.push((row, j, sign * c));
        }
        self.b.push(sign * -expr.constant);
    }

    fn open_block(&mut self, kind: ConeKind, tag: RowTag, rows: usize) {
        let start = self.b.len() - rows;
        if kind != ConeKind::SecondOrder {
            if let Some(last) = self.blocks.last_mut() {
                if last.kind == kind && last.tag == tag && last.rows.end == start {
                    last.rows.end = self.b.len();
                    return;
                }
            }
        }
        self.blocks.push(ConstraintBlock { kind, rows: start..self.b.len(), tag });
    }

    /// `expr == 0`.
    pub fn add_equality(&mut self, expr: &LinExpr, tag: RowTag) {
        self.push_row(expr, false);
        self.open_block(ConeKind::Zero, tag, 1);
    }

    /// `expr <= 0`.
    pub fn add_le(&mut self, expr: &LinExpr, tag: RowTag) {
        self.push_row(expr, false);
        self.open_block(ConeKind::Nonnegative, tag, 1);
    }

    /// `||(exprs)||_2 <= bound` for a constant `bound`.
    pub fn add_norm_le(&mut self, exprs: &[LinExpr], bound: f64, tag: RowTag) {
        self.b.push(bound);
        for e in exprs {
            // b - Ax = e  =>  A = -coefs, b = constant
            self.push_row(e, true);
        }
        self.open_block(ConeKind::SecondOrder, tag, exprs.len() + 1);
    }

    /// Inner regular `sides`-gon approximation of `||(ex, ey)|| <= bound`.
    pub fn add_polygon_norm_le(&mut self, exprs: &[LinExpr], bound: f64, sides: usize, tag: RowTag) -> Result<()> {
        if exprs.len() != 2 {
            return Err(Error::Config("polygonal norm bounds are only available in two dimensions".into()));
        }
        if sides < 3 {
            return Err(Error::Config(format!("polygon needs at least 3 sides, got {sides}")));
        }
        let apothem = bound * (std::f64::consts::PI / sides as f64).cos();
        for k in 0..sides {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / sides as f64;
            let row = exprs[0]
                .clone()
                .scaled(theta.cos())
                .add(&exprs[1].clone().scaled(theta.sin()))
                .plus_constant(-apothem);
            self.add_le(&row, tag);
        }
        Ok(())
    }

    /// Objective value at `x`, including the constant term.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut quad = 0.0;
        for &(i, j, v) in &self.p_entries {
            let term = v * x[i] * x[j];
            quad += if i == j { 0.5 * term } else { term };
        }
        quad + self.q.iter().zip(x).map(|(q, x)| q * x).sum::<f64>() + self.objective_constant
    }

    /// Slack `b - Ax`.
    pub fn slack(&self, x: &[f64]) -> Vec<f64> {
        let mut s = self.b.clone();
        for &(i, j, v) in &self.a_entries {
            s[i] -= v * x[j];
        }
        s
    }

    /// Largest cone-membership violation of `b - Ax` (absolute units).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let s = self.slack(x);
        self.blocks
            .iter()
            .map(|block| {
                let rows = &s[block.rows.clone()];
                match block.kind {
                    ConeKind::Zero => rows.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
                    ConeKind::Nonnegative => rows.iter().fold(0.0_f64, |m, v| m.max(-v)),
                    ConeKind::SecondOrder => {
                        let tail = rows[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
                        (tail - rows[0]).max(0.0)
                    }
                }
            })
            .fold(0.0, f64::max)
    }

    /// Largest violation among rows carrying `tag`.
    pub fn max_violation_tagged(&self, x: &[f64], tag: RowTag) -> f64 {
        let s = self.slack(x);
        self.blocks
            .iter()
            .filter(|b| b.tag == tag)
            .map(|block| {
                let rows = &s[block.rows.clone()];
                match block.kind {
                    ConeKind::Zero => rows.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
                    ConeKind::Nonnegative => rows.iter().fold(0.0_f64, |m, v| m.max(-v)),
                    ConeKind::SecondOrder => {
                        let tail = rows[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
                        (tail - rows[0]).max(0.0)
                    }
                }
            })
            .fold(0.0, f64::max)
    }

    /// Scaled stationarity residual `||Px + q + A'z||_inf / (1 + ||q||_inf)`.
    pub fn stationarity(&self, x: &[f64], z: &[f64]) -> f64 {
        let mut r = self.q.clone();
        for &(i, j, v) in &self.p_entries {
            r[i] += v * x[j];
            if i != j {
                r[j] += v * x[i];
            }
        }
        for &(i, j, v) in &self.a_entries {
            r[j] += v * z[i];
        }
        let scale = 1.0 + self.q.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        r.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / scale
    }

    fn clarabel_data(&self) -> (CscMatrix<f64>, CscMatrix<f64>, Vec<SupportedConeT<f64>>) {
        let (pi, (pj, pv)): (Vec<_>, (Vec<_>, Vec<_>)) =
            self.p_entries.iter().map(|&(i, j, v)| (i, (j, v))).unzip();
        let p = CscMatrix::new_from_triplets(self.num_vars, self.num_vars, pi, pj, pv);
        let (ai, (aj, av)): (Vec<_>, (Vec<_>, Vec<_>)) =
            self.a_entries.iter().map(|&(i, j, v)| (i, (j, v))).unzip();
        let a = CscMatrix::new_from_triplets(self.b.len(), self.num_vars, ai, aj, av);
        let cones = self
            .blocks
            .iter()
            .map(|block| match block.kind {
                ConeKind::Zero => SupportedConeT::ZeroConeT(block.rows.len()),
                ConeKind::Nonnegative => SupportedConeT::NonnegativeConeT(block.rows.len()),
                ConeKind::SecondOrder => SupportedConeT::SecondOrderConeT(block.rows.len()),
            })
            .collect();
        (p, a, cones)
    }

    fn p_is_diagonal(&self) -> bool {
        self.p_entries.iter().all(|&(i, j, v)| i == j || v == 0.0)
    }

    /// Writes the program in Conic Benchmark Format (CBF, version 3).
    ///
    /// The quadratic objective is moved into an epigraph variable bounded by
    /// a rotated quadratic cone, which requires a diagonal `P`.
    pub fn to_cbf(&self) -> Result<String> {
        if !self.p_is_diagonal() {
            return Err(Error::Config("CBF export needs a diagonal quadratic objective".into()));
        }
        let mut diag = vec![0.0; self.num_vars];
        for &(i, _, v) in &self.p_entries {
            diag[i] += v;
        }
        let quad_vars: Vec<usize> = (0..self.num_vars).filter(|&i| diag[i] != 0.0).collect();
        let t = self.num_vars;
        let n = self.num_vars + 1;

        let mut out = String::new();
        let _ = writeln!(out, "VER\n3\n\nOBJSENSE\nMIN\n\nVAR\n{n} 1\nF {n}\n");

        let mut cones: Vec<(String, usize)> = Vec::new();
        for block in &self.blocks {
            let (name, dim) = match block.kind {
                ConeKind::Zero => ("L=", block.rows.len()),
                ConeKind::Nonnegative => ("L+", block.rows.len()),
                ConeKind::SecondOrder => ("Q", block.rows.len()),
            };
            match cones.last_mut() {
                Some((last, d)) if last == name && name != "Q" => *d += dim,
                _ => cones.push((name.to_string(), dim)),
            }
        }
        let has_epigraph = !quad_vars.is_empty();
        if has_epigraph {
            cones.push(("QR".into(), quad_vars.len() + 2));
        }
        let total_rows: usize = cones.iter().map(|c| c.1).sum();
        let _ = writeln!(out, "CON\n{total_rows} {}", cones.len());
        for (name, dim) in &cones {
            let _ = writeln!(out, "{name} {dim}");
        }
        out.push('\n');

        let obj: Vec<(usize, f64)> = self
            .q
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, v)| (j, *v))
            .chain(has_epigraph.then_some((t, 1.0)))
            .collect();
        let _ = writeln!(out, "OBJACOORD\n{}", obj.len());
        for (j, v) in obj {
            let _ = writeln!(out, "{j} {v:.17e}");
        }
        let _ = writeln!(out, "\nOBJBCOORD\n{:.17e}\n", self.objective_constant);

        // CBF rows read `Ax + b in K`; ours read `b - Ax in K`.
        let m = self.b.len();
        let mut acoord: Vec<(usize, usize, f64)> = self.a_entries.iter().map(|&(i, j, v)| (i, j, -v)).collect();
        let mut bcoord: Vec<(usize, f64)> =
            self.b.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i, *v)).collect();
        if has_epigraph {
            // 2 * t * 1 >= sum (sqrt(P_ii) x_i)^2  <=>  t >= 1/2 x'Px
            acoord.push((m, t, 1.0));
            bcoord.push((m + 1, 1.0));
            for (k, &i) in quad_vars.iter().enumerate() {
                acoord.push((m + 2 + k, i, diag[i].sqrt()));
            }
        }
        let _ = writeln!(out, "ACOORD\n{}", acoord.len());
        for (i, j, v) in acoord {
            let _ = writeln!(out, "{i} {j} {v:.17e}");
        }
        let _ = writeln!(out, "\nBCOORD\n{}", bcoord.len());
        for (i, v) in bcoord {
            let _ = writeln!(out, "{i} {v:.17e}");
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NumericalFailure => "numerical-failure",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    /// Raw backend status, kept for diagnostics and infeasibility records.
    pub backend_status: String,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub iterations: u32,
    pub solve_time: f64,
}

/// Anything that can solve a [`ConicProgram`].
pub trait ConicBackend: Send + Sync {
    fn solve(&self, program: &ConicProgram) -> Result<ConicSolution>;
}

/// Residual level at which a solve is accepted as optimal.
pub const ACCEPT_TOLERANCE: f64 = 1e-6;

/// Interior-point backend (Clarabel).
///
/// Solves at `tolerance` first; a numerical failure (not an infeasibility
/// verdict) is retried once at `retry_tolerance`.
#[derive(Debug, Clone)]
pub struct ClarabelBackend {
    pub tolerance: f64,
    pub retry_tolerance: Option<f64>,
    pub max_iter: u32,
}

impl Default for ClarabelBackend {
    fn default() -> Self {
        ClarabelBackend { tolerance: 1e-10, retry_tolerance: Some(1e-8), max_iter: 200 }
    }
}

impl ClarabelBackend {
    pub fn with_tolerance(tolerance: f64) -> Self {
        ClarabelBackend { tolerance, retry_tolerance: None, max_iter: 200 }
    }

    fn settings(&self, tol: f64) -> DefaultSettings<f64> {
        DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(self.max_iter)
            .tol_feas(tol)
            .tol_gap_abs(tol)
            .tol_gap_rel(tol)
            .max_threads(1)
            .build()
            .expect("static solver settings are valid")
    }

    fn solve_at(&self, program: &ConicProgram, tol: f64) -> Result<ConicSolution> {
        let started = Instant::now();
        let (p, a, cones) = program.clarabel_data();
        let mut solver = DefaultSolver::new(&p, &program.q, &a, &program.b, &cones, self.settings(tol))
            .map_err(|e| Error::Solver(format!("{e:?}")))?;
        solver.solve();
        let raw = solver.solution.status;
        let x = solver.solution.x.clone();
        let z = solver.solution.z.clone();
        let max_violation = program.max_violation(&x);
        let kkt_residual = program.stationarity(&x, &z).max(max_violation);
        let status = match raw {
            SolverStatus::Solved | SolverStatus::AlmostSolved if kkt_residual < ACCEPT_TOLERANCE => {
                SolveStatus::Optimal
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            _ => SolveStatus::NumericalFailure,
        };
        Ok(ConicSolution {
            status,
            backend_status: format!("{raw:?}"),
            objective: program.objective(&x),
            x,
            z,
            kkt_residual,
            max_violation,
            iterations: solver.solution.iterations,
            solve_time: started.elapsed().as_secs_f64(),
        })
    }
}

impl ConicBackend for ClarabelBackend {
    fn solve(&self, program: &ConicProgram) -> Result<ConicSolution> {
        let first = self.solve_at(program, self.tolerance)?;
        match self.retry_tolerance {
            Some(tol) if first.status == SolveStatus::NumericalFailure => {
                let mut second = self.solve_at(program, tol)?;
                second.solve_time += first.solve_time;
                second.iterations += first.iterations;
                second.backend_status = format!("{} after {}", second.backend_status, first.backend_status);
                Ok(second)
            }
            _ => Ok(first),
        }
    }
}

/// Center and radius of the largest ball inside `{x : n_i'x <= h_i}`, or
/// `None` when the set is empty. The radius is capped at `cap`.
pub fn chebyshev_center(
    half_spaces: &[(Vec<f64>, f64)],
    dim: usize,
    cap: f64,
    backend: &dyn ConicBackend,
) -> Result<Option<(Vec<f64>, f64)>> {
    let r = dim;
    let mut prog = ConicProgram::new(dim + 1);
    prog.add_linear_cost(r, -1.0);
    for (normal, offset) in half_spaces {
        let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut row = LinExpr::constant(-offset).with_term(r, norm);
        for (k, &c) in normal.iter().enumerate() {
            row = row.with_term(k, c);
        }
        prog.add_le(&row, RowTag::Other);
    }
    prog.add_le(&LinExpr::var(r).plus_constant(-cap), RowTag::Other);
    let sol = backend.solve(&prog)?;
    match sol.status {
        SolveStatus::Optimal if sol.x[r] >= -1e-9 => Ok(Some((sol.x[..dim].to_vec(), sol.x[r].max(0.0)))),
        _ => Ok(None),
    }
}
