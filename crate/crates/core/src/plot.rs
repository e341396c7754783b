//! SVG plots of a finished run: one trajectory plot per target window and
//! one pairwise-distance plot.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::AgentId;
use crate::run::{read_distances, read_trajectories, RunArtifacts, TrajectoryRow};
use crate::scenario::Scenario;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn color(k: usize) -> &'static str {
    PALETTE[k % PALETTE.len()]
}

/// Reads the artifacts in `dir` and writes the SVG files next to them.
pub fn plot_run(dir: &Path) -> Result<Vec<PathBuf>> {
    let art = RunArtifacts::in_dir(dir);
    let scenario = Scenario::load(&art.scenario)?;
    let rows = read_trajectories(&art.trajectories)?;
    let pairs = read_distances(&art.distances)?;

    let last_tick = rows.iter().map(|r| r.tick).max().unwrap_or(0);
    let mut out = Vec::new();
    let starts: Vec<u64> = scenario.targets.iter().map(|t| t.tick).collect();
    for (k, &start) in starts.iter().enumerate() {
        let end = starts.get(k + 1).copied().unwrap_or(scenario.duration_ticks).min(last_tick.max(start));
        let path = dir.join(format!("trajectories_{}.svg", k + 1));
        let svg = trajectory_svg(&scenario, &rows, k, start, end);
        std::fs::write(&path, svg).map_err(|e| Error::Artifact { path: path.clone(), reason: e.to_string() })?;
        out.push(path);
    }

    let path = dir.join("distances.svg");
    let mut series: BTreeMap<(AgentId, AgentId), Vec<(f64, f64)>> = BTreeMap::new();
    for p in &pairs {
        series.entry((p.i, p.j)).or_default().push((p.tick as f64 * scenario.params.dt, p.d));
    }
    let svg = distance_svg(&series, 2.0 * scenario.params.rho, last_tick as f64 * scenario.params.dt);
    std::fs::write(&path, svg).map_err(|e| Error::Artifact { path: path.clone(), reason: e.to_string() })?;
    out.push(path);
    Ok(out)
}

struct Frame {
    x0: f64,
    y1: f64,
    scale: f64,
    pad: f64,
}

impl Frame {
    fn x(&self, x: f64) -> f64 {
        self.pad + (x - self.x0) * self.scale
    }

    fn y(&self, y: f64) -> f64 {
        self.pad + (self.y1 - y) * self.scale
    }
}

fn target_of(scenario: &Scenario, window: usize, agent: AgentId) -> Option<Vec<f64>> {
    if let Some(idx) = scenario.agents.iter().position(|a| a.id == agent) {
        return scenario.targets.get(window).map(|t| t.positions[idx].clone());
    }
    scenario.admissions.iter().find(|a| a.id == Some(agent)).map(|a| a.target.clone())
}

fn trajectory_svg(scenario: &Scenario, rows: &[TrajectoryRow], window: usize, start: u64, end: u64) -> String {
    let b = &scenario.workspace.boundary;
    let (w, h) = (b.max[0] - b.min[0], b.max[1] - b.min[1]);
    let scale = 800.0 / w.max(h);
    let f = Frame { x0: b.min[0], y1: b.max[1], scale, pad: 30.0 };
    let (width, height) = (w * scale + 60.0, h * scale + 70.0);
    let rho = scenario.params.rho;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.1} {height:.1}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black" stroke-width="1.5"/>"#,
        f.x(b.min[0]),
        f.y(b.max[1]),
        w * scale,
        h * scale
    );
    for o in &scenario.workspace.obstacles {
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#999999"/>"##,
            f.x(o.min[0]),
            f.y(o.max[1]),
            (o.max[0] - o.min[0]) * scale,
            (o.max[1] - o.min[1]) * scale
        );
    }

    let mut by_agent: BTreeMap<AgentId, Vec<&TrajectoryRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.tick >= start && r.tick <= end) {
        by_agent.entry(r.agent).or_default().push(r);
    }
    for (k, (agent, series)) in by_agent.iter().enumerate() {
        let c = color(k);
        let points: Vec<String> = series.iter().map(|r| format!("{:.2},{:.2}", f.x(r.p[0]), f.y(r.p[1]))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, points.join(" "));
        if let Some(first) = series.first() {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="none" stroke="{c}"/>"#,
                f.x(first.p[0]),
                f.y(first.p[1])
            );
        }
        if let Some(last) = series.last() {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="{c}" fill-opacity="0.25" stroke="{c}"/>"#,
                f.x(last.p[0]),
                f.y(last.p[1]),
                rho * scale
            );
        }
        if let Some(t) = target_of(scenario, window, *agent) {
            let (tx, ty, d) = (f.x(t[0]), f.y(t[1]), 6.0);
            let _ = writeln!(
                s,
                r#"<path d="M {:.2} {:.2} L {:.2} {:.2} M {:.2} {:.2} L {:.2} {:.2}" stroke="{c}" stroke-width="2"/>"#,
                tx - d,
                ty - d,
                tx + d,
                ty + d,
                tx - d,
                ty + d,
                tx + d,
                ty - d
            );
        }
    }
    let dt = scenario.params.dt;
    let _ = writeln!(
        s,
        r#"<text x="30" y="{:.1}" font-family="sans-serif" font-size="14">{} seed {}: t = {:.1} s to {:.1} s</text>"#,
        height - 12.0,
        scenario.name,
        scenario.seed,
        start as f64 * dt,
        end as f64 * dt
    );
    s.push_str("</svg>\n");
    s
}

fn distance_svg(series: &BTreeMap<(AgentId, AgentId), Vec<(f64, f64)>>, limit: f64, t_end: f64) -> String {
    let (width, height) = (900.0, 450.0);
    let (left, right, top, bottom) = (60.0, 20.0, 20.0, 50.0);
    let d_max = series.values().flatten().map(|p| p.1).fold(limit, f64::max) * 1.05;
    let t_max = t_end.max(1e-9);
    let px = |t: f64| left + t / t_max * (width - left - right);
    let py = |d: f64| top + (1.0 - d / d_max) * (height - top - bottom);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M {left} {top} L {left} {:.1} L {:.1} {:.1}" fill="none" stroke="black"/>"#,
        height - bottom,
        width - right,
        height - bottom
    );
    for k in 0..=5 {
        let d = d_max * k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{d:.1}</text>"#,
            left - 6.0,
            py(d) + 4.0
        );
        let t = t_max * k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{t:.0}</text>"#,
            px(t),
            height - bottom + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">time [s]</text>"#,
        0.5 * (left + width - right),
        height - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {:.1})" text-anchor="middle">distance [m]</text>"#,
        0.5 * height,
        0.5 * height
    );
    for (k, pts) in series.values().enumerate() {
        let points: Vec<String> = pts.iter().map(|(t, d)| format!("{:.2},{:.2}", px(*t), py(*d))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.2"/>"#,
            points.join(" "),
            color(k)
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{:.2}" x2="{:.1}" y2="{:.2}" stroke="black" stroke-dasharray="6 4"/>"#,
        py(limit),
        width - right,
        py(limit)
    );
    s.push_str("</svg>\n");
    s
}
