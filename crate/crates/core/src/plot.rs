//! SVG figures and top-down episode renderings from run logs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::eval::{csv_error, read_metrics_csv, MetricsRow, SweepResult};
use crate::sim::RoadNet;

pub const METRICS_FILE: &str = "metrics.csv";
pub const TRAJECTORY_FILE: &str = "trajectories.jsonl";
pub const SWEEP_FILE: &str = "sweep.csv";

const AV_COLOR: &str = "#2ca02c";
const HV_COLOR: &str = "#1f77b4";
const MISSION_COLOR: &str = "#ff7f0e";
const CRASH_COLOR: &str = "#d62728";

/// One trajectory record tagged with the run it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLine {
    pub preset: String,
    pub episode: usize,
    #[serde(flatten)]
    pub record: TrajectoryRecord,
}

pub fn write_trajectories<W: Write>(lines: &[TrajectoryLine], mut out: W) -> Result<()> {
    for l in lines {
        serde_json::to_writer(&mut out, l)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryLine>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::MalformedLog {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub phi: f64,
    pub episodes: usize,
    #[serde(rename = "f_C")]
    pub f_c: f64,
    #[serde(rename = "f_MF")]
    pub f_mf: f64,
    pub objective: f64,
    pub optimal: bool,
}

pub fn sweep_rows(result: &SweepResult) -> Vec<SweepRow> {
    result
        .points
        .iter()
        .map(|p| SweepRow {
            phi: p.phi,
            episodes: p.metrics.episodes,
            f_c: p.metrics.f_c,
            f_mf: p.metrics.f_mf,
            objective: p.objective,
            optimal: p.phi == result.phi_star,
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    csv::Reader::from_path(path)
        .map_err(csv_error)?
        .deserialize()
        .collect::<std::result::Result<Vec<SweepRow>, _>>()
        .map_err(csv_error)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        let mut s = Self { width, height, body: String::new() };
        s.rect(0.0, 0.0, width, height, "white", None);
        s
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: Option<&str>) {
        let stroke = stroke.map(|c| format!(r#" stroke="{c}" stroke-width="1.5""#)).unwrap_or_default();
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"{stroke}/>"#
        );
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, dash: bool) {
        let dash = if dash { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}"{dash}/>"#
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, opacity: f64) {
        let p: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-opacity="{opacity}" stroke-width="1.5"/>"#,
            p.join(" ")
        );
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str, opacity: f64) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" fill="{fill}" fill-opacity="{opacity}"/>"#
        );
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="{size}" text-anchor="{anchor}">{}</text>"#,
            escape(s)
        );
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Linear map from data to pixel coordinates.
#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    start: f64,
    end: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, start: f64, end: f64) -> Self {
        let hi = if hi > lo { hi } else { lo + 1.0 };
        Self { lo, hi, start, end }
    }

    fn map(&self, v: f64) -> f64 {
        self.start + (v - self.lo) / (self.hi - self.lo) * (self.end - self.start)
    }
}

fn frame_axes(svg: &mut Svg, x: Axis, y: Axis, x_label: &str, y_label: &str, ticks: usize) {
    svg.line(x.start, y.start, x.end, y.start, "black", false);
    svg.line(x.start, y.start, x.start, y.end, "black", false);
    for i in 0..=ticks {
        let f = i as f64 / ticks as f64;
        let xv = x.lo + f * (x.hi - x.lo);
        let yv = y.lo + f * (y.hi - y.lo);
        svg.text(x.map(xv), y.start + 16.0, 11.0, "middle", &format!("{xv:.3}"));
        svg.text(x.start - 6.0, y.map(yv) + 4.0, 11.0, "end", &format!("{yv:.3}"));
    }
    svg.text((x.start + x.end) / 2.0, y.start + 36.0, 13.0, "middle", x_label);
    svg.text(x.start, y.end - 10.0, 13.0, "start", y_label);
}

/// Grouped bars of failed merges, crashes and independent crashes per
/// preset, averaged over seeds.
pub fn metrics_bar_chart(rows: &[MetricsRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Config("no metrics rows to plot".into()));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut sums: BTreeMap<&str, ([f64; 3], usize)> = BTreeMap::new();
    for r in rows {
        if !order.contains(&r.preset.as_str()) {
            order.push(&r.preset);
        }
        let e = sums.entry(&r.preset).or_insert(([0.0; 3], 0));
        e.0[0] += r.f_mf;
        e.0[1] += r.f_c;
        e.0[2] += r.f_independent_crash;
        e.1 += 1;
    }
    let group_w = 120.0;
    let (left, top, plot_h) = (70.0, 40.0, 300.0);
    let width = left + group_w * order.len() as f64 + 160.0;
    let mut svg = Svg::new(width, top + plot_h + 70.0);
    let x = Axis::new(0.0, order.len() as f64, left, left + group_w * order.len() as f64);
    let y = Axis::new(0.0, 1.0, top + plot_h, top);
    frame_axes(&mut svg, x, y, "", "fraction of episodes", 4);
    let series = [("failed merge", "#9467bd"), ("crash", CRASH_COLOR), ("independent crash", "#7f7f7f")];
    for (g, name) in order.iter().enumerate() {
        let (s, n) = sums[name];
        for (k, (_, color)) in series.iter().enumerate() {
            let v = s[k] / n as f64;
            let bx = left + g as f64 * group_w + 15.0 + k as f64 * 30.0;
            svg.rect(bx, y.map(v), 26.0, y.map(0.0) - y.map(v), color, None);
        }
        svg.text(left + (g as f64 + 0.5) * group_w, top + plot_h + 18.0, 12.0, "middle", name);
    }
    for (k, (label, color)) in series.iter().enumerate() {
        let ly = top + 10.0 + 20.0 * k as f64;
        svg.rect(width - 150.0, ly - 10.0, 12.0, 12.0, color, None);
        svg.text(width - 132.0, ly, 12.0, "start", label);
    }
    Ok(svg.finish())
}

fn episodes_of(lines: &[TrajectoryLine]) -> BTreeMap<(String, usize), Vec<&TrajectoryRecord>> {
    let mut eps: BTreeMap<(String, usize), Vec<&TrajectoryRecord>> = BTreeMap::new();
    for l in lines {
        eps.entry((l.preset.clone(), l.episode)).or_default().push(&l.record);
    }
    eps
}

/// Longitude of the mission vehicle against time, one polyline per episode.
pub fn trajectory_fan(lines: &[TrajectoryLine], road: &RoadNet) -> Result<String> {
    let eps = episodes_of(lines);
    if eps.is_empty() {
        return Err(Error::Config("no trajectories to plot".into()));
    }
    let t_max = lines.iter().map(|l| l.record.t).fold(0.0, f64::max);
    let l_max = lines.iter().filter(|l| l.record.id == 0).map(|l| l.record.l).fold(road.ramp_merge_end, f64::max);
    let mut svg = Svg::new(720.0, 420.0);
    let x = Axis::new(0.0, t_max, 70.0, 690.0);
    let y = Axis::new(0.0, l_max, 360.0, 30.0);
    frame_axes(&mut svg, x, y, "time (s)", "mission longitude (m)", 5);
    svg.line(x.start, y.map(road.ramp_merge_end), x.end, y.map(road.ramp_merge_end), CRASH_COLOR, true);
    for recs in eps.values() {
        let pts: Vec<(f64, f64)> =
            recs.iter().filter(|r| r.id == 0).map(|r| (x.map(r.t), y.map(r.l))).collect();
        svg.polyline(&pts, MISSION_COLOR, 0.6);
    }
    Ok(svg.finish())
}

fn class_color(r: &TrajectoryRecord) -> &'static str {
    if r.id == 0 {
        MISSION_COLOR
    } else if r.lambda == 1 {
        AV_COLOR
    } else {
        HV_COLOR
    }
}

/// Longitude against lateral offset for every vehicle of one episode; circle
/// diameters follow speed.
pub fn speed_bubbles(records: &[&TrajectoryRecord], road: &RoadNet) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Config("no trajectory records to plot".into()));
    }
    let l_lo = records.iter().map(|r| r.l).fold(f64::INFINITY, f64::min);
    let l_hi = records.iter().map(|r| r.l).fold(f64::NEG_INFINITY, f64::max);
    let d_hi = road.lane_width * road.ramp_lane() as f64 + road.lane_width / 2.0;
    let mut svg = Svg::new(900.0, 260.0);
    let x = Axis::new(l_lo - 5.0, l_hi + 5.0, 60.0, 880.0);
    let y = Axis::new(-road.lane_width / 2.0, d_hi, 30.0, 210.0);
    frame_axes(&mut svg, x, Axis::new(d_hi, -road.lane_width / 2.0, 210.0, 30.0), "longitude (m)", "lateral (m)", 4);
    let v_max = records.iter().map(|r| r.speed).fold(1.0, f64::max);
    for r in records {
        svg.circle(x.map(r.l), y.map(r.d), 1.0 + 5.0 * r.speed / v_max, class_color(r), 0.45);
    }
    Ok(svg.finish())
}

/// Crash, failed-merge and objective curves over the SVO angle with the
/// optimum marked.
pub fn sweep_chart(rows: &[SweepRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Config("no sweep rows to plot".into()));
    }
    let phi_hi = rows.iter().map(|r| r.phi).fold(0.0, f64::max);
    let mut svg = Svg::new(640.0, 400.0);
    let x = Axis::new(0.0, phi_hi, 70.0, 610.0);
    let y = Axis::new(0.0, 1.0, 340.0, 30.0);
    frame_axes(&mut svg, x, y, "SVO angle (rad)", "fraction of episodes", 4);
    let curves: [(&str, &str, fn(&SweepRow) -> f64); 3] = [
        ("crash", CRASH_COLOR, |r| r.f_c),
        ("failed merge", "#9467bd", |r| r.f_mf),
        ("objective", "black", |r| r.objective),
    ];
    for (k, (label, color, get)) in curves.iter().enumerate() {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (x.map(r.phi), y.map(get(r)))).collect();
        svg.polyline(&pts, color, 1.0);
        for &(px, py) in &pts {
            svg.circle(px, py, 3.0, color, 1.0);
        }
        svg.text(600.0, 40.0 + 16.0 * k as f64, 12.0, "end", label);
    }
    if let Some(best) = rows.iter().find(|r| r.optimal) {
        svg.line(x.map(best.phi), y.start, x.map(best.phi), y.end, "black", true);
        svg.text(x.map(best.phi) + 4.0, y.end + 12.0, 12.0, "start", &format!("phi* = {:.3}", best.phi));
    }
    Ok(svg.finish())
}

/// One top-down frame per logged decision instant. Autonomous vehicles are
/// green, humans blue, the mission vehicle orange; crashed vehicles carry a
/// red outline and cross.
pub fn render_episode(records: &[TrajectoryRecord], road: &RoadNet) -> Result<Vec<String>> {
    let mut by_time: BTreeMap<u64, Vec<&TrajectoryRecord>> = BTreeMap::new();
    for r in records {
        if !r.t.is_finite() {
            return Err(Error::NonFinite { what: "trajectory time", value: r.t });
        }
        by_time.entry(r.t.to_bits()).or_default().push(r);
    }
    let scale = 2.0;
    let lane_px = road.lane_width * scale * 2.0;
    let height = lane_px * road.lane_count() as f64 + 40.0;
    let width = road.highway_length * scale + 20.0;
    let mut frames = Vec::with_capacity(by_time.len());
    for (bits, vehicles) in by_time {
        let t = f64::from_bits(bits);
        let mut svg = Svg::new(width, height);
        let y0 = 20.0;
        svg.rect(10.0, y0, road.highway_length * scale, lane_px * road.highway_lanes as f64, "#d9d9d9", None);
        svg.rect(
            10.0,
            y0 + lane_px * road.highway_lanes as f64,
            road.ramp_merge_end * scale,
            lane_px,
            "#ececec",
            None,
        );
        for k in 1..road.lane_count() {
            let y = y0 + lane_px * k as f64;
            svg.line(10.0, y, 10.0 + road.highway_length * scale, y, "white", true);
        }
        svg.line(
            10.0 + road.ramp_merge_end * scale,
            y0 + lane_px * road.highway_lanes as f64,
            10.0 + road.ramp_merge_end * scale,
            y0 + lane_px * road.lane_count() as f64,
            CRASH_COLOR,
            false,
        );
        let to_y = |d: f64| y0 + (d + road.lane_width / 2.0) * scale * 2.0;
        for v in vehicles {
            let (cx, cy) = (10.0 + v.l * scale, to_y(v.d));
            let (w, h) = (crate::sim::VEHICLE_LENGTH * scale, crate::sim::VEHICLE_WIDTH * scale * 2.0);
            let stroke = v.crashed.then_some(CRASH_COLOR);
            svg.rect(cx - w / 2.0, cy - h / 2.0, w, h, class_color(v), stroke);
            if v.crashed {
                svg.line(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0, CRASH_COLOR, false);
                svg.line(cx - w / 2.0, cy + h / 2.0, cx + w / 2.0, cy - h / 2.0, CRASH_COLOR, false);
            }
        }
        svg.text(12.0, 14.0, 12.0, "start", &format!("t = {t:.1} s"));
        frames.push(svg.finish());
    }
    Ok(frames)
}

/// Writes every figure the run directory has logs for and returns the paths.
/// Nothing is written when no log is present.
pub fn export_plots(dir: &Path, road: &RoadNet) -> Result<Vec<PathBuf>> {
    let mut figures: Vec<(&str, String)> = Vec::new();
    let metrics = dir.join(METRICS_FILE);
    if metrics.is_file() {
        let rows = read_metrics_csv(fs::File::open(&metrics)?)
            .map_err(|e| Error::MalformedLog { path: metrics.clone(), reason: e.to_string() })?;
        figures.push(("metrics_bars.svg", metrics_bar_chart(&rows)?));
    }
    let traj = dir.join(TRAJECTORY_FILE);
    if traj.is_file() {
        let lines = read_trajectories(&traj)?;
        if !lines.is_empty() {
            figures.push(("mission_fan.svg", trajectory_fan(&lines, road)?));
            let eps = episodes_of(&lines);
            let first = eps.values().next().expect("non-empty");
            figures.push(("speed_bubbles.svg", speed_bubbles(first, road)?));
        }
    }
    let sweep = dir.join(SWEEP_FILE);
    if sweep.is_file() {
        figures.push(("svo_sweep.svg", sweep_chart(&read_sweep_csv(&sweep)?)?));
    }
    if figures.is_empty() {
        return Err(Error::MissingLogs(dir.to_path_buf()));
    }
    let mut written = Vec::with_capacity(figures.len());
    for (name, svg) in figures {
        let path = dir.join(name);
        fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}
