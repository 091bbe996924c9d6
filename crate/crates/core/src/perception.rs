//! V2V connectivity, shared perception, action histories and the per-agent
//! observation matrix.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::sim::{MetaAction, RoadNet, VehicleState};

/// Undirected distance-threshold graph over the autonomous vehicles.
#[derive(Debug, Clone, PartialEq)]
pub struct V2VGraph {
    pub comm_range: f64,
    nodes: Vec<usize>,
    edges: BTreeSet<(usize, usize)>,
}

impl V2VGraph {
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Edges as `(a, b)` with `a < b`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn neighbors(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter_map(move |&(a, b)| {
            if a == id {
                Some(b)
            } else if b == id {
                Some(a)
            } else {
                None
            }
        })
    }
}

pub fn build_v2v_graph(states: &[VehicleState], comm_range: f64) -> V2VGraph {
    let avs: Vec<&VehicleState> = states.iter().filter(|s| s.is_autonomous()).collect();
    let mut edges = BTreeSet::new();
    for (i, a) in avs.iter().enumerate() {
        for b in &avs[i + 1..] {
            if a.distance_to(b) <= comm_range {
                edges.insert((a.id.min(b.id), a.id.max(b.id)));
            }
        }
    }
    V2VGraph { comm_range, nodes: avs.iter().map(|s| s.id).collect(), edges }
}

/// Ids of the vehicles visible to `ego` directly or through one-hop sharing
/// from its graph neighbours. The ego itself is excluded.
pub fn shared_perception(
    ego: &VehicleState,
    graph: &V2VGraph,
    states: &[VehicleState],
    perception_range: f64,
) -> BTreeSet<usize> {
    let mut observers: Vec<&VehicleState> = vec![ego];
    observers.extend(graph.neighbors(ego.id).filter_map(|n| states.iter().find(|s| s.id == n)));
    states
        .iter()
        .filter(|s| s.id != ego.id)
        .filter(|s| observers.iter().any(|o| o.distance_to(s) <= perception_range))
        .map(|s| s.id)
        .collect()
}

/// Last `h` meta-actions of one vehicle, most recent first.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionHistory {
    buf: VecDeque<MetaAction>,
}

impl ActionHistory {
    pub fn new(h: usize) -> Self {
        Self { buf: std::iter::repeat_n(MetaAction::Idle, h).collect() }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn push(&mut self, a: MetaAction) {
        if self.buf.is_empty() {
            return;
        }
        self.buf.pop_back();
        self.buf.push_front(a);
    }

    pub fn iter(&self) -> impl Iterator<Item = MetaAction> + '_ {
        self.buf.iter().copied()
    }

    pub fn last(&self) -> Option<MetaAction> {
        self.buf.front().copied()
    }
}

/// Per-vehicle histories indexed by vehicle id.
pub fn update_histories(histories: &mut [ActionHistory], chosen: &[(usize, MetaAction)]) {
    for &(id, a) in chosen {
        histories[id].push(a);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ActionEncoding {
    /// One-hot over the five codes.
    #[default]
    Binary,
    /// `code + 1` as a single number in `1..=5`.
    Discrete,
    /// `(lateral, longitudinal)` in `{-1, 0, 1}²`.
    Frenet,
}

impl ActionEncoding {
    pub fn width(self) -> usize {
        match self {
            ActionEncoding::Binary => MetaAction::COUNT,
            ActionEncoding::Discrete => 1,
            ActionEncoding::Frenet => 2,
        }
    }

    pub fn encode_into(self, a: MetaAction, out: &mut [f32]) {
        debug_assert_eq!(out.len(), self.width());
        match self {
            ActionEncoding::Binary => {
                out.fill(0.0);
                out[a.code()] = 1.0;
            }
            ActionEncoding::Discrete => out[0] = (a.code() + 1) as f32,
            ActionEncoding::Frenet => {
                let (lat, lon) = match a {
                    MetaAction::LaneLeft => (-1.0, 0.0),
                    MetaAction::Idle => (0.0, 0.0),
                    MetaAction::LaneRight => (1.0, 0.0),
                    MetaAction::Accelerate => (0.0, 1.0),
                    MetaAction::Decelerate => (0.0, -1.0),
                };
                out[0] = lat;
                out[1] = lon;
            }
        }
    }
}

pub fn encode_action(a: MetaAction, scheme: ActionEncoding) -> Vec<f32> {
    let mut v = vec![0.0; scheme.width()];
    scheme.encode_into(a, &mut v);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RowOrder {
    /// Nearest first.
    Distance,
    /// Ascending relative longitude.
    #[default]
    Longitude,
    VehicleId,
}

/// Divisors applied to raw features before they enter the observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureScales {
    pub longitude: f64,
    pub lateral: f64,
    pub speed: f64,
}

impl Default for FeatureScales {
    fn default() -> Self {
        Self { longitude: 100.0, lateral: 4.0, speed: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    /// Row count including the ego and mission rows.
    pub rows: usize,
    pub history: usize,
    pub encoding: ActionEncoding,
    pub order: RowOrder,
    pub include_mission_row: bool,
    pub include_autonomy_flag: bool,
    pub include_history: bool,
    pub comm_range: f64,
    pub perception_range: f64,
    pub scales: FeatureScales,
    /// Acceleration dead-band for logging human actions, m/s².
    pub human_dead_band: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            rows: 7,
            history: 10,
            encoding: ActionEncoding::Binary,
            order: RowOrder::Longitude,
            include_mission_row: true,
            include_autonomy_flag: true,
            include_history: true,
            comm_range: 100.0,
            perception_range: 60.0,
            scales: FeatureScales::default(),
            human_dead_band: 0.5,
        }
    }
}

pub const COL_PRESENT: usize = 0;
pub const COL_L: usize = 1;
pub const COL_D: usize = 2;
pub const COL_VL: usize = 3;
pub const COL_VD: usize = 4;
pub const COL_COS: usize = 5;
pub const COL_SIN: usize = 6;
pub const COL_AUTONOMY: usize = 7;
pub const KINEMATIC_COLS: usize = 8;

impl ObservationConfig {
    pub fn history_width(&self) -> usize {
        if self.include_history {
            self.history * self.encoding.width()
        } else {
            0
        }
    }

    pub fn row_width(&self) -> usize {
        KINEMATIC_COLS + self.history_width()
    }

    pub fn flat_width(&self) -> usize {
        self.rows * self.row_width()
    }

    /// The `k`-th most recent action stored in an observation row, if the
    /// history columns are present and hold a valid code.
    pub fn decode_history(&self, row: &[f32], k: usize) -> Option<MetaAction> {
        if !self.include_history || k >= self.history {
            return None;
        }
        let w = self.encoding.width();
        let at = KINEMATIC_COLS + k * w;
        let cell = &row[at..at + w];
        match self.encoding {
            ActionEncoding::Binary => cell.iter().position(|&x| x == 1.0).and_then(MetaAction::from_code),
            ActionEncoding::Discrete => {
                let c = cell[0];
                (c >= 1.0 && c.fract() == 0.0).then(|| MetaAction::from_code(c as usize - 1)).flatten()
            }
            ActionEncoding::Frenet => MetaAction::ALL
                .iter()
                .copied()
                .find(|&a| encode_action(a, ActionEncoding::Frenet) == cell),
        }
    }

    pub fn mission_row(&self) -> Option<usize> {
        (self.include_mission_row && self.rows > 1).then_some(1)
    }
}

/// Row-major observation matrix; absent rows are all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

/// A populated row decoded back to physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowVehicle {
    pub l: f64,
    pub d: f64,
    pub vl: f64,
    pub vd: f64,
    pub autonomous: bool,
}

impl RowVehicle {
    pub fn speed(&self) -> f64 {
        self.vl.hypot(self.vd)
    }
}

impl ObservationMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_present(&self, i: usize) -> bool {
        self.row(i)[COL_PRESENT] != 0.0
    }

    /// Row `i` in physical units; the ego row is absolute, the others are
    /// relative to the ego (positions and velocities).
    pub fn decode_row(&self, i: usize, scales: &FeatureScales) -> Option<RowVehicle> {
        if !self.is_present(i) {
            return None;
        }
        let r = self.row(i);
        Some(RowVehicle {
            l: r[COL_L] as f64 * scales.longitude,
            d: r[COL_D] as f64 * scales.lateral,
            vl: r[COL_VL] as f64 * scales.speed,
            vd: r[COL_VD] as f64 * scales.speed,
            autonomous: r[COL_AUTONOMY] != 0.0,
        })
    }

    /// Whitespace-separated numeric record for observation dumps.
    pub fn to_record(&self) -> String {
        let mut s = String::with_capacity(self.data.len() * 4);
        for (k, x) in self.data.iter().enumerate() {
            if k > 0 {
                s.push(' ');
            }
            s.push_str(&x.to_string());
        }
        s
    }

    pub fn from_record(rows: usize, cols: usize, record: &str) -> Option<Self> {
        let data: Vec<f32> = record.split_whitespace().map(|t| t.parse().ok()).collect::<Option<_>>()?;
        (data.len() == rows * cols).then_some(Self { rows, cols, data })
    }
}

fn write_row(
    out: &mut [f32],
    v: &VehicleState,
    origin: Option<&VehicleState>,
    history: &ActionHistory,
    cfg: &ObservationConfig,
) {
    let s = &cfg.scales;
    let (vl, vd) = v.velocity();
    let (l, d, vl, vd) = match origin {
        Some(o) => {
            let (ovl, ovd) = o.velocity();
            (v.l - o.l, v.d - o.d, vl - ovl, vd - ovd)
        }
        None => (v.l, v.d, vl, vd),
    };
    out[COL_PRESENT] = 1.0;
    out[COL_L] = (l / s.longitude) as f32;
    out[COL_D] = (d / s.lateral) as f32;
    out[COL_VL] = (vl / s.speed) as f32;
    out[COL_VD] = (vd / s.speed) as f32;
    out[COL_COS] = v.yaw.cos() as f32;
    out[COL_SIN] = v.yaw.sin() as f32;
    out[COL_AUTONOMY] = if cfg.include_autonomy_flag { v.autonomy.flag() as f32 } else { 0.0 };
    if cfg.include_history {
        let w = cfg.encoding.width();
        for (k, a) in history.iter().take(cfg.history).enumerate() {
            let at = KINEMATIC_COLS + k * w;
            cfg.encoding.encode_into(a, &mut out[at..at + w]);
        }
    }
}

/// Builds the observation of `ego` from the vehicles in `visible`.
///
/// Row 0 is the ego in absolute coordinates, row 1 the mission vehicle (when
/// enabled and visible), and the remaining rows the nearest other visible
/// vehicles in relative coordinates, ordered by `cfg.order`.
pub fn assemble_observation(
    ego: &VehicleState,
    visible: &BTreeSet<usize>,
    states: &[VehicleState],
    histories: &[ActionHistory],
    cfg: &ObservationConfig,
    _road: &RoadNet,
) -> ObservationMatrix {
    let mut obs = ObservationMatrix::zeros(cfg.rows, cfg.row_width());
    if cfg.rows == 0 {
        return obs;
    }
    write_row(obs.row_mut(0), ego, None, &histories[ego.id], cfg);

    let mission_row = cfg.mission_row();
    let mut others: Vec<&VehicleState> = states
        .iter()
        .filter(|s| s.id != ego.id && visible.contains(&s.id))
        .collect();
    if let Some(row) = mission_row {
        if let Some(pos) = others.iter().position(|s| s.is_mission) {
            let m = others.remove(pos);
            write_row(obs.row_mut(row), m, Some(ego), &histories[m.id], cfg);
        }
    }
    others.sort_by(|a, b| ego.distance_to(a).total_cmp(&ego.distance_to(b)).then(a.id.cmp(&b.id)));
    let first = if mission_row.is_some() { 2 } else { 1 };
    others.truncate(cfg.rows.saturating_sub(first));
    match cfg.order {
        RowOrder::Distance => {}
        RowOrder::Longitude => others.sort_by(|a, b| a.l.total_cmp(&b.l).then(a.id.cmp(&b.id))),
        RowOrder::VehicleId => others.sort_by_key(|s| s.id),
    }
    for (k, v) in others.into_iter().enumerate() {
        write_row(obs.row_mut(first + k), v, Some(ego), &histories[v.id], cfg);
    }
    obs
}
