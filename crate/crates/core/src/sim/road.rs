use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Straight highway with a parallel on-ramp on its right-hand side.
///
/// Lanes are indexed left to right. Lanes `0..highway_lanes` are highway
/// lanes; index `highway_lanes` is the ramp, which exists up to
/// `ramp_merge_end` and may only be left towards the highway inside
/// `[ramp_merge_start, ramp_merge_end]`. The lateral coordinate `d` grows to
/// the right and lane `k` is centred at `d = k * lane_width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadNet {
    pub highway_lanes: usize,
    pub lane_width: f64,
    pub highway_length: f64,
    pub ramp_merge_start: f64,
    pub ramp_merge_end: f64,
}

impl Default for RoadNet {
    fn default() -> Self {
        Self {
            highway_lanes: 3,
            lane_width: 4.0,
            highway_length: 500.0,
            ramp_merge_start: 150.0,
            ramp_merge_end: 250.0,
        }
    }
}

impl RoadNet {
    pub fn validate(&self) -> Result<()> {
        let ok = self.highway_lanes >= 1
            && self.lane_width > 0.0
            && self.ramp_merge_start >= 0.0
            && self.ramp_merge_start < self.ramp_merge_end
            && self.ramp_merge_end <= self.highway_length;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("inconsistent road geometry: {self:?}")))
        }
    }

    /// Highway lanes plus the ramp.
    pub fn lane_count(&self) -> usize {
        self.highway_lanes + 1
    }

    pub fn ramp_lane(&self) -> usize {
        self.highway_lanes
    }

    pub fn is_ramp(&self, lane: usize) -> bool {
        lane == self.ramp_lane()
    }

    pub fn lane_center(&self, lane: usize) -> f64 {
        lane as f64 * self.lane_width
    }

    /// Lane whose centre is nearest to `d`, clamped to the existing lanes.
    pub fn lane_of(&self, d: f64) -> usize {
        let k = (d / self.lane_width).round();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.lane_count() - 1)
        }
    }

    /// Paved lateral extent `(d_min, d_max)` at longitude `l`.
    pub fn lateral_bounds(&self, l: f64) -> (f64, f64) {
        let half = 0.5 * self.lane_width;
        let right_lane = if l <= self.ramp_merge_end {
            self.ramp_lane()
        } else {
            self.highway_lanes - 1
        };
        (-half, self.lane_center(right_lane) + half)
    }

    pub fn contains(&self, l: f64, d: f64) -> bool {
        if !(l.is_finite() && d.is_finite()) || l < 0.0 || l > self.highway_length {
            return false;
        }
        let (lo, hi) = self.lateral_bounds(l);
        d >= lo && d <= hi
    }

    /// Whether a vehicle in `from` may start moving into the adjacent lane `to`
    /// at longitude `l`.
    pub fn lane_change_allowed(&self, from: usize, to: usize, l: f64) -> bool {
        if to >= self.lane_count() || from.abs_diff(to) != 1 {
            return false;
        }
        if self.is_ramp(to) {
            return false;
        }
        if self.is_ramp(from) {
            return l >= self.ramp_merge_start && l < self.ramp_merge_end;
        }
        true
    }
}

/// Maps road coordinates to the drawing plane (`x` along the road, `y` to the right).
pub fn frenet_to_cartesian(road: &RoadNet, l: f64, d: f64) -> Result<(f64, f64)> {
    if !road.contains(l, d) {
        return Err(Error::OffRoad { l, d });
    }
    Ok((l, d))
}

pub fn cartesian_to_frenet(road: &RoadNet, x: f64, y: f64) -> Result<(f64, f64)> {
    if !road.contains(x, y) {
        return Err(Error::OffRoad { l: x, d: y });
    }
    Ok((x, y))
}
