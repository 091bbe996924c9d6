use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::road::RoadNet;
use super::vehicle::{Autonomy, VehicleState};
use crate::error::{Error, Result};

/// Gaussian with standard deviation `2 * delta`, restricted to `[mean - delta, mean + delta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClippedGaussian {
    pub mean: f64,
    pub delta: f64,
}

impl ClippedGaussian {
    pub fn new(mean: f64, delta: f64) -> Self {
        Self { mean, delta }
    }

    pub fn sigma(&self) -> f64 {
        2.0 * self.delta
    }

    /// Rejection sampling: draws outside the clip window are discarded, which
    /// yields the renormalised truncated density exactly.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.delta <= 0.0 {
            return self.mean;
        }
        loop {
            let z: f64 = StandardNormal.sample(rng);
            let x = self.mean + self.sigma() * z;
            if (x - self.mean).abs() <= self.delta {
                return x;
            }
        }
    }

    /// Same distribution with the clip window (and so the spread) scaled by `factor`.
    pub fn widened(&self, factor: f64) -> Self {
        Self { mean: self.mean, delta: self.delta * factor }
    }
}

/// Uniform placement region for cruising vehicles of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CruiseRange {
    pub lanes: Vec<usize>,
    pub longitude: (f64, f64),
    pub speed: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeInit {
    pub mission_longitude: ClippedGaussian,
    pub mission_speed: ClippedGaussian,
    pub human: CruiseRange,
    pub autonomous: CruiseRange,
    /// Minimum bumper-to-bumper spawn gap between vehicles sharing a lane, m.
    pub min_gap: f64,
    pub max_attempts: usize,
}

impl Default for EpisodeInit {
    fn default() -> Self {
        Self {
            mission_longitude: ClippedGaussian::new(95.0, 2.0),
            mission_speed: ClippedGaussian::new(24.0, 2.0),
            human: CruiseRange { lanes: vec![0, 1, 2], longitude: (20.0, 200.0), speed: (22.0, 25.0) },
            autonomous: CruiseRange { lanes: vec![2], longitude: (70.0, 140.0), speed: (23.0, 25.0) },
            min_gap: 10.0,
            max_attempts: 2000,
        }
    }
}

impl EpisodeInit {
    /// The broader initialisation used for test episodes: clip windows doubled.
    pub fn broadened(&self, factor: f64) -> Self {
        Self {
            mission_longitude: self.mission_longitude.widened(factor),
            mission_speed: self.mission_speed.widened(factor),
            ..self.clone()
        }
    }

    pub fn validate(&self, road: &RoadNet) -> Result<()> {
        for (name, r) in [("human", &self.human), ("autonomous", &self.autonomous)] {
            let bad_lane = r.lanes.iter().any(|&k| k >= road.highway_lanes);
            if r.lanes.is_empty() || bad_lane {
                return Err(Error::Config(format!("{name} spawn lanes must be non-empty highway lanes")));
            }
            if !(r.longitude.0 < r.longitude.1) || !(r.speed.0 <= r.speed.1) || r.speed.0 < 0.0 {
                return Err(Error::Config(format!("{name} spawn ranges are degenerate")));
            }
        }
        if self.mission_longitude.delta < 0.0 || self.mission_speed.delta < 0.0 || self.min_gap < 0.0 {
            return Err(Error::Config("negative spread or gap".into()));
        }
        Ok(())
    }
}

/// Places the mission vehicle on the ramp and the cruising traffic on the highway.
///
/// Returned vehicles are ordered: mission vehicle first (id 0), then
/// cruising autonomous vehicles front to back, then human drivers. When the
/// mission vehicle is autonomous it counts towards `n_av`.
pub fn initialize_episode<R: Rng + ?Sized>(
    init: &EpisodeInit,
    road: &RoadNet,
    n_hv: usize,
    n_av: usize,
    mission: Autonomy,
    rng: &mut R,
) -> Result<Vec<VehicleState>> {
    init.validate(road)?;
    let cruising_av = match mission {
        Autonomy::Autonomous => n_av
            .checked_sub(1)
            .ok_or_else(|| Error::Config("an autonomous mission needs at least one AV".into()))?,
        Autonomy::Human => n_av,
    };
    let cruising_hv = match mission {
        Autonomy::Human => n_hv
            .checked_sub(1)
            .ok_or_else(|| Error::Config("a human mission needs at least one HV".into()))?,
        Autonomy::Autonomous => n_hv,
    };

    let l_m = init.mission_longitude.sample(rng);
    let v_m = init.mission_speed.sample(rng).max(0.0);
    let mut mission_vehicle = VehicleState::new(0, l_m, road.ramp_lane(), v_m, mission, road);
    mission_vehicle.is_mission = true;

    let mut placed: Vec<VehicleState> = Vec::with_capacity(1 + cruising_av + cruising_hv);
    let place = |class: &CruiseRange, autonomy: Autonomy, rng: &mut R, placed: &mut Vec<VehicleState>| {
        for _ in 0..init.max_attempts {
            let lane = class.lanes[rng.random_range(0..class.lanes.len())];
            let l = rng.random_range(class.longitude.0..class.longitude.1);
            let clear = placed
                .iter()
                .filter(|o| o.lane == lane)
                .all(|o| (o.l - l).abs() >= 0.5 * (o.length + crate::sim::VEHICLE_LENGTH) + init.min_gap);
            if clear {
                let speed = if class.speed.0 < class.speed.1 {
                    rng.random_range(class.speed.0..class.speed.1)
                } else {
                    class.speed.0
                };
                placed.push(VehicleState::new(0, l, lane, speed, autonomy, road));
                return Ok(());
            }
        }
        Err(Error::Config(format!(
            "could not place a vehicle with a {} m gap after {} attempts",
            init.min_gap, init.max_attempts
        )))
    };

    for _ in 0..cruising_av {
        place(&init.autonomous, Autonomy::Autonomous, rng, &mut placed)?;
    }
    for _ in 0..cruising_hv {
        place(&init.human, Autonomy::Human, rng, &mut placed)?;
    }
    let (mut avs, hvs): (Vec<_>, Vec<_>) = placed.into_iter().partition(|v| v.is_autonomous());
    avs.sort_by(|a, b| b.l.total_cmp(&a.l));

    let mut out = Vec::with_capacity(1 + avs.len() + hvs.len());
    out.push(mission_vehicle);
    out.extend(avs);
    out.extend(hvs);
    for (id, v) in out.iter_mut().enumerate() {
        v.id = id;
    }
    Ok(out)
}
