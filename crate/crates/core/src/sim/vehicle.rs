use serde::{Deserialize, Serialize};

use super::road::RoadNet;
use crate::error::{Error, Result};

pub const VEHICLE_LENGTH: f64 = 5.0;
pub const VEHICLE_WIDTH: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Autonomy {
    Human,
    Autonomous,
}

impl Autonomy {
    /// Numeric flag used in observations: 0 for humans, 1 for autonomous vehicles.
    pub fn flag(self) -> f64 {
        match self {
            Autonomy::Human => 0.0,
            Autonomy::Autonomous => 1.0,
        }
    }
}

/// The five abstract manoeuvres available to autonomous agents.
///
/// The discriminants are stable integer codes used in replay entries,
/// encodings and log files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum MetaAction {
    LaneLeft = 0,
    Idle = 1,
    LaneRight = 2,
    Accelerate = 3,
    Decelerate = 4,
}

impl MetaAction {
    pub const COUNT: usize = 5;
    pub const ALL: [MetaAction; 5] = [
        MetaAction::LaneLeft,
        MetaAction::Idle,
        MetaAction::LaneRight,
        MetaAction::Accelerate,
        MetaAction::Decelerate,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn is_lateral(self) -> bool {
        matches!(self, MetaAction::LaneLeft | MetaAction::LaneRight)
    }

    pub fn is_longitudinal(self) -> bool {
        matches!(self, MetaAction::Accelerate | MetaAction::Decelerate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlSignal {
    /// m/s²
    pub acceleration: f64,
    /// Front-wheel angle, radians.
    pub steering: f64,
}

/// Bounds every control signal must respect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlLimits {
    pub max_acceleration: f64,
    pub max_steering: f64,
}

impl Default for ControlLimits {
    fn default() -> Self {
        Self { max_acceleration: 8.0, max_steering: 0.6 }
    }
}

impl ControlSignal {
    pub fn clamped(self, limits: &ControlLimits) -> Self {
        Self {
            acceleration: self
                .acceleration
                .clamp(-limits.max_acceleration, limits.max_acceleration),
            steering: self.steering.clamp(-limits.max_steering, limits.max_steering),
        }
    }
}

/// Kinematic state of one vehicle in road coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: usize,
    /// Longitude of the vehicle centre, m.
    pub l: f64,
    /// Lateral offset of the vehicle centre, m (positive to the right).
    pub d: f64,
    pub speed: f64,
    /// Heading relative to the road direction, radians.
    pub yaw: f64,
    pub lane: usize,
    pub autonomy: Autonomy,
    pub is_mission: bool,
    pub length: f64,
    pub width: f64,
    pub crashed: bool,
}

impl VehicleState {
    pub fn new(id: usize, l: f64, lane: usize, speed: f64, autonomy: Autonomy, road: &RoadNet) -> Self {
        Self {
            id,
            l,
            d: road.lane_center(lane),
            speed,
            yaw: 0.0,
            lane,
            autonomy,
            is_mission: false,
            length: VEHICLE_LENGTH,
            width: VEHICLE_WIDTH,
            crashed: false,
        }
    }

    pub fn wheelbase(&self) -> f64 {
        0.5 * self.length
    }

    pub fn is_autonomous(&self) -> bool {
        self.autonomy == Autonomy::Autonomous
    }

    /// Longitudinal and lateral velocity components.
    pub fn velocity(&self) -> (f64, f64) {
        (self.speed * self.yaw.cos(), self.speed * self.yaw.sin())
    }

    pub fn front(&self) -> f64 {
        self.l + 0.5 * self.length
    }

    pub fn rear(&self) -> f64 {
        self.l - 0.5 * self.length
    }

    pub fn distance_to(&self, other: &VehicleState) -> f64 {
        (self.l - other.l).hypot(self.d - other.d)
    }
}

/// One explicit-Euler step of the kinematic bicycle model (rear-axle reference).
pub fn step_vehicle(state: &VehicleState, ctrl: ControlSignal, dt: f64, road: &RoadNet) -> Result<VehicleState> {
    if !ctrl.acceleration.is_finite() {
        return Err(Error::NonFinite { what: "acceleration", value: ctrl.acceleration });
    }
    if !ctrl.steering.is_finite() {
        return Err(Error::NonFinite { what: "steering", value: ctrl.steering });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let mut next = state.clone();
    if state.crashed {
        return Ok(next);
    }
    let v = state.speed;
    next.l += v * state.yaw.cos() * dt;
    next.d += v * state.yaw.sin() * dt;
    next.yaw += v * ctrl.steering.tan() / state.wheelbase() * dt;
    next.speed = (v + ctrl.acceleration * dt).max(0.0);
    next.lane = road.lane_of(next.d);
    Ok(next)
}
