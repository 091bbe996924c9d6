//! Translation of meta-actions into steering and acceleration.
//!
//! Lateral control is a cascade: the lateral offset error yields a lateral
//! speed command, which yields a heading reference, which a heading loop
//! turns into a yaw-rate command and finally a steering angle through the
//! inverse bicycle model. Longitudinal control is proportional on speed.

use serde::{Deserialize, Serialize};

use super::road::RoadNet;
use super::vehicle::{ControlLimits, ControlSignal, MetaAction, VehicleState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidParams {
    /// Lateral offset -> lateral speed gain, 1/s.
    pub lateral_gain: f64,
    /// Heading error -> yaw rate gain, 1/s.
    pub heading_gain: f64,
    /// Speed error -> acceleration gain, 1/s.
    pub speed_gain: f64,
    /// Largest heading reference the lateral loop may request, radians.
    pub max_heading: f64,
    /// Setpoint increment for Accelerate / Decelerate, m/s.
    pub speed_step: f64,
    pub min_speed: f64,
    pub max_speed: f64,
    /// Acceleration bound for autonomous vehicles, m/s².
    pub max_acceleration: f64,
    pub limits: ControlLimits,
}

impl Default for PidParams {
    fn default() -> Self {
        Self {
            lateral_gain: 1.5,
            heading_gain: 6.0,
            speed_gain: 1.0,
            max_heading: 0.35,
            speed_step: 5.0,
            min_speed: 15.0,
            max_speed: 30.0,
            max_acceleration: 5.0,
            limits: ControlLimits::default(),
        }
    }
}

/// Setpoints held between decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub target_lane: usize,
    pub target_speed: f64,
}

impl Controller {
    pub fn for_vehicle(state: &VehicleState) -> Self {
        Self { target_lane: state.lane, target_speed: state.speed }
    }

    /// Updates the setpoints for `action`. Returns the action actually
    /// executed: impossible lane changes degrade to `Idle`.
    pub fn apply(&mut self, action: MetaAction, state: &VehicleState, road: &RoadNet, params: &PidParams) -> MetaAction {
        match action {
            MetaAction::LaneLeft | MetaAction::LaneRight => {
                let target = if action == MetaAction::LaneLeft {
                    self.target_lane.checked_sub(1)
                } else {
                    Some(self.target_lane + 1)
                };
                match target {
                    Some(t) if road.lane_change_allowed(self.target_lane, t, state.l) => {
                        self.target_lane = t;
                        action
                    }
                    _ => MetaAction::Idle,
                }
            }
            MetaAction::Accelerate => {
                self.target_speed = (self.target_speed + params.speed_step).min(params.max_speed);
                action
            }
            MetaAction::Decelerate => {
                self.target_speed = (self.target_speed - params.speed_step).max(params.min_speed);
                action
            }
            MetaAction::Idle => action,
        }
    }

    pub fn steering(&self, state: &VehicleState, road: &RoadNet, params: &PidParams) -> f64 {
        let error = state.d - road.lane_center(self.target_lane);
        let v = state.speed.max(1.0);
        let lateral_speed = -params.lateral_gain * error;
        let heading_ref = (lateral_speed / v)
            .clamp(-1.0, 1.0)
            .asin()
            .clamp(-params.max_heading, params.max_heading);
        let yaw_rate = params.heading_gain * (heading_ref - state.yaw);
        (state.wheelbase() * yaw_rate / v).atan()
    }

    pub fn acceleration(&self, state: &VehicleState, params: &PidParams) -> f64 {
        (params.speed_gain * (self.target_speed - state.speed))
            .clamp(-params.max_acceleration, params.max_acceleration)
    }

    pub fn control(&self, state: &VehicleState, road: &RoadNet, params: &PidParams) -> ControlSignal {
        ControlSignal {
            acceleration: self.acceleration(state, params),
            steering: self.steering(state, road, params),
        }
        .clamped(&params.limits)
    }
}

/// Applies `action` to the controller's setpoints and returns the resulting controls.
pub fn meta_action_to_controls(
    state: &VehicleState,
    action: MetaAction,
    road: &RoadNet,
    params: &PidParams,
    controller: &mut Controller,
) -> ControlSignal {
    controller.apply(action, state, road, params);
    controller.control(state, road, params)
}
