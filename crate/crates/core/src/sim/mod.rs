//! Road geometry, vehicle kinematics, low-level control and episode setup.

pub mod collision;
pub mod control;
pub mod init;
pub mod road;
pub mod vehicle;

pub use collision::{detect_collisions, off_road_check, ramp_barrier_check, rectangles_overlap};
pub use control::{meta_action_to_controls, Controller, PidParams};
pub use init::{initialize_episode, ClippedGaussian, CruiseRange, EpisodeInit};
pub use road::{cartesian_to_frenet, frenet_to_cartesian, RoadNet};
pub use vehicle::{
    step_vehicle, Autonomy, ControlLimits, ControlSignal, MetaAction, VehicleState, VEHICLE_LENGTH, VEHICLE_WIDTH,
};
