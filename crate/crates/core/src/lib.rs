//! Mixed-autonomy highway merge simulation and semi-sequential multi-agent
//! deep Q-learning with social value orientation (SVO) rewards.

pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod human;
pub mod perception;
pub mod plot;
pub mod qnet;
pub mod real;
pub mod replay;
pub mod reward;
pub mod sim;
pub mod trainer;

pub use error::{Error, FormatError, Result};
pub use real::Real;

/// Policy network as trained and stored on disk.
pub type QNetwork = qnet::Network<f32>;
/// Double-precision network used for numerical checks.
pub type QNetwork64 = qnet::Network<f64>;
pub type Svo = reward::SvoParams<f64>;
