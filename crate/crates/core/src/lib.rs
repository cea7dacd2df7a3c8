pub mod cable_sim;
pub mod error;
pub mod grip_control;
pub mod harness;
pub mod lqr;
pub mod perception;
pub mod scalar;
pub mod schedule;
pub mod sysid;
pub mod tactile_sim;

pub use error::{Error, Result};
pub use scalar::Real;

pub type TactileFrameF64 = tactile_sim::TactileFrame<f64>;
pub type TactileFrameF32 = tactile_sim::TactileFrame<f32>;
pub type PerceptionF64 = perception::Perception<f64>;
pub type PerceptionF32 = perception::Perception<f32>;
pub type GripControllerF64 = grip_control::GripController<f64>;
pub type GripControllerF32 = grip_control::GripController<f32>;
pub type LinearModelF64 = sysid::LinearModel<f64>;
pub type LinearModelF32 = sysid::LinearModel<f32>;
pub type CableGainF64 = lqr::CableGain<f64>;
pub type CableGainF32 = lqr::CableGain<f32>;
