//! Rigid serial-chain model, dynamics, base disturbances and the analytic
//! end-effector stabilization laws.

pub mod chain;
pub mod control;
pub mod disturbance;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod kinematics;
pub mod sim;

pub use chain::{builtin_nominal_q, builtin_toy_arm, ChainError, ChainModel, JointSpec, LinkSpec};
pub use disturbance::{BaseMotionSample, DisturbanceProfile, DisturbanceRanges, Wrench};
pub use error::DimensionError;
pub use kinematics::{Body, ChainFrames, JointState, Pose};
