//! Residual joint-target policy trained with PPO on top of the
//! operational-space task torque.

pub mod checkpoint;
pub mod error;
pub mod net;
pub mod policy;
pub mod ppo;
pub mod reward;
pub mod train;

pub use error::RlError;
pub use policy::PolicyNet;
pub use ppo::PpoConfig;
pub use reward::RewardWeights;
