//! Skill discovery rewarded by the Vendi Score.
//!
//! A set of `n` skills (one goal-conditioned policy) is trained so that the
//! trajectories of different skills are dissimilar under a user-chosen
//! similarity kernel. Diversity is both the reward and the evaluation metric:
//! the exponential of the eigenvalue entropy of the normalized kernel matrix.

pub mod env2d;
pub mod error;
pub mod kernels;
pub mod memory;
pub mod misl;
pub mod numerics;
pub mod policy;
pub mod trainer;
pub mod vendi;

pub use error::{Error, Result};
