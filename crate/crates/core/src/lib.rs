//! Skeleton-tracking refinement: recurrent networks that denoise joint
//! positions and velocities, fusion of the two by soft nearest-neighbour
//! regression and Kalman filtering, and position / jerk error metrics.

pub mod drnn;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod metrics;
pub mod seqio;
pub mod skeleton;
pub mod synth;

pub use error::{Error, Result};
