//! Position/velocity fusion: soft nearest-neighbour regression gated on
//! velocity agreement, per-component Kalman filtering, and their chain.

mod gate;
mod kalman;
mod knn;
mod pipeline;

pub use gate::{estimate_gate, GateModel, DEFAULT_THETA, VARIANCE_FLOOR};
pub use kalman::{estimate_noise_covariances, kalman_step, KalmanState, NoiseCovariances};
pub use knn::{sknn_step, NeighborStore, DEFAULT_K};
pub use pipeline::{
    kalman_sequence, run_pipeline, sknnkf_chain, soft_knn_sequence, ChainTrace, FusionModels,
    PreviousPose, Variant,
};

use crate::error::{Error, Result};
use crate::skeleton::{velocities, SkeletonSequence, VelocityVector, POSE_DIM};

/// `truth_t - estimate_t` over paired sequences, frame by frame.
pub fn position_residuals(
    estimates: &[SkeletonSequence],
    truth: &[SkeletonSequence],
) -> Result<Vec<[f64; POSE_DIM]>> {
    if estimates.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: estimates.len(),
            right: truth.len(),
        });
    }
    let mut out = Vec::new();
    for (e, m) in estimates.iter().zip(truth) {
        if e.len() != m.len() {
            return Err(Error::LengthMismatch {
                left: e.len(),
                right: m.len(),
            });
        }
        for (a, b) in e.frames().iter().zip(m.frames()) {
            out.push(b.difference(a).0);
        }
    }
    Ok(out)
}

/// `v_M,t - estimate_t` where `estimates[s][t - 1]` is the velocity estimate
/// for frame `t` of `truth[s]`.
pub fn velocity_residuals(
    estimates: &[Vec<VelocityVector>],
    truth: &[SkeletonSequence],
) -> Result<Vec<VelocityVector>> {
    if estimates.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: estimates.len(),
            right: truth.len(),
        });
    }
    let mut out = Vec::new();
    for (e, m) in estimates.iter().zip(truth) {
        let vm = velocities(m)?;
        if e.len() != vm.len() {
            return Err(Error::LengthMismatch {
                left: e.len(),
                right: vm.len(),
            });
        }
        for (a, b) in e.iter().zip(&vm) {
            let mut r = [0.0; POSE_DIM];
            for (k, o) in r.iter_mut().enumerate() {
                *o = b.0[k] - a.0[k];
            }
            out.push(VelocityVector(r));
        }
    }
    Ok(out)
}
