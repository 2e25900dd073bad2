use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::gate::VARIANCE_FLOOR;
use crate::error::{Error, Result};
use crate::skeleton::{Encoding, SkeletonPose, VelocityVector, POSE_DIM};

/// Diagonal measurement (`R`) and process (`Q`) noise variances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCovariances {
    #[serde(rename = "R")]
    pub r: Vec<f64>,
    #[serde(rename = "Q")]
    pub q: Vec<f64>,
}

impl NoiseCovariances {
    pub fn new(r: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        let cov = Self { r, q };
        cov.validate()?;
        Ok(cov)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, v) in [("R diagonal", &self.r), ("Q diagonal", &self.q)] {
            if v.len() != POSE_DIM {
                return Err(Error::Dimension {
                    what,
                    expected: POSE_DIM,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::config(format!("{what} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cov: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        cov.validate()?;
        Ok(cov)
    }
}

/// Per-component sample variance (about the sample mean), floored.
fn component_variance(residuals: &[[f64; POSE_DIM]], what: &'static str) -> Result<Vec<f64>> {
    if residuals.len() < 2 {
        return Err(Error::InsufficientFrames {
            needed: 2,
            got: residuals.len(),
        });
    }
    let n = residuals.len() as f64;
    let mut mean = [0.0; POSE_DIM];
    for r in residuals {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; POSE_DIM];
    for r in residuals {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for (j, s) in var.iter_mut().enumerate() {
        *s /= n - 1.0;
        if !s.is_finite() {
            return Err(Error::NonFinite(what));
        }
        if *s < VARIANCE_FLOOR {
            warn!("{what} variance of component {j} floored at {VARIANCE_FLOOR:e}");
            *s = VARIANCE_FLOOR;
        }
    }
    Ok(var)
}

/// `R` from position residuals `z_M - z̃`, `Q` from velocity residuals `v_M - ṽ`.
pub fn estimate_noise_covariances(
    position_residuals: &[[f64; POSE_DIM]],
    velocity_residuals: &[VelocityVector],
) -> Result<NoiseCovariances> {
    let vel: Vec<[f64; POSE_DIM]> = velocity_residuals.iter().map(|v| v.0).collect();
    NoiseCovariances::new(
        component_variance(position_residuals, "position residual")?,
        component_variance(&vel, "velocity residual")?,
    )
}

/// Independent scalar filters with unit transition, control, and observation.
#[derive(Clone, Debug, PartialEq)]
pub struct KalmanState {
    pub x: [f64; POSE_DIM],
    pub p: [f64; POSE_DIM],
    pub q: [f64; POSE_DIM],
    pub r: [f64; POSE_DIM],
}

fn diag(v: &[f64]) -> [f64; POSE_DIM] {
    let mut out = [0.0; POSE_DIM];
    out.copy_from_slice(v);
    out
}

impl KalmanState {
    /// Starts at the first measurement with `P0 = R`.
    pub fn new(z0: &SkeletonPose, cov: &NoiseCovariances) -> Result<Self> {
        cov.validate()?;
        let r = diag(&cov.r);
        Self::with_initial_variance(z0, cov, r)
    }

    pub fn with_initial_variance(
        z0: &SkeletonPose,
        cov: &NoiseCovariances,
        p0: [f64; POSE_DIM],
    ) -> Result<Self> {
        z0.expect_encoding(Encoding::Absolute)?;
        cov.validate()?;
        if p0.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::config("initial variances must be finite and non-negative"));
        }
        Ok(Self {
            x: *z0.coords(),
            p: p0,
            q: diag(&cov.q),
            r: diag(&cov.r),
        })
    }

    pub fn pose(&self) -> Result<SkeletonPose> {
        SkeletonPose::new(self.x, Encoding::Absolute)
    }

    /// Predicts with `control`, corrects with `measurement`, and returns the
    /// posterior mean.
    pub fn step(
        &mut self,
        control: &VelocityVector,
        measurement: &SkeletonPose,
    ) -> Result<SkeletonPose> {
        measurement.expect_encoding(Encoding::Absolute)?;
        let z = measurement.coords();
        let mut next = self.clone();
        for j in 0..POSE_DIM {
            let x_pred = self.x[j] + control.0[j];
            let p_pred = self.p[j] + self.q[j];
            let s = p_pred + self.r[j];
            if s == 0.0 {
                return Err(Error::NumericalDegeneracy("zero innovation variance"));
            }
            let gain = p_pred / s;
            next.x[j] = x_pred + gain * (z[j] - x_pred);
            next.p[j] = (1.0 - gain) * p_pred;
        }
        let pose = SkeletonPose::new(next.x, Encoding::Absolute)?;
        *self = next;
        Ok(pose)
    }
}

/// Functional form of [`KalmanState::step`].
pub fn kalman_step(
    state: &KalmanState,
    control: &VelocityVector,
    measurement: &SkeletonPose,
) -> Result<(KalmanState, SkeletonPose)> {
    let mut next = state.clone();
    let pose = next.step(control, measurement)?;
    Ok((next, pose))
}
