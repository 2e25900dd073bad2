use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::skeleton::{VelocityVector, POSE_DIM};

/// Smallest variance any fitted component is allowed to take.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Default tail-probability threshold.
pub const DEFAULT_THETA: f64 = 0.05;

/// Per-component zero-mean Gaussian over velocity deviations.
///
/// A deviation `d` passes component `j` when `P(|N(0, sigma2[j])| > d) > theta`.
/// `theta == 0` disables the gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateModel {
    pub sigma2: Vec<f64>,
    pub theta: f64,
}

impl GateModel {
    pub fn new(sigma2: Vec<f64>, theta: f64) -> Result<Self> {
        let gate = Self { sigma2, theta };
        gate.validate()?;
        Ok(gate)
    }

    /// A gate that passes every deviation.
    pub fn open() -> Self {
        Self {
            sigma2: vec![1.0; POSE_DIM],
            theta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma2.len() != POSE_DIM {
            return Err(Error::Dimension {
                what: "gate variances",
                expected: POSE_DIM,
                got: self.sigma2.len(),
            });
        }
        if self.sigma2.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::config("gate variances must be finite and positive"));
        }
        if !(0.0..1.0).contains(&self.theta) {
            return Err(Error::config(format!(
                "gate threshold must lie in [0, 1), got {}",
                self.theta
            )));
        }
        Ok(())
    }

    /// Two-sided tail probability of deviation `d` in component `j`.
    pub fn tail_probability(&self, j: usize, d: f64) -> f64 {
        erfc(d.abs() / (2.0 * self.sigma2[j]).sqrt())
    }

    pub fn passes(&self, j: usize, d: f64) -> bool {
        self.theta == 0.0 || self.tail_probability(j, d) > self.theta
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let gate: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        gate.validate()?;
        Ok(gate)
    }
}

/// Mean of squared residuals per component (mean pinned at zero), floored.
pub fn estimate_gate(residuals: &[VelocityVector], theta: f64) -> Result<GateModel> {
    if residuals.len() < 2 {
        return Err(Error::InsufficientFrames {
            needed: 2,
            got: residuals.len(),
        });
    }
    let n = residuals.len() as f64;
    let mut sigma2 = vec![0.0; POSE_DIM];
    for r in residuals {
        for (s, v) in sigma2.iter_mut().zip(r.0.iter()) {
            *s += v * v;
        }
    }
    for (j, s) in sigma2.iter_mut().enumerate() {
        *s /= n;
        if !s.is_finite() {
            return Err(Error::NonFinite("gate residuals"));
        }
        if *s < VARIANCE_FLOOR {
            warn!("gate variance of component {j} floored at {VARIANCE_FLOOR:e}");
            *s = VARIANCE_FLOOR;
        }
    }
    GateModel::new(sigma2, theta)
}
