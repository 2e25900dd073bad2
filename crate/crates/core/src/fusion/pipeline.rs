use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::gate::GateModel;
use super::kalman::{KalmanState, NoiseCovariances};
use super::knn::{sknn_step, NeighborStore};
use crate::drnn::{refine_positions, refine_velocities, Network};
use crate::error::{Error, Result};
use crate::skeleton::{velocities, Encoding, KinematicTree, SkeletonSequence, VelocityVector};

/// Refinement pipelines, including the ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Raw,
    Pdrnn,
    Sknn,
    Kf,
    Sknnkf,
    /// Soft-KNN over raw poses with the raw-key store.
    SknnMinusPdrnn,
    /// Soft-KNN gated on unrefined velocities of the position-network output.
    SknnMinusVdrnn,
    /// Soft-KNN whose candidate velocities are taken against the previous
    /// position-network output instead of the previous fused output.
    NaiveSknn,
    /// Kalman filter on raw measurements.
    KfMinusPdrnn,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Raw,
        Variant::Pdrnn,
        Variant::Sknn,
        Variant::Kf,
        Variant::Sknnkf,
        Variant::SknnMinusPdrnn,
        Variant::SknnMinusVdrnn,
        Variant::NaiveSknn,
        Variant::KfMinusPdrnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Raw => "raw",
            Variant::Pdrnn => "pdrnn",
            Variant::Sknn => "sknn",
            Variant::Kf => "kf",
            Variant::Sknnkf => "sknnkf",
            Variant::SknnMinusPdrnn => "sknn_minus_pdrnn",
            Variant::SknnMinusVdrnn => "sknn_minus_vdrnn",
            Variant::NaiveSknn => "naive_sknn",
            Variant::KfMinusPdrnn => "kf_minus_pdrnn",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::config(format!("unknown variant '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

/// Everything the variants may need. Fields a variant does not use may be absent.
#[derive(Clone, Debug, Default)]
pub struct FusionModels {
    pub pdrnn: Option<Network>,
    pub vdrnn: Option<Network>,
    pub vdrnn_plus: Option<Network>,
    /// Position-network outputs paired with ground truth.
    pub store: Option<NeighborStore>,
    /// Kalman states paired with ground truth.
    pub store_plus: Option<NeighborStore>,
    /// Raw poses paired with ground truth.
    pub store_raw: Option<NeighborStore>,
    pub gate: Option<GateModel>,
    pub gate_plus: Option<GateModel>,
    /// Gate on unrefined velocities of the position-network output.
    pub gate_unrefined: Option<GateModel>,
    /// Gate on velocity-network output over raw velocities.
    pub gate_raw: Option<GateModel>,
    pub kalman: Option<NoiseCovariances>,
    /// Noise model for filtering raw measurements.
    pub kalman_raw: Option<NoiseCovariances>,
}

fn need<'a, T>(slot: &'a Option<T>, what: &str, variant: Variant) -> Result<&'a T> {
    slot.as_ref()
        .ok_or_else(|| Error::config(format!("variant {variant} needs the {what} model")))
}

/// Which pose the candidate velocity of a neighbour is measured from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PreviousPose {
    /// The previous fused output.
    Fused,
    /// The previous query pose.
    Query,
}

/// Runs soft-KNN over a whole sequence. `velocities[t - 1]` is the velocity
/// estimate for frame `t`; frame 0 is passed through.
pub fn soft_knn_sequence(
    store: &NeighborStore,
    gate: &GateModel,
    queries: &SkeletonSequence,
    velocities: &[VelocityVector],
    previous: PreviousPose,
) -> Result<SkeletonSequence> {
    queries.expect_encoding(Encoding::Absolute)?;
    let frames = queries.frames();
    if velocities.len() + 1 != frames.len() {
        return Err(Error::LengthMismatch {
            left: velocities.len() + 1,
            right: frames.len(),
        });
    }
    let mut out = Vec::with_capacity(frames.len());
    out.push(frames[0]);
    for t in 1..frames.len() {
        let prev = match previous {
            PreviousPose::Fused => out[t - 1],
            PreviousPose::Query => frames[t - 1],
        };
        out.push(sknn_step(store, gate, &frames[t], &velocities[t - 1], &prev)?);
    }
    SkeletonSequence::new(out, queries.frame_rate_hz())
}

/// Filters `measurements` with `controls[t - 1]` driving the prediction into
/// frame `t`. The state starts at the first measurement with `P0 = R`.
pub fn kalman_sequence(
    cov: &NoiseCovariances,
    measurements: &SkeletonSequence,
    controls: &[VelocityVector],
) -> Result<SkeletonSequence> {
    measurements.expect_encoding(Encoding::Absolute)?;
    let frames = measurements.frames();
    if controls.len() + 1 != frames.len() {
        return Err(Error::LengthMismatch {
            left: controls.len() + 1,
            right: frames.len(),
        });
    }
    let mut state = KalmanState::new(&frames[0], cov)?;
    let mut out = Vec::with_capacity(frames.len());
    out.push(frames[0]);
    for (z, u) in frames[1..].iter().zip(controls) {
        out.push(state.step(u, z)?);
    }
    SkeletonSequence::new(out, measurements.frame_rate_hz())
}

/// Intermediate streams of the full chain.
#[derive(Clone, Debug)]
pub struct ChainTrace {
    pub refined: SkeletonSequence,
    pub refined_velocities: Vec<VelocityVector>,
    pub filtered: SkeletonSequence,
    pub filtered_velocities: Vec<VelocityVector>,
    pub output: SkeletonSequence,
}

/// Position network, Kalman fusion with refined velocities, then soft-KNN
/// over Kalman states with the second velocity network.
pub fn sknnkf_chain(
    models: &FusionModels,
    seq: &SkeletonSequence,
    tree: &KinematicTree,
) -> Result<ChainTrace> {
    let v = Variant::Sknnkf;
    let refined = refine_positions(need(&models.pdrnn, "pdrnn", v)?, seq, tree)?;
    let refined_velocities = refine_velocities(need(&models.vdrnn, "vdrnn", v)?, &refined)?;
    let filtered = kalman_sequence(need(&models.kalman, "kalman", v)?, &refined, &refined_velocities)?;
    let filtered_velocities =
        refine_velocities(need(&models.vdrnn_plus, "vdrnn_plus", v)?, &filtered)?;
    let output = soft_knn_sequence(
        need(&models.store_plus, "store_plus", v)?,
        need(&models.gate_plus, "gate_plus", v)?,
        &filtered,
        &filtered_velocities,
        PreviousPose::Fused,
    )?;
    Ok(ChainTrace {
        refined,
        refined_velocities,
        filtered,
        filtered_velocities,
        output,
    })
}

/// Refines an absolute sequence with the chosen variant. Output has one
/// frame per input frame.
pub fn run_pipeline(
    variant: Variant,
    seq: &SkeletonSequence,
    models: &FusionModels,
    tree: &KinematicTree,
) -> Result<SkeletonSequence> {
    seq.expect_encoding(Encoding::Absolute)?;
    let v = variant;
    let refine = || refine_positions(need(&models.pdrnn, "pdrnn", v)?, seq, tree);
    match variant {
        Variant::Raw => Ok(seq.clone()),
        Variant::Pdrnn => refine(),
        Variant::Sknn | Variant::NaiveSknn => {
            let z = refine()?;
            let vel = refine_velocities(need(&models.vdrnn, "vdrnn", v)?, &z)?;
            let previous = if variant == Variant::Sknn {
                PreviousPose::Fused
            } else {
                PreviousPose::Query
            };
            soft_knn_sequence(
                need(&models.store, "store", v)?,
                need(&models.gate, "gate", v)?,
                &z,
                &vel,
                previous,
            )
        }
        Variant::Kf => {
            let z = refine()?;
            let vel = refine_velocities(need(&models.vdrnn, "vdrnn", v)?, &z)?;
            kalman_sequence(need(&models.kalman, "kalman", v)?, &z, &vel)
        }
        Variant::Sknnkf => Ok(sknnkf_chain(models, seq, tree)?.output),
        Variant::SknnMinusPdrnn => {
            let vel = refine_velocities(need(&models.vdrnn, "vdrnn", v)?, seq)?;
            soft_knn_sequence(
                need(&models.store_raw, "store_raw", v)?,
                need(&models.gate_raw, "gate_raw", v)?,
                seq,
                &vel,
                PreviousPose::Fused,
            )
        }
        Variant::SknnMinusVdrnn => {
            let z = refine()?;
            let vel = velocities(&z)?;
            soft_knn_sequence(
                need(&models.store, "store", v)?,
                need(&models.gate_unrefined, "gate_unrefined", v)?,
                &z,
                &vel,
                PreviousPose::Fused,
            )
        }
        Variant::KfMinusPdrnn => {
            let vel = refine_velocities(need(&models.vdrnn, "vdrnn", v)?, seq)?;
            kalman_sequence(need(&models.kalman_raw, "kalman_raw", v)?, seq, &vel)
        }
    }
}
