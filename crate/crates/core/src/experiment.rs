//! End-to-end training, fitting and evaluation over a paired corpus.
//!
//! Training runs in three stages, each depending on the previous one:
//! the position network (with the neighbour stores keyed on its output and
//! on raw poses), the velocity network (with gates and noise covariances
//! fitted on the validation split), and the velocity network over Kalman
//! states (with its gate and store).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use log::info;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::drnn::{
    pose_matrix, refine_positions, refine_velocities, velocity_matrix, DrnnConfig, Network,
    OptimizerSpec, TrainedModel,
};
use crate::error::{Error, Result};
use crate::fusion::{
    estimate_gate, estimate_noise_covariances, kalman_sequence, position_residuals, run_pipeline,
    velocity_residuals, FusionModels, GateModel, NeighborStore, NoiseCovariances, Variant,
    DEFAULT_K, DEFAULT_THETA,
};
use crate::metrics::{Accumulator, EvalReport};
use crate::skeleton::{velocities, KinematicTree, SkeletonSequence};
use crate::synth::{Corpus, SequencePair};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionParams {
    /// Neighbour count of every store.
    pub k: usize,
    pub theta: f64,
    pub theta_plus: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            theta: DEFAULT_THETA,
            theta_plus: DEFAULT_THETA,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub pdrnn: DrnnConfig,
    pub vdrnn: DrnnConfig,
    pub vdrnn_plus: DrnnConfig,
    pub optimizer: OptimizerSpec,
    pub fusion: FusionParams,
    pub variants: Vec<Variant>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pdrnn: DrnnConfig::position(1),
            vdrnn: DrnnConfig::velocity(2),
            vdrnn_plus: DrnnConfig::velocity(3),
            optimizer: OptimizerSpec::default(),
            fusion: FusionParams::default(),
            variants: Variant::ALL.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.pdrnn.validate()?;
        self.vdrnn.validate()?;
        self.vdrnn_plus.validate()?;
        if self.fusion.k == 0 {
            return Err(Error::config("fusion.k must be at least 1"));
        }
        for t in [self.fusion.theta, self.fusion.theta_plus] {
            if !(0.0..1.0).contains(&t) {
                return Err(Error::config(format!("gate threshold {t} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

fn noisy(pairs: &[SequencePair]) -> Vec<SkeletonSequence> {
    pairs.iter().map(|p| p.noisy.clone()).collect()
}

fn clean(pairs: &[SequencePair]) -> Vec<SkeletonSequence> {
    pairs.iter().map(|p| p.clean.clone()).collect()
}

fn relative_pairs(
    inputs: &[SkeletonSequence],
    targets: &[SkeletonSequence],
    tree: &KinematicTree,
) -> Result<Vec<(Array2<f64>, Array2<f64>)>> {
    inputs
        .iter()
        .zip(targets)
        .map(|(x, y)| {
            Ok((
                pose_matrix(x.to_relative(tree)?.frames()),
                pose_matrix(y.to_relative(tree)?.frames()),
            ))
        })
        .collect()
}

fn velocity_pairs(
    inputs: &[SkeletonSequence],
    targets: &[SkeletonSequence],
) -> Result<Vec<(Array2<f64>, Array2<f64>)>> {
    inputs
        .iter()
        .zip(targets)
        .map(|(x, y)| Ok((velocity_matrix(&velocities(x)?), velocity_matrix(&velocities(y)?))))
        .collect()
}

fn refine_all(net: &Network, seqs: &[SkeletonSequence], tree: &KinematicTree) -> Result<Vec<SkeletonSequence>> {
    seqs.iter().map(|s| refine_positions(net, s, tree)).collect()
}

fn require_splits(corpus: &Corpus) -> Result<()> {
    if corpus.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if corpus.validation.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    Ok(())
}

/// Position network plus the stores keyed on its output and on raw poses.
pub struct PositionStage {
    pub pdrnn: Network,
    pub training: TrainedModel,
    pub store: NeighborStore,
    pub store_raw: NeighborStore,
}

pub fn train_position_stage(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<PositionStage> {
    require_splits(corpus)?;
    let tree = KinematicTree::kinect();
    info!("training position network");
    let train = relative_pairs(&noisy(&corpus.train), &clean(&corpus.train), &tree)?;
    let val = relative_pairs(&noisy(&corpus.validation), &clean(&corpus.validation), &tree)?;
    let (pdrnn, training) = Network::fit(&cfg.pdrnn, &train, &val, &cfg.optimizer)?;
    let refined = refine_all(&pdrnn, &noisy(&corpus.train), &tree)?;
    let truth = clean(&corpus.train);
    let store = NeighborStore::from_sequences(&refined, &truth, cfg.fusion.k)?;
    let store_raw = NeighborStore::from_sequences(&noisy(&corpus.train), &truth, cfg.fusion.k)?;
    Ok(PositionStage {
        pdrnn,
        training,
        store,
        store_raw,
    })
}

/// Velocity network over refined poses plus every gate and noise model
/// fitted from validation residuals.
pub struct VelocityStage {
    pub vdrnn: Network,
    pub training: TrainedModel,
    pub gate: GateModel,
    pub gate_unrefined: GateModel,
    pub gate_raw: GateModel,
    pub kalman: NoiseCovariances,
    pub kalman_raw: NoiseCovariances,
}

pub fn train_velocity_stage(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    pdrnn: &Network,
) -> Result<VelocityStage> {
    require_splits(corpus)?;
    let tree = KinematicTree::kinect();
    let train_refined = refine_all(pdrnn, &noisy(&corpus.train), &tree)?;
    let val_raw = noisy(&corpus.validation);
    let val_refined = refine_all(pdrnn, &val_raw, &tree)?;
    let val_truth = clean(&corpus.validation);

    info!("training velocity network");
    let train = velocity_pairs(&train_refined, &clean(&corpus.train))?;
    let val = velocity_pairs(&val_refined, &val_truth)?;
    let (vdrnn, training) = Network::fit(&cfg.vdrnn, &train, &val, &cfg.optimizer)?;

    let v_refined = val_refined
        .iter()
        .map(|s| refine_velocities(&vdrnn, s))
        .collect::<Result<Vec<_>>>()?;
    let v_unrefined = val_refined.iter().map(velocities).collect::<Result<Vec<_>>>()?;
    let v_raw = val_raw
        .iter()
        .map(|s| refine_velocities(&vdrnn, s))
        .collect::<Result<Vec<_>>>()?;

    let vel_res = velocity_residuals(&v_refined, &val_truth)?;
    let raw_vel_res = velocity_residuals(&v_raw, &val_truth)?;
    Ok(VelocityStage {
        gate: estimate_gate(&vel_res, cfg.fusion.theta)?,
        gate_unrefined: estimate_gate(&velocity_residuals(&v_unrefined, &val_truth)?, cfg.fusion.theta)?,
        gate_raw: estimate_gate(&raw_vel_res, cfg.fusion.theta)?,
        kalman: estimate_noise_covariances(&position_residuals(&val_refined, &val_truth)?, &vel_res)?,
        kalman_raw: estimate_noise_covariances(&position_residuals(&val_raw, &val_truth)?, &raw_vel_res)?,
        vdrnn,
        training,
    })
}

/// Velocity network over Kalman-state velocities with its gate and store.
pub struct KalmanVelocityStage {
    pub vdrnn_plus: Network,
    pub training: TrainedModel,
    pub gate_plus: GateModel,
    pub store_plus: NeighborStore,
}

fn filter_all(
    seqs: &[SkeletonSequence],
    pdrnn: &Network,
    vdrnn: &Network,
    kalman: &NoiseCovariances,
    tree: &KinematicTree,
) -> Result<Vec<SkeletonSequence>> {
    seqs.iter()
        .map(|s| {
            let z = refine_positions(pdrnn, s, tree)?;
            let v = refine_velocities(vdrnn, &z)?;
            kalman_sequence(kalman, &z, &v)
        })
        .collect()
}

pub fn train_kalman_velocity_stage(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    pdrnn: &Network,
    vdrnn: &Network,
    kalman: &NoiseCovariances,
) -> Result<KalmanVelocityStage> {
    require_splits(corpus)?;
    let tree = KinematicTree::kinect();
    let train_x = filter_all(&noisy(&corpus.train), pdrnn, vdrnn, kalman, &tree)?;
    let val_x = filter_all(&noisy(&corpus.validation), pdrnn, vdrnn, kalman, &tree)?;
    let train_truth = clean(&corpus.train);
    let val_truth = clean(&corpus.validation);

    info!("training Kalman-state velocity network");
    let train = velocity_pairs(&train_x, &train_truth)?;
    let val = velocity_pairs(&val_x, &val_truth)?;
    let (vdrnn_plus, training) = Network::fit(&cfg.vdrnn_plus, &train, &val, &cfg.optimizer)?;
    let v_plus = val_x
        .iter()
        .map(|s| refine_velocities(&vdrnn_plus, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(KalmanVelocityStage {
        gate_plus: estimate_gate(&velocity_residuals(&v_plus, &val_truth)?, cfg.fusion.theta_plus)?,
        store_plus: NeighborStore::from_sequences(&train_x, &train_truth, cfg.fusion.k)?,
        vdrnn_plus,
        training,
    })
}

/// Training outcome of all three networks.
pub struct TrainedPipeline {
    pub models: FusionModels,
    pub pdrnn_training: TrainedModel,
    pub vdrnn_training: TrainedModel,
    pub vdrnn_plus_training: TrainedModel,
}

pub fn train_pipeline(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<TrainedPipeline> {
    cfg.validate()?;
    let pos = train_position_stage(cfg, corpus)?;
    let vel = train_velocity_stage(cfg, corpus, &pos.pdrnn)?;
    let plus = train_kalman_velocity_stage(cfg, corpus, &pos.pdrnn, &vel.vdrnn, &vel.kalman)?;
    Ok(TrainedPipeline {
        models: FusionModels {
            pdrnn: Some(pos.pdrnn),
            vdrnn: Some(vel.vdrnn),
            vdrnn_plus: Some(plus.vdrnn_plus),
            store: Some(pos.store),
            store_plus: Some(plus.store_plus),
            store_raw: Some(pos.store_raw),
            gate: Some(vel.gate),
            gate_plus: Some(plus.gate_plus),
            gate_unrefined: Some(vel.gate_unrefined),
            gate_raw: Some(vel.gate_raw),
            kalman: Some(vel.kalman),
            kalman_raw: Some(vel.kalman_raw),
        },
        pdrnn_training: pos.training,
        vdrnn_training: vel.training,
        vdrnn_plus_training: plus.training,
    })
}

/// Refined test sequences and pooled metrics per variant.
#[derive(Clone, Debug, Default)]
pub struct Evaluation {
    pub reports: BTreeMap<Variant, EvalReport>,
    pub outputs: BTreeMap<Variant, Vec<SkeletonSequence>>,
}

pub fn evaluate_variants(
    models: &FusionModels,
    pairs: &[SequencePair],
    variants: &[Variant],
) -> Result<Evaluation> {
    if pairs.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let tree = KinematicTree::kinect();
    let mut eval = Evaluation::default();
    for &v in variants {
        let mut acc = Accumulator::default();
        let mut outs = Vec::with_capacity(pairs.len());
        for p in pairs {
            let out = run_pipeline(v, &p.noisy, models, &tree)?;
            acc.add(&out, &p.clean)?;
            outs.push(out);
        }
        let report = acc.report();
        info!("{v}: APE {:.5} AJE {:.5}", report.ape, report.aje);
        eval.reports.insert(v, report);
        eval.outputs.insert(v, outs);
    }
    Ok(eval)
}

/// Writes `reports.json` mapping variant names to reports.
pub fn write_reports(path: &Path, reports: &BTreeMap<Variant, EvalReport>) -> Result<()> {
    let named: BTreeMap<&str, &EvalReport> = reports.iter().map(|(v, r)| (v.name(), r)).collect();
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &named)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    Ok(())
}

/// File names used when a model set is written to a directory.
pub mod files {
    pub const PDRNN: &str = "pdrnn.json";
    pub const PDRNN_LOSS: &str = "pdrnn_loss.csv";
    pub const VDRNN: &str = "vdrnn.json";
    pub const VDRNN_LOSS: &str = "vdrnn_loss.csv";
    pub const VDRNN_PLUS: &str = "vdrnn_plus.json";
    pub const VDRNN_PLUS_LOSS: &str = "vdrnn_plus_loss.csv";
    pub const GATE: &str = "gate.json";
    pub const GATE_PLUS: &str = "gate_plus.json";
    pub const GATE_UNREFINED: &str = "gate_unrefined.json";
    pub const GATE_RAW: &str = "gate_raw.json";
    pub const KALMAN: &str = "kalman.json";
    pub const KALMAN_RAW: &str = "kalman_raw.json";
    /// Key and target files of each store.
    pub const STORE: [&str; 2] = ["store_keys.jsonl", "store_targets.jsonl"];
    pub const STORE_PLUS: [&str; 2] = ["store_plus_keys.jsonl", "store_plus_targets.jsonl"];
    pub const STORE_RAW: [&str; 2] = ["store_raw_keys.jsonl", "store_raw_targets.jsonl"];
}

fn write_loss(path: &Path, model: &TrainedModel) -> Result<()> {
    model.write_loss_csv(BufWriter::new(File::create(path)?))
}

impl PositionStage {
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.pdrnn.save(dir.join(files::PDRNN))?;
        write_loss(&dir.join(files::PDRNN_LOSS), &self.training)?;
        self.store.save(dir.join(files::STORE[0]), dir.join(files::STORE[1]))?;
        self.store_raw.save(dir.join(files::STORE_RAW[0]), dir.join(files::STORE_RAW[1]))
    }
}

impl VelocityStage {
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.vdrnn.save(dir.join(files::VDRNN))?;
        write_loss(&dir.join(files::VDRNN_LOSS), &self.training)?;
        self.gate.save(dir.join(files::GATE))?;
        self.gate_unrefined.save(dir.join(files::GATE_UNREFINED))?;
        self.gate_raw.save(dir.join(files::GATE_RAW))?;
        self.kalman.save(dir.join(files::KALMAN))?;
        self.kalman_raw.save(dir.join(files::KALMAN_RAW))
    }
}

impl KalmanVelocityStage {
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.vdrnn_plus.save(dir.join(files::VDRNN_PLUS))?;
        write_loss(&dir.join(files::VDRNN_PLUS_LOSS), &self.training)?;
        self.gate_plus.save(dir.join(files::GATE_PLUS))?;
        self.store_plus
            .save(dir.join(files::STORE_PLUS[0]), dir.join(files::STORE_PLUS[1]))
    }
}

/// Loads every model file present in `dir`; missing files leave their slot empty.
pub fn load_models(dir: &Path, k: usize) -> Result<FusionModels> {
    fn opt<T>(path: std::path::PathBuf, load: impl FnOnce(std::path::PathBuf) -> Result<T>) -> Result<Option<T>> {
        if path.exists() {
            load(path).map(Some)
        } else {
            Ok(None)
        }
    }
    let store = |names: [&str; 2]| -> Result<Option<NeighborStore>> {
        let (a, b) = (dir.join(names[0]), dir.join(names[1]));
        if a.exists() && b.exists() {
            NeighborStore::load(a, b, k).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(FusionModels {
        pdrnn: opt(dir.join(files::PDRNN), Network::load)?,
        vdrnn: opt(dir.join(files::VDRNN), Network::load)?,
        vdrnn_plus: opt(dir.join(files::VDRNN_PLUS), Network::load)?,
        store: store(files::STORE)?,
        store_plus: store(files::STORE_PLUS)?,
        store_raw: store(files::STORE_RAW)?,
        gate: opt(dir.join(files::GATE), GateModel::load)?,
        gate_plus: opt(dir.join(files::GATE_PLUS), GateModel::load)?,
        gate_unrefined: opt(dir.join(files::GATE_UNREFINED), GateModel::load)?,
        gate_raw: opt(dir.join(files::GATE_RAW), GateModel::load)?,
        kalman: opt(dir.join(files::KALMAN), NoiseCovariances::load)?,
        kalman_raw: opt(dir.join(files::KALMAN_RAW), NoiseCovariances::load)?,
    })
}
