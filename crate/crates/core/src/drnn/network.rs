//! A trained network bundled with its input/output scaling, checkpoint files,
//! and the pose / velocity refinement wrappers.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::bptt::{step_forward, TrainingBatch};
use super::train::{train, OptimizerSpec, TrainedModel};
use super::{DrnnConfig, DrnnParams};
use crate::error::{Error, Result};
use crate::skeleton::{
    velocities, Encoding, KinematicTree, SkeletonPose, SkeletonSequence, VelocityVector, POSE_DIM,
};

const CHECKPOINT_FORMAT: &str = "drnn-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Affine rescaling `(x - mean) / scale` with one scale shared by every
/// component, so a squared-error objective in scaled units has the same
/// minimiser as in raw units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: f64,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: 1.0,
        }
    }

    /// Per-component mean and the root-mean of the per-component variances.
    pub fn fit<'a>(rows: impl IntoIterator<Item = ArrayView2<'a, f64>>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sum_sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for block in rows {
            if sum.is_empty() {
                sum = vec![0.0; block.ncols()];
                sum_sq = vec![0.0; block.ncols()];
            }
            if block.ncols() != sum.len() {
                return Err(Error::Dimension {
                    what: "normalizer rows",
                    expected: sum.len(),
                    got: block.ncols(),
                });
            }
            for row in block.rows() {
                for (k, v) in row.iter().enumerate() {
                    sum[k] += v;
                    sum_sq[k] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Empty("normalizer data"));
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let var = sum_sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / nf - m * m).max(0.0))
            .sum::<f64>()
            / mean.len() as f64;
        Ok(Self {
            mean,
            scale: var.sqrt().max(1e-12),
        })
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v = (*v - m) / self.scale;
            }
        }
        out
    }

    pub fn invert(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v = *v * self.scale + m;
            }
        }
        out
    }
}

/// How a whole sequence is pushed through the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// Hidden state carried across the entire sequence from a zero start.
    #[default]
    Streaming,
    /// Each frame is the last output of a fresh zero-state run over the
    /// preceding training-length window.
    SlidingWindow,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub config: DrnnConfig,
    pub params: DrnnParams,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
    pub inference: InferenceMode,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: DrnnConfig,
    #[serde(default)]
    inference: InferenceMode,
    input_normalizer: Normalizer,
    output_normalizer: Normalizer,
    tensors: Vec<TensorRecord>,
}

impl Network {
    /// Raw network without rescaling.
    pub fn new(config: DrnnConfig, params: DrnnParams) -> Result<Self> {
        params.check_shapes(&config)?;
        Ok(Self {
            input_norm: Normalizer::identity(config.input_dim),
            output_norm: Normalizer::identity(config.output_dim),
            config,
            params,
            inference: InferenceMode::Streaming,
        })
    }

    /// Fits scaling on the training sequences, then trains on stride-1
    /// windows of `config.window_length`. Each pair is (inputs, targets)
    /// with time along rows.
    pub fn fit(
        config: &DrnnConfig,
        train_pairs: &[(Array2<f64>, Array2<f64>)],
        validation_pairs: &[(Array2<f64>, Array2<f64>)],
        spec: &OptimizerSpec,
    ) -> Result<(Self, TrainedModel)> {
        config.validate()?;
        // Residual networks learn `target - input`.
        let target = |x: &Array2<f64>, y: &Array2<f64>| -> Array2<f64> {
            if config.residual {
                y - x
            } else {
                y.clone()
            }
        };
        let targets: Vec<Array2<f64>> = train_pairs.iter().map(|(x, y)| target(x, y)).collect();
        let input_norm = Normalizer::fit(train_pairs.iter().map(|(x, _)| x.view()))?;
        let output_norm = Normalizer::fit(targets.iter().map(|y| y.view()))?;
        let scale = |pairs: &[(Array2<f64>, Array2<f64>)]| -> Vec<(Array2<f64>, Array2<f64>)> {
            pairs
                .iter()
                .map(|(x, y)| (input_norm.apply(x.view()), output_norm.apply(target(x, y).view())))
                .collect()
        };
        let train_set = TrainingBatch::from_sequences(&scale(train_pairs), config.window_length)?;
        let val_set = TrainingBatch::from_sequences(&scale(validation_pairs), config.window_length)?;
        let model = train(config, &train_set, &val_set, spec)?;
        let net = Self {
            config: config.clone(),
            params: model.params.clone(),
            input_norm,
            output_norm,
            inference: InferenceMode::Streaming,
        };
        Ok((net, model))
    }

    pub fn with_inference(mut self, mode: InferenceMode) -> Self {
        self.inference = mode;
        self
    }

    /// Runs a whole sequence (rows = time) and returns one output row per input row.
    pub fn run(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if inputs.nrows() == 0 {
            return Err(Error::InsufficientFrames { needed: 1, got: 0 });
        }
        let x = self.input_norm.apply(inputs);
        let y = match self.inference {
            InferenceMode::Streaming => self.params.forward(x.view(), None)?.0,
            InferenceMode::SlidingWindow => self.sliding(x.view())?,
        };
        let out = self.output_norm.invert(y.view());
        Ok(if self.config.residual { out + &inputs } else { out })
    }

    fn sliding(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let w = self.config.window_length;
        let n = x.nrows();
        let head = n.min(w);
        // The first `w` frames see exactly the zero-state prefix.
        let (out_head, _) = self.params.forward(x.slice(ndarray::s![..head, ..]), None)?;
        if n <= w {
            return Ok(out_head);
        }
        let batch = n - w;
        let mut h = Array2::zeros((batch, self.params.state_dim()));
        let mut last = Array2::zeros((0, 0));
        for k in 0..w {
            // Row b is frame (b + 1 + k) for the window ending at b + w.
            let xk = x.slice(ndarray::s![1 + k..1 + k + batch, ..]);
            let mut step = step_forward(&self.params, xk, h.view());
            h = step.post.swap_remove(self.params.rec_index());
            last = step.output;
        }
        if last.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalOverflow("network output"));
        }
        let mut out = Array2::zeros((n, self.params.output_dim()));
        out.slice_mut(ndarray::s![..w, ..]).assign(&out_head);
        out.slice_mut(ndarray::s![w.., ..]).assign(&last);
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let tensors = self
            .params
            .tensor_names()
            .into_iter()
            .zip(self.params.tensors())
            .map(|(name, (shape, data))| TensorRecord {
                name,
                shape: [shape.0, shape.1],
                data: data.to_vec(),
            })
            .collect();
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            inference: self.inference,
            input_normalizer: self.input_norm.clone(),
            output_normalizer: self.output_norm.clone(),
            tensors,
        };
        let w = BufWriter::new(File::create(path.as_ref())?);
        serde_json::to_writer(w, &ck)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            msg,
        };
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))
            .map_err(|e| bad(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        ck.config.validate()?;
        let mut params = DrnnParams::zeros(&ck.config)?;
        let expected = params.tensor_names();
        let shapes: Vec<_> = params.tensors().iter().map(|(s, _)| *s).collect();
        if ck.tensors.len() != expected.len() {
            return Err(bad(format!(
                "expected {} tensors, found {}",
                expected.len(),
                ck.tensors.len()
            )));
        }
        let mut flat = Vec::with_capacity(params.num_params());
        for ((rec, name), shape) in ck.tensors.iter().zip(&expected).zip(&shapes) {
            if &rec.name != name || (rec.shape[0], rec.shape[1]) != *shape {
                return Err(bad(format!(
                    "tensor {} {:?} does not match config ({name} {:?})",
                    rec.name, rec.shape, shape
                )));
            }
            if rec.data.len() != shape.0 * shape.1 {
                return Err(bad(format!("tensor {name} has wrong element count")));
            }
            flat.extend_from_slice(&rec.data);
        }
        params.set_flat(&flat)?;
        if !params.is_finite() {
            return Err(Error::NonFinite("checkpoint weights"));
        }
        if ck.input_normalizer.mean.len() != ck.config.input_dim
            || ck.output_normalizer.mean.len() != ck.config.output_dim
        {
            return Err(bad("normalizer dimension does not match config".into()));
        }
        Ok(Self {
            config: ck.config,
            params,
            input_norm: ck.input_normalizer,
            output_norm: ck.output_normalizer,
            inference: ck.inference,
        })
    }

    fn expect_pose_dims(&self) -> Result<()> {
        for (what, got) in [
            ("network input", self.params.input_dim()),
            ("network output", self.params.output_dim()),
        ] {
            if got != POSE_DIM {
                return Err(Error::Dimension {
                    what,
                    expected: POSE_DIM,
                    got,
                });
            }
        }
        Ok(())
    }

    /// Runs a velocity stream through the network.
    pub fn run_velocities(&self, vel: &[VelocityVector]) -> Result<Vec<VelocityVector>> {
        self.expect_pose_dims()?;
        let out = self.run(velocity_matrix(vel).view())?;
        out.rows()
            .into_iter()
            .map(|r| VelocityVector::from_slice(r.as_slice().expect("row-major")))
            .collect()
    }
}

/// Time-major matrix of pose coordinates.
pub(crate) fn pose_matrix(frames: &[SkeletonPose]) -> Array2<f64> {
    let mut m = Array2::zeros((frames.len(), POSE_DIM));
    for (mut row, f) in m.rows_mut().into_iter().zip(frames) {
        row.assign(&ndarray::ArrayView1::from(&f.coords()[..]));
    }
    m
}

pub(crate) fn velocity_matrix(vel: &[VelocityVector]) -> Array2<f64> {
    let mut m = Array2::zeros((vel.len(), POSE_DIM));
    for (mut row, v) in m.rows_mut().into_iter().zip(vel) {
        row.assign(&ndarray::ArrayView1::from(&v.0[..]));
    }
    m
}

/// Position refinement: relative-to-parent encoding in, network, and back
/// to absolute positions. Output has one frame per input frame.
pub fn refine_positions(
    pdrnn: &Network,
    seq: &SkeletonSequence,
    tree: &KinematicTree,
) -> Result<SkeletonSequence> {
    seq.expect_encoding(Encoding::Absolute)?;
    pdrnn.expect_pose_dims()?;
    let rel = seq.to_relative(tree)?;
    let out = pdrnn.run(pose_matrix(rel.frames()).view())?;
    let frames = out
        .rows()
        .into_iter()
        .map(|r| {
            SkeletonPose::from_slice(r.as_slice().expect("row-major"), Encoding::RelativeToParent)?
                .to_absolute(tree)
        })
        .collect::<Result<Vec<_>>>()?;
    SkeletonSequence::new(frames, seq.frame_rate_hz())
}

/// Velocity refinement: element `t-1` of the result is the refined
/// velocity of frame `t`.
pub fn refine_velocities(vdrnn: &Network, seq: &SkeletonSequence) -> Result<Vec<VelocityVector>> {
    let vel = velocities(seq)?;
    vdrnn.run_velocities(&vel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sequence(seed: u64, n: usize) -> SkeletonSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..n)
            .map(|_| {
                let mut c = [0.0; POSE_DIM];
                for v in c.iter_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
                SkeletonPose::new(c, Encoding::Absolute).unwrap()
            })
            .collect();
        SkeletonSequence::new(frames, 30.0).unwrap()
    }

    fn small_config(window: usize) -> DrnnConfig {
        DrnnConfig::new(window, 1).with_hidden_sizes(vec![12, 12, 12])
    }

    /// relu(x) - relu(-x) = x, threaded through three layers.
    fn identity_network(window: usize) -> Network {
        let d = POSE_DIM;
        let cfg = DrnnConfig::new(window, 0).with_hidden_sizes(vec![2 * d, 2 * d, 2 * d]);
        let mut p = DrnnParams::zeros(&cfg).unwrap();
        for k in 0..d {
            p.layers[0][[k, k]] = 1.0;
            p.layers[0][[k, d + k]] = -1.0;
            p.output[[k, k]] = 1.0;
            p.output[[d + k, k]] = -1.0;
        }
        for layer in &mut p.layers[1..] {
            for k in 0..2 * d {
                layer[[k, k]] = 1.0;
            }
        }
        Network::new(cfg, p).unwrap()
    }

    #[test]
    fn zero_network_gives_origin_skeleton() {
        let cfg = small_config(7);
        let net = Network::new(cfg.clone(), DrnnParams::zeros(&cfg).unwrap()).unwrap();
        let seq = random_sequence(1, 12);
        let out = refine_positions(&net, &seq, &KinematicTree::kinect()).unwrap();
        assert_eq!(out.len(), seq.len());
        assert_eq!(out.encoding(), Encoding::Absolute);
        for f in out.frames() {
            assert_eq!(f.coords(), &[0.0; POSE_DIM]);
        }
    }

    #[test]
    fn identity_network_preserves_sequence() {
        let net = identity_network(7);
        let tree = KinematicTree::kinect();
        let seq = random_sequence(2, 30);
        for mode in [InferenceMode::Streaming, InferenceMode::SlidingWindow] {
            let out = refine_positions(&net.clone().with_inference(mode), &seq, &tree).unwrap();
            for (a, b) in out.frames().iter().zip(seq.frames()) {
                for (x, y) in a.coords().iter().zip(b.coords()) {
                    assert!((x - y).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn velocity_refinement_shapes_and_composition() {
        let cfg = small_config(20);
        let net = Network::new(cfg.clone(), DrnnParams::init(&cfg).unwrap()).unwrap();
        let seq = random_sequence(3, 25);
        let out = refine_velocities(&net, &seq).unwrap();
        assert_eq!(out.len(), seq.len() - 1);
        // Oracle: velocities, then a direct forward call.
        let vel = velocities(&seq).unwrap();
        let (direct, _) = net.params.forward(velocity_matrix(&vel).view(), None).unwrap();
        for (t, v) in out.iter().enumerate() {
            for k in 0..POSE_DIM {
                assert!((v.0[k] - direct[[t, k]]).abs() < 1e-12);
            }
        }

        let still = SkeletonSequence::new(vec![seq.frames()[0]; 6], 30.0).unwrap();
        let zero = Network::new(cfg.clone(), DrnnParams::zeros(&cfg).unwrap()).unwrap();
        let out = refine_velocities(&zero, &still).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|v| v.0 == [0.0; POSE_DIM]));
        assert!(refine_velocities(&zero, &SkeletonSequence::new(vec![seq.frames()[0]], 30.0).unwrap()).is_err());
    }

    #[test]
    fn sliding_window_matches_fresh_window_runs() {
        let cfg = small_config(4);
        let mut params = DrnnParams::init(&cfg).unwrap();
        for b in params.biases.iter_mut() {
            b.fill(0.1);
        }
        let net = Network::new(cfg, params).unwrap().with_inference(InferenceMode::SlidingWindow);
        let seq = random_sequence(4, 11);
        let x = pose_matrix(seq.frames());
        let out = net.run(x.view()).unwrap();
        for t in 0..11usize {
            let start = t.saturating_sub(3);
            let (y, _) = net
                .params
                .forward(x.slice(ndarray::s![start..=t, ..]), None)
                .unwrap();
            for k in 0..POSE_DIM {
                assert!((out[[t, k]] - y[[y.nrows() - 1, k]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalizer_round_trip() {
        let x = Array::from_shape_fn((10, 3), |(t, k)| (t as f64) * (k as f64 + 1.0) + 5.0);
        let n = Normalizer::fit([x.view()]).unwrap();
        let back = n.invert(n.apply(x.view()).view());
        for (a, b) in x.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((n.mean[0] - 9.5).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(7);
        let mut net = Network::new(cfg.clone(), DrnnParams::init(&cfg).unwrap()).unwrap();
        net.input_norm.scale = 2.5;
        net.output_norm.mean[3] = -0.25;
        let path = dir.path().join("net.json");
        net.save(&path).unwrap();
        let back = Network::load(&path).unwrap();
        assert_eq!(back, net);

        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replacen("\"hidden_sizes\":[12,12,12]", "\"hidden_sizes\":[12,13,12]", 1);
        std::fs::write(&path, text).unwrap();
        assert!(Network::load(&path).is_err());
    }

    #[test]
    fn refine_requires_absolute_input() {
        let net = identity_network(7);
        let tree = KinematicTree::kinect();
        let rel = random_sequence(5, 3).to_relative(&tree).unwrap();
        assert!(matches!(
            refine_positions(&net, &rel, &tree),
            Err(Error::Encoding { .. })
        ));
    }
}
