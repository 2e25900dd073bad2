//! Deep recurrent network with a temporal connection at exactly one hidden layer.
//!
//! Every hidden layer is a ReLU feedforward layer except the designated
//! recurrent layer `l`, which also receives `Wᵀ·h_{t-1}` from its own previous
//! activation. The output layer is linear.

mod bptt;
mod network;
pub mod optim;
mod train;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::POSE_DIM;

pub use bptt::{loss_and_gradient, PackedBatch, TrainingBatch};
pub use network::{refine_positions, refine_velocities, InferenceMode, Network, Normalizer};
pub(crate) use network::{pose_matrix, velocity_matrix};
pub use train::{train, IterationRecord, OptimizerMethod, OptimizerSpec, TrainedModel};

/// Window length used to train the position network.
pub const POSITION_WINDOW: usize = 7;
/// Window length used to train both velocity networks.
pub const VELOCITY_WINDOW: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrnnConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_sizes: Vec<usize>,
    /// 1-based index of the hidden layer carrying the temporal connection.
    pub recurrent_layer: usize,
    pub window_length: usize,
    pub seed: u64,
    /// Wrapper-level skip: the network predicts the correction that is added
    /// to its input. The recurrence itself is unchanged.
    #[serde(default)]
    pub residual: bool,
}

impl DrnnConfig {
    /// Three 256-unit hidden layers, recurrence at the middle one.
    pub fn new(window_length: usize, seed: u64) -> Self {
        Self {
            input_dim: POSE_DIM,
            output_dim: POSE_DIM,
            hidden_sizes: vec![256, 256, 256],
            recurrent_layer: 2,
            window_length,
            seed,
            residual: false,
        }
    }

    pub fn position(seed: u64) -> Self {
        Self::new(POSITION_WINDOW, seed)
    }

    pub fn velocity(seed: u64) -> Self {
        Self::new(VELOCITY_WINDOW, seed)
    }

    pub fn with_hidden_sizes(mut self, sizes: Vec<usize>) -> Self {
        self.hidden_sizes = sizes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::config("network dimensions must be positive"));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::config("hidden sizes must be a nonempty list of positive ints"));
        }
        if self.recurrent_layer == 0 || self.recurrent_layer > self.hidden_sizes.len() {
            return Err(Error::config(format!(
                "recurrent layer {} outside 1..={}",
                self.recurrent_layer,
                self.hidden_sizes.len()
            )));
        }
        if self.window_length < 2 {
            return Err(Error::config("window length must be at least 2"));
        }
        if self.residual && self.input_dim != self.output_dim {
            return Err(Error::config("a residual network needs equal input and output sizes"));
        }
        Ok(())
    }

    /// Size of the recurrent hidden state.
    pub fn state_dim(&self) -> usize {
        self.hidden_sizes[self.recurrent_layer - 1]
    }
}

/// Weights of a [`DrnnConfig`] network.
///
/// `layers[k]` maps layer `k` to layer `k+1` (rows = fan-in), so the
/// pre-activation of a row-batch `X` is `X·U + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct DrnnParams {
    pub layers: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub recurrent: Array2<f64>,
    pub output: Array2<f64>,
    pub output_bias: Array1<f64>,
    /// 0-based position of the recurrent layer within `layers`.
    rec: usize,
}

impl DrnnParams {
    pub fn zeros(config: &DrnnConfig) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut biases = Vec::new();
        let mut fan_in = config.input_dim;
        for &h in &config.hidden_sizes {
            layers.push(Array2::zeros((fan_in, h)));
            biases.push(Array1::zeros(h));
            fan_in = h;
        }
        let state = config.state_dim();
        Ok(Self {
            layers,
            biases,
            recurrent: Array2::zeros((state, state)),
            output: Array2::zeros((fan_in, config.output_dim)),
            output_bias: Array1::zeros(config.output_dim),
            rec: config.recurrent_layer - 1,
        })
    }

    /// Scaled uniform initialisation, `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(config: &DrnnConfig) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut fill = |m: &mut Array2<f64>| {
            let (r, c) = m.dim();
            let a = (6.0 / (r + c) as f64).sqrt();
            for x in m.iter_mut() {
                *x = rng.random_range(-a..a);
            }
        };
        for u in p.layers.iter_mut() {
            fill(u);
        }
        fill(&mut p.recurrent);
        fill(&mut p.output);
        Ok(p)
    }

    pub fn num_hidden_layers(&self) -> usize {
        self.layers.len()
    }

    /// 1-based, matching [`DrnnConfig::recurrent_layer`].
    pub fn recurrent_layer(&self) -> usize {
        self.rec + 1
    }

    pub(crate) fn rec_index(&self) -> usize {
        self.rec
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.output.ncols()
    }

    pub fn state_dim(&self) -> usize {
        self.recurrent.nrows()
    }

    /// Checks every tensor against the shapes `config` implies.
    pub fn check_shapes(&self, config: &DrnnConfig) -> Result<()> {
        let reference = Self::zeros(config)?;
        if self.rec != reference.rec || self.layers.len() != reference.layers.len() {
            return Err(Error::config("parameter layout does not match config"));
        }
        for ((a, b), name) in self
            .tensors()
            .iter()
            .zip(reference.tensors().iter())
            .zip(self.tensor_names())
        {
            if a.0 != b.0 {
                return Err(Error::config(format!(
                    "tensor {name} has shape {:?}, config expects {:?}",
                    a.0, b.0
                )));
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(s, _)| s.0 * s.1).sum()
    }

    /// `(shape, row-major data)` for every tensor in canonical order:
    /// `U1, b1, …, UL, bL, W, V, c`.
    pub(crate) fn tensors(&self) -> Vec<((usize, usize), &[f64])> {
        let mut out = Vec::new();
        for (u, b) in self.layers.iter().zip(&self.biases) {
            out.push((u.dim(), u.as_slice().expect("standard layout")));
            out.push(((1, b.len()), b.as_slice().expect("standard layout")));
        }
        out.push((self.recurrent.dim(), self.recurrent.as_slice().expect("standard layout")));
        out.push((self.output.dim(), self.output.as_slice().expect("standard layout")));
        out.push((
            (1, self.output_bias.len()),
            self.output_bias.as_slice().expect("standard layout"),
        ));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for (u, b) in self.layers.iter_mut().zip(self.biases.iter_mut()) {
            out.push(u.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out.push(self.recurrent.as_slice_mut().expect("standard layout"));
        out.push(self.output.as_slice_mut().expect("standard layout"));
        out.push(self.output_bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub(crate) fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for k in 1..=self.layers.len() {
            names.push(format!("U{k}"));
            names.push(format!("b{k}"));
        }
        names.push("W".into());
        names.push("V".into());
        names.push("c".into());
        names
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for (_, data) in self.tensors() {
            v.extend_from_slice(data);
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::Dimension {
                what: "flat parameter vector",
                expected: n,
                got: flat.len(),
            });
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let len = t.len();
            t.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        Ok(())
    }

    /// A copy with every entry multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            for x in t.iter_mut() {
                *x *= k;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, d)| d.iter().all(|x| x.is_finite()))
    }

    /// Runs one input sequence (rows = time steps) from hidden state `h0`
    /// (zeros when `None`), returning per-step outputs and the final state
    /// of the recurrent layer.
    pub fn forward(
        &self,
        window: ArrayView2<'_, f64>,
        h0: Option<ArrayView1<'_, f64>>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        if window.nrows() == 0 {
            return Err(Error::InsufficientFrames { needed: 1, got: 0 });
        }
        if window.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                what: "network input",
                expected: self.input_dim(),
                got: window.ncols(),
            });
        }
        let mut state = match h0 {
            Some(h) if h.len() != self.state_dim() => {
                return Err(Error::Dimension {
                    what: "initial hidden state",
                    expected: self.state_dim(),
                    got: h.len(),
                })
            }
            Some(h) => h.to_owned().insert_axis(ndarray::Axis(0)),
            None => Array2::zeros((1, self.state_dim())),
        };
        let mut outputs = Array2::zeros((window.nrows(), self.output_dim()));
        for (t, x) in window.rows().into_iter().enumerate() {
            let x = x.insert_axis(ndarray::Axis(0));
            let step = bptt::step_forward(self, x, state.view());
            if step.output.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalOverflow("network output"));
            }
            outputs.row_mut(t).assign(&step.output.row(0));
            state = step.post.into_iter().nth(self.rec).expect("recurrent layer");
        }
        Ok((outputs, state.row(0).to_owned()))
    }
}
