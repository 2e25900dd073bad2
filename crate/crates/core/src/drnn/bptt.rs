//! Batched forward pass and backpropagation through time.
//!
//! Windows are processed in time-major chunks so every layer is a single
//! matrix product per step. Chunks are reduced in a fixed order, which keeps
//! the summed loss and gradient bit-reproducible.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis};

use super::DrnnParams;
use crate::error::{Error, Result};

/// Windows per chunk.
const CHUNK: usize = 256;

pub(crate) struct StepTrace {
    /// Post-activation of each hidden layer (batch × width).
    pub post: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub(crate) fn step_forward(
    p: &DrnnParams,
    x: ArrayView2<'_, f64>,
    h_prev: ArrayView2<'_, f64>,
) -> StepTrace {
    let depth = p.layers.len();
    let mut post: Vec<Array2<f64>> = Vec::with_capacity(depth);
    for k in 0..depth {
        let mut a = {
            let input = if k == 0 { x } else { post[k - 1].view() };
            input.dot(&p.layers[k])
        };
        if k == p.rec_index() {
            general_mat_mul(1.0, &h_prev, &p.recurrent, 1.0, &mut a);
        }
        a += &p.biases[k];
        a.mapv_inplace(relu);
        post.push(a);
    }
    let mut output = post[depth - 1].dot(&p.output);
    output += &p.output_bias;
    StepTrace { post, output }
}

/// Paired input/target windows. Each pair shares a length; different pairs may not.
#[derive(Clone, Debug, Default)]
pub struct TrainingBatch {
    inputs: Vec<Array2<f64>>,
    targets: Vec<Array2<f64>>,
}

impl TrainingBatch {
    pub fn new(inputs: Vec<Array2<f64>>, targets: Vec<Array2<f64>>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: inputs.len(),
                right: targets.len(),
            });
        }
        for (x, y) in inputs.iter().zip(&targets) {
            if x.nrows() != y.nrows() {
                return Err(Error::LengthMismatch {
                    left: x.nrows(),
                    right: y.nrows(),
                });
            }
            if x.nrows() == 0 {
                return Err(Error::Empty("window"));
            }
        }
        Ok(Self { inputs, targets })
    }

    /// Every stride-1 window of `window` consecutive steps from each
    /// `(inputs, targets)` sequence pair (rows = time). Sequences shorter
    /// than `window` contribute nothing.
    pub fn from_sequences(
        pairs: &[(Array2<f64>, Array2<f64>)],
        window: usize,
    ) -> Result<Self> {
        if window == 0 {
            return Err(Error::config("window length must be positive"));
        }
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for (x, y) in pairs {
            if x.nrows() != y.nrows() {
                return Err(Error::LengthMismatch {
                    left: x.nrows(),
                    right: y.nrows(),
                });
            }
            if x.nrows() < window {
                continue;
            }
            for start in 0..=x.nrows() - window {
                inputs.push(x.slice(ndarray::s![start..start + window, ..]).to_owned());
                targets.push(y.slice(ndarray::s![start..start + window, ..]).to_owned());
            }
        }
        Self::new(inputs, targets)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Array2<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Array2<f64>] {
        &self.targets
    }

    /// The batch with every window repeated `times` times in order.
    pub fn repeated(&self, times: usize) -> Self {
        let mut out = Self::default();
        for _ in 0..times {
            out.inputs.extend(self.inputs.iter().cloned());
            out.targets.extend(self.targets.iter().cloned());
        }
        out
    }

    /// Total number of target scalars.
    pub fn num_values(&self) -> usize {
        self.targets.iter().map(|t| t.len()).sum()
    }
}

struct Chunk {
    /// One (batch × dim) matrix per time step.
    inputs: Vec<Array2<f64>>,
    targets: Vec<Array2<f64>>,
}

impl Chunk {
    fn batch(&self) -> usize {
        self.inputs[0].nrows()
    }
}

/// A [`TrainingBatch`] rearranged into time-major chunks, built once per
/// training run.
pub struct PackedBatch {
    chunks: Vec<Chunk>,
    input_dim: usize,
    output_dim: usize,
    num_values: usize,
}

impl PackedBatch {
    pub fn new(batch: &TrainingBatch) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let input_dim = batch.inputs[0].ncols();
        let output_dim = batch.targets[0].ncols();
        for (x, y) in batch.inputs.iter().zip(&batch.targets) {
            if x.ncols() != input_dim {
                return Err(Error::Dimension {
                    what: "window input",
                    expected: input_dim,
                    got: x.ncols(),
                });
            }
            if y.ncols() != output_dim {
                return Err(Error::Dimension {
                    what: "window target",
                    expected: output_dim,
                    got: y.ncols(),
                });
            }
        }

        let mut chunks = Vec::new();
        let mut start = 0;
        while start < batch.len() {
            let len = batch.inputs[start].nrows();
            let mut end = start + 1;
            while end < batch.len() && end - start < CHUNK && batch.inputs[end].nrows() == len {
                end += 1;
            }
            let pack = |src: &[Array2<f64>], dim: usize| {
                (0..len)
                    .map(|t| {
                        let mut m = Array2::zeros((end - start, dim));
                        for (b, w) in src[start..end].iter().enumerate() {
                            m.row_mut(b).assign(&w.row(t));
                        }
                        m
                    })
                    .collect::<Vec<_>>()
            };
            chunks.push(Chunk {
                inputs: pack(&batch.inputs, input_dim),
                targets: pack(&batch.targets, output_dim),
            });
            start = end;
        }
        Ok(Self {
            chunks,
            input_dim,
            output_dim,
            num_values: batch.num_values(),
        })
    }

    pub fn num_values(&self) -> usize {
        self.num_values
    }

    fn check(&self, p: &DrnnParams) -> Result<()> {
        if p.input_dim() != self.input_dim {
            return Err(Error::Dimension {
                what: "network input",
                expected: p.input_dim(),
                got: self.input_dim,
            });
        }
        if p.output_dim() != self.output_dim {
            return Err(Error::Dimension {
                what: "network output",
                expected: p.output_dim(),
                got: self.output_dim,
            });
        }
        Ok(())
    }

    /// Sum of squared errors without the gradient.
    pub fn loss(&self, p: &DrnnParams) -> Result<f64> {
        self.check(p)?;
        let mut total = 0.0;
        for chunk in &self.chunks {
            let mut h = Array2::zeros((chunk.batch(), p.state_dim()));
            for (x, y) in chunk.inputs.iter().zip(&chunk.targets) {
                let mut step = step_forward(p, x.view(), h.view());
                total += squared_error(&step.output, y);
                h = step.post.swap_remove(p.rec_index());
            }
        }
        if !total.is_finite() {
            return Err(Error::NumericalOverflow("loss"));
        }
        Ok(total)
    }

    pub fn loss_and_gradient(&self, p: &DrnnParams) -> Result<(f64, DrnnParams)> {
        self.check(p)?;
        let zero = p.scaled(0.0);
        let mut grad = zero.to_flat();
        let mut total = 0.0;
        for chunk in &self.chunks {
            let mut part = zero.clone();
            total += chunk_backward(p, chunk, &mut part)?;
            for (g, d) in grad.iter_mut().zip(part.to_flat()) {
                *g += d;
            }
        }
        let mut out = zero;
        out.set_flat(&grad)?;
        Ok((total, out))
    }
}

fn squared_error(out: &Array2<f64>, target: &Array2<f64>) -> f64 {
    out.iter()
        .zip(target.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Forward over one chunk, then BPTT over the full window; gradients are
/// accumulated into `grad`. Returns the chunk's SSE.
fn chunk_backward(p: &DrnnParams, chunk: &Chunk, grad: &mut DrnnParams) -> Result<f64> {
    let steps = chunk.inputs.len();
    let batch = chunk.batch();
    let rec = p.rec_index();
    let depth = p.layers.len();
    let h0 = Array2::zeros((batch, p.state_dim()));

    let mut traces: Vec<StepTrace> = Vec::with_capacity(steps);
    let mut loss = 0.0;
    for t in 0..steps {
        let h_prev = if t == 0 { h0.view() } else { traces[t - 1].post[rec].view() };
        let mut step = step_forward(p, chunk.inputs[t].view(), h_prev);
        // Output buffer becomes dL/dy = 2 (y - target).
        step.output -= &chunk.targets[t];
        loss += step.output.iter().map(|d| d * d).sum::<f64>();
        step.output *= 2.0;
        traces.push(step);
    }
    if !loss.is_finite() {
        return Err(Error::NumericalOverflow("activations"));
    }

    let mut carry = Array2::<f64>::zeros((batch, p.state_dim()));
    for t in (0..steps).rev() {
        let tr = &traces[t];
        let dy = &tr.output;
        let top = &tr.post[depth - 1];
        general_mat_mul(1.0, &top.t(), dy, 1.0, &mut grad.output);
        grad.output_bias += &dy.sum_axis(Axis(0));

        let mut dh = dy.dot(&p.output.t());
        for k in (0..depth).rev() {
            if k == rec {
                dh += &carry;
            }
            // ReLU mask: post > 0 exactly where pre-activation > 0.
            ndarray::Zip::from(&mut dh)
                .and(&tr.post[k])
                .for_each(|d, &h| {
                    if h <= 0.0 {
                        *d = 0.0
                    }
                });
            let da = dh;
            let input = if k == 0 {
                chunk.inputs[t].view()
            } else {
                tr.post[k - 1].view()
            };
            general_mat_mul(1.0, &input.t(), &da, 1.0, &mut grad.layers[k]);
            grad.biases[k] += &da.sum_axis(Axis(0));
            if k == rec {
                let h_prev = if t == 0 { h0.view() } else { traces[t - 1].post[rec].view() };
                general_mat_mul(1.0, &h_prev.t(), &da, 1.0, &mut grad.recurrent);
                carry = da.dot(&p.recurrent.t());
            }
            dh = if k > 0 {
                da.dot(&p.layers[k].t())
            } else {
                Array2::zeros((0, 0))
            };
        }
    }
    Ok(loss)
}

/// Sum-of-squared-errors over every window and step, and its gradient.
pub fn loss_and_gradient(params: &DrnnParams, batch: &TrainingBatch) -> Result<(f64, DrnnParams)> {
    PackedBatch::new(batch)?.loss_and_gradient(params)
}
