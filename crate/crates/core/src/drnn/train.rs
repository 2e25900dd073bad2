use std::io::Write;
use std::ops::ControlFlow;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use super::bptt::{PackedBatch, TrainingBatch};
use super::optim::{Lbfgs, Minimum, Progress, StepDecay};
use super::{DrnnConfig, DrnnParams};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum OptimizerMethod {
    Lbfgs {
        history: usize,
        gradient_tolerance: f64,
        loss_tolerance: f64,
    },
    GradientDescent {
        learning_rate: f64,
        decay: f64,
        decay_every: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    #[serde(flatten)]
    pub method: OptimizerMethod,
    pub max_iterations: usize,
    /// Return the iterate with the lowest validation loss instead of the last one.
    #[serde(default = "default_true")]
    pub keep_best_validation: bool,
}

fn default_true() -> bool {
    true
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            method: OptimizerMethod::Lbfgs {
                history: 10,
                gradient_tolerance: 1e-8,
                loss_tolerance: 1e-9,
            },
            max_iterations: 300,
            keep_best_validation: true,
        }
    }
}

impl OptimizerSpec {
    pub fn lbfgs(max_iterations: usize) -> Self {
        Self {
            max_iterations,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub params: DrnnParams,
    pub initial_train_loss: f64,
    pub initial_validation_loss: f64,
    /// One record per accepted optimizer iteration.
    pub history: Vec<IterationRecord>,
    /// Iteration whose parameters were returned (0 = initialisation).
    pub selected_iteration: usize,
    pub train_values: usize,
    pub validation_values: usize,
}

impl TrainedModel {
    pub fn final_train_mse(&self) -> f64 {
        self.history
            .last()
            .map_or(self.initial_train_loss, |r| r.train_loss)
            / self.train_values as f64
    }

    pub fn initial_train_mse(&self) -> f64 {
        self.initial_train_loss / self.train_values as f64
    }

    /// `iteration,train_loss,validation_loss` with one row per iteration.
    pub fn write_loss_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,train_loss,validation_loss")?;
        for r in &self.history {
            writeln!(w, "{},{},{}", r.iteration, r.train_loss, r.validation_loss)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fits a fresh network from `config.seed` to minimise the summed squared
/// error on `train_set`, tracking the validation loss at every iteration.
pub fn train(
    config: &DrnnConfig,
    train_set: &TrainingBatch,
    validation_set: &TrainingBatch,
    spec: &OptimizerSpec,
) -> Result<TrainedModel> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if validation_set.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let init = DrnnParams::init(config)?;
    let train_packed = PackedBatch::new(train_set)?;
    let val_packed = PackedBatch::new(validation_set)?;
    let initial_train_loss = train_packed.loss(&init)?;
    let initial_validation_loss = val_packed.loss(&init)?;
    info!(
        "training {} params on {} windows: initial train MSE {:.3e}, validation MSE {:.3e}",
        init.num_params(),
        train_set.len(),
        initial_train_loss / train_packed.num_values() as f64,
        initial_validation_loss / val_packed.num_values() as f64,
    );

    let mut work = init.clone();
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut p = init.clone();
        p.set_flat(x)?;
        let (loss, grad) = train_packed.loss_and_gradient(&p)?;
        Ok((loss, grad.to_flat()))
    };

    let mut history = Vec::new();
    let mut best = (initial_validation_loss, 0usize, init.to_flat());
    let mut failure = None;
    let on_iteration = |p: Progress<'_>| -> ControlFlow<()> {
        if let Err(e) = work.set_flat(p.x) {
            failure = Some(e);
            return ControlFlow::Break(());
        }
        let validation_loss = match val_packed.loss(&work) {
            Ok(v) => v,
            Err(Error::NumericalOverflow(_)) => f64::INFINITY,
            Err(e) => {
                failure = Some(e);
                return ControlFlow::Break(());
            }
        };
        if validation_loss < best.0 {
            best = (validation_loss, p.iteration, p.x.to_vec());
        }
        if p.iteration % 25 == 0 {
            debug!(
                "iter {}: train MSE {:.4e}, validation MSE {:.4e}",
                p.iteration,
                p.loss / train_packed.num_values() as f64,
                validation_loss / val_packed.num_values() as f64
            );
        }
        history.push(IterationRecord {
            iteration: p.iteration,
            train_loss: p.loss,
            validation_loss,
        });
        ControlFlow::Continue(())
    };

    let x0 = init.to_flat();
    let result: Minimum = match &spec.method {
        OptimizerMethod::Lbfgs {
            history,
            gradient_tolerance,
            loss_tolerance,
        } => Lbfgs {
            history: *history,
            max_iterations: spec.max_iterations,
            gradient_tolerance: *gradient_tolerance,
            loss_tolerance: *loss_tolerance,
            ..Lbfgs::default()
        }
        .minimize(x0, objective, on_iteration)?,
        OptimizerMethod::GradientDescent {
            learning_rate,
            decay,
            decay_every,
        } => StepDecay {
            learning_rate: *learning_rate,
            decay: *decay,
            decay_every: *decay_every,
            max_iterations: spec.max_iterations,
        }
        .minimize(x0, objective, on_iteration)?,
    };
    if let Some(e) = failure {
        return Err(e);
    }
    info!(
        "stopped after {} iterations ({:?}): train MSE {:.4e}, best validation MSE {:.4e} at iteration {}",
        result.iterations,
        result.termination,
        result.loss / train_packed.num_values() as f64,
        best.0 / val_packed.num_values() as f64,
        best.1
    );

    let mut params = init.clone();
    let selected_iteration = if spec.keep_best_validation {
        params.set_flat(&best.2)?;
        best.1
    } else {
        params.set_flat(&result.x)?;
        result.iterations
    };
    Ok(TrainedModel {
        params,
        initial_train_loss,
        initial_validation_loss,
        history,
        selected_iteration,
        train_values: train_packed.num_values(),
        validation_values: val_packed.num_values(),
    })
}
