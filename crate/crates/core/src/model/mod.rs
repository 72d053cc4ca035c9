//! Small classifiers, their gradients and the optimizer.

pub mod network;
pub mod optim;
pub mod scalar;

pub use network::{
    backprop, build_model, forward, ArchKind, Architecture, Gradients, InputShape, LayerInfo, LossKind, ModelState,
    Target,
};
pub use optim::{lr_schedule_step, sgd_step, OptimizerState};
pub use scalar::{Dual, Real};

use crate::data::Example;
use crate::error::{CoreError, Result};

/// A vector aligned with a [`ModelState`]'s flat layout.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
    /// Number of minibatches that contributed.
    pub batch_count: usize,
}

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
            batch_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Mean cross-entropy over `batch` and its parameter gradient.
pub fn forward_backward(m: &ModelState, batch: &[&Example]) -> Result<(f64, GradientVector)> {
    forward_backward_with(m, batch, LossKind::CrossEntropy)
}

/// As [`forward_backward`], with one-hot targets under `loss`.
pub fn forward_backward_with(m: &ModelState, batch: &[&Example], loss: LossKind) -> Result<(f64, GradientVector)> {
    let classes = m.arch().classes;
    if let Some(bad) = batch.iter().find(|e| e.label >= classes) {
        return Err(CoreError::Usage(format!(
            "label {} outside {classes} classes",
            bad.label
        )));
    }
    let items: Vec<(&[f64], Target<'_, f64>)> = batch
        .iter()
        .map(|e| (e.features.as_slice(), Target::Class(e.label)))
        .collect();
    let g = backprop(m.arch(), m.flat(), &items, loss, false)?;
    Ok((
        g.loss,
        GradientVector {
            values: g.params,
            batch_count: 1,
        },
    ))
}
