use serde::{Deserialize, Serialize};

use super::{GradientVector, ModelState};
use crate::error::{CoreError, Result};

/// SGD with classic momentum, L2 weight decay and a step schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub momentum_buffer: Vec<f64>,
    pub base_lr: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs between decays.
    pub step_size: usize,
    pub gamma: f64,
    /// Completed epochs, advanced by the caller.
    pub epoch_counter: usize,
}

impl OptimizerState {
    pub fn new(len: usize, lr: f64, momentum: f64, weight_decay: f64, step_size: usize, gamma: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(CoreError::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(CoreError::Config(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if step_size == 0 {
            return Err(CoreError::Config("lr step size must be at least one epoch".into()));
        }
        Ok(Self {
            momentum_buffer: vec![0.0; len],
            base_lr: lr,
            lr,
            momentum,
            weight_decay,
            step_size,
            gamma,
            epoch_counter: 0,
        })
    }

    /// Starts the schedule at `epoch_counter` completed epochs.
    pub fn at_epoch(mut self, epoch_counter: usize) -> Self {
        self.epoch_counter = epoch_counter;
        lr_schedule_step(&mut self);
        self
    }
}

/// `v <- mu v + (g + lambda w); w <- w - lr v`.
pub fn sgd_step(m: &mut ModelState, g: &GradientVector, opt: &mut OptimizerState) -> Result<()> {
    if g.len() != m.len() || opt.momentum_buffer.len() != m.len() {
        return Err(CoreError::Usage(format!(
            "gradient of length {} for a model with {} parameters",
            g.len(),
            m.len()
        )));
    }
    let (lr, mu, wd) = (opt.lr, opt.momentum, opt.weight_decay);
    for ((w, v), &gi) in m.flat_mut().iter_mut().zip(&mut opt.momentum_buffer).zip(&g.values) {
        *v = mu * *v + (gi + wd * *w);
        *w -= lr * *v;
    }
    Ok(())
}

/// Sets `lr = base_lr * gamma^(epoch_counter / step_size)`.
pub fn lr_schedule_step(opt: &mut OptimizerState) {
    let decays = (opt.epoch_counter / opt.step_size) as i32;
    opt.lr = opt.base_lr * opt.gamma.powi(decays);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchKind, Architecture, InputShape};

    fn three_param_model(w: [f64; 3]) -> ModelState {
        // 1-pixel linear model with 2 classes: 4 parameters, the last one left at zero
        let arch = Architecture::new(
            ArchKind::Linear,
            InputShape {
                channels: 1,
                height: 1,
                width: 1,
            },
            2,
        )
        .unwrap();
        let mut flat = vec![0.0; 4];
        flat[..3].copy_from_slice(&w);
        ModelState::from_flat(arch, flat).unwrap()
    }

    #[test]
    fn zero_gradient_keeps_weights() {
        let mut m = three_param_model([0.5, -1.0, 2.0]);
        let before = m.clone();
        let mut opt = OptimizerState::new(4, 0.1, 0.0, 0.0, 10, 0.1).unwrap();
        sgd_step(&mut m, &GradientVector::zeros(4), &mut opt).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn plain_sgd_step() {
        let mut m = three_param_model([0.5, -1.0, 2.0]);
        let mut opt = OptimizerState::new(4, 0.1, 0.0, 0.0, 10, 0.1).unwrap();
        let g = GradientVector {
            values: vec![1.0, 2.0, -4.0, 0.0],
            batch_count: 1,
        };
        sgd_step(&mut m, &g, &mut opt).unwrap();
        assert_eq!(&m.flat()[..3], &[0.5 - 0.1 * 1.0, -1.0 - 0.1 * 2.0, 2.0 + 0.1 * 4.0]);
    }

    #[test]
    fn two_momentum_steps_match_unrolled_recurrence() {
        let w0 = [1.0, -2.0, 0.5];
        let g1 = [0.1, 0.2, -0.3];
        let g2 = [-0.4, 0.0, 0.6];
        let (lr, mu, wd) = (0.01, 0.9, 4e-4);
        let mut m = three_param_model(w0);
        let mut opt = OptimizerState::new(4, lr, mu, wd, 10, 0.1).unwrap();
        for g in [g1, g2] {
            let mut v = g.to_vec();
            v.push(0.0);
            sgd_step(
                &mut m,
                &GradientVector {
                    values: v,
                    batch_count: 1,
                },
                &mut opt,
            )
            .unwrap();
        }
        for i in 0..3 {
            let v1 = g1[i] + wd * w0[i];
            let w1 = w0[i] - lr * v1;
            let v2 = mu * v1 + (g2[i] + wd * w1);
            let w2 = w1 - lr * v2;
            assert!((m.flat()[i] - w2).abs() < 1e-15);
        }
    }

    #[test]
    fn step_schedule() {
        let mut opt = OptimizerState::new(1, 0.01, 0.9, 4e-4, 10, 0.1).unwrap();
        for e in 1..10 {
            opt.epoch_counter = e;
            lr_schedule_step(&mut opt);
            assert_eq!(opt.lr, 0.01);
        }
        opt.epoch_counter = 10;
        lr_schedule_step(&mut opt);
        assert!((opt.lr - 0.001).abs() < 1e-15);
        opt.epoch_counter = 20;
        lr_schedule_step(&mut opt);
        assert!((opt.lr - 0.0001).abs() < 1e-16);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(OptimizerState::new(1, 0.0, 0.9, 0.0, 10, 0.1).is_err());
        assert!(OptimizerState::new(1, 0.01, 1.0, 0.0, 10, 0.1).is_err());
    }
}
