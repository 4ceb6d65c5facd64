//! SGD with momentum, Adam, and the milestone learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RkrError};
use crate::tensor::{Param, Scalar, Tensor};

/// Step schedule: the rate is multiplied by `gamma` at each milestone epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MilestoneSchedule {
    pub initial: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl MilestoneSchedule {
    /// Rejects milestones that are not strictly increasing or not below `epochs`.
    pub fn validate(&self, epochs: usize) -> Result<()> {
        if !(self.initial > 0.0 && self.initial.is_finite()) {
            return Err(RkrError::Config(format!("learning rate {} must be positive", self.initial)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(RkrError::Config(format!("milestone multiplier {} must be positive", self.gamma)));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(RkrError::Config(format!("milestones {:?} must be strictly increasing", self.milestones)));
        }
        if self.milestones.last().is_some_and(|&m| m >= epochs) {
            return Err(RkrError::Config(format!(
                "milestones {:?} must all be below the epoch count {epochs}",
                self.milestones
            )));
        }
        Ok(())
    }

    /// Rate for zero-based `epoch`. A milestone `m` takes effect from epoch `m` on.
    pub fn rate(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.initial * self.gamma.powi(passed as i32)
    }
}

/// Classic momentum SGD: `v ← μ·v + g + λ·w`, `w ← w − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: Vec::new() }
    }

    /// Updates every non-frozen param. `params` must keep the same order on every call.
    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        assert_eq!(self.velocity.len(), params.len(), "param list changed between steps");
        let (mu, wd, lr) = (self.momentum as Scalar, self.weight_decay as Scalar, lr as Scalar);
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            if p.frozen {
                continue;
            }
            let Param { value, grad, .. } = &mut **p;
            for ((w, &g), vel) in value.data_mut().iter_mut().zip(grad.data()).zip(v.data_mut()) {
                *vel = mu * *vel + g + wd * *w;
                *w -= lr * *vel;
            }
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }
}

impl Adam {
    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "param list changed between steps");
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let step = (lr * c2.sqrt() / c1) as Scalar;
        let eps = (self.eps * c2.sqrt()) as Scalar;
        let (b1, b2) = (b1 as Scalar, b2 as Scalar);
        for ((p, m), v) in params.iter_mut().zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            if p.frozen {
                continue;
            }
            let Param { value, grad, .. } = &mut **p;
            for (((w, &g), mi), vi) in
                value.data_mut().iter_mut().zip(grad.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                *w -= step * *mi / (vi.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_right_continuous_step() {
        let s = MilestoneSchedule { initial: 0.01, milestones: vec![15, 25], gamma: 0.1 };
        assert_eq!(s.rate(0), 0.01);
        assert_eq!(s.rate(14), 0.01);
        assert!((s.rate(15) - 0.001).abs() < 1e-15);
        assert!((s.rate(24) - 0.001).abs() < 1e-15);
        assert!((s.rate(25) - 0.0001).abs() < 1e-15);
        assert!((s.rate(29) - 0.0001).abs() < 1e-15);
    }

    #[test]
    fn schedule_validation() {
        let ok = MilestoneSchedule { initial: 0.01, milestones: vec![2, 5], gamma: 0.5 };
        assert!(ok.validate(6).is_ok());
        assert!(ok.validate(5).is_err());
        let bad = MilestoneSchedule { initial: 0.01, milestones: vec![5, 5], gamma: 0.5 };
        assert!(bad.validate(10).is_err());
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut p = Param::new(Tensor::vector(&[1.0]));
        let mut opt = Sgd::new(0.9, 0.0);
        p.grad = Tensor::vector(&[1.0]);
        opt.step(&mut [&mut p], 0.1);
        assert!((p.value.data()[0] - 0.9).abs() < 1e-12);
        opt.step(&mut [&mut p], 0.1);
        // v = 0.9·1 + 1 = 1.9
        assert!((p.value.data()[0] - 0.71).abs() < 1e-12);
    }

    #[test]
    fn frozen_params_never_move() {
        let mut p = Param::new(Tensor::vector(&[1.0, 2.0]));
        p.grad = Tensor::vector(&[5.0, 5.0]);
        p.frozen = true;
        Sgd::new(0.9, 0.1).step(&mut [&mut p], 1.0);
        Adam::default().step(&mut [&mut p], 1.0);
        assert_eq!(p.value.data(), &[1.0, 2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Param::new(Tensor::vector(&[0.0, 0.0]));
        p.grad = Tensor::vector(&[3.0, -0.5]);
        Adam::default().step(&mut [&mut p], 0.01);
        assert!((p.value.data()[0] + 0.01).abs() < 1e-9);
        assert!((p.value.data()[1] - 0.01).abs() < 1e-9);
    }
}
