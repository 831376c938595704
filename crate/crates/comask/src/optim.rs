//! Decoupled-weight-decay adaptive optimizer with per-group learning rates,
//! and the warmup + polynomial-decay learning-rate schedule.

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::error::{Error, Result};

/// Linear warmup followed by polynomial decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_iters: usize,
    pub poly_power: f64,
    pub total_iters: usize,
}

impl LrSchedule {
    /// Learning rate at iteration `t`:
    /// `base * t / warmup` during warmup, then
    /// `base * (1 - (t - warmup) / (total - warmup))^power`.
    pub fn lr_at(&self, t: usize) -> f64 {
        if t >= self.total_iters {
            return 0.0;
        }
        if t < self.warmup_iters {
            return self.base_lr * t as f64 / self.warmup_iters as f64;
        }
        let denom = (self.total_iters - self.warmup_iters).max(1) as f64;
        let frac = (t - self.warmup_iters) as f64 / denom;
        self.base_lr * (1.0 - frac).powf(self.poly_power)
    }
}

struct Slot {
    var: Var,
    m: Tensor,
    v: Tensor,
}

struct Group {
    slots: Vec<Slot>,
    schedule: LrSchedule,
}

/// AdamW over named parameter groups.
pub struct AdamW {
    groups: Vec<Group>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    steps: usize,
}

impl AdamW {
    pub fn new(groups: Vec<(Vec<(String, Var)>, LrSchedule)>, weight_decay: f64) -> Result<Self> {
        let mut gs = Vec::with_capacity(groups.len());
        for (params, schedule) in groups {
            let mut slots = Vec::with_capacity(params.len());
            for (_, var) in params {
                let m = var.as_tensor().zeros_like()?;
                let v = var.as_tensor().zeros_like()?;
                slots.push(Slot { var, m, v });
            }
            gs.push(Group { slots, schedule });
        }
        Ok(Self {
            groups: gs,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            steps: 0,
        })
    }

    pub fn lr_at(&self, group: usize, t: usize) -> f64 {
        self.groups[group].schedule.lr_at(t)
    }

    /// One optimization step; `t` indexes the schedules.
    pub fn step(&mut self, grads: &GradStore, t: usize) -> Result<()> {
        self.steps += 1;
        let k = self.steps as f64;
        let bc1 = 1.0 - self.beta1.powf(k);
        let bc2 = 1.0 - self.beta2.powf(k);
        for group in self.groups.iter_mut() {
            let lr = group.schedule.lr_at(t);
            for slot in group.slots.iter_mut() {
                let grad = match grads.get(slot.var.as_tensor()) {
                    Some(g) => g.detach(),
                    None => continue,
                };
                slot.m = ((&slot.m * self.beta1)? + (&grad * (1.0 - self.beta1))?)?;
                slot.v = ((&slot.v * self.beta2)? + (grad.sqr()? * (1.0 - self.beta2))?)?;
                let m_hat = (&slot.m / bc1)?;
                let v_hat = (&slot.v / bc2)?;
                let update = (m_hat / (v_hat.sqrt()? + self.eps)?)?;
                let theta = slot.var.as_tensor().detach();
                let decayed = (&theta * (1.0 - lr * self.weight_decay))?;
                let next = (decayed - (update * lr)?)?;
                if !all_finite(&next)? {
                    return Err(Error::NonFiniteLoss {
                        iter: t,
                        detail: "optimizer produced a non-finite parameter".into(),
                    });
                }
                slot.var.set(&next)?;
            }
        }
        Ok(())
    }
}

fn all_finite(t: &Tensor) -> Result<bool> {
    let s = t
        .abs()?
        .max_all()?
        .to_dtype(candle_core::DType::F64)?
        .to_scalar::<f64>()?;
    Ok(s.is_finite())
}
