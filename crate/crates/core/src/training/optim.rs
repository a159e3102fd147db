use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::numeric::{Element, NdArray};

/// Linear scaling rule: `base_lr * batch_size / 256`.
pub fn scaled_lr(base_lr: f64, batch_size: usize) -> f64 {
    base_lr * batch_size as f64 / 256.0
}

/// Half-cosine decay from `lr_max` at step 0 to 0 at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::config("cosine schedule needs total_steps > 0"));
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    Ok(lr_max * 0.5 * (1.0 + (PI * t).cos()))
}

/// `lr0 * 0.5^epoch` for zero-based `epoch`.
pub fn exponential_lr(epoch: usize, lr0: f64) -> f64 {
    exponential_lr_with(epoch, lr0, 0.5)
}

pub fn exponential_lr_with(epoch: usize, lr0: f64, gamma: f64) -> f64 {
    lr0 * gamma.powi(epoch as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Schedule {
    /// Per optimizer step, over all steps of the run.
    Cosine,
    /// Per epoch, multiplied by `gamma` each epoch.
    Exponential {
        #[serde(default = "half")]
        gamma: f64,
    },
    Constant,
}

fn half() -> f64 {
    0.5
}

impl Schedule {
    /// Learning rate for a step, with an optional linear warmup over the
    /// first `warmup_steps` steps.
    pub fn lr(&self, lr: f64, epoch: usize, step: usize, total_steps: usize, warmup_steps: usize) -> Result<f64> {
        if step < warmup_steps {
            return Ok(lr * (step + 1) as f64 / warmup_steps as f64);
        }
        match *self {
            Schedule::Cosine => cosine_lr(step - warmup_steps, total_steps.saturating_sub(warmup_steps).max(1), lr),
            Schedule::Exponential { gamma } => Ok(exponential_lr_with(epoch, lr, gamma)),
            Schedule::Constant => Ok(lr),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay; applied only to tensors of rank 2 or more.
    pub weight_decay: f64,
}

/// First and second moments per parameter name.
#[derive(Debug, Clone, Default)]
pub struct AdamState<T> {
    step: u64,
    m: BTreeMap<String, NdArray<T>>,
    v: BTreeMap<String, NdArray<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new() -> Self {
        AdamState {
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// Adam with bias correction and no weight decay.
pub fn adam_step<T: Element>(
    params: &mut ParamStore<T>,
    grads: &BTreeMap<String, NdArray<T>>,
    state: &mut AdamState<T>,
    hp: AdamParams,
) -> Result<()> {
    update(
        params,
        grads,
        state,
        AdamParams {
            weight_decay: 0.0,
            ..hp
        },
    )
}

/// Adam with decoupled weight decay: `p -= lr * wd * p` alongside the
/// moment update.
pub fn adamw_step<T: Element>(
    params: &mut ParamStore<T>,
    grads: &BTreeMap<String, NdArray<T>>,
    state: &mut AdamState<T>,
    hp: AdamParams,
) -> Result<()> {
    update(params, grads, state, hp)
}

fn update<T: Element>(
    params: &mut ParamStore<T>,
    grads: &BTreeMap<String, NdArray<T>>,
    state: &mut AdamState<T>,
    hp: AdamParams,
) -> Result<()> {
    for (name, g) in grads {
        let Some(p) = params.get(name) else {
            return Err(Error::Training(format!("gradient for unknown parameter {name}")));
        };
        if p.shape() != g.shape() {
            return Err(Error::dim(format!(
                "{name}: parameter {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of {name} at optimizer step {}",
                state.step + 1
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    let (b1, b2) = (T::of(hp.beta1), T::of(hp.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - hp.beta1), T::of(1.0 - hp.beta2));
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let decay = if p.rank() >= 2 { hp.weight_decay } else { 0.0 };
        let shrink = T::of(1.0 - hp.lr * decay);
        let m = state.m.entry(name.clone()).or_insert_with(|| NdArray::zeros(g.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| NdArray::zeros(g.shape()));
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + one_b1 * gi;
            *vi = b2 * *vi + one_b2 * gi * gi;
            let m_hat = mi.as_f64() / bc1;
            let v_hat = vi.as_f64() / bc2;
            let step = hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
            *pi = *pi * shrink - T::of(step);
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Element>(grads: &mut BTreeMap<String, NdArray<T>>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let c = T::of(max_norm / norm);
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x = *x * c);
        }
    }
    norm
}
