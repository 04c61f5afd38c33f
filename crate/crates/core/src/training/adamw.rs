use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, usage_err, Result};
use crate::{ParamStore, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            eps: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config_err!("AdamW betas must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return Err(config_err!("AdamW weight_decay must be >= 0 and eps > 0"));
        }
        Ok(())
    }
}

/// First/second moments and step count per parameter. A parameter's count
/// starts when it first trains, so bias correction is per parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T> {
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
    pub steps: BTreeMap<String, u64>,
}

/// One decoupled-weight-decay update of every trainable parameter:
/// `θ ← θ − lr·(m̂/(√v̂ + ε) + wd·θ)`. Frozen parameters are untouched.
pub fn adamw_step<T: Scalar>(
    params: &mut ParamStore<T>,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    for (name, p) in params.iter() {
        if p.requires_grad && p.grad.is_none() {
            return Err(usage_err!("trainable parameter {name} has no gradient"));
        }
    }
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one, eps, wd, lr_t) = (T::one(), T::of(cfg.eps), T::of(cfg.weight_decay), T::of(lr));
    for (name, p) in params.iter_mut() {
        if !p.requires_grad {
            continue;
        }
        let Some(grad) = p.grad.as_ref() else { continue };
        let shape = p.value.shape().to_vec();
        let m = state.m.entry(name.to_string()).or_insert_with(|| Tensor::zeros(shape.clone()));
        let v = state.v.entry(name.to_string()).or_insert_with(|| Tensor::zeros(shape));
        let step = state.steps.entry(name.to_string()).or_insert(0);
        *step += 1;
        let c1 = one - T::of(cfg.beta1.powi(*step as i32));
        let c2 = one - T::of(cfg.beta2.powi(*step as i32));
        let theta = p.value.data_mut();
        for (((th, &g), mi), vi) in theta
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (one - b1) * g;
            *vi = b2 * *vi + (one - b2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *th = *th - lr_t * (m_hat / (v_hat.sqrt() + eps) + wd * *th);
        }
    }
    Ok(())
}

/// Rescale the trainable gradients so their global L2 norm is at most
/// `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(params: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let total: f64 = params
        .iter()
        .filter(|(_, p)| p.requires_grad)
        .filter_map(|(_, p)| p.grad.as_ref())
        .flat_map(|g| g.data().iter())
        .map(|&x| {
            let x = x.to_f64_lossless();
            x * x
        })
        .sum();
    let norm = total.sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for (_, p) in params.iter_mut() {
            if let (true, Some(g)) = (p.requires_grad, p.grad.as_mut()) {
                g.data_mut().iter_mut().for_each(|x| *x = *x * s);
            }
        }
    }
    norm
}
