use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightDecay {
    /// `wd * θ` added to the gradient before the moment updates.
    #[default]
    L2,
    /// `lr * wd * θ` subtracted from the parameter after the Adam update.
    Decoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay: WeightDecay,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: WeightDecay::L2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Tensor2,
    pub v: Tensor2,
    pub step: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    /// Number of optimizer steps taken.
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

/// One bias-corrected Adam update. `lr_for` maps a parameter name to its
/// learning rate, or `None` to leave it (and its moments) untouched. Each
/// parameter keeps its own step count for bias correction.
pub fn adam_step(
    store: &mut ParamStore,
    state: &mut AdamState,
    config: &AdamConfig,
    lr_for: &dyn Fn(&str) -> Option<f64>,
) {
    state.step += 1;
    for (name, p) in store.iter_mut() {
        let Some(lr) = lr_for(name) else { continue };
        let mom = state.moments.entry(name.clone()).or_insert_with(|| Moments {
            m: Tensor2::zeros(p.value.rows(), p.value.cols()),
            v: Tensor2::zeros(p.value.rows(), p.value.cols()),
            step: 0,
        });
        mom.step += 1;
        let bc1 = 1.0 - config.beta1.powi(mom.step as i32);
        let bc2 = 1.0 - config.beta2.powi(mom.step as i32);
        let value = p.value.data_mut();
        let grad = p.grad.data();
        let m = mom.m.data_mut();
        let v = mom.v.data_mut();
        for k in 0..value.len() {
            let mut g = grad[k];
            if config.decay == WeightDecay::L2 {
                g += config.weight_decay * value[k];
            }
            m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g;
            v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            value[k] -= lr * m_hat / (v_hat.sqrt() + config.eps);
            if config.decay == WeightDecay::Decoupled {
                value[k] -= lr * config.weight_decay * value[k];
            }
        }
    }
}
