//! ADAM with bias correction.

use super::params::ModelParams;
use super::real::Real;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates, kept in 64 bits regardless of the parameter type.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<T: Real>(params: &ModelParams<T>) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One update of every trainable tensor.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &[Vec<T>],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, slot) in params.slots.iter().enumerate() {
        if !slot.trainable {
            continue;
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, p) in params.tensors[i].iter_mut().enumerate() {
            let g = grads[i][j].as_f64();
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let update = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.epsilon);
            *p = T::from_f64(p.as_f64() - update);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonet::spec::ParamSlot;

    fn scalar(x: f64) -> ModelParams<f64> {
        ModelParams {
            slots: vec![ParamSlot {
                name: "x".into(),
                shape: vec![1],
                trainable: true,
            }],
            tensors: vec![vec![x]],
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar(1.5);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[vec![0.0]], &mut s, 0.1, &AdamConfig::default());
        assert_eq!(p.tensors[0][0], 1.5);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        let mut p = scalar(0.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[vec![3.0]], &mut s, 0.01, &AdamConfig::default());
        assert!((p.tensors[0][0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn frozen_slots_are_skipped() {
        let mut p = scalar(2.0);
        p.slots[0].trainable = false;
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[vec![1.0]], &mut s, 0.1, &AdamConfig::default());
        assert_eq!(p.tensors[0][0], 2.0);
    }
}
