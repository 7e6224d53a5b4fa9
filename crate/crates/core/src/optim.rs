//! Adam optimizer with bias correction, plus global-norm gradient clipping.
//!
//! Moment slots are keyed by parameter name in a BTreeMap so serialization
//! order is deterministic. Parameters whose gradient is absent for a step
//! (a disabled submodule, for example) are skipped; their moments are left
//! untouched and the shared timestep still advances once per step call.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct AdamState {
    slots: BTreeMap<String, Slot>,
    t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    /// Deterministic, name-sorted view of the moment buffers.
    pub fn slots(&self) -> impl Iterator<Item = (&str, &[f64], &[f64])> {
        self.slots
            .iter()
            .map(|(name, s)| (name.as_str(), s.m.as_slice(), s.v.as_slice()))
    }

    /// Rebuild state from a checkpoint.
    pub fn restore(t: u64, entries: impl IntoIterator<Item = (String, Vec<f64>, Vec<f64>)>) -> Self {
        let slots = entries
            .into_iter()
            .map(|(name, m, v)| (name, Slot { m, v }))
            .collect();
        AdamState { slots, t }
    }

    /// One update over every parameter that accumulated a gradient.
    /// A NaN gradient aborts the step naming the offending parameter.
    pub fn step(
        &mut self,
        cfg: &AdamConfig,
        params: &mut [(String, &mut Tensor)],
    ) -> Result<()> {
        for (name, tensor) in params.iter() {
            if let Some(grad) = tensor.grad() {
                if grad.iter().any(|g| g.is_nan()) {
                    return Err(Error::NanGradient { name: name.clone() });
                }
            }
        }
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (name, tensor) in params.iter_mut() {
            let numel = tensor.numel();
            let Some(grad) = tensor.grad().map(|g| g.to_vec()) else {
                continue;
            };
            let slot = self.slots.entry(name.clone()).or_insert_with(|| Slot {
                m: vec![0.0; numel],
                v: vec![0.0; numel],
            });
            let values = tensor.values_mut();
            for i in 0..numel {
                let g = grad[i];
                slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
                slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_gradients(params: &mut [(String, &mut Tensor)], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for (_, tensor) in params.iter() {
        if let Some(grad) = tensor.grad() {
            sq += grad.iter().map(|g| g * g).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (_, tensor) in params.iter_mut() {
            if let Some(grad) = tensor.grad_mut() {
                for g in grad.iter_mut() {
                    *g *= scale;
                }
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64]) -> Tensor {
        Tensor::new(vec![values.len()], values.to_vec())
            .unwrap()
            .into_param()
    }

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut p = param(&[1.0, -2.0]);
        p.accumulate_grad(&[0.0, 0.0]);
        let mut state = AdamState::new();
        let mut reg = vec![("w".to_string(), &mut p)];
        state.step(&AdamConfig::default(), &mut reg).unwrap();
        assert_eq!(p.values(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut p = param(&[1.0, 1.0]);
        p.accumulate_grad(&[3.0, -0.25]);
        let mut state = AdamState::new();
        let mut reg = vec![("w".to_string(), &mut p)];
        state.step(&cfg, &mut reg).unwrap();
        // m_hat = g, v_hat = g^2, so the move is lr * g / (|g| + eps)
        assert!((p.values()[0] - (1.0 - 0.1)).abs() < 1e-6);
        assert!((p.values()[1] - (1.0 + 0.1)).abs() < 1e-6);
    }

    #[test]
    fn three_steps_match_hand_stepped_oracle() {
        let cfg = AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        // constant gradient 2.0 on a single scalar parameter
        let mut theta = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=3u32 {
            let g = 2.0;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t as i32));
            let v_hat = v / (1.0 - 0.999f64.powi(t as i32));
            theta -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }

        let mut p = param(&[1.0]);
        let mut state = AdamState::new();
        for _ in 0..3 {
            p.zero_grad();
            p.accumulate_grad(&[2.0]);
            let mut reg = vec![("w".to_string(), &mut p)];
            state.step(&cfg, &mut reg).unwrap();
        }
        assert!((p.values()[0] - theta).abs() <= 1e-12, "{} vs {theta}", p.values()[0]);
        assert_eq!(state.timestep(), 3);
    }

    #[test]
    fn nan_gradient_is_reported_by_name() {
        let mut p = param(&[1.0]);
        p.accumulate_grad(&[f64::NAN]);
        let mut state = AdamState::new();
        let mut reg = vec![("layer.weight".to_string(), &mut p)];
        let err = state.step(&AdamConfig::default(), &mut reg).unwrap_err();
        assert!(err.to_string().contains("layer.weight"), "{err}");
    }

    #[test]
    fn clipping_rescales_to_max_norm() {
        let mut p = param(&[0.0, 0.0]);
        p.accumulate_grad(&[3.0, 4.0]); // norm 5
        let mut reg = vec![("w".to_string(), &mut p)];
        let norm = clip_gradients(&mut reg, 1.0);
        assert!((norm - 5.0).abs() <= 1e-12);
        let g = p.grad().unwrap();
        assert!((g[0] - 0.6).abs() <= 1e-12 && (g[1] - 0.8).abs() <= 1e-12);

        // under the threshold: untouched
        let mut q = param(&[0.0]);
        q.accumulate_grad(&[0.5]);
        let mut reg = vec![("w".to_string(), &mut q)];
        clip_gradients(&mut reg, 1.0);
        assert_eq!(q.grad().unwrap(), &[0.5]);
    }
}
