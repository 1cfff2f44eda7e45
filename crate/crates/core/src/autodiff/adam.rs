//! Adam with bias correction.

use super::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 3e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Per-parameter first/second moment buffers plus the shared step counter.
/// Buffers are allocated lazily on the first step and must match the same
/// flat parameter order on every call.
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState { config, m: Vec::new(), v: Vec::new(), step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update over a flat parameter list. Every parameter must hold
    /// an accumulated gradient (a missing gradient is a contract violation);
    /// gradients are cleared afterwards.
    pub fn step(&mut self, params: &mut [&mut Tensor]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(
            self.m.len(),
            params.len(),
            "adam_step: {} parameters but state tracks {}",
            params.len(),
            self.m.len()
        );
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { lr, beta1, beta2, epsilon } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            assert_eq!(self.m[i].len(), p.numel(), "adam_step: parameter {i} changed shape");
            let grad = p
                .grad()
                .unwrap_or_else(|| panic!("adam_step: parameter {i} has no gradient"))
                .to_vec();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let data = p.data_mut();
            for j in 0..grad.len() {
                let g = grad[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
            p.clear_grad();
        }
    }

    /// Raw moment buffers, for checkpointing.
    pub fn buffers(&self) -> (&[Vec<f32>], &[Vec<f32>]) {
        (&self.m, &self.v)
    }

    /// Restore moment buffers and step counter from a checkpoint.
    pub fn restore(&mut self, m: Vec<Vec<f32>>, v: Vec<Vec<f32>>, step: u64) {
        assert_eq!(m.len(), v.len(), "adam restore: moment buffer count mismatch");
        self.m = m;
        self.v = v;
        self.step = step;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f32) -> Tensor {
        Tensor::param(vec![v], vec![1])
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = scalar_param(1.5);
        p.accumulate_grad(&[0.0]);
        let mut state = AdamState::new(AdamConfig::default());
        state.step(&mut [&mut p]);
        assert_eq!(p.data(), &[1.5]);
    }

    #[test]
    fn single_step_matches_hand_evaluated_update() {
        // p=0, g=1, lr=0.1, defaults: p1 = -lr * m_hat / (sqrt(v_hat) + eps)
        // with m_hat = v_hat = 1 at t=1, so p1 ≈ -0.1.
        let mut p = scalar_param(0.0);
        p.accumulate_grad(&[1.0]);
        let mut state =
            AdamState::new(AdamConfig { lr: 0.1, ..AdamConfig::default() });
        state.step(&mut [&mut p]);
        assert!((p.data()[0] - (-0.099999999)).abs() < 1e-6, "got {}", p.data()[0]);
    }

    #[test]
    fn constant_gradient_moves_parameter_against_its_sign() {
        let mut p = scalar_param(0.0);
        let mut state = AdamState::new(AdamConfig::default());
        for _ in 0..100 {
            p.accumulate_grad(&[2.5]);
            state.step(&mut [&mut p]);
        }
        assert!(p.data()[0] < -0.01, "got {}", p.data()[0]);
    }

    #[test]
    fn lr_zero_is_noop_on_parameters() {
        let mut p = scalar_param(0.7);
        p.accumulate_grad(&[3.0]);
        let mut state =
            AdamState::new(AdamConfig { lr: 0.0, ..AdamConfig::default() });
        state.step(&mut [&mut p]);
        assert_eq!(p.data(), &[0.7]);
    }

    #[test]
    #[should_panic(expected = "no gradient")]
    fn missing_gradient_is_a_contract_violation() {
        let mut p = scalar_param(0.0);
        let mut state = AdamState::new(AdamConfig::default());
        state.step(&mut [&mut p]);
    }

    #[test]
    fn gradients_cleared_after_step() {
        let mut p = scalar_param(0.0);
        p.accumulate_grad(&[1.0]);
        let mut state = AdamState::new(AdamConfig::default());
        state.step(&mut [&mut p]);
        assert!(p.grad().is_none());
    }

    #[test]
    fn step_counter_increases_by_one() {
        let mut p = scalar_param(0.0);
        let mut state = AdamState::new(AdamConfig::default());
        for expect in 1..=5u64 {
            p.accumulate_grad(&[1.0]);
            state.step(&mut [&mut p]);
            assert_eq!(state.step_count(), expect);
        }
    }
}
