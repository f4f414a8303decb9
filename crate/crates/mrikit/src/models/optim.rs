//! Adam with optional decoupled weight decay.

use crate::nn::ParamSet;

pub const ADAM_BETA1: f32 = 0.9;
pub const ADAM_BETA2: f32 = 0.999;
pub const ADAM_EPS: f32 = 1e-8;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64, weight_decay: f64) -> Self {
        let m = (0..params.len()).map(|i| vec![0.0; params.get(i).numel()]).collect();
        let v = (0..params.len()).map(|i| vec![0.0; params.get(i).numel()]).collect();
        Adam { lr, weight_decay, step: 0, m, v }
    }

    /// Spec-driven construction: the inception family reads `reg_coeff` as
    /// decoupled weight decay, everything else trains undecayed.
    pub fn from_spec(spec: &super::ModelSpec, params: &ParamSet) -> Self {
        let wd = match spec.architecture {
            super::Architecture::InceptionTiny => spec.reg_coeff,
            _ => 0.0,
        };
        Adam::new(params, spec.learning_rate, wd)
    }

    /// One update. `grads[i] = None` leaves parameter `i` (and its moments)
    /// untouched.
    pub fn update(&mut self, params: &mut ParamSet, grads: &[Option<&[f32]>]) {
        self.step += 1;
        let bc1 = 1.0 - (ADAM_BETA1 as f64).powi(self.step as i32);
        let bc2 = 1.0 - (ADAM_BETA2 as f64).powi(self.step as i32);
        let lr = self.lr as f32;
        let wd = self.weight_decay as f32;
        for (i, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let p = params.get_mut(i).data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let g = grad[j];
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g;
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = m[j] / bc1 as f32;
                let v_hat = v[j] / bc2 as f32;
                p[j] -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS)) + lr * wd * p[j];
            }
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Flat (step, first moments, second moments) view for checkpointing.
    pub fn state(&self) -> (u64, &[Vec<f32>], &[Vec<f32>]) {
        (self.step, &self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Vec<f32>>, v: Vec<Vec<f32>>) {
        assert_eq!(m.len(), self.m.len(), "optimizer state layout mismatch");
        assert_eq!(v.len(), self.v.len(), "optimizer state layout mismatch");
        self.step = step;
        self.m = m;
        self.v = v;
    }
}
