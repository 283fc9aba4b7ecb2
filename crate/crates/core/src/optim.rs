use crate::error::{Error, Result};
use crate::graph::Gradients;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Inverse-square-root learning rate with linear warmup:
/// `scale · d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub scale: f64,
    pub d_model: usize,
    pub warmup_steps: u64,
}

impl LrSchedule {
    /// Learning rate for the 1-based `step`.
    pub fn lr(&self, step: u64) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup_steps.max(1) as f64;
        self.scale * (self.d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

/// First and second moment estimates for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.ids().map(|id| Tensor::zeros(params.get(id).shape())).collect();
        AdamState { first_moment: zeros.clone(), second_moment: zeros, step_count: 0 }
    }

    /// One bias-corrected Adam update at learning rate `lr`. Increments
    /// `step_count` by exactly one.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &Gradients,
        cfg: &AdamConfig,
        lr: f64,
    ) -> Result<()> {
        if grads.len() != params.len() || self.first_moment.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam over {} params with {} grads / {} moments",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for id in params.ids().collect::<Vec<_>>() {
            let g = grads.get(id);
            let i = id.index();
            let (m, v) = (&mut self.first_moment[i], &mut self.second_moment[i]);
            let p = params.get_mut(id);
            if g.shape() != p.shape() || m.shape() != p.shape() {
                return Err(Error::Shape(format!("adam shape mismatch at parameter {i}")));
            }
            let pd = p.data_mut();
            for (((w, &gi), mi), vi) in
                pd.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
