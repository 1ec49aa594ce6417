use crate::nn::{ParamId, ParamSet};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are allocated lazily per
/// parameter and indexed like the `ParamSet` they update.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Option<Tensor>>,
    second: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[(ParamId, Tensor)]) {
        self.step += 1;
        if self.first.len() < params.len() {
            self.first.resize(params.len(), None);
            self.second.resize(params.len(), None);
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (id, g) in grads {
            let idx = id.0;
            let m = self.first[idx].get_or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            for (mi, &gi) in m.data_mut().iter_mut().zip(g.data()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
            }
            let v = self.second[idx].get_or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            }
            let m = self.first[idx].as_ref().unwrap();
            let v = self.second[idx].as_ref().unwrap();
            let p = params.get_mut(*id);
            for ((pi, &mi), &vi) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                *pi -= learning_rate * (mi / bc1) / ((vi / bc2).sqrt() + eps);
            }
        }
    }

    /// Moment buffers as named tensors (`m.{i}`, `v.{i}`) plus the step count.
    pub fn export_state(&self) -> (u64, Vec<(String, Tensor)>) {
        let mut out = Vec::new();
        for (i, (m, v)) in self.first.iter().zip(&self.second).enumerate() {
            if let (Some(m), Some(v)) = (m, v) {
                out.push((format!("m.{i}"), m.clone()));
                out.push((format!("v.{i}"), v.clone()));
            }
        }
        (self.step, out)
    }

    pub fn import_state(config: AdamConfig, step: u64, named: &[(String, Tensor)]) -> Self {
        let mut adam = Adam::new(config);
        adam.step = step;
        for (name, t) in named {
            let (kind, idx) = match name.split_once('.') {
                Some((k, i)) => match i.parse::<usize>() {
                    Ok(i) => (k, i),
                    Err(_) => continue,
                },
                None => continue,
            };
            if adam.first.len() <= idx {
                adam.first.resize(idx + 1, None);
                adam.second.resize(idx + 1, None);
            }
            match kind {
                "m" => adam.first[idx] = Some(t.clone()),
                "v" => adam.second[idx] = Some(t.clone()),
                _ => {}
            }
        }
        adam
    }
}
