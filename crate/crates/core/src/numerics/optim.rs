use super::params::ParamStore;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW-style) weight decay.
    pub weight_decay: f64,
    /// Gradient L2-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            clip_norm: 0.0,
        }
    }
}

/// Adam moment estimates for every tensor of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != self.m.len()
            || grads.iter().zip(&self.m).any(|(g, m)| g.len() != m.len())
        {
            return Err(Error::Shape("gradient layout differs from parameters".into()));
        }
        let c = self.config;
        let mut scale = 1.0;
        if c.clip_norm > 0.0 {
            let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
            if norm > c.clip_norm {
                scale = c.clip_norm / norm;
            }
        }
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let mut i = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.map_values(|_, t| {
            let (m, v, g) = (&mut ms[i], &mut vs[i], &grads[i]);
            for (((p, m), v), g) in t.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                let g = g * scale;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                *p -= c.lr * (update + c.weight_decay * *p);
            }
            i += 1;
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Tensor::vector(vec![v])).unwrap();
        s
    }

    fn value(s: &ParamStore) -> f64 {
        s.iter().next().unwrap().1.data()[0]
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut s = scalar_store(1.5);
        let cfg = AdamConfig { weight_decay: 0.0, ..Default::default() };
        let mut opt = Adam::new(cfg, &s);
        for _ in 0..10 {
            opt.step(&mut s, &[vec![0.0]]).unwrap();
        }
        assert_eq!(value(&s), 1.5);
    }

    #[test]
    fn hand_computed_step() {
        // m = 0.05, v = 0.00025, m_hat = 0.5, v_hat = 0.25
        // p = 1 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01 * 1)
        let mut s = scalar_store(1.0);
        let cfg = AdamConfig { lr: 0.1, weight_decay: 0.01, ..Default::default() };
        let mut opt = Adam::new(cfg, &s);
        opt.step(&mut s, &[vec![0.5]]).unwrap();
        let expected = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01);
        assert!((value(&s) - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let mut s = scalar_store(0.0);
        let cfg = AdamConfig { lr: 0.01, weight_decay: 0.0, ..Default::default() };
        let mut opt = Adam::new(cfg, &s);
        let mut prev = 0.0;
        for _ in 0..200 {
            opt.step(&mut s, &[vec![-3.0]]).unwrap();
            let now = value(&s);
            let step = now - prev;
            assert!((step - 0.01).abs() <= 0.001);
            prev = now;
        }
    }

    #[test]
    fn layout_mismatch() {
        let mut s = scalar_store(0.0);
        let mut opt = Adam::new(AdamConfig::default(), &s);
        assert!(opt.step(&mut s, &[vec![0.0, 1.0]]).is_err());
    }
}
