use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// Adam over a [`ParamStore`], with moments keyed by parameter name so they
/// can be checkpointed.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(betas: (f64, f64), eps: f64) -> Result<Self> {
        let (beta1, beta2) = betas;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
            return Err(Error::config(format!(
                "invalid Adam settings: betas ({beta1}, {beta2}), eps {eps}"
            )));
        }
        Ok(Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter in `params`. Parameters without a
    /// gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (name, var) in params.iter() {
            let p = var.as_tensor();
            let g = match grads.get(p) {
                Some(g) => g.clone(),
                None => p.zeros_like()?,
            };
            let m_prev = match self.m.get(name) {
                Some(m) => m.clone(),
                None => p.zeros_like()?,
            };
            let v_prev = match self.v.get(name) {
                Some(v) => v.clone(),
                None => p.zeros_like()?,
            };
            let m = (m_prev.affine(self.beta1, 0.0)? + g.affine(1.0 - self.beta1, 0.0)?)?;
            let v = (v_prev.affine(self.beta2, 0.0)? + g.sqr()?.affine(1.0 - self.beta2, 0.0)?)?;
            let denom = v.affine(1.0 / bias2, 0.0)?.sqrt()?.affine(1.0, self.eps)?;
            let update = m.affine(lr / bias1, 0.0)?.div(&denom)?;
            var.set(&(p - update)?.detach())?;
            self.m.insert(name.clone(), m.detach());
            self.v.insert(name.clone(), v.detach());
        }
        Ok(())
    }

    /// Moments as named tensors: `m/<param>` and `v/<param>`.
    pub fn state(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (k, t) in &self.m {
            out.insert(format!("m/{k}"), t.clone());
        }
        for (k, t) in &self.v {
            out.insert(format!("v/{k}"), t.clone());
        }
        out
    }

    pub fn load_state(&mut self, step: u64, state: &BTreeMap<String, Tensor>) -> Result<()> {
        self.m.clear();
        self.v.clear();
        for (k, t) in state {
            if let Some(name) = k.strip_prefix("m/") {
                self.m.insert(name.to_string(), t.clone());
            } else if let Some(name) = k.strip_prefix("v/") {
                self.v.insert(name.to_string(), t.clone());
            } else {
                return Err(Error::config(format!("unexpected optimizer tensor `{k}`")));
            }
        }
        self.step = step;
        Ok(())
    }
}
