use serde::{Deserialize, Serialize};

use super::params::Parameters;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(3e-4)
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One bias-corrected update of `params` along `grads`. Nothing is
    /// modified when any gradient entry is non-finite.
    pub fn update<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g_blocks = grads.blocks();
        for (name, g) in &g_blocks {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGrad(name.clone()));
            }
        }
        let mut p_blocks = params.blocks_mut();
        if p_blocks.len() != g_blocks.len() {
            return Err(Error::Shape {
                layer: 0,
                msg: "parameter and gradient block counts differ".into(),
            });
        }
        if self.m.is_empty() {
            self.m = g_blocks.iter().map(|(_, g)| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        for (i, ((_, p), (name, g))) in p_blocks.iter().zip(&g_blocks).enumerate() {
            if p.shape() != g.shape() || self.m[i].len() != g.len() {
                return Err(Error::Shape {
                    layer: i,
                    msg: format!("block {name} shape mismatch"),
                });
            }
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, ((_, p), (_, g))) in p_blocks.iter_mut().zip(&g_blocks).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, (pv, gv)) in p.iter_mut().zip(g.iter()).enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gv;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gv * gv;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                *pv -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
