//! AdamW with decoupled weight decay.

use super::{Matrix, ParamStore};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let zeros = |p: &super::Parameter| Matrix::zeros(p.value.rows(), p.value.cols());
        Self {
            config,
            step: 0,
            first: store.iter().map(zeros).collect(),
            second: store.iter().map(zeros).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter from its `grad`.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let AdamWConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let decay = 1.0 - lr * weight_decay;
        for ((p, m), v) in store.iter_mut().zip(self.first.iter_mut()).zip(self.second.iter_mut()) {
            if !p.trainable {
                continue;
            }
            let g = p.grad.as_slice();
            let (m, v) = (m.as_mut_slice(), v.as_mut_slice());
            for (i, w) in p.value.as_mut_slice().iter_mut().enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                *w *= decay;
                *w -= lr * update;
            }
        }
    }

    /// Exports the state as named matrices (for resumable checkpoints).
    pub fn export(&self, store: &ParamStore) -> ParamStore {
        let mut out = ParamStore::new();
        out.add("adamw.step", Matrix::scalar(self.step as f64));
        for (i, p) in store.iter().enumerate() {
            out.add(format!("adamw.m.{}", p.name), self.first[i].clone());
            out.add(format!("adamw.v.{}", p.name), self.second[i].clone());
        }
        out
    }

    /// Restores state written by [`AdamW::export`].
    pub fn import(&mut self, store: &ParamStore, state: &ParamStore) -> Result<()> {
        let get = |name: &str| {
            state
                .find(name)
                .map(|id| state.value(id).clone())
                .ok_or_else(|| Error::data(format!("optimizer state lacks {name}")))
        };
        self.step = get("adamw.step")?.item() as u64;
        for (i, p) in store.iter().enumerate() {
            let m = get(&format!("adamw.m.{}", p.name))?;
            let v = get(&format!("adamw.v.{}", p.name))?;
            if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                return Err(Error::Dimension {
                    op: "optimizer state",
                    lhs: p.value.shape(),
                    rhs: m.shape(),
                });
            }
            self.first[i] = m;
            self.second[i] = v;
        }
        Ok(())
    }
}
