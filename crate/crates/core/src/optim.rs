//! First-order optimizers over [`Parameters`], with L2 decay and global-norm clipping.

use serde::{Deserialize, Serialize};

use crate::model::Parameters;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub l2: f64,
    /// Global gradient norm cap; non-positive disables clipping.
    pub clip_norm: f64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Optimizer {
    settings: OptimizerSettings,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(settings: OptimizerSettings) -> Self {
        Self {
            settings,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    /// Descends along `grads` (which is modified in place: decay and clipping are folded in).
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &mut P) {
        let OptimizerSettings {
            kind,
            learning_rate,
            l2,
            clip_norm,
        } = self.settings;

        if l2 > 0.0 {
            for (g, (_, p)) in grads.tensors_mut().into_iter().zip(params.tensors()) {
                g.iter_mut().zip(p).for_each(|(g, p)| *g += l2 * p);
            }
        }
        if clip_norm > 0.0 {
            let norm = grads.squared_norm().sqrt();
            if norm > clip_norm {
                grads.scale(clip_norm / norm);
            }
        }

        self.steps += 1;
        let grad_views: Vec<Vec<f64>> = grads.tensors().into_iter().map(|(_, g)| g.to_vec()).collect();
        match kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors_mut().into_iter().zip(&grad_views) {
                    p.iter_mut().zip(g).for_each(|(p, g)| *p -= learning_rate * g);
                }
            }
            OptimizerKind::Adam => {
                if self.first.is_empty() {
                    self.first = grad_views.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.second = self.first.clone();
                }
                let t = self.steps as i32;
                let bias1 = 1.0 - BETA1.powi(t);
                let bias2 = 1.0 - BETA2.powi(t);
                for (((p, g), m), v) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(&grad_views)
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    for i in 0..p.len() {
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                        let m_hat = m[i] / bias1;
                        let v_hat = v[i] / bias2;
                        p[i] -= learning_rate * m_hat / (v_hat.sqrt() + EPS);
                    }
                }
            }
        }
    }
}
