//! SGD with momentum and Adam. Optimizer state is kept in `f64`.

use super::config::{OptimizerKind, OptimizerSettings};
use crate::error::{Error, Result};
use crate::model::Param;
use crate::tensor::Real;

#[derive(Debug, Clone)]
pub struct Optimizer {
    settings: OptimizerSettings,
    steps: u64,
    /// SGD velocity, or Adam's first moment.
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(settings: OptimizerSettings) -> Self {
        Optimizer {
            settings,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Updates every parameter from the gradient stored in its grad buffer.
    pub fn step<T: Real>(&mut self, params: &mut [Param<T>]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() || params.iter().zip(&self.first).any(|(p, s)| p.value.len() != s.len()) {
            return Err(Error::ShapeMismatch("optimizer state does not match the parameters".into()));
        }
        self.steps += 1;
        let s = self.settings;
        let t = self.steps as i32;
        let c1 = 1.0 - s.beta1.powi(t);
        let c2 = 1.0 - s.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let grad = p
                .value
                .grad()
                .ok_or_else(|| Error::State(format!("parameter {} has no gradient", p.name)))?
                .to_vec();
            for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.to_f64();
                let delta = match s.kind {
                    OptimizerKind::Sgd => {
                        *m = s.momentum * *m - s.learning_rate * g;
                        *m
                    }
                    OptimizerKind::Adam => {
                        *m = s.beta1 * *m + (1.0 - s.beta1) * g;
                        *v = s.beta2 * *v + (1.0 - s.beta2) * g * g;
                        -s.learning_rate * (*m / c1) / ((*v / c2).sqrt() + s.adam_epsilon)
                    }
                };
                *w = T::from_f64(w.to_f64() + delta);
            }
        }
        Ok(())
    }
}
