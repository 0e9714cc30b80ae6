use serde::{Deserialize, Serialize};

use super::model::{Gradients, Model};
use crate::error::{Error, Result};

/// SGD with momentum and a step schedule: at each `(epoch, factor)` milestone
/// the learning rate is divided by `factor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub schedule: Vec<(usize, f64)>,
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            momentum: 0.9,
            schedule: Vec::new(),
            epochs: 8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("optimizer.learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("optimizer.momentum must lie in [0, 1)".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("optimizer.epochs must be positive".into()));
        }
        for w in self.schedule.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Config(
                    "optimizer.schedule epochs must be strictly increasing".into(),
                ));
            }
        }
        if let Some(&(e, _)) = self.schedule.last() {
            if e >= self.epochs {
                return Err(Error::Config(format!(
                    "optimizer.schedule milestone {e} is not below epochs {}",
                    self.epochs
                )));
            }
        }
        if self.schedule.iter().any(|&(_, f)| !(f > 0.0)) {
            return Err(Error::Config("optimizer.schedule factors must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate after applying every milestone `<= epoch`.
    pub fn effective_lr(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .filter(|&&(e, _)| e <= epoch)
            .fold(self.learning_rate, |lr, &(_, f)| lr / f)
    }
}

/// Momentum buffer owned by one training run.
#[derive(Debug, Clone)]
pub struct Sgd {
    config: OptimizerConfig,
    velocity: Option<Vec<f64>>,
}

impl Sgd {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            velocity: None,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// `v = momentum * v + g; w -= lr(epoch) * v`.
    pub fn step(&mut self, model: &mut Model, grads: &Gradients, epoch: usize) {
        let lr = self.config.effective_lr(epoch);
        let g = grads.flat();
        let mu = self.config.momentum;
        let v = self.velocity.get_or_insert_with(|| vec![0.0; g.len()]);
        for (vi, gi) in v.iter_mut().zip(&g) {
            *vi = mu * *vi + gi;
        }
        model.for_each_param_mut(|k, p| *p -= lr * v[k]);
    }
}
