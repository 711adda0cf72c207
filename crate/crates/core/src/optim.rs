use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    RmsProp,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_rho() -> f64 {
    0.9
}

fn default_epsilon() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn rmsprop(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::RmsProp,
            learning_rate,
            rho: default_rho(),
            epsilon: default_epsilon(),
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            ..OptimizerConfig::rmsprop(learning_rate)
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::rmsprop(0.001)
    }
}

/// Optimizer with its per-coordinate accumulators.
///
/// * SGD: `ω ← ω − η g`
/// * RMSProp: `a ← ρ a + (1 − ρ) g²`, `ω ← ω − η g / (√a + ε)`
#[derive(Debug, Clone)]
pub struct OptimizerState {
    config: OptimizerConfig,
    accumulators: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, num_params: usize) -> Self {
        OptimizerState {
            config,
            accumulators: vec![0.0; num_params],
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn accumulators(&self) -> &[f64] {
        &self.accumulators
    }

    /// Updates a flat parameter vector in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_dim("optimizer params", self.accumulators.len(), params.len())?;
        check_dim("optimizer gradient", params.len(), grad.len())?;
        self.apply(params, grad, 0);
        Ok(())
    }

    /// Updates model parameters in place from a same-shaped gradient.
    pub fn step_model(&mut self, params: &mut ModelParams, grad: &ModelParams) -> Result<()> {
        check_dim("optimizer params", self.accumulators.len(), params.num_params())?;
        check_dim("optimizer gradient", params.num_params(), grad.num_params())?;
        let mut offset = 0;
        for (p, g) in params.slices_mut().into_iter().zip(grad.slices()) {
            check_dim("optimizer block", p.len(), g.len())?;
            self.apply(p, g, offset);
            offset += p.len();
        }
        Ok(())
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64], offset: usize) {
        let OptimizerConfig {
            kind,
            learning_rate: lr,
            rho,
            epsilon,
        } = self.config;
        match kind {
            OptimizerKind::Sgd => {
                for (w, g) in params.iter_mut().zip(grad) {
                    *w -= lr * g;
                }
            }
            OptimizerKind::RmsProp => {
                let acc = &mut self.accumulators[offset..offset + params.len()];
                for ((w, g), a) in params.iter_mut().zip(grad).zip(acc) {
                    *a = rho * *a + (1.0 - rho) * g * g;
                    *w -= lr * g / (a.sqrt() + epsilon);
                }
            }
        }
    }
}
