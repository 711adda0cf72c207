//! Local training loop run by each party.

use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use crate::data::SessionSample;
use crate::error::{Error, Result};
use crate::model::{compute_gradient, Mode, ModelParams};
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Passes over the local data per call.
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Inverted-dropout fraction at the head input, in `[0, 1)`.
    pub dropout: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            local_epochs: 15,
            batch_size: 256,
            dropout: 0.1,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(Error::Config("local_epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub params: ModelParams,
    /// Mean training loss over the samples of the final epoch.
    pub train_loss: f64,
}

/// Runs `local_epochs` epochs starting from `global`. Each epoch shuffles the
/// data with `rng`, splits it into `batch_size` minibatches (the last one may
/// be short) and takes one optimizer step per batch. Optimizer state starts
/// fresh on every call.
pub fn local_training<S: Borrow<SessionSample>>(
    samples: &[S],
    global: &ModelParams,
    config: &TrainConfig,
    rng: &mut RngStream,
) -> Result<LocalOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("party dataset"));
    }
    let mut params = global.clone();
    let mut optimizer = OptimizerState::new(config.optimizer, params.num_params());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut batch: Vec<&SessionSample> = Vec::with_capacity(config.batch_size.min(samples.len()));
    let mut epoch_loss = 0.0;

    for _ in 0..config.local_epochs {
        rng.shuffle(&mut order);
        epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i].borrow()));
            let mode = if config.dropout > 0.0 {
                Mode::Train {
                    dropout: config.dropout,
                    rng,
                }
            } else {
                Mode::Eval
            };
            let (grad, loss) = compute_gradient(&params, &batch, mode)?;
            epoch_loss += loss * batch.len() as f64;
            optimizer.step_model(&mut params, &grad)?;
        }
    }
    Ok(LocalOutcome {
        params,
        train_loss: epoch_loss / samples.len() as f64,
    })
}
