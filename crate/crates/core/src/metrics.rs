use std::borrow::Borrow;

use crate::data::SessionSample;
use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub sample_id: usize,
    pub predicted: usize,
    pub actual: usize,
}

impl Prediction {
    pub fn is_correct(&self) -> bool {
        self.predicted == self.actual
    }
}

pub fn accuracy(preds: &[Prediction]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let correct = preds.iter().filter(|p| p.is_correct()).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// F1 of the positive class (1); 0 when precision + recall is 0.
pub fn f_score(preds: &[Prediction]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for p in preds {
        match (p.predicted == 1, p.actual == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
    if precision + recall == 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * precision * recall / (precision + recall))
    }
}

/// Argmax with ties resolved to the lowest class index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub accuracy: f64,
    pub f_score: f64,
    pub predictions: Vec<Prediction>,
}

/// Dropout-free predictions over `samples`.
pub fn evaluate_model<S: Borrow<SessionSample>>(params: &ModelParams, samples: &[S]) -> Result<Evaluation> {
    let predictions = samples
        .iter()
        .map(|s| {
            let s = s.borrow();
            Ok(Prediction {
                sample_id: s.id,
                predicted: argmax(&params.logits(s)?),
                actual: s.class_index(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        accuracy: accuracy(&predictions)?,
        f_score: f_score(&predictions)?,
        predictions,
    })
}
