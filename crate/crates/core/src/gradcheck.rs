//! End-to-end gradient verification against central finite differences.

use serde::Serialize;

use crate::data::{label_for_hdrs, SessionSample};
use crate::encoder::{ViewKind, ViewSequence};
use crate::error::Result;
use crate::heads::HeadKind;
use crate::model::{compute_gradient, finite_diff_gradient, Mode, ModelConfig, ModelParams};
use crate::rng::RngStream;

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Denominator floor so coordinates with (near) zero gradient compare absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub kind: HeadKind,
    pub seed: u64,
    pub instances: usize,
    pub parameters_checked: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn random_sequence(view: ViewKind, rng: &mut RngStream) -> Result<ViewSequence> {
    let len = rng.int_inclusive(2, 5) as usize;
    let data = (0..len * view.feature_dim())
        .map(|_| rng.uniform_range(-1.5, 1.5))
        .collect();
    ViewSequence::from_flat(view, data)
}

fn random_session(id: usize, rng: &mut RngStream) -> Result<SessionSample> {
    let hdrs = rng.int_inclusive(0, 20);
    Ok(SessionSample {
        id,
        user_id: 0,
        group: crate::data::Group::Normal,
        hdrs,
        label: label_for_hdrs(hdrs),
        alphanumeric: random_sequence(ViewKind::Alphanumeric, rng)?,
        special: random_sequence(ViewKind::Special, rng)?,
        accelerometer: random_sequence(ViewKind::Accelerometer, rng)?,
    })
}

/// Checks `instances` random (model, batch) pairs of the given head kind.
///
/// `corrupt` perturbs one analytic coordinate before comparing; it exists so
/// callers can confirm the check detects a wrong gradient.
pub fn run_gradcheck(kind: HeadKind, seed: u64, instances: usize, corrupt: bool) -> Result<GradcheckReport> {
    let mut rng = RngStream::new(seed, kind as u64);
    let mut max_err: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..instances {
        let config = ModelConfig {
            hidden_dim: rng.int_inclusive(2, 4) as usize,
            head_units: rng.int_inclusive(2, 3) as usize,
            ..ModelConfig::new(kind)
        };
        let params = ModelParams::init(&config, &mut rng)?;
        let batch = (0..2)
            .map(|i| random_session(i, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let (grad, _) = compute_gradient(&params, &batch, Mode::Eval)?;
        let mut analytic = grad.flatten();
        if corrupt {
            let i = rng.index(analytic.len());
            analytic[i] += 1e-3 + 0.1 * analytic[i].abs();
        }
        let numeric = finite_diff_gradient(&params, &batch, GRADCHECK_STEP)?;
        for (a, n) in analytic.iter().zip(&numeric) {
            max_err = max_err.max(relative_error(*a, *n));
        }
        checked += analytic.len();
    }
    Ok(GradcheckReport {
        kind,
        seed,
        instances,
        parameters_checked: checked,
        max_relative_error: max_err,
        tolerance: GRADCHECK_TOLERANCE,
        passed: instances > 0 && max_err <= GRADCHECK_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn passes_for_every_head() {
        for kind in HeadKind::ALL {
            let r = run_gradcheck(kind, 0, 3, false).unwrap();
            assert!(r.passed, "{kind}: {}", r.max_relative_error);
        }
    }

    #[test]
    fn corruption_is_detected() {
        for kind in HeadKind::ALL {
            assert!(!run_gradcheck(kind, 0, 1, true).unwrap().passed);
        }
    }

    #[test]
    fn repeatable() {
        let a = run_gradcheck(HeadKind::Dmvm, 9, 2, false).unwrap();
        let b = run_gradcheck(HeadKind::Dmvm, 9, 2, false).unwrap();
        assert_eq!(a.max_relative_error.to_bits(), b.max_relative_error.to_bits());
    }

    #[test]
    fn zero_instances_fail() {
        assert!(!run_gradcheck(HeadKind::Dnn, 0, 0, false).unwrap().passed);
    }
}
