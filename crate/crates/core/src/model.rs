//! End-to-end model: one GRU per view feeding a fusion head, softmax
//! cross-entropy loss and the full reverse pass.
//!
//! Flattening order: the three encoders in view order (alphanumeric,
//! special, accelerometer), each as `Wz, Wr, Wh, Uz, Ur, Uh, bz, br, bh`;
//! then the head (`W1, W2` for DNN; per class `U_c, W_c` for DFM; per class,
//! per view `U_c^(v)` for DMVM). Matrices are row-major.

use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use crate::data::SessionSample;
use crate::encoder::{gru_backward_unchecked, gru_forward_unchecked, GruCache, GruParams, ViewKind};
use crate::error::{check_dim, Error, Result};
use crate::heads::{HeadKind, HeadParams};
use crate::math::softmax_cross_entropy;
use crate::rng::RngStream;
use crate::NUM_VIEWS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: HeadKind,
    /// Encoder width `d_k`.
    pub hidden_dim: usize,
    /// DNN hidden units, or factor count for DFM / DMVM.
    pub head_units: usize,
    pub classes: usize,
    /// Reserved; only unidirectional encoders are implemented.
    #[serde(default)]
    pub bidirectional: bool,
}

impl ModelConfig {
    pub fn new(kind: HeadKind) -> Self {
        ModelConfig {
            kind,
            hidden_dim: 8,
            head_units: match kind {
                HeadKind::Dnn => 8,
                HeadKind::Dfm | HeadKind::Dmvm => 4,
            },
            classes: 2,
            bidirectional: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bidirectional {
            return Err(Error::Config("bidirectional encoders are not supported".into()));
        }
        if self.hidden_dim == 0 || self.head_units == 0 {
            return Err(Error::Config("hidden_dim and head_units must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        Ok(())
    }
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub grus: Vec<GruParams>,
    pub head: HeadParams,
}

impl ModelParams {
    /// Encoders first (view order), then the head, all from `rng`.
    pub fn init(config: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let grus = ViewKind::ALL
            .iter()
            .map(|v| GruParams::random(v.feature_dim(), config.hidden_dim, rng))
            .collect();
        let head = HeadParams::random(
            config.kind,
            NUM_VIEWS,
            config.hidden_dim,
            config.head_units,
            config.classes,
            rng,
        );
        Ok(ModelParams { grus, head })
    }

    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let grus = ViewKind::ALL
            .iter()
            .map(|v| GruParams::zeros(v.feature_dim(), config.hidden_dim))
            .collect();
        let head = HeadParams::zeros(
            config.kind,
            NUM_VIEWS,
            config.hidden_dim,
            config.head_units,
            config.classes,
        );
        Ok(ModelParams { grus, head })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.slices_mut().into_iter().for_each(|s| s.fill(0.0));
        z
    }

    pub fn kind(&self) -> HeadKind {
        self.head.kind()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.grus.iter().flat_map(|g| g.slices()).collect();
        out.extend(self.head.slices());
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.grus.iter_mut().flat_map(|g| g.slices_mut()).collect();
        out.extend(self.head.slices_mut());
        out
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for s in self.slices() {
            v.extend_from_slice(s);
        }
        v
    }

    /// Overwrites every parameter from a flat vector in flattening order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("ModelParams::assign_flat", self.num_params(), flat.len())?;
        let mut offset = 0;
        for s in self.slices_mut() {
            let n = s.len();
            s.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// A copy of `template` holding the values of `flat`.
    pub fn from_flat(template: &ModelParams, flat: &[f64]) -> Result<Self> {
        let mut p = template.clone();
        p.assign_flat(flat)?;
        Ok(p)
    }

    fn check_same_shape(&self, other: &ModelParams) -> Result<()> {
        if self.kind() != other.kind() {
            return Err(Error::Config(format!(
                "model kinds differ: {} vs {}",
                self.kind(),
                other.kind()
            )));
        }
        let a = self.slices();
        let b = other.slices();
        check_dim("model block count", a.len(), b.len())?;
        for (x, y) in a.iter().zip(&b) {
            check_dim("model block size", x.len(), y.len())?;
        }
        Ok(())
    }

    /// `self += alpha · other`.
    pub fn add_scaled(&mut self, other: &ModelParams, alpha: f64) -> Result<()> {
        self.check_same_shape(other)?;
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn max_abs_diff(&self, other: &ModelParams) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .slices()
            .iter()
            .zip(other.slices())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn check_sample(&self, sample: &SessionSample) -> Result<()> {
        check_dim("model encoders", NUM_VIEWS, self.grus.len())?;
        for (gru, seq) in self.grus.iter().zip(sample.views()) {
            check_dim("encoder input width", gru.input_dim, seq.dim())?;
            if seq.is_empty() {
                return Err(Error::Data(format!(
                    "session {} is missing its {:?} view",
                    sample.id,
                    seq.view()
                )));
            }
        }
        if sample.class_index() >= self.head.classes() {
            return Err(Error::Config(format!(
                "label {} outside {} classes",
                sample.class_index(),
                self.head.classes()
            )));
        }
        Ok(())
    }

    /// Logits with dropout disabled.
    pub fn logits(&self, sample: &SessionSample) -> Result<Vec<f64>> {
        Ok(self.forward(sample, Mode::Eval)?.logits)
    }

    pub fn forward<'a>(&self, sample: &'a SessionSample, mode: Mode<'_>) -> Result<ForwardPass<'a>> {
        self.check_sample(sample)?;
        let mut caches = Vec::with_capacity(NUM_VIEWS);
        let mut ks = Vec::with_capacity(NUM_VIEWS);
        for (gru, seq) in self.grus.iter().zip(sample.views()) {
            let cache = gru_forward_unchecked(gru, seq);
            ks.push(cache.output().to_vec());
            caches.push(cache);
        }
        let masks = match mode {
            Mode::Train { dropout, rng } if dropout > 0.0 => {
                let keep = 1.0 - dropout;
                let masks: Vec<Vec<f64>> = ks
                    .iter()
                    .map(|k| {
                        k.iter()
                            .map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 })
                            .collect()
                    })
                    .collect();
                for (k, m) in ks.iter_mut().zip(&masks) {
                    k.iter_mut().zip(m).for_each(|(v, s)| *v *= s);
                }
                Some(masks)
            }
            _ => None,
        };
        self.head.check_inputs(&ks)?;
        let logits = self.head.forward_unchecked(&ks);
        let label = sample.class_index();
        let (loss, dlogits) = softmax_cross_entropy(&logits, label)?;
        Ok(ForwardPass {
            loss,
            logits,
            dlogits,
            caches,
            head_inputs: ks,
            masks,
        })
    }

    /// Accumulates the gradient of `pass.loss` into `grads`.
    pub fn backward(&self, pass: &ForwardPass<'_>, grads: &mut ModelParams) -> Result<()> {
        self.check_same_shape(grads)?;
        let mut dks = self
            .head
            .backward_unchecked(&pass.head_inputs, &pass.dlogits, &mut grads.head);
        if let Some(masks) = &pass.masks {
            for (dk, m) in dks.iter_mut().zip(masks) {
                dk.iter_mut().zip(m).for_each(|(d, s)| *d *= s);
            }
        }
        for ((gru, g), (cache, dk)) in self
            .grus
            .iter()
            .zip(grads.grus.iter_mut())
            .zip(pass.caches.iter().zip(&dks))
        {
            gru_backward_unchecked(gru, cache, dk, g, false);
        }
        Ok(())
    }
}

/// Whether dropout is active. Training mode draws one inverted-dropout mask
/// per sample over every head input component.
pub enum Mode<'r> {
    Eval,
    Train { dropout: f64, rng: &'r mut RngStream },
}

impl Mode<'_> {
    pub fn reborrow(&mut self) -> Mode<'_> {
        match self {
            Mode::Eval => Mode::Eval,
            Mode::Train { dropout, rng } => Mode::Train {
                dropout: *dropout,
                rng,
            },
        }
    }
}

pub struct ForwardPass<'a> {
    pub loss: f64,
    pub logits: Vec<f64>,
    dlogits: Vec<f64>,
    caches: Vec<GruCache<'a>>,
    head_inputs: Vec<Vec<f64>>,
    masks: Option<Vec<Vec<f64>>>,
}

pub fn model_forward_loss<'a>(
    params: &ModelParams,
    sample: &'a SessionSample,
    mode: Mode<'_>,
) -> Result<ForwardPass<'a>> {
    params.forward(sample, mode)
}

/// Mean per-sample gradient over `batch` and the mean loss, accumulated in
/// batch order.
pub fn compute_gradient<S: Borrow<SessionSample>>(
    params: &ModelParams,
    batch: &[S],
    mut mode: Mode<'_>,
) -> Result<(ModelParams, f64)> {
    if batch.is_empty() {
        return Err(Error::Empty("gradient batch"));
    }
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for s in batch {
        let pass = params.forward(s.borrow(), mode.reborrow())?;
        loss += pass.loss;
        params.backward(&pass, &mut grads)?;
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((grads, loss / n))
}

/// Mean loss over `batch` with dropout disabled.
pub fn batch_loss<S: Borrow<SessionSample>>(params: &ModelParams, batch: &[S]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("loss batch"));
    }
    let mut total = 0.0;
    for s in batch {
        total += params.forward(s.borrow(), Mode::Eval)?.loss;
    }
    Ok(total / batch.len() as f64)
}

/// Central differences `(f(x + h e_i) − f(x − h e_i)) / 2h` per coordinate.
pub fn central_difference<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe)?;
        probe[i] = orig - h;
        let minus = f(&probe)?;
        probe[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Finite-difference gradient of the mean batch loss, dropout disabled.
pub fn finite_diff_gradient<S: Borrow<SessionSample>>(
    params: &ModelParams,
    batch: &[S],
    h: f64,
) -> Result<Vec<f64>> {
    let mut probe = params.clone();
    central_difference(
        |flat| {
            probe.assign_flat(flat)?;
            batch_loss(&probe, batch)
        },
        &params.flatten(),
        h,
    )
}
