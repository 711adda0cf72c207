//! Per-view GRU sequence encoder.
//!
//! Gates, with `h_0 = 0`:
//!
//! ```text
//! z_t  = σ(Wz x_t + Uz h_{t−1} + bz)
//! r_t  = σ(Wr x_t + Ur h_{t−1} + br)
//! h̃_t  = tanh(Wh x_t + Uh (r_t ⊙ h_{t−1}) + bh)
//! h_t  = (1 − z_t) ⊙ h_{t−1} + z_t ⊙ h̃_t
//! ```
//!
//! The encoding of a sequence is its final hidden state `h_T`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{sigmoid, tanh, DenseMatrix};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViewKind {
    /// Per keypress: duration, time since previous keypress, x and y distance
    /// from the previous key.
    Alphanumeric,
    /// One-hot per special event: autocorrect, backspace, space, suggestion,
    /// switch-keyboard, other.
    Special,
    /// Accelerometer x, y, z.
    Accelerometer,
}

impl ViewKind {
    pub const ALL: [ViewKind; 3] = [
        ViewKind::Alphanumeric,
        ViewKind::Special,
        ViewKind::Accelerometer,
    ];

    pub fn feature_dim(self) -> usize {
        match self {
            ViewKind::Alphanumeric => 4,
            ViewKind::Special => 6,
            ViewKind::Accelerometer => 3,
        }
    }

    pub fn index(self) -> usize {
        match self {
            ViewKind::Alphanumeric => 0,
            ViewKind::Special => 1,
            ViewKind::Accelerometer => 2,
        }
    }
}

/// A variable-length sequence of fixed-width feature vectors, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSequence {
    view: ViewKind,
    data: Vec<f64>,
}

impl ViewSequence {
    pub fn from_steps(view: ViewKind, steps: &[Vec<f64>]) -> Result<Self> {
        let dim = view.feature_dim();
        let mut data = Vec::with_capacity(steps.len() * dim);
        for step in steps {
            check_dim("ViewSequence step", dim, step.len())?;
            data.extend_from_slice(step);
        }
        Ok(ViewSequence { view, data })
    }

    pub fn from_flat(view: ViewKind, data: Vec<f64>) -> Result<Self> {
        if data.len() % view.feature_dim() != 0 {
            return Err(Error::Dimension {
                context: "ViewSequence flat data",
                expected: view.feature_dim(),
                actual: data.len() % view.feature_dim(),
            });
        }
        Ok(ViewSequence { view, data })
    }

    pub fn view(&self) -> ViewKind {
        self.view
    }

    pub fn dim(&self) -> usize {
        self.view.feature_dim()
    }

    /// Number of time steps.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn step(&self, t: usize) -> &[f64] {
        let d = self.dim();
        &self.data[t * d..(t + 1) * d]
    }

    pub fn steps(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim())
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub wz: DenseMatrix,
    pub wr: DenseMatrix,
    pub wh: DenseMatrix,
    pub uz: DenseMatrix,
    pub ur: DenseMatrix,
    pub uh: DenseMatrix,
    pub bz: Vec<f64>,
    pub br: Vec<f64>,
    pub bh: Vec<f64>,
}

impl GruParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = || DenseMatrix::zeros(hidden_dim, input_dim);
        let u = || DenseMatrix::zeros(hidden_dim, hidden_dim);
        GruParams {
            input_dim,
            hidden_dim,
            wz: w(),
            wr: w(),
            wh: w(),
            uz: u(),
            ur: u(),
            uh: u(),
            bz: vec![0.0; hidden_dim],
            br: vec![0.0; hidden_dim],
            bh: vec![0.0; hidden_dim],
        }
    }

    /// Weight matrices ~ `uniform(−a, a)` with `a = sqrt(1 / hidden_dim)`,
    /// biases zero. Draw order: Wz, Wr, Wh, Uz, Ur, Uh.
    pub fn random(input_dim: usize, hidden_dim: usize, rng: &mut RngStream) -> Self {
        let a = (1.0 / hidden_dim as f64).sqrt();
        let wz = DenseMatrix::uniform(hidden_dim, input_dim, a, rng);
        let wr = DenseMatrix::uniform(hidden_dim, input_dim, a, rng);
        let wh = DenseMatrix::uniform(hidden_dim, input_dim, a, rng);
        let uz = DenseMatrix::uniform(hidden_dim, hidden_dim, a, rng);
        let ur = DenseMatrix::uniform(hidden_dim, hidden_dim, a, rng);
        let uh = DenseMatrix::uniform(hidden_dim, hidden_dim, a, rng);
        GruParams {
            input_dim,
            hidden_dim,
            wz,
            wr,
            wh,
            uz,
            ur,
            uh,
            bz: vec![0.0; hidden_dim],
            br: vec![0.0; hidden_dim],
            bh: vec![0.0; hidden_dim],
        }
    }

    /// Parameter blocks in flattening order.
    pub fn slices(&self) -> [&[f64]; 9] {
        [
            self.wz.data(),
            self.wr.data(),
            self.wh.data(),
            self.uz.data(),
            self.ur.data(),
            self.uh.data(),
            &self.bz,
            &self.br,
            &self.bh,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 9] {
        [
            self.wz.data_mut(),
            self.wr.data_mut(),
            self.wh.data_mut(),
            self.uz.data_mut(),
            self.ur.data_mut(),
            self.uh.data_mut(),
            &mut self.bz,
            &mut self.br,
            &mut self.bh,
        ]
    }

    pub fn num_params(&self) -> usize {
        3 * self.hidden_dim * (self.input_dim + self.hidden_dim + 1)
    }

    fn check_shapes(&self) -> Result<()> {
        let (h, i) = (self.hidden_dim, self.input_dim);
        for w in [&self.wz, &self.wr, &self.wh] {
            check_dim("GRU W rows", h, w.rows())?;
            check_dim("GRU W cols", i, w.cols())?;
        }
        for u in [&self.uz, &self.ur, &self.uh] {
            check_dim("GRU U rows", h, u.rows())?;
            check_dim("GRU U cols", h, u.cols())?;
        }
        for b in [&self.bz, &self.br, &self.bh] {
            check_dim("GRU bias", h, b.len())?;
        }
        Ok(())
    }
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruCache<'a> {
    inputs: &'a ViewSequence,
    hidden_dim: usize,
    /// `h_0 .. h_T`, `(T+1) × H`.
    hs: Vec<f64>,
    zs: Vec<f64>,
    rs: Vec<f64>,
    cands: Vec<f64>,
}

impl GruCache<'_> {
    pub fn len(&self) -> usize {
        self.zs.len() / self.hidden_dim
    }

    pub fn is_empty(&self) -> bool {
        self.zs.is_empty()
    }

    /// Hidden state after step `t` (`t = 0` is the zero initial state).
    pub fn hidden(&self, t: usize) -> &[f64] {
        &self.hs[t * self.hidden_dim..(t + 1) * self.hidden_dim]
    }

    pub fn output(&self) -> &[f64] {
        self.hidden(self.len())
    }
}

pub fn gru_forward<'a>(params: &GruParams, seq: &'a ViewSequence) -> Result<(Vec<f64>, GruCache<'a>)> {
    params.check_shapes()?;
    check_dim("gru_forward input", params.input_dim, seq.dim())?;
    if seq.is_empty() {
        return Err(Error::Data("empty view sequence".into()));
    }
    let cache = gru_forward_unchecked(params, seq);
    Ok((cache.output().to_vec(), cache))
}

pub(crate) fn gru_forward_unchecked<'a>(params: &GruParams, seq: &'a ViewSequence) -> GruCache<'a> {
    let hd = params.hidden_dim;
    let t_len = seq.len();
    let mut hs = vec![0.0; (t_len + 1) * hd];
    let mut zs = vec![0.0; t_len * hd];
    let mut rs = vec![0.0; t_len * hd];
    let mut cands = vec![0.0; t_len * hd];
    let mut rh = vec![0.0; hd];

    for (t, x) in seq.steps().enumerate() {
        let (prev_all, next_all) = hs.split_at_mut((t + 1) * hd);
        let h_prev = &prev_all[t * hd..];
        let h_next = &mut next_all[..hd];
        let z = &mut zs[t * hd..(t + 1) * hd];
        let r = &mut rs[t * hd..(t + 1) * hd];
        let c = &mut cands[t * hd..(t + 1) * hd];

        for i in 0..hd {
            let az = params.bz[i] + row_dot(&params.wz, i, x) + row_dot(&params.uz, i, h_prev);
            let ar = params.br[i] + row_dot(&params.wr, i, x) + row_dot(&params.ur, i, h_prev);
            z[i] = sigmoid(az);
            r[i] = sigmoid(ar);
        }
        for i in 0..hd {
            rh[i] = r[i] * h_prev[i];
        }
        for i in 0..hd {
            let ah = params.bh[i] + row_dot(&params.wh, i, x) + row_dot(&params.uh, i, &rh);
            c[i] = tanh(ah);
            h_next[i] = (1.0 - z[i]) * h_prev[i] + z[i] * c[i];
        }
    }

    GruCache {
        inputs: seq,
        hidden_dim: hd,
        hs,
        zs,
        rs,
        cands,
    }
}

#[inline(always)]
fn row_dot(m: &DenseMatrix, row: usize, x: &[f64]) -> f64 {
    crate::math::dot(m.row(row), x)
}

/// Reverse-mode pass. Accumulates `∂L/∂θ` into `grads` given `dk = ∂L/∂h_T`
/// and returns `∂L/∂x_t` for every step when `want_dseq` is set.
pub fn gru_backward(
    params: &GruParams,
    cache: &GruCache<'_>,
    dk: &[f64],
    grads: &mut GruParams,
    want_dseq: bool,
) -> Result<Option<Vec<f64>>> {
    params.check_shapes()?;
    grads.check_shapes()?;
    check_dim("gru_backward hidden", params.hidden_dim, cache.hidden_dim)?;
    check_dim("gru_backward dk", params.hidden_dim, dk.len())?;
    check_dim("gru_backward grads input", params.input_dim, grads.input_dim)?;
    check_dim("gru_backward cache input", params.input_dim, cache.inputs.dim())?;
    Ok(gru_backward_unchecked(params, cache, dk, grads, want_dseq))
}

pub(crate) fn gru_backward_unchecked(
    params: &GruParams,
    cache: &GruCache<'_>,
    dk: &[f64],
    grads: &mut GruParams,
    want_dseq: bool,
) -> Option<Vec<f64>> {
    let hd = params.hidden_dim;
    let id = params.input_dim;
    let t_len = cache.len();
    let mut dseq = want_dseq.then(|| vec![0.0; t_len * id]);

    let mut dh = dk.to_vec();
    let mut dh_prev = vec![0.0; hd];
    let mut daz = vec![0.0; hd];
    let mut dar = vec![0.0; hd];
    let mut dah = vec![0.0; hd];
    let mut drh = vec![0.0; hd];
    let mut rh = vec![0.0; hd];

    for t in (0..t_len).rev() {
        let x = cache.inputs.step(t);
        let h_prev = cache.hidden(t);
        let z = &cache.zs[t * hd..(t + 1) * hd];
        let r = &cache.rs[t * hd..(t + 1) * hd];
        let c = &cache.cands[t * hd..(t + 1) * hd];

        for i in 0..hd {
            let dz = dh[i] * (c[i] - h_prev[i]);
            daz[i] = dz * z[i] * (1.0 - z[i]);
            dah[i] = dh[i] * z[i] * (1.0 - c[i] * c[i]);
            dh_prev[i] = dh[i] * (1.0 - z[i]);
            rh[i] = r[i] * h_prev[i];
        }

        drh.iter_mut().for_each(|v| *v = 0.0);
        params.uh.matvec_t_acc(&dah, false, &mut drh);
        for i in 0..hd {
            dar[i] = drh[i] * h_prev[i] * r[i] * (1.0 - r[i]);
            dh_prev[i] += drh[i] * r[i];
        }
        params.uz.matvec_t_acc(&daz, false, &mut dh_prev);
        params.ur.matvec_t_acc(&dar, false, &mut dh_prev);

        grads.wz.outer_acc(&daz, x, false);
        grads.wr.outer_acc(&dar, x, false);
        grads.wh.outer_acc(&dah, x, false);
        grads.uz.outer_acc(&daz, h_prev, false);
        grads.ur.outer_acc(&dar, h_prev, false);
        grads.uh.outer_acc(&dah, &rh, false);
        for i in 0..hd {
            grads.bz[i] += daz[i];
            grads.br[i] += dar[i];
            grads.bh[i] += dah[i];
        }

        if let Some(ds) = dseq.as_mut() {
            let dx = &mut ds[t * id..(t + 1) * id];
            params.wz.matvec_t_acc(&daz, false, dx);
            params.wr.matvec_t_acc(&dar, false, dx);
            params.wh.matvec_t_acc(&dah, false, dx);
        }

        std::mem::swap(&mut dh, &mut dh_prev);
    }
    dseq
}
