//! Late-fusion output layers mapping per-view encodings `k^(v)` to class
//! scores.
//!
//! * DNN: `p = relu(W1·[k;1])`, `y = W2·p` with `k` the concatenation of views.
//! * DFM: per class, `p_c = U_c·k`, `b_c = W_cᵀ·[k;1]`, `y_c = sum(p_c ⊙ p_c) + b_c`.
//!   This is the squared-projection form, not the canonical pairwise FM term.
//! * DMVM: per class, `p_c^(v) = U_c^(v)·[k^(v);1]`,
//!   `y_c = Σ_f Π_v p_c^(v)[f]`, the CP-factorized form of the full
//!   V-th order interaction tensor over `[k^(v);1]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{dot, DenseMatrix};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeadKind {
    #[serde(rename = "DNN", alias = "dnn")]
    Dnn,
    #[serde(rename = "DFM", alias = "dfm")]
    Dfm,
    #[serde(rename = "DMVM", alias = "dmvm")]
    Dmvm,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::Dnn, HeadKind::Dfm, HeadKind::Dmvm];
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Dnn => "DNN",
            HeadKind::Dfm => "DFM",
            HeadKind::Dmvm => "DMVM",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dnn" => Ok(HeadKind::Dnn),
            "dfm" | "fm" => Ok(HeadKind::Dfm),
            "dmvm" | "mvm" => Ok(HeadKind::Dmvm),
            other => Err(Error::Config(format!(
                "unknown model kind `{other}` (expected dnn, dfm or dmvm)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnnHead {
    /// `h × (d+1)`.
    pub w1: DenseMatrix,
    /// `c × h`.
    pub w2: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmHead {
    /// One `f × d` matrix per class.
    pub factors: Vec<DenseMatrix>,
    /// One length `d+1` vector per class; the last entry pairs with the
    /// constant 1.
    pub linear: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvmHead {
    /// `factors[class][view]` is `h × (d_k+1)`.
    pub factors: Vec<Vec<DenseMatrix>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadParams {
    Dnn(DnnHead),
    Fm(FmHead),
    Mvm(MvmHead),
}

impl HeadParams {
    pub fn kind(&self) -> HeadKind {
        match self {
            HeadParams::Dnn(_) => HeadKind::Dnn,
            HeadParams::Fm(_) => HeadKind::Dfm,
            HeadParams::Mvm(_) => HeadKind::Dmvm,
        }
    }

    /// All-zero head of the given geometry. `units` is the hidden width (DNN)
    /// or the number of factors (DFM, DMVM).
    pub fn zeros(kind: HeadKind, views: usize, dk: usize, units: usize, classes: usize) -> Self {
        let d = views * dk;
        match kind {
            HeadKind::Dnn => HeadParams::Dnn(DnnHead {
                w1: DenseMatrix::zeros(units, d + 1),
                w2: DenseMatrix::zeros(classes, units),
            }),
            HeadKind::Dfm => HeadParams::Fm(FmHead {
                factors: (0..classes).map(|_| DenseMatrix::zeros(units, d)).collect(),
                linear: vec![vec![0.0; d + 1]; classes],
            }),
            HeadKind::Dmvm => HeadParams::Mvm(MvmHead {
                factors: (0..classes)
                    .map(|_| (0..views).map(|_| DenseMatrix::zeros(units, dk + 1)).collect())
                    .collect(),
            }),
        }
    }

    /// Every matrix ~ `uniform(−a, a)` with `a = sqrt(1 / fan_in)`; drawn in
    /// flattening order.
    pub fn random(
        kind: HeadKind,
        views: usize,
        dk: usize,
        units: usize,
        classes: usize,
        rng: &mut RngStream,
    ) -> Self {
        let mut head = HeadParams::zeros(kind, views, dk, units, classes);
        match &mut head {
            HeadParams::Dnn(p) => {
                for w in [&mut p.w1, &mut p.w2] {
                    let cols = w.cols();
                    fill(w.data_mut(), cols, rng);
                }
                // hidden biases start at zero so no unit is dead at init
                let bias = p.w1.cols() - 1;
                for r in 0..p.w1.rows() {
                    p.w1.set(r, bias, 0.0);
                }
            }
            HeadParams::Fm(p) => {
                for (u, w) in p.factors.iter_mut().zip(p.linear.iter_mut()) {
                    let cols = u.cols();
                    fill(u.data_mut(), cols, rng);
                    let n = w.len();
                    fill(w, n, rng);
                }
            }
            HeadParams::Mvm(p) => {
                for per_view in &mut p.factors {
                    for u in per_view {
                        let cols = u.cols();
                        fill(u.data_mut(), cols, rng);
                    }
                }
            }
        }
        head
    }

    pub fn classes(&self) -> usize {
        match self {
            HeadParams::Dnn(p) => p.w2.rows(),
            HeadParams::Fm(p) => p.factors.len(),
            HeadParams::Mvm(p) => p.factors.len(),
        }
    }

    /// Parameter blocks in flattening order.
    pub fn slices(&self) -> Vec<&[f64]> {
        match self {
            HeadParams::Dnn(p) => vec![p.w1.data(), p.w2.data()],
            HeadParams::Fm(p) => p
                .factors
                .iter()
                .zip(&p.linear)
                .flat_map(|(u, w)| [u.data(), w.as_slice()])
                .collect(),
            HeadParams::Mvm(p) => p.factors.iter().flatten().map(|u| u.data()).collect(),
        }
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            HeadParams::Dnn(p) => vec![p.w1.data_mut(), p.w2.data_mut()],
            HeadParams::Fm(p) => p
                .factors
                .iter_mut()
                .zip(p.linear.iter_mut())
                .flat_map(|(u, w)| [u.data_mut(), w.as_mut_slice()])
                .collect(),
            HeadParams::Mvm(p) => p
                .factors
                .iter_mut()
                .flatten()
                .map(|u| u.data_mut())
                .collect(),
        }
    }

    /// Checks that `ks` fits this head's input geometry.
    pub fn check_inputs(&self, ks: &[Vec<f64>]) -> Result<()> {
        let total: usize = ks.iter().map(Vec::len).sum();
        match self {
            HeadParams::Dnn(p) => {
                check_dim("DNN head input", p.w1.cols(), total + 1)?;
                check_dim("DNN head W2 cols", p.w1.rows(), p.w2.cols())
            }
            HeadParams::Fm(p) => {
                check_dim("DFM head classes", p.factors.len(), p.linear.len())?;
                for (u, w) in p.factors.iter().zip(&p.linear) {
                    check_dim("DFM head input", u.cols(), total)?;
                    check_dim("DFM head linear", total + 1, w.len())?;
                }
                Ok(())
            }
            HeadParams::Mvm(p) => {
                for per_view in &p.factors {
                    check_dim("DMVM head views", per_view.len(), ks.len())?;
                    let units = per_view.first().map_or(0, DenseMatrix::rows);
                    for (u, k) in per_view.iter().zip(ks) {
                        check_dim("DMVM head input", u.cols(), k.len() + 1)?;
                        check_dim("DMVM head factors", units, u.rows())?;
                    }
                }
                Ok(())
            }
        }
    }

    pub fn forward(&self, ks: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_inputs(ks)?;
        Ok(self.forward_unchecked(ks))
    }

    pub(crate) fn forward_unchecked(&self, ks: &[Vec<f64>]) -> Vec<f64> {
        match self {
            HeadParams::Dnn(p) => {
                let k = ks.concat();
                let mut pre = vec![0.0; p.w1.rows()];
                p.w1.matvec_into(&k, true, &mut pre);
                pre.iter_mut().for_each(|v| *v = v.max(0.0));
                let mut out = vec![0.0; p.w2.rows()];
                p.w2.matvec_into(&pre, false, &mut out);
                out
            }
            HeadParams::Fm(p) => {
                let k = ks.concat();
                let mut proj = vec![0.0; p.factors.first().map_or(0, DenseMatrix::rows)];
                p.factors
                    .iter()
                    .zip(&p.linear)
                    .map(|(u, w)| {
                        u.matvec_into(&k, false, &mut proj);
                        let quad = dot(&proj, &proj);
                        let lin = dot(&w[..k.len()], &k) + w[k.len()];
                        quad + lin
                    })
                    .collect()
            }
            HeadParams::Mvm(p) => p
                .factors
                .iter()
                .map(|per_view| {
                    let projections = mvm_projections(per_view, ks);
                    let units = projections.first().map_or(0, Vec::len);
                    (0..units)
                        .map(|f| projections.iter().map(|pv| pv[f]).product::<f64>())
                        .sum()
                })
                .collect(),
        }
    }

    /// Reverse-mode pass: accumulates parameter gradients into `grads` and
    /// returns `∂L/∂k^(v)` per view.
    pub(crate) fn backward_unchecked(
        &self,
        ks: &[Vec<f64>],
        dlogits: &[f64],
        grads: &mut HeadParams,
    ) -> Vec<Vec<f64>> {
        let mut dks: Vec<Vec<f64>> = ks.iter().map(|k| vec![0.0; k.len()]).collect();
        match (self, grads) {
            (HeadParams::Dnn(p), HeadParams::Dnn(g)) => {
                let k = ks.concat();
                let mut pre = vec![0.0; p.w1.rows()];
                p.w1.matvec_into(&k, true, &mut pre);
                let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
                g.w2.outer_acc(dlogits, &act, false);
                let mut dact = vec![0.0; act.len()];
                p.w2.matvec_t_acc(dlogits, false, &mut dact);
                for (d, &z) in dact.iter_mut().zip(&pre) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
                g.w1.outer_acc(&dact, &k, true);
                let mut dk = vec![0.0; k.len()];
                p.w1.matvec_t_acc(&dact, true, &mut dk);
                scatter(&dk, &mut dks);
            }
            (HeadParams::Fm(p), HeadParams::Fm(g)) => {
                let k = ks.concat();
                let d = k.len();
                let mut dk = vec![0.0; d];
                let mut proj = vec![0.0; p.factors.first().map_or(0, DenseMatrix::rows)];
                for (c, &dy) in dlogits.iter().enumerate() {
                    if dy == 0.0 {
                        continue;
                    }
                    let u = &p.factors[c];
                    let w = &p.linear[c];
                    u.matvec_into(&k, false, &mut proj);
                    let dproj: Vec<f64> = proj.iter().map(|v| 2.0 * dy * v).collect();
                    g.factors[c].outer_acc(&dproj, &k, false);
                    let gw = &mut g.linear[c];
                    for (gi, &ki) in gw[..d].iter_mut().zip(&k) {
                        *gi += dy * ki;
                    }
                    gw[d] += dy;
                    u.matvec_t_acc(&dproj, false, &mut dk);
                    for (di, &wi) in dk.iter_mut().zip(&w[..d]) {
                        *di += dy * wi;
                    }
                }
                scatter(&dk, &mut dks);
            }
            (HeadParams::Mvm(p), HeadParams::Mvm(g)) => {
                for (c, &dy) in dlogits.iter().enumerate() {
                    if dy == 0.0 {
                        continue;
                    }
                    let per_view = &p.factors[c];
                    let projections = mvm_projections(per_view, ks);
                    let units = projections.first().map_or(0, Vec::len);
                    for v in 0..ks.len() {
                        let dproj: Vec<f64> = (0..units)
                            .map(|f| {
                                dy * projections
                                    .iter()
                                    .enumerate()
                                    .filter(|&(u, _)| u != v)
                                    .map(|(_, pu)| pu[f])
                                    .product::<f64>()
                            })
                            .collect();
                        g.factors[c][v].outer_acc(&dproj, &ks[v], true);
                        per_view[v].matvec_t_acc(&dproj, true, &mut dks[v]);
                    }
                }
            }
            _ => unreachable!("head/gradient kinds checked by caller"),
        }
        dks
    }
}

fn fill(data: &mut [f64], fan_in: usize, rng: &mut RngStream) {
    let a = (1.0 / fan_in.max(1) as f64).sqrt();
    data.iter_mut().for_each(|v| *v = rng.uniform_range(-a, a));
}

fn scatter(flat: &[f64], dks: &mut [Vec<f64>]) {
    let mut offset = 0;
    for dk in dks {
        let n = dk.len();
        dk.copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
}

fn mvm_projections(per_view: &[DenseMatrix], ks: &[Vec<f64>]) -> Vec<Vec<f64>> {
    per_view
        .iter()
        .zip(ks)
        .map(|(u, k)| {
            let mut p = vec![0.0; u.rows()];
            u.matvec_into(k, true, &mut p);
            p
        })
        .collect()
}

/// Exact reverse-mode gradient of a head. Returns `(∂L/∂θ_head, ∂L/∂k^(v))`.
pub fn head_backward(
    kind: HeadKind,
    params: &HeadParams,
    ks: &[Vec<f64>],
    dlogits: &[f64],
) -> Result<(HeadParams, Vec<Vec<f64>>)> {
    if params.kind() != kind {
        return Err(Error::Config(format!(
            "head kind {kind} does not match parameters of kind {}",
            params.kind()
        )));
    }
    params.check_inputs(ks)?;
    check_dim("head_backward dlogits", params.classes(), dlogits.len())?;
    let mut grads = params.clone();
    grads.slices_mut().into_iter().for_each(|s| s.fill(0.0));
    let dks = params.backward_unchecked(ks, dlogits, &mut grads);
    Ok((grads, dks))
}

/// Upper bound on `(d_k+1)^V · h` terms the brute-force evaluator accepts.
pub const MVM_BRUTEFORCE_LIMIT: usize = 1_000_000;

/// Multi-view machine by explicit summation over every index tuple
/// `(i_1, …, i_V)` of the augmented inputs `[k^(v);1]`, with the weight tensor
/// entry `ω_{i_1..i_V} = Σ_f Π_v U^(v)[f, i_v]` materialized per tuple.
/// Reference semantics for the factorized forward pass; small inputs only.
pub fn mvm_bruteforce(params: &HeadParams, ks: &[Vec<f64>]) -> Result<Vec<f64>> {
    let HeadParams::Mvm(p) = params else {
        return Err(Error::Config("mvm_bruteforce needs DMVM parameters".into()));
    };
    params.check_inputs(ks)?;
    let augmented: Vec<Vec<f64>> = ks
        .iter()
        .map(|k| k.iter().copied().chain(std::iter::once(1.0)).collect())
        .collect();
    let units = p
        .factors
        .first()
        .and_then(|pv| pv.first())
        .map_or(0, DenseMatrix::rows);
    let combos = augmented
        .iter()
        .try_fold(1usize, |acc, a| acc.checked_mul(a.len()))
        .and_then(|n| n.checked_mul(units.max(1)));
    match combos {
        Some(n) if n <= MVM_BRUTEFORCE_LIMIT => {}
        _ => {
            return Err(Error::Config(format!(
                "brute-force multi-view machine limited to {MVM_BRUTEFORCE_LIMIT} terms"
            )))
        }
    }

    let views = augmented.len();
    let mut out = Vec::with_capacity(p.factors.len());
    for per_view in &p.factors {
        let mut idx = vec![0usize; views];
        let mut total = 0.0;
        'tuples: loop {
            let omega: f64 = (0..units)
                .map(|f| (0..views).map(|v| per_view[v].get(f, idx[v])).product::<f64>())
                .sum();
            let x: f64 = (0..views).map(|v| augmented[v][idx[v]]).product();
            total += omega * x;
            for v in (0..views).rev() {
                idx[v] += 1;
                if idx[v] < augmented[v].len() {
                    continue 'tuples;
                }
                idx[v] = 0;
            }
            break;
        }
        out.push(total);
    }
    Ok(out)
}
