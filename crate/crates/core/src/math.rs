//! Dense double-precision kernels.
//!
//! All reductions run left to right over the contiguous index, so results are
//! reproducible for a fixed input regardless of platform threading.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("DenseMatrix::from_vec", rows * cols, data.len())?;
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            check_dim("DenseMatrix::from_rows", cols, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Fill with `uniform(-a, a)` draws in row-major order.
    pub fn uniform(rows: usize, cols: usize, a: f64, rng: &mut RngStream) -> Self {
        let data = (0..rows * cols).map(|_| rng.uniform_range(-a, a)).collect();
        DenseMatrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `out = W·x` (or `W·[x;1]` when `bias` is set). Shapes are checked only
    /// in debug builds; callers validate once up front.
    #[inline]
    pub fn matvec_into(&self, x: &[f64], bias: bool, out: &mut [f64]) {
        debug_assert_eq!(self.cols, x.len() + usize::from(bias));
        debug_assert_eq!(self.rows, out.len());
        for (r, o) in out.iter_mut().enumerate() {
            let row = self.row(r);
            let mut acc = dot(&row[..x.len()], x);
            if bias {
                acc += row[x.len()];
            }
            *o = acc;
        }
    }

    /// `out += Wᵀ·y`, ignoring the trailing bias column when `bias` is set.
    #[inline]
    pub fn matvec_t_acc(&self, y: &[f64], bias: bool, out: &mut [f64]) {
        debug_assert_eq!(self.rows, y.len());
        debug_assert_eq!(self.cols, out.len() + usize::from(bias));
        let n = out.len();
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            let row = &self.row(r)[..n];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * yr;
            }
        }
    }

    /// `W += alpha · y·[x;1]ᵀ` (bias column only when `bias` is set).
    #[inline]
    pub fn outer_acc(&mut self, y: &[f64], x: &[f64], bias: bool) {
        debug_assert_eq!(self.rows, y.len());
        debug_assert_eq!(self.cols, x.len() + usize::from(bias));
        let n = x.len();
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            let row = self.row_mut(r);
            for (w, &xv) in row[..n].iter_mut().zip(x) {
                *w += yr * xv;
            }
            if bias {
                row[n] += yr;
            }
        }
    }
}

/// Sequential dot product.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `W·[x;1]` when `append_bias_one`, else `W·x`.
pub fn affine(w: &DenseMatrix, x: &[f64], append_bias_one: bool) -> Result<Vec<f64>> {
    check_dim("affine", w.cols(), x.len() + usize::from(append_bias_one))?;
    let mut out = vec![0.0; w.rows()];
    w.matvec_into(x, append_bias_one, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => tanh(x),
        }
    }
}

pub fn activations(x: &[f64], kind: Activation) -> Vec<f64> {
    x.iter().map(|&v| kind.apply(v)).collect()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    // exp overflows to +inf for x < -709, giving an exact 0
    1.0 / (1.0 + (-x).exp())
}

/// `tanh` through one `exp`, about twice as fast as `f64::tanh`; absolute
/// error stays within a few ulps of 1.
#[inline]
pub fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

/// Returns `(−log softmax(logits)[label], softmax(logits) − onehot(label))`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if logits.len() < 2 {
        return Err(Error::Config(format!(
            "softmax needs at least 2 classes, got {}",
            logits.len()
        )));
    }
    if label >= logits.len() {
        return Err(Error::Config(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    let loss = sum.ln() - (logits[label] - max);
    probs.iter_mut().for_each(|p| *p /= sum);
    probs[label] -= 1.0;
    Ok((loss, probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn tanh_and_sigmoid_match_std() {
        for i in -4000..=4000 {
            let x = i as f64 / 200.0;
            assert!((tanh(x) - x.tanh()).abs() <= 4.0 * f64::EPSILON, "{x}");
            let reference = 0.5 * (1.0 + (0.5 * x).tanh());
            assert!((sigmoid(x) - reference).abs() <= 4.0 * f64::EPSILON, "{x}");
        }
        assert_eq!(tanh(0.0), 0.0);
        assert_eq!(tanh(800.0), 1.0);
        assert_eq!(tanh(-800.0), -1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn affine_examples() {
        assert_eq!(affine(&m(&[&[1., 2.], &[3., 4.]]), &[1., 1.], false).unwrap(), vec![3., 7.]);
        assert_eq!(affine(&DenseMatrix::zeros(2, 3), &[5., 9.], true).unwrap(), vec![0., 0.]);
        assert_eq!(affine(&m(&[&[1., 0., 2.]]), &[3., 4.], true).unwrap(), vec![5.]);
    }

    #[test]
    fn affine_rejects_bad_shape() {
        let err = affine(&DenseMatrix::zeros(2, 2), &[1., 2.], true).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn activation_examples() {
        assert_eq!(activations(&[-1., 2., 0.], Activation::Relu), vec![0., 2., 0.]);
        assert_eq!(activations(&[0.], Activation::Sigmoid), vec![0.5]);
        assert_eq!(activations(&[0.], Activation::Tanh), vec![0.]);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn cross_entropy_symmetric() {
        let (loss, d) = softmax_cross_entropy(&[0., 0.], 0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(d, vec![-0.5, 0.5]);
    }

    #[test]
    fn cross_entropy_stable() {
        let (loss, d) = softmax_cross_entropy(&[1000., 0.], 0).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-300_f64.max(1e-12));
        assert!(d.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cross_entropy_high_precision_value() {
        // log(1 + e^0.5), evaluated with mpmath at 50 digits.
        let (loss, _) = softmax_cross_entropy(&[0.3, -0.2], 1).unwrap();
        assert!((loss - 0.974_076_984_180_106_6).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        assert!(softmax_cross_entropy(&[0., 0.], 2).is_err());
        assert!(softmax_cross_entropy(&[0.], 0).is_err());
    }

    #[test]
    fn cross_entropy_matches_finite_differences() {
        let logits = [0.7, -1.3, 0.25];
        for label in 0..3 {
            let (_, d) = softmax_cross_entropy(&logits, label).unwrap();
            for i in 0..3 {
                let h = 1e-6;
                let mut lp = logits;
                let mut lm = logits;
                lp[i] += h;
                lm[i] -= h;
                let fd = (softmax_cross_entropy(&lp, label).unwrap().0
                    - softmax_cross_entropy(&lm, label).unwrap().0)
                    / (2.0 * h);
                let rel = (fd - d[i]).abs() / d[i].abs().max(fd.abs());
                assert!(rel < 1e-6, "label {label} coord {i}: rel {rel}");
            }
        }
    }

    proptest! {
        #[test]
        fn affine_is_linear(
            w in proptest::collection::vec(-2.0f64..2.0, 6),
            x in proptest::collection::vec(-2.0f64..2.0, 3),
            y in proptest::collection::vec(-2.0f64..2.0, 3),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let w = DenseMatrix::from_vec(2, 3, w).unwrap();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = affine(&w, &mix, false).unwrap();
            let fx = affine(&w, &x, false).unwrap();
            let fy = affine(&w, &y, false).unwrap();
            for i in 0..2 {
                prop_assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() <= 1e-12);
            }
        }
    }
}
