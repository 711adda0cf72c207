//! Library kernels against straightforward re-derivations written here.

use moodfed::heads::{DnnHead, FmHead, MvmHead};
use moodfed::{
    gru_backward, gru_forward, mvm_bruteforce, DenseMatrix, GruParams, HeadKind, HeadParams, OptimizerConfig,
    OptimizerState, RngStream, ViewKind, ViewSequence,
};

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mat_vec(m: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|r| (0..x.len()).map(|c| m.get(r, c) * x[c]).sum())
        .collect()
}

/// The textbook GRU recurrence, one gate at a time.
fn gru_reference(p: &GruParams, steps: &[Vec<f64>]) -> Vec<f64> {
    let mut h = vec![0.0; p.hidden_dim];
    for x in steps {
        let wzx = mat_vec(&p.wz, x);
        let uzh = mat_vec(&p.uz, &h);
        let wrx = mat_vec(&p.wr, x);
        let urh = mat_vec(&p.ur, &h);
        let z: Vec<f64> = (0..h.len()).map(|i| sig(wzx[i] + uzh[i] + p.bz[i])).collect();
        let r: Vec<f64> = (0..h.len()).map(|i| sig(wrx[i] + urh[i] + p.br[i])).collect();
        let rh: Vec<f64> = (0..h.len()).map(|i| r[i] * h[i]).collect();
        let whx = mat_vec(&p.wh, x);
        let uhrh = mat_vec(&p.uh, &rh);
        let cand: Vec<f64> = (0..h.len()).map(|i| (whx[i] + uhrh[i] + p.bh[i]).tanh()).collect();
        h = (0..h.len()).map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i]).collect();
    }
    h
}

fn random_gru(input: usize, hidden: usize, rng: &mut RngStream) -> GruParams {
    let mut p = GruParams::random(input, hidden, rng);
    for b in [&mut p.bz, &mut p.br, &mut p.bh] {
        b.iter_mut().for_each(|v| *v = rng.uniform_range(-0.5, 0.5));
    }
    p
}

fn random_steps(view: ViewKind, len: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
    (0..len)
        .map(|_| (0..view.feature_dim()).map(|_| rng.uniform_range(-2.0, 2.0)).collect())
        .collect()
}

#[test]
fn gru_forward_matches_reference() {
    let mut rng = RngStream::new(17, 0);
    for case in 0..30 {
        let view = ViewKind::ALL[case % 3];
        let hidden = 1 + case % 9;
        let p = random_gru(view.feature_dim(), hidden, &mut rng);
        let steps = random_steps(view, 1 + case * 3, &mut rng);
        let seq = ViewSequence::from_steps(view, &steps).unwrap();
        let (k, cache) = gru_forward(&p, &seq).unwrap();
        let expected = gru_reference(&p, &steps);
        for (a, b) in k.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12, "case {case}: {a} vs {b}");
        }
        assert_eq!(cache.len(), steps.len());
    }
}

#[test]
fn gru_backward_matches_reference_differences() {
    // L = w·h_T for a fixed w; central differences on the reference recurrence.
    let mut rng = RngStream::new(5, 1);
    for case in 0..6 {
        let view = ViewKind::ALL[case % 3];
        let p = random_gru(view.feature_dim(), 3, &mut rng);
        let steps = random_steps(view, 4 + case, &mut rng);
        let w: Vec<f64> = (0..3).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let seq = ViewSequence::from_steps(view, &steps).unwrap();
        let (_, cache) = gru_forward(&p, &seq).unwrap();
        let mut grads = GruParams::zeros(view.feature_dim(), 3);
        let dseq = gru_backward(&p, &cache, &w, &mut grads, true).unwrap().unwrap();

        let loss = |p: &GruParams, steps: &[Vec<f64>]| -> f64 {
            gru_reference(p, steps).iter().zip(&w).map(|(h, w)| h * w).sum()
        };
        let h = 1e-6;
        let mut probe = p.clone();
        for (block, analytic) in grads.slices().iter().enumerate() {
            for i in 0..analytic.len() {
                let orig = probe.slices()[block][i];
                probe.slices_mut()[block][i] = orig + h;
                let plus = loss(&probe, &steps);
                probe.slices_mut()[block][i] = orig - h;
                let minus = loss(&probe, &steps);
                probe.slices_mut()[block][i] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                assert!((analytic[i] - numeric).abs() < 1e-7, "case {case} block {block} index {i}");
            }
        }
        let width = view.feature_dim();
        for (t, step) in steps.iter().enumerate() {
            for j in 0..width {
                let mut s = steps.clone();
                s[t][j] = step[j] + h;
                let plus = loss(&p, &s);
                s[t][j] = step[j] - h;
                let minus = loss(&p, &s);
                assert!((dseq[t * width + j] - (plus - minus) / (2.0 * h)).abs() < 1e-7);
            }
        }
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

fn random_ks(views: usize, dk: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
    (0..views)
        .map(|_| (0..dk).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
        .collect()
}

#[test]
fn dnn_head_matches_reference() {
    let mut rng = RngStream::new(2, 2);
    for _ in 0..20 {
        let (views, dk, units) = (3, 4, 5);
        let head = DnnHead {
            w1: random_matrix(units, views * dk + 1, &mut rng),
            w2: random_matrix(2, units, &mut rng),
        };
        let ks = random_ks(views, dk, &mut rng);
        let k: Vec<f64> = ks.concat();
        let hidden: Vec<f64> = (0..units)
            .map(|u| {
                let pre: f64 = (0..k.len()).map(|i| head.w1.get(u, i) * k[i]).sum::<f64>() + head.w1.get(u, k.len());
                pre.max(0.0)
            })
            .collect();
        let expected = mat_vec(&head.w2, &hidden);
        let got = HeadParams::Dnn(head).forward(&ks).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn fm_head_matches_reference() {
    let mut rng = RngStream::new(3, 3);
    for _ in 0..20 {
        let (views, dk, factors) = (3, 3, 4);
        let d = views * dk;
        let head = FmHead {
            factors: (0..2).map(|_| random_matrix(factors, d, &mut rng)).collect(),
            linear: (0..2)
                .map(|_| (0..=d).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
                .collect(),
        };
        let ks = random_ks(views, dk, &mut rng);
        let k = ks.concat();
        let expected: Vec<f64> = (0..2)
            .map(|c| {
                let p = mat_vec(&head.factors[c], &k);
                let quad: f64 = p.iter().map(|v| v * v).sum();
                let lin: f64 = (0..d).map(|i| head.linear[c][i] * k[i]).sum::<f64>() + head.linear[c][d];
                quad + lin
            })
            .collect();
        let got = HeadParams::Fm(head).forward(&ks).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

/// Sum over every index tuple of the augmented inputs with the full weight
/// tensor, written independently of the library's brute force.
fn mvm_tensor_reference(factors: &[Vec<DenseMatrix>], ks: &[Vec<f64>]) -> Vec<f64> {
    let aug: Vec<Vec<f64>> = ks.iter().map(|k| [k.as_slice(), &[1.0]].concat()).collect();
    let sizes: Vec<usize> = aug.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().product();
    factors
        .iter()
        .map(|per_view| {
            let units = per_view[0].rows();
            (0..total)
                .map(|mut flat| {
                    let mut idx = vec![0; sizes.len()];
                    for v in (0..sizes.len()).rev() {
                        idx[v] = flat % sizes[v];
                        flat /= sizes[v];
                    }
                    let weight: f64 = (0..units)
                        .map(|f| (0..idx.len()).map(|v| per_view[v].get(f, idx[v])).product::<f64>())
                        .sum();
                    weight * (0..idx.len()).map(|v| aug[v][idx[v]]).product::<f64>()
                })
                .sum()
        })
        .collect()
}

#[test]
fn mvm_factorized_matches_tensor_sum() {
    let mut rng = RngStream::new(4, 4);
    for case in 0..40 {
        let views = 1 + case % 3;
        let dk = 1 + case % 3;
        let units = 1 + case % 4;
        let factors: Vec<Vec<DenseMatrix>> = (0..2)
            .map(|_| (0..views).map(|_| random_matrix(units, dk + 1, &mut rng)).collect())
            .collect();
        let ks = random_ks(views, dk, &mut rng);
        let head = HeadParams::Mvm(MvmHead {
            factors: factors.clone(),
        });
        let fast = head.forward(&ks).unwrap();
        let reference = mvm_tensor_reference(&factors, &ks);
        let brute = mvm_bruteforce(&head, &ks).unwrap();
        for ((a, b), c) in fast.iter().zip(&reference).zip(&brute) {
            assert!((a - b).abs() <= 1e-10, "case {case}");
            assert!((c - b).abs() <= 1e-10, "case {case}");
        }
    }
}

#[test]
fn head_zero_input_conventions() {
    let mut rng = RngStream::new(6, 6);
    let zeros = vec![vec![0.0; 4]; 3];
    let mvm = HeadParams::random(HeadKind::Dmvm, 3, 4, 3, 2, &mut rng);
    // only the all-bias tuple survives: Σ_f Π_v U^(v)[f, d_k]
    let HeadParams::Mvm(p) = &mvm else { unreachable!() };
    let expected: Vec<f64> = p
        .factors
        .iter()
        .map(|pv| (0..3).map(|f| pv.iter().map(|u| u.get(f, 4)).product::<f64>()).sum())
        .collect();
    let got = mvm.forward(&zeros).unwrap();
    for (a, b) in got.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn rmsprop_trace_matches_reference() {
    let cfg = OptimizerConfig::rmsprop(0.01);
    let mut state = OptimizerState::new(cfg, 3);
    let mut w = vec![0.5, -1.0, 2.0];
    let (mut w_ref, mut a_ref) = (w.clone(), vec![0.0; 3]);
    let mut rng = RngStream::new(8, 8);
    for _ in 0..25 {
        let g: Vec<f64> = (0..3).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
        state.step(&mut w, &g).unwrap();
        for i in 0..3 {
            a_ref[i] = 0.9 * a_ref[i] + 0.1 * g[i] * g[i];
            w_ref[i] -= 0.01 * g[i] / (a_ref[i].sqrt() + 1e-8);
        }
    }
    for (a, b) in w.iter().zip(&w_ref) {
        assert!((a - b).abs() < 1e-14);
    }
}
