//! Pooling and loss primitives with their gradients.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Lower clamp for probabilities fed to logarithms.
pub const PROB_FLOOR: f64 = 1e-6;

/// Element-wise maximum over the rows of `embeddings`, with the winning row
/// per coordinate (first on ties). An empty set pools to zeros and has no
/// winners.
pub fn maxpool_set(embeddings: ArrayView2<f64>) -> (Array1<f64>, Vec<usize>) {
    let d = embeddings.ncols();
    if embeddings.nrows() == 0 {
        return (Array1::zeros(d), Vec::new());
    }
    let mut out = embeddings.row(0).to_vec();
    let mut arg = vec![0usize; d];
    for (r, row) in embeddings.rows().into_iter().enumerate().skip(1) {
        for ((o, a), &v) in out.iter_mut().zip(arg.iter_mut()).zip(row.iter()) {
            if v > *o {
                *o = v;
                *a = r;
            }
        }
    }
    (Array1::from(out), arg)
}

/// Rows of a ragged batch of sets: set `b` owns rows `offsets[b]..offsets[b+1]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SetBatch {
    pub rows: Array2<f64>,
    pub offsets: Vec<usize>,
}

impl SetBatch {
    pub fn empty(batch: usize, width: usize) -> Self {
        SetBatch {
            rows: Array2::zeros((0, width)),
            offsets: vec![0; batch + 1],
        }
    }

    pub fn batch_len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn check(&self) -> Result<()> {
        let ok = self.offsets.first() == Some(&0)
            && self.offsets.windows(2).all(|w| w[0] <= w[1])
            && self.offsets.last() == Some(&self.rows.nrows());
        if ok {
            Ok(())
        } else {
            Err(Error::Shape {
                layer: 0,
                msg: "set offsets do not partition the rows".into(),
            })
        }
    }
}

/// Max-pool of each set in a ragged batch. `argmax[b][j]` is the absolute
/// row index of the winner, or `None` for an empty set.
pub fn segment_maxpool(rows: ArrayView2<f64>, offsets: &[usize]) -> (Array2<f64>, Vec<Vec<Option<usize>>>) {
    let b = offsets.len() - 1;
    let d = rows.ncols();
    let mut out = Array2::zeros((b, d));
    let mut arg = Vec::with_capacity(b);
    for s in 0..b {
        let (lo, hi) = (offsets[s], offsets[s + 1]);
        let (pooled, local) = maxpool_set(rows.slice(ndarray::s![lo..hi, ..]));
        out.row_mut(s).assign(&pooled);
        arg.push(if hi > lo {
            local.into_iter().map(|r| Some(lo + r)).collect()
        } else {
            vec![None; d]
        });
    }
    (out, arg)
}

/// Pooled values of [`segment_maxpool`] without the winners.
pub fn segment_max(rows: ArrayView2<f64>, offsets: &[usize]) -> Array2<f64> {
    let b = offsets.len() - 1;
    let mut out = Array2::zeros((b, rows.ncols()));
    for (s, mut dst) in out.rows_mut().into_iter().enumerate() {
        let (lo, hi) = (offsets[s], offsets[s + 1]);
        if hi == lo {
            continue;
        }
        dst.assign(&rows.row(lo));
        for r in lo + 1..hi {
            dst.zip_mut_with(&rows.row(r), |o, &v| {
                if v > *o {
                    *o = v;
                }
            });
        }
    }
    out
}

/// Routes pooled gradients back to the winning rows.
pub fn segment_maxpool_backward(grad: ArrayView2<f64>, argmax: &[Vec<Option<usize>>], n_rows: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n_rows, grad.ncols()));
    for (s, arg) in argmax.iter().enumerate() {
        for (j, r) in arg.iter().enumerate() {
            if let Some(r) = r {
                out[[*r, j]] += grad[[s, j]];
            }
        }
    }
    out
}

/// Log-softmax over the first `valid` logits; later entries are masked out
/// and get `-inf`.
pub fn log_softmax_masked(logits: ArrayView1<f64>, valid: usize) -> Array1<f64> {
    let valid = valid.min(logits.len());
    let m = logits.iter().take(valid).copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().take(valid).map(|&z| (z - m).exp()).sum::<f64>().ln();
    logits
        .iter()
        .enumerate()
        .map(|(i, &z)| if i < valid { z - lse } else { f64::NEG_INFINITY })
        .collect()
}

pub fn log_softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    log_softmax_masked(logits, logits.len())
}

/// Negative log-likelihood of `label` under the softmax of `logits` and its
/// gradient `softmax - onehot`.
pub fn softmax_nll(logits: ArrayView1<f64>, label: usize) -> Result<(f64, Array1<f64>)> {
    softmax_nll_masked(logits, logits.len(), label)
}

/// As [`softmax_nll`] with classes at or beyond `valid` masked out; masked
/// logits receive zero gradient.
pub fn softmax_nll_masked(logits: ArrayView1<f64>, valid: usize, label: usize) -> Result<(f64, Array1<f64>)> {
    let classes = valid.min(logits.len());
    if label >= classes {
        return Err(Error::BadLabel { label, classes });
    }
    let lp = log_softmax_masked(logits, classes);
    let mut grad: Array1<f64> = lp.mapv(|l| if l.is_finite() { l.exp() } else { 0.0 });
    grad[label] -= 1.0;
    Ok((-lp[label], grad))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]`, with the derivative
/// of the clamped function (zero on the flat parts).
pub fn clamped_sigmoid(z: f64) -> (f64, f64) {
    let p = sigmoid(z);
    if p < PROB_FLOOR {
        (PROB_FLOOR, 0.0)
    } else if p > 1.0 - PROB_FLOOR {
        (1.0 - PROB_FLOOR, 0.0)
    } else {
        (p, p * (1.0 - p))
    }
}

/// Binary cross-entropy of the clamped sigmoid against `target` in [0, 1],
/// and its derivative with respect to the logit.
pub fn bce(logit: f64, target: f64) -> (f64, f64) {
    let (p, dp) = clamped_sigmoid(logit);
    let loss = -(target * p.ln() + (1.0 - target) * (1.0 - p).ln());
    let dloss_dp = -(target / p) + (1.0 - target) / (1.0 - p);
    (loss, dloss_dp * dp)
}

/// `log p` of the clamped sigmoid and its derivative with respect to the logit.
pub fn log_clamped_sigmoid(logit: f64) -> (f64, f64) {
    let (p, dp) = clamped_sigmoid(logit);
    (p.ln(), dp / p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::{array, Array};
    use proptest::prelude::*;
    use rand::Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn maxpool_examples() {
        let (v, idx) = maxpool_set(array![[1.0, 5.0], [3.0, 2.0]].view());
        assert_eq!(v, array![3.0, 5.0]);
        assert_eq!(idx, vec![1, 0]);
        let (v, _) = maxpool_set(array![[0.2, -1.0]].view());
        assert_eq!(v, array![0.2, -1.0]);
        let (v, idx) = maxpool_set(Array2::<f64>::zeros((0, 3)).view());
        assert_eq!(v, Array1::<f64>::zeros(3));
        assert!(idx.is_empty());
    }

    #[test]
    fn maxpool_gradient_only_reaches_argmax() {
        let mut rng = stream(3, &[]);
        let rows = Array2::from_shape_simple_fn((7, 4), || rng.random_range(-1.0..1.0));
        let offsets = [0, 3, 3, 7];
        let (_, arg) = segment_maxpool(rows.view(), &offsets);
        let up = Array2::from_shape_simple_fn((3, 4), || rng.random_range(-1.0..1.0));
        let g = segment_maxpool_backward(up.view(), &arg, 7);
        let objective = |r: &Array2<f64>| (segment_maxpool(r.view(), &offsets).0 * &up).sum();
        let h = 1e-5;
        for i in 0..7 {
            for j in 0..4 {
                let winner = arg.iter().any(|a| a[j] == Some(i));
                if !winner {
                    assert_eq!(g[[i, j]], 0.0);
                    let mut p = rows.clone();
                    p[[i, j]] += h;
                    assert_eq!(objective(&p), objective(&rows));
                }
                let mut p = rows.clone();
                p[[i, j]] += h;
                let mut m = rows.clone();
                m[[i, j]] -= h;
                let fd = (objective(&p) - objective(&m)) / (2.0 * h);
                assert!((fd - g[[i, j]]).abs() <= 1e-5 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let (loss, _) = softmax_nll(Array1::zeros(147).view(), 5).unwrap();
        assert!((loss - 147f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logit_gives_zero_loss() {
        let mut z = Array1::zeros(10);
        z[2] = 1e4;
        let (loss, _) = softmax_nll(z.view(), 2).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn bad_label_rejected() {
        assert!(matches!(
            softmax_nll(Array1::zeros(3).view(), 3),
            Err(Error::BadLabel { label: 3, classes: 3 })
        ));
        assert!(softmax_nll_masked(Array1::zeros(5).view(), 2, 3).is_err());
    }

    #[test]
    fn single_valid_class_has_zero_loss() {
        let z = array![0.3, 9.0, -2.0];
        let (loss, g) = softmax_nll_masked(z.view(), 1, 0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_nll_gradient_matches_finite_differences() {
        let mut rng = stream(4, &[]);
        for trial in 0..20 {
            let z: Array1<f64> = Array::from_shape_simple_fn(12, || rng.random_range(-3.0..3.0));
            let valid = if trial % 2 == 0 { 12 } else { 7 };
            let label = trial % valid;
            let (_, g) = softmax_nll_masked(z.view(), valid, label).unwrap();
            for k in 0..12 {
                let h = 1e-5;
                let mut p = z.clone();
                p[k] += h;
                let mut m = z.clone();
                m[k] -= h;
                let fd = (softmax_nll_masked(p.view(), valid, label).unwrap().0
                    - softmax_nll_masked(m.view(), valid, label).unwrap().0)
                    / (2.0 * h);
                assert!(rel(fd, g[k]) < 1e-5 || (fd - g[k]).abs() < 1e-10, "{fd} {}", g[k]);
            }
        }
    }

    #[test]
    fn bce_and_log_sigmoid_gradients() {
        for &z in &[-5.0, -1.2, 0.0, 0.4, 3.3] {
            for &t in &[0.0, 1.0, 0.3] {
                let h = 1e-5;
                let (_, g) = bce(z, t);
                let fd = (bce(z + h, t).0 - bce(z - h, t).0) / (2.0 * h);
                assert!(rel(fd, g) < 1e-5, "{z} {t}: {fd} {g}");
            }
            let (_, g) = log_clamped_sigmoid(z);
            let fd = (log_clamped_sigmoid(z + 1e-5).0 - log_clamped_sigmoid(z - 1e-5).0) / 2e-5;
            assert!(rel(fd, g) < 1e-5);
        }
        assert_eq!(clamped_sigmoid(40.0), (1.0 - PROB_FLOOR, 0.0));
        assert_eq!(clamped_sigmoid(-40.0), (PROB_FLOOR, 0.0));
        assert!((bce(0.0, 1.0).0 + bce(0.0, 0.0).0 - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn softmax_nll_shift_invariant(
            z in proptest::collection::vec(-20.0f64..20.0, 2..40),
            shift in -100.0f64..100.0,
            pick in 0usize..1000,
        ) {
            let label = pick % z.len();
            let a = Array1::from(z.clone());
            let b = a.mapv(|v| v + shift);
            let la = softmax_nll(a.view(), label).unwrap().0;
            let lb = softmax_nll(b.view(), label).unwrap().0;
            prop_assert!((la - lb).abs() < 1e-9);
        }

        #[test]
        fn log_probs_normalise(z in proptest::collection::vec(-30.0f64..30.0, 1..160)) {
            let lp = log_softmax(Array1::from(z).view());
            let total: f64 = lp.iter().map(|l| l.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }
}
