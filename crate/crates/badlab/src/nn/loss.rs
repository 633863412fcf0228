//! Loss functions with their input gradients.

use ndarray::{Array2, Array4, Axis};

/// Numerically stable row softmax.
pub fn softmax(logits: &Array2<f32>) -> Array2<f32> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f32 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean cross-entropy over the batch plus the gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Array2<f32>, labels: &[u8]) -> (f32, Array2<f32>) {
    let n = logits.dim().0;
    assert_eq!(n, labels.len(), "batch/label length mismatch");
    let probs = softmax(logits);
    let mut loss = 0.0f64;
    let mut grad = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        let p = probs[(i, y as usize)].max(1e-12);
        loss -= (p as f64).ln();
        grad[(i, y as usize)] -= 1.0;
    }
    grad.mapv_inplace(|v| v / n as f32);
    ((loss / n as f64) as f32, grad)
}

/// Mean squared error over every element, with the gradient w.r.t. `a`.
pub fn mse(a: &Array4<f32>, b: &Array4<f32>) -> (f32, Array4<f32>) {
    assert_eq!(a.dim(), b.dim(), "mse shape mismatch");
    let count = a.len() as f64;
    let mut loss = 0.0f64;
    let mut grad = a.clone();
    ndarray::Zip::from(&mut grad).and(b).for_each(|ga, &bv| {
        let d = *ga - bv;
        loss += (d as f64) * (d as f64);
        *ga = 2.0 * d / count as f32;
    });
    ((loss / count) as f32, grad)
}

/// Closed-form KL(N(mu, exp(logvar)) || N(0, I)) averaged over the batch,
/// `0.5 * sum(exp(logvar) + mu^2 - 1 - logvar) / N`, with gradients.
pub fn kl_standard_normal(mu: &Array2<f32>, logvar: &Array2<f32>) -> (f32, Array2<f32>, Array2<f32>) {
    assert_eq!(mu.dim(), logvar.dim());
    let n = mu.dim().0 as f32;
    let mut kl = 0.0f64;
    let gmu = mu.mapv(|m| m / n);
    let mut glv = logvar.clone();
    ndarray::Zip::from(&mut glv).and(mu).for_each(|lv, &m| {
        let e = (*lv).exp();
        kl += 0.5 * (e + m * m - 1.0 - *lv) as f64;
        *lv = 0.5 * (e - 1.0) / n;
    });
    ((kl as f32) / n, gmu, glv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ce_of_correct_onehot_is_small() {
        let logits = array![[10.0f32, 0.0, 0.0], [0.0, 10.0, 0.0]];
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 1]);
        assert!(loss < 1e-3);
        assert!(grad.iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn ce_gradient_matches_fd() {
        let mut logits = array![[0.3f32, -0.4, 1.2], [0.0, 0.5, -0.2]];
        let labels = [2u8, 0];
        let (_, grad) = softmax_cross_entropy(&logits, &labels);
        let eps = 1e-3f32;
        for idx in [(0usize, 0usize), (1, 2), (0, 2)] {
            let orig = logits[idx];
            logits[idx] = orig + eps;
            let (lp, _) = softmax_cross_entropy(&logits, &labels);
            logits[idx] = orig - eps;
            let (lm, _) = softmax_cross_entropy(&logits, &labels);
            logits[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!((grad[idx] - fd).abs() < 1e-3);
        }
    }

    #[test]
    fn mse_constant_offset() {
        let a = Array4::from_elem((2, 1, 2, 2), 0.6f32);
        let b = Array4::from_elem((2, 1, 2, 2), 0.5f32);
        let (loss, _) = mse(&a, &b);
        assert!((loss - 0.01).abs() < 1e-6);
    }

    #[test]
    fn kl_zero_at_prior() {
        let mu = Array2::<f32>::zeros((3, 4));
        let lv = Array2::<f32>::zeros((3, 4));
        let (kl, gmu, glv) = kl_standard_normal(&mu, &lv);
        assert_eq!(kl, 0.0);
        assert!(gmu.iter().all(|&v| v == 0.0));
        assert!(glv.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kl_matches_hand_formula() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mu = Array2::from_shape_fn((2, 4), |_| rng.random::<f32>() - 0.5);
        let lv = Array2::from_shape_fn((2, 4), |_| rng.random::<f32>() - 0.5);
        let (kl, _, _) = kl_standard_normal(&mu, &lv);
        let mut want = 0.0f64;
        for i in 0..2 {
            for j in 0..4 {
                let (m, l) = (mu[(i, j)] as f64, lv[(i, j)] as f64);
                want += 0.5 * (l.exp() + m * m - 1.0 - l);
            }
        }
        want /= 2.0;
        assert!((kl as f64 - want).abs() < 1e-6);
    }

    #[test]
    fn kl_non_negative_property() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let mu = Array2::from_shape_fn((1, 8), |_| (rng.random::<f32>() - 0.5) * 6.0);
            let lv = Array2::from_shape_fn((1, 8), |_| (rng.random::<f32>() - 0.5) * 6.0);
            let (kl, _, _) = kl_standard_normal(&mu, &lv);
            assert!(kl >= 0.0, "KL must be non-negative, got {kl}");
        }
    }

    use ndarray::{Array2, Array4};
}
