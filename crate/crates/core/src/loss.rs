//! Class-weighted cross-entropy on raw logits.

use alloc::vec::Vec;

use crate::tensor::Tensor;
use crate::{Error, Result};

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(logits.iter().map(|z| libm::exp(z - max)).sum::<f64>());
    logits.iter().map(|z| z - lse).collect()
}

fn check(logits: usize, target: usize, weights: &[f64]) -> Result<()> {
    if target >= logits {
        return Err(Error::TargetOutOfRange { index: target, classes: logits });
    }
    if weights.len() != logits {
        return Err(Error::LengthMismatch(weights.len(), logits));
    }
    Ok(())
}

/// `weights[target] × (−log softmax(logits)[target])`.
pub fn weighted_cross_entropy(logits: &[f64], target: usize, weights: &[f64]) -> Result<f64> {
    check(logits.len(), target, weights)?;
    Ok(-weights[target] * log_softmax(logits)[target])
}

/// Loss and its gradient with respect to the logits,
/// `weights[target] × (softmax(logits) − onehot(target))`.
pub fn weighted_cross_entropy_grad(logits: &[f64], target: usize, weights: &[f64]) -> Result<(f64, Vec<f64>)> {
    check(logits.len(), target, weights)?;
    let lp = log_softmax(logits);
    let w = weights[target];
    let grad = lp
        .iter()
        .enumerate()
        .map(|(i, l)| w * (libm::exp(*l) - if i == target { 1.0 } else { 0.0 }))
        .collect();
    Ok((-w * lp[target], grad))
}

/// Batch loss `Σ w_i·nll_i / Σ w_i` over logits `(N, C)` and its gradient.
pub fn batch_loss(logits: &Tensor, targets: &[usize], weights: &[f64]) -> Result<(f64, Tensor)> {
    let n = targets.len();
    if n == 0 {
        return Err(Error::EmptyInput("batch"));
    }
    let c = logits.len() / n;
    if logits.len() != n * c || logits.shape()[0] != n {
        return Err(Error::LengthMismatch(logits.shape()[0], n));
    }
    let mut total = 0.0;
    let mut wsum = 0.0;
    let mut grad = Vec::with_capacity(n * c);
    for (row, &t) in logits.data().chunks(c).zip(targets) {
        let z: Vec<f64> = row.iter().map(|v| *v as f64).collect();
        let (l, g) = weighted_cross_entropy_grad(&z, t, weights)?;
        total += l;
        wsum += weights[t];
        grad.extend(g);
    }
    let grad = grad.into_iter().map(|g| (g / wsum) as f32).collect();
    Ok((total / wsum, Tensor::from_vec(logits.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use alloc::vec;

    #[test]
    fn uniform_logits() {
        let ln3 = libm::log(3.0);
        for t in 0..3 {
            assert!((weighted_cross_entropy(&[0.0; 3], t, &[1.0; 3]).unwrap() - ln3).abs() < 1e-15);
        }
        let w = [440.0 / 448.0, 1.0, 440.0 / 123.0];
        let l = weighted_cross_entropy(&[0.0; 3], 2, &w).unwrap();
        assert!((l - 440.0 / 123.0 * ln3).abs() < 1e-12);
        assert!((l - 3.929_995_18).abs() < 1e-7);
    }

    #[test]
    fn errors() {
        assert_eq!(
            weighted_cross_entropy(&[0.0; 3], 3, &[1.0; 3]),
            Err(Error::TargetOutOfRange { index: 3, classes: 3 })
        );
        assert_eq!(weighted_cross_entropy(&[0.0; 3], 0, &[1.0; 2]), Err(Error::LengthMismatch(2, 3)));
    }

    #[test]
    fn large_logits_stay_finite() {
        let l = weighted_cross_entropy(&[1000.0, -1000.0], 1, &[1.0, 1.0]).unwrap();
        assert!((l - 2000.0).abs() < 1e-9);
        assert_eq!(weighted_cross_entropy(&[1000.0, -1000.0], 0, &[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::seed(11);
        for _ in 0..50 {
            let c = 2 + rng.index(5);
            let z: Vec<f64> = (0..c).map(|_| rng.uniform_f64(-3.0, 3.0)).collect();
            let w: Vec<f64> = (0..c).map(|_| rng.uniform_f64(0.1, 4.0)).collect();
            let t = rng.index(c);
            let (_, g) = weighted_cross_entropy_grad(&z, t, &w).unwrap();
            for i in 0..c {
                let h = 1e-6;
                let mut zp = z.clone();
                zp[i] += h;
                let mut zm = z.clone();
                zm[i] -= h;
                let fd = (weighted_cross_entropy(&zp, t, &w).unwrap() - weighted_cross_entropy(&zm, t, &w).unwrap())
                    / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1e-3));
            }
        }
    }

    #[test]
    fn batch_reduction_is_weighted_mean() {
        let logits = Tensor::from_vec(&[2, 2], vec![0.0, 0.0, 2.0, 0.0]).unwrap();
        let w = [1.0, 3.0];
        let (l, g) = batch_loss(&logits, &[0, 1], &w).unwrap();
        let l0 = weighted_cross_entropy(&[0.0, 0.0], 0, &w).unwrap();
        let l1 = weighted_cross_entropy(&[2.0, 0.0], 1, &w).unwrap();
        assert!((l - (l0 + l1) / 4.0).abs() < 1e-12);
        assert_eq!(g.shape(), &[2, 2]);
        // Rows of the gradient sum to zero.
        assert!((g.data()[0] + g.data()[1]).abs() < 1e-7);
        let (u, _) = batch_loss(&logits, &[0, 1], &[1.0, 1.0]).unwrap();
        let plain = (libm::log(2.0) + (2.0 + libm::log(1.0 + libm::exp(-2.0)))) / 2.0;
        assert!((u - plain).abs() < 1e-12);
    }
}
