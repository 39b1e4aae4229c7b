//! Median-frequency class weights.

use alloc::vec::Vec;

use crate::{Error, Result};

/// One positive weight per class, in schema order.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    /// All-ones weights, i.e. plain cross-entropy.
    pub fn uniform(classes: usize) -> Self {
        Self(alloc::vec![1.0; classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Median of the counts; the mean of the two middle values for even lengths.
pub fn median(counts: &[usize]) -> f64 {
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    }
}

/// `weight_c = median(counts) / counts_c`. Frequencies and counts give the
/// same weights since the total cancels.
pub fn compute_class_weights(counts: &[usize]) -> Result<ClassWeights> {
    if counts.is_empty() {
        return Err(Error::EmptyInput("class counts"));
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::ZeroCount(c));
    }
    let m = median(counts);
    Ok(ClassWeights(counts.iter().map(|&n| m / n as f64).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn elevation_counts() {
        let w = compute_class_weights(&[448, 440, 123]).unwrap();
        assert_eq!(w.0, [440.0 / 448.0, 1.0, 440.0 / 123.0]);
        assert!((w.0[0] - 0.982142857142857).abs() < 1e-12);
        assert!((w.0[2] - 3.577235772357723).abs() < 1e-12);
    }

    #[test]
    fn balanced_and_even_length() {
        assert_eq!(compute_class_weights(&[10, 10, 10]).unwrap().0, [1.0, 1.0, 1.0]);
        let w = compute_class_weights(&[1, 2, 3, 4]).unwrap().0;
        let want = [2.5, 1.25, 2.5 / 3.0, 0.625];
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_count_rejected() {
        assert_eq!(compute_class_weights(&[3, 0, 1]), Err(Error::ZeroCount(1)));
        assert_eq!(compute_class_weights(&[]), Err(Error::EmptyInput("class counts")));
    }

    proptest! {
        #[test]
        fn weight_times_count_is_the_median(counts in prop::collection::vec(1usize..5000, 1..9)) {
            let w = compute_class_weights(&counts).unwrap();
            let m = median(&counts);
            for (wc, &n) in w.0.iter().zip(&counts) {
                prop_assert!((wc * n as f64 - m).abs() <= 1e-9 * m);
                prop_assert!(*wc > 0.0);
            }
            if counts.len() % 2 == 1 {
                let i = counts.iter().position(|&n| n as f64 == m).unwrap();
                prop_assert_eq!(w.0[i], 1.0);
            }
        }
    }
}
