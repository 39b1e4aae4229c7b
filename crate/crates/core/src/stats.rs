//! Paired comparison of two classifiers: McNemar's mid-p test on argmax
//! correctness, Cohen's d across repeated runs, and mean ± std aggregation.

use alloc::vec::Vec;

use crate::metrics::{MetricKind, MetricReport};
use crate::{Error, Result};

/// Outcome of McNemar's mid-p test. `b` counts items only model A gets
/// right, `c` items only model B gets right.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McNemar {
    pub b: usize,
    pub c: usize,
    pub midp: f64,
}

/// `P(X = i)` for `i = 0..=k` with `X ~ Binomial(n, 1/2)`.
fn half_binomial_pmf(n: usize, k: usize) -> Vec<f64> {
    if n <= 1000 {
        // C(n, i) stays below f64::MAX up to n = 1029 and the scaling by
        // 2^-n stays normal, so the terms are exact to rounding.
        let scale = libm::ldexp(1.0, -(n as i32));
        let mut coef = 1.0f64;
        let mut out = Vec::with_capacity(k + 1);
        for i in 0..=k {
            out.push(coef * scale);
            coef = coef * (n - i) as f64 / (i + 1) as f64;
        }
        out
    } else {
        let ln2n = n as f64 * core::f64::consts::LN_2;
        let lnf = |m: usize| libm::lgamma(m as f64 + 1.0);
        (0..=k).map(|i| libm::exp(lnf(n) - lnf(i) - lnf(n - i) - ln2n)).collect()
    }
}

/// Two-sided mid-p value from the discordant counts:
/// `2·P(X ≤ min(b, c)) − P(X = min(b, c))`, clamped to `[0, 1]`.
pub fn midp_from_counts(b: usize, c: usize) -> Result<f64> {
    let n = b + c;
    if n == 0 {
        return Err(Error::NoDiscordantPairs);
    }
    let k = b.min(c);
    let pmf = half_binomial_pmf(n, k);
    let cdf: f64 = pmf.iter().sum();
    Ok((2.0 * cdf - pmf[k]).clamp(0.0, 1.0))
}

/// McNemar's mid-p test on paired per-item correctness.
pub fn mcnemar_midp(correct_a: &[bool], correct_b: &[bool]) -> Result<McNemar> {
    if correct_a.len() != correct_b.len() {
        return Err(Error::LengthMismatch(correct_a.len(), correct_b.len()));
    }
    let b = correct_a.iter().zip(correct_b).filter(|(a, b)| **a && !**b).count();
    let c = correct_a.iter().zip(correct_b).filter(|(a, b)| !**a && **b).count();
    Ok(McNemar { b, c, midp: midp_from_counts(b, c)? })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the `n − 1` denominator.
fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Cohen's d with pooled sample standard deviation, oriented so that a
/// larger mean in `group_b` gives a positive value.
pub fn cohens_d(group_a: &[f64], group_b: &[f64]) -> Result<f64> {
    let (na, nb) = (group_a.len(), group_b.len());
    if na < 2 || nb < 2 {
        return Err(Error::InvalidArgument(alloc::format!(
            "each group needs at least 2 values, got {na} and {nb}"
        )));
    }
    let pooled =
        ((na - 1) as f64 * sample_variance(group_a) + (nb - 1) as f64 * sample_variance(group_b)) / (na + nb - 2) as f64;
    if !(pooled > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    Ok((mean(group_b) - mean(group_a)) / libm::sqrt(pooled))
}

/// Mean and sample standard deviation of one metric across runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    /// Runs that had the metric defined.
    pub n: usize,
}

/// Per-metric aggregate, indexed like [`MetricKind::ALL`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub metrics: [Option<MeanStd>; 6],
    pub runs: usize,
    /// Set when only one run was given, so every std is 0 by convention.
    pub single_run: bool,
}

impl RunSummary {
    pub fn get(&self, kind: MetricKind) -> Option<MeanStd> {
        self.metrics[MetricKind::ALL.iter().position(|m| *m == kind).unwrap()]
    }
}

pub fn mean_std(xs: &[f64]) -> Option<MeanStd> {
    match xs.len() {
        0 => None,
        1 => Some(MeanStd { mean: xs[0], std: 0.0, n: 1 }),
        n => Some(MeanStd { mean: mean(xs), std: libm::sqrt(sample_variance(xs)), n }),
    }
}

/// Mean ± std per metric over repeated runs.
pub fn aggregate_runs(reports: &[MetricReport]) -> Result<RunSummary> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("reports"));
    }
    let metrics = MetricKind::ALL.map(|kind| {
        let values: Vec<f64> = reports.iter().filter_map(|r| r.value(kind)).collect();
        mean_std(&values)
    });
    Ok(RunSummary { metrics, runs: reports.len(), single_run: reports.len() == 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Metrics;
    use alloc::vec;

    fn choose(n: u64, k: u64) -> u64 {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn fixed_points() {
        assert_eq!(midp_from_counts(5, 5).unwrap(), 1.0);
        assert_eq!(midp_from_counts(8, 2).unwrap(), 0.0654296875);
        assert_eq!(midp_from_counts(2, 8).unwrap(), 0.0654296875);
        assert_eq!(midp_from_counts(0, 0), Err(Error::NoDiscordantPairs));
    }

    #[test]
    fn exact_rational_oracle_small_n() {
        for n in 1..=30u64 {
            for b in 0..=n {
                let k = b.min(n - b);
                let cdf: u64 = (0..=k).map(|i| choose(n, i)).sum();
                let want = ((2 * cdf - choose(n, k)) as f64 / (1u64 << n) as f64).min(1.0);
                let got = midp_from_counts(b as usize, (n - b) as usize).unwrap();
                assert!((got - want).abs() < 1e-14, "n={n} b={b}");
            }
        }
    }

    #[test]
    fn large_n_branch_agrees_with_exact_branch() {
        let exact = midp_from_counts(480, 520).unwrap();
        let pmf_log = {
            let n = 1000usize;
            let ln2n = n as f64 * core::f64::consts::LN_2;
            let lnf = |m: usize| libm::lgamma(m as f64 + 1.0);
            let p: Vec<f64> = (0..=480).map(|i| libm::exp(lnf(n) - lnf(i) - lnf(n - i) - ln2n)).collect();
            2.0 * p.iter().sum::<f64>() - p[480]
        };
        assert!((exact - pmf_log).abs() < 1e-9);
        let big = midp_from_counts(1500, 1600).unwrap();
        assert!(big > 0.0 && big < 0.1);
    }

    #[test]
    fn paired_counts() {
        let a = [true, true, false, false, true];
        let b = [false, true, true, false, false];
        let r = mcnemar_midp(&a, &b).unwrap();
        assert_eq!((r.b, r.c), (2, 1));
        assert_eq!(mcnemar_midp(&a, &b[..2]), Err(Error::LengthMismatch(5, 2)));
        assert_eq!(mcnemar_midp(&[true, false], &[true, false]), Err(Error::NoDiscordantPairs));
    }

    #[test]
    fn cohens_d_examples() {
        let d = cohens_d(&[0.5, 0.6, 0.7], &[0.8, 0.9, 1.0]).unwrap();
        assert!((d - 3.0).abs() < 1e-12);
        assert_eq!(cohens_d(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!((cohens_d(&[0.8, 0.9, 1.0], &[0.5, 0.6, 0.7]).unwrap() + d).abs() < 1e-15);
        assert_eq!(cohens_d(&[1.0, 1.0], &[2.0, 2.0]), Err(Error::DegenerateVariance));
        assert!(cohens_d(&[1.0], &[2.0, 3.0]).is_err());
    }

    fn report(auroc: f64) -> MetricReport {
        MetricReport {
            metrics: Metrics {
                accuracy: 0.5,
                balanced_accuracy: 0.5,
                precision: 0.5,
                recall: 0.5,
                f1: 0.5,
                auroc: Some(auroc),
                excluded_classes: vec![],
            },
            intervals: [None; 6],
            n_test: 10,
            run_id: 0,
        }
    }

    #[test]
    fn aggregation() {
        let s = aggregate_runs(&[report(0.88), report(0.90), report(0.92)]).unwrap();
        let a = s.get(MetricKind::Auroc).unwrap();
        assert!((a.mean - 0.90).abs() < 1e-12 && (a.std - 0.02).abs() < 1e-12);
        assert_eq!(s.get(MetricKind::Accuracy).unwrap().std, 0.0);
        assert!(!s.single_run);
        let one = aggregate_runs(&[report(0.7)]).unwrap();
        assert!(one.single_run);
        assert_eq!(one.get(MetricKind::Auroc).unwrap(), MeanStd { mean: 0.7, std: 0.0, n: 1 });
        assert_eq!(aggregate_runs(&[]), Err(Error::EmptyInput("reports")));
    }
}
