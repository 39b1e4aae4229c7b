//! Classification metrics over probability vectors, with percentile
//! bootstrap intervals.
//!
//! Precision, recall and F1 are macro averages over the classes present in
//! the targets; F1 is the mean of per-class F1 scores. AUROC is the macro
//! average of one-vs-rest AUROCs, each computed from mid-ranks so tied
//! scores count one half (equal to trapezoidal integration of the ROC
//! curve).

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::model::argmax;
use crate::rng::Rng;
use crate::{Error, Result};

/// Binary AUROC of `scores` against `positive`; `None` unless both classes
/// occur.
pub fn binary_auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Mid-rank (1-based) of the tie block order[i..j].
        let mid = (i + j + 1) as f64 / 2.0;
        rank_sum_pos += mid * order[i..j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j;
    }
    let pos = positive.iter().filter(|p| **p).count() as f64;
    let neg = n as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return None;
    }
    Some((rank_sum_pos - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

/// Macro one-vs-rest AUROC over the classes that occur in `targets`.
/// `None` when fewer than two classes occur.
pub fn macro_auroc(probs: &[Vec<f64>], targets: &[usize], num_classes: usize) -> Option<f64> {
    let mut sum = 0.0;
    let mut k = 0;
    for c in 0..num_classes {
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let positive: Vec<bool> = targets.iter().map(|&t| t == c).collect();
        if let Some(a) = binary_auroc(&scores, &positive) {
            sum += a;
            k += 1;
        }
    }
    (k >= 2).then(|| sum / k as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    Accuracy,
    BalancedAccuracy,
    Precision,
    Recall,
    F1,
    Auroc,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::Accuracy,
        MetricKind::BalancedAccuracy,
        MetricKind::Precision,
        MetricKind::Recall,
        MetricKind::F1,
        MetricKind::Auroc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::BalancedAccuracy => "balanced_accuracy",
            MetricKind::Precision => "precision",
            MetricKind::Recall => "recall",
            MetricKind::F1 => "f1",
            MetricKind::Auroc => "auroc",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownLabel { column: "metric", label: s.into() })
    }
}

/// Point estimates of the six metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent when the targets hold a single class.
    pub auroc: Option<f64>,
    /// Schema classes missing from the targets, left out of macro averages.
    pub excluded_classes: Vec<usize>,
}

impl Metrics {
    pub fn get(&self, kind: MetricKind) -> Option<f64> {
        match kind {
            MetricKind::Accuracy => Some(self.accuracy),
            MetricKind::BalancedAccuracy => Some(self.balanced_accuracy),
            MetricKind::Precision => Some(self.precision),
            MetricKind::Recall => Some(self.recall),
            MetricKind::F1 => Some(self.f1),
            MetricKind::Auroc => self.auroc,
        }
    }
}

fn check_inputs(probs: &[Vec<f64>], targets: &[usize], num_classes: usize) -> Result<()> {
    if probs.len() != targets.len() {
        return Err(Error::LengthMismatch(probs.len(), targets.len()));
    }
    if targets.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    for p in probs {
        if p.len() != num_classes {
            return Err(Error::LengthMismatch(p.len(), num_classes));
        }
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= num_classes) {
        return Err(Error::TargetOutOfRange { index: t, classes: num_classes });
    }
    Ok(())
}

fn argmax64(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Metrics from argmax decisions over `probs` and the scores themselves.
pub fn classification_metrics(probs: &[Vec<f64>], targets: &[usize], num_classes: usize) -> Result<Metrics> {
    check_inputs(probs, targets, num_classes)?;
    let preds: Vec<usize> = probs.iter().map(|p| argmax64(p)).collect();
    Ok(metrics_from_decisions(probs, &preds, targets, num_classes))
}

fn metrics_from_decisions(probs: &[Vec<f64>], preds: &[usize], targets: &[usize], num_classes: usize) -> Metrics {
    let mut tp = vec![0usize; num_classes];
    let mut support = vec![0usize; num_classes];
    let mut predicted = vec![0usize; num_classes];
    for (&p, &t) in preds.iter().zip(targets) {
        support[t] += 1;
        predicted[p] += 1;
        if p == t {
            tp[t] += 1;
        }
    }
    let present: Vec<usize> = (0..num_classes).filter(|&c| support[c] > 0).collect();
    let excluded_classes = (0..num_classes).filter(|&c| support[c] == 0).collect();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mean = |f: &dyn Fn(usize) -> f64| present.iter().map(|&c| f(c)).sum::<f64>() / present.len() as f64;
    let recall = |c: usize| ratio(tp[c], support[c]);
    let precision = |c: usize| ratio(tp[c], predicted[c]);
    let f1 = |c: usize| {
        let (p, r) = (precision(c), recall(c));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    };
    let macro_recall = mean(&recall);
    Metrics {
        accuracy: ratio(tp.iter().sum(), targets.len()),
        balanced_accuracy: macro_recall,
        precision: mean(&precision),
        recall: macro_recall,
        f1: mean(&f1),
        auroc: macro_auroc(probs, targets, num_classes),
        excluded_classes,
    }
}

/// Interval endpoints for one metric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap over test items for every metric at once. Resample
/// `r` draws its indices from stream `r` of `seed`, so results do not depend
/// on evaluation order. Resamples where a metric is undefined are skipped
/// for that metric; a metric undefined in every resample gets `None`.
pub fn bootstrap_intervals(
    probs: &[Vec<f64>],
    targets: &[usize],
    num_classes: usize,
    level: f64,
    resamples: usize,
    seed: u64,
) -> Result<[Option<Interval>; 6]> {
    check_inputs(probs, targets, num_classes)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(alloc::format!("confidence level {level} not in (0, 1)")));
    }
    if resamples < 100 {
        return Err(Error::InvalidArgument(alloc::format!("{resamples} resamples; need at least 100")));
    }
    let n = targets.len();
    let preds: Vec<usize> = probs.iter().map(|p| argmax64(p)).collect();
    let mut samples: [Vec<f64>; 6] = Default::default();
    let mut p = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    for r in 0..resamples {
        let mut rng = Rng::derive(seed, r as u64);
        p.clear();
        d.clear();
        t.clear();
        for _ in 0..n {
            let i = rng.index(n);
            p.push(probs[i].clone());
            d.push(preds[i]);
            t.push(targets[i]);
        }
        let m = metrics_from_decisions(&p, &d, &t, num_classes);
        for (slot, kind) in samples.iter_mut().zip(MetricKind::ALL) {
            if let Some(v) = m.get(kind) {
                slot.push(v);
            }
        }
    }
    let alpha = (1.0 - level) / 2.0;
    Ok(samples.map(|mut s| {
        if s.is_empty() {
            return None;
        }
        s.sort_by(f64::total_cmp);
        Some(Interval { low: quantile(&s, alpha), high: quantile(&s, 1.0 - alpha) })
    }))
}

/// Single-metric form of [`bootstrap_intervals`].
pub fn bootstrap_ci(
    probs: &[Vec<f64>],
    targets: &[usize],
    num_classes: usize,
    metric: MetricKind,
    level: f64,
    resamples: usize,
    seed: u64,
) -> Result<Option<Interval>> {
    let all = bootstrap_intervals(probs, targets, num_classes, level, resamples, seed)?;
    Ok(all[MetricKind::ALL.iter().position(|m| *m == metric).unwrap()])
}

/// All six metrics with confidence intervals for one model, run and split.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub metrics: Metrics,
    /// Indexed like [`MetricKind::ALL`]. Each interval is widened if needed
    /// so that it contains its point estimate.
    pub intervals: [Option<Interval>; 6],
    pub n_test: usize,
    pub run_id: usize,
}

impl MetricReport {
    pub fn value(&self, kind: MetricKind) -> Option<f64> {
        self.metrics.get(kind)
    }

    pub fn interval(&self, kind: MetricKind) -> Option<Interval> {
        self.intervals[MetricKind::ALL.iter().position(|m| *m == kind).unwrap()]
    }
}

/// Bootstrap settings for [`evaluate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BootstrapConfig {
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { level: 0.95, resamples: 1000, seed: 0 }
    }
}

pub fn evaluate(
    probs: &[Vec<f64>],
    targets: &[usize],
    num_classes: usize,
    run_id: usize,
    bootstrap: BootstrapConfig,
) -> Result<MetricReport> {
    let metrics = classification_metrics(probs, targets, num_classes)?;
    let mut intervals =
        bootstrap_intervals(probs, targets, num_classes, bootstrap.level, bootstrap.resamples, bootstrap.seed)?;
    for (iv, kind) in intervals.iter_mut().zip(MetricKind::ALL) {
        match (iv.as_mut(), metrics.get(kind)) {
            (Some(iv), Some(v)) => {
                iv.low = iv.low.min(v);
                iv.high = iv.high.max(v);
            }
            (Some(_), None) => *iv = None,
            _ => {}
        }
    }
    Ok(MetricReport { metrics, intervals, n_test: targets.len(), run_id })
}

/// Widens `f32` model outputs for the metric functions.
pub fn to_f64(probs: &[Vec<f32>]) -> Vec<Vec<f64>> {
    probs.iter().map(|p| p.iter().map(|v| *v as f64).collect()).collect()
}

/// Whether each argmax decision is correct.
pub fn correctness(probs: &[Vec<f32>], targets: &[usize]) -> Vec<bool> {
    probs.iter().zip(targets).map(|(p, &t)| argmax(p) == t).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn binary(scores: &[f64]) -> Vec<Vec<f64>> {
        scores.iter().map(|&s| vec![1.0 - s, s]).collect()
    }

    #[test]
    fn perfect_ranking() {
        let m = classification_metrics(&binary(&[0.9, 0.8, 0.3, 0.2]), &[1, 1, 0, 0], 2).unwrap();
        assert_eq!(m.auroc, Some(1.0));
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.f1, 1.0);
    }

    #[test]
    fn constant_scorer_is_one_half() {
        let m = classification_metrics(&binary(&[0.5; 6]), &[0, 1, 0, 1, 0, 1], 2).unwrap();
        assert_eq!(m.auroc, Some(0.5));
        assert_eq!(binary_auroc(&[3.0; 5], &[true, false, false, true, false]), Some(0.5));
    }

    #[test]
    fn auroc_counts_ties_as_half() {
        // Pairs (pos, neg): (0.8,0.1) 1, (0.8,0.8) ½, (0.4,0.1) 1, (0.4,0.8) 0.
        assert_eq!(binary_auroc(&[0.8, 0.4, 0.1, 0.8], &[true, true, false, false]), Some(0.625));
    }

    #[test]
    fn hand_built_confusion() {
        // Class 0: 2/2 right, class 1: 1/2 right, class 2: 0/2 right.
        let one = |c: usize| {
            let mut v = vec![0.1; 3];
            v[c] = 0.8;
            v
        };
        let probs = vec![one(0), one(0), one(1), one(0), one(1), one(0)];
        let m = classification_metrics(&probs, &[0, 0, 1, 1, 2, 2], 3).unwrap();
        assert_eq!(m.balanced_accuracy, 0.5);
        assert_eq!(m.recall, 0.5);
        assert!((m.accuracy - 0.5).abs() < 1e-15);
        // Precision: class 0 2/4, class 1 1/2, class 2 0/0 → 0.
        assert!((m.precision - (0.5 + 0.5 + 0.0) / 3.0).abs() < 1e-15);
        // F1: class 0 2·.5·1/1.5, class 1 .5, class 2 0.
        assert!((m.f1 - (2.0 / 3.0 + 0.5) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_class_targets_have_no_auroc() {
        let m = classification_metrics(&binary(&[0.2, 0.7]), &[1, 1], 2).unwrap();
        assert_eq!(m.auroc, None);
        assert_eq!(m.excluded_classes, vec![0]);
    }

    #[test]
    fn absent_class_is_excluded_from_macro_averages() {
        let probs = vec![vec![0.7, 0.2, 0.1], vec![0.2, 0.7, 0.1]];
        let m = classification_metrics(&probs, &[0, 1], 3).unwrap();
        assert_eq!(m.excluded_classes, vec![2]);
        assert_eq!(m.balanced_accuracy, 1.0);
        assert_eq!(m.auroc, Some(1.0));
    }

    #[test]
    fn input_errors() {
        assert_eq!(classification_metrics(&binary(&[0.1]), &[0, 1], 2), Err(Error::LengthMismatch(1, 2)));
        assert!(matches!(classification_metrics(&binary(&[0.1]), &[2], 2), Err(Error::TargetOutOfRange { .. })));
        assert!(bootstrap_ci(&[], &[], 2, MetricKind::Accuracy, 0.95, 1000, 0).is_err());
        assert!(bootstrap_ci(&binary(&[0.1]), &[0], 2, MetricKind::Accuracy, 0.95, 10, 0).is_err());
    }

    #[test]
    fn all_correct_gives_degenerate_interval() {
        let probs = binary(&[0.9, 0.1, 0.8, 0.3]);
        let iv = bootstrap_ci(&probs, &[1, 0, 1, 0], 2, MetricKind::Accuracy, 0.95, 1000, 4).unwrap().unwrap();
        assert_eq!((iv.low, iv.high), (1.0, 1.0));
    }

    #[test]
    fn bootstrap_is_deterministic_and_covers_bernoulli_rate() {
        let mut rng = Rng::seed(8);
        let n = 1000;
        let targets: Vec<usize> = (0..n).map(|_| rng.index(2)).collect();
        let probs: Vec<Vec<f64>> = targets
            .iter()
            .map(|&t| {
                let right = rng.bernoulli(0.8);
                let c = if right { t } else { 1 - t };
                if c == 1 {
                    vec![0.3, 0.7]
                } else {
                    vec![0.7, 0.3]
                }
            })
            .collect();
        let a = bootstrap_ci(&probs, &targets, 2, MetricKind::Accuracy, 0.95, 1000, 1).unwrap().unwrap();
        let b = bootstrap_ci(&probs, &targets, 2, MetricKind::Accuracy, 0.95, 1000, 1).unwrap().unwrap();
        assert_eq!(a, b);
        let acc = classification_metrics(&probs, &targets, 2).unwrap().accuracy;
        assert!(a.low <= acc && acc <= a.high);
        assert!(a.low < 0.8 + 0.03 && a.high > 0.8 - 0.03);
        assert!(a.high - a.low < 0.06);
    }

    #[test]
    fn report_intervals_contain_points() {
        let mut rng = Rng::seed(3);
        let targets: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let probs: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let v: Vec<f64> = (0..3).map(|_| rng.uniform_f64(0.0, 1.0)).collect();
                let s: f64 = v.iter().sum();
                v.iter().map(|x| x / s).collect()
            })
            .collect();
        let r = evaluate(&probs, &targets, 3, 0, BootstrapConfig::default()).unwrap();
        for kind in MetricKind::ALL {
            let iv = r.interval(kind).unwrap();
            let v = r.value(kind).unwrap();
            assert!(iv.low <= v && v <= iv.high, "{kind}");
        }
    }

    proptest! {
        #[test]
        fn auroc_invariant_under_monotone_maps(
            scores in prop::collection::vec(0u8..20, 4..60),
            labels in prop::collection::vec(any::<bool>(), 60),
            a in 0.1f64..5.0,
            b in -3.0f64..3.0,
        ) {
            let s: Vec<f64> = scores.iter().map(|v| *v as f64 / 20.0).collect();
            let y = &labels[..s.len()];
            let t: Vec<f64> = s.iter().map(|v| libm::exp(a * v) + b).collect();
            prop_assert_eq!(binary_auroc(&s, y), binary_auroc(&t, y));
        }

        #[test]
        fn decision_metrics_invariant_under_relabeling(
            rows in prop::collection::vec((0usize..4, prop::collection::vec(0.0f64..1.0, 4)), 1..40),
            perm_seed in any::<u64>(),
        ) {
            let mut perm: Vec<usize> = (0..4).collect();
            Rng::seed(perm_seed).shuffle(&mut perm);
            let targets: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let probs: Vec<Vec<f64>> = rows.iter().map(|r| r.1.clone()).collect();
            let targets2: Vec<usize> = targets.iter().map(|t| perm[*t]).collect();
            let probs2: Vec<Vec<f64>> = probs
                .iter()
                .map(|p| {
                    let mut q = vec![0.0; 4];
                    for (c, v) in p.iter().enumerate() {
                        q[perm[c]] = *v;
                    }
                    q
                })
                .collect();
            // Ties in argmax would break differently after permuting.
            prop_assume!(probs.iter().all(|p| p.iter().filter(|v| **v == p[argmax64(p)]).count() == 1));
            let m1 = classification_metrics(&probs, &targets, 4).unwrap();
            let m2 = classification_metrics(&probs2, &targets2, 4).unwrap();
            for kind in [MetricKind::Accuracy, MetricKind::BalancedAccuracy, MetricKind::Precision, MetricKind::Recall, MetricKind::F1] {
                let (x, y) = (m1.get(kind).unwrap(), m2.get(kind).unwrap());
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
