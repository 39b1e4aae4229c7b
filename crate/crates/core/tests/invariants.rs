use std::collections::BTreeMap;

use lesionelev_core::data::{DatasetManifest, DiagnosisLabel, ElevationLabel, ImageRecord, LabelKind, LabelSchema, Modality};
use lesionelev_core::metrics::{binary_auroc, classification_metrics, macro_auroc};
use lesionelev_core::split::{split_counts, stratified_split, Split, StratifyOn};
use lesionelev_core::stats::{cohens_d, mcnemar_midp};
use lesionelev_core::weights::compute_class_weights;
use proptest::prelude::*;

fn manifest(labels: &[(usize, usize)]) -> DatasetManifest {
    let schema = LabelSchema::new(
        vec!["benign".into(), "malignant".into()],
        vec!["flat".into(), "palpable".into(), "nodular".into()],
        BTreeMap::new(),
    )
    .unwrap();
    let records = labels
        .iter()
        .enumerate()
        .map(|(i, &(d, e))| ImageRecord {
            image_id: format!("img{i:04}"),
            image_path: format!("images/img{i:04}.png"),
            modality: Modality::Clinical,
            diagnosis: Some(DiagnosisLabel(d)),
            elevation: Some(ElevationLabel(e)),
        })
        .collect();
    DatasetManifest::new("prop", schema, records).unwrap()
}

fn labels_covering_all_classes() -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0..2usize, 0..3usize), 0..120).prop_map(|mut v| {
        v.extend([(0, 0), (1, 1), (0, 2)]);
        v
    })
}

proptest! {
    #[test]
    fn split_counts_partition_and_stay_close(n in 0usize..2000, a in 1u32..98, b in 1u32..98) {
        prop_assume!(a + b < 100);
        let ratios = [a as f64 / 100.0, b as f64 / 100.0, (100 - a - b) as f64 / 100.0];
        let counts = split_counts(n, ratios);
        prop_assert_eq!(counts.iter().sum::<usize>(), n);
        for (c, r) in counts.iter().zip(ratios) {
            prop_assert!((*c as f64 - r * n as f64).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn stratified_split_is_a_deterministic_stratified_partition(labels in labels_covering_all_classes(), seed in any::<u64>()) {
        let m = manifest(&labels);
        let ratios = [0.7, 0.15, 0.15];
        let s = stratified_split(&m, ratios, StratifyOn::Elevation, seed).unwrap();
        prop_assert_eq!(s.assignments.len(), m.len());
        prop_assert_eq!(&s, &stratified_split(&m, ratios, StratifyOn::Elevation, seed).unwrap());
        for class in 0..3 {
            let n = m.records().iter().filter(|r| r.label(LabelKind::Elevation) == Some(class)).count();
            let mut got = [0usize; 3];
            for r in m.records().iter().filter(|r| r.label(LabelKind::Elevation) == Some(class)) {
                got[s.get(&r.image_id).unwrap() as usize] += 1;
            }
            prop_assert_eq!(got, split_counts(n, ratios));
        }
        let total: usize = Split::ALL.iter().map(|&sp| s.ids(&m, sp).len()).sum();
        prop_assert_eq!(total, m.len());
    }

    #[test]
    fn class_weights_times_counts_equal_the_median(counts in prop::collection::vec(1usize..10_000, 1..12)) {
        let w = compute_class_weights(&counts).unwrap();
        let mut sorted = counts.clone();
        sorted.sort_unstable();
        let k = sorted.len();
        let median = if k % 2 == 1 { sorted[k / 2] as f64 } else { (sorted[k / 2 - 1] + sorted[k / 2]) as f64 / 2.0 };
        for (c, n) in counts.iter().enumerate() {
            prop_assert!((w.0[c] * *n as f64 - median).abs() <= 1e-9 * median);
        }
    }

    #[test]
    fn auroc_is_one_minus_auroc_of_negated_scores(pairs in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..80)) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let positive: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        match (binary_auroc(&scores, &positive), binary_auroc(&negated, &positive)) {
            (Some(a), Some(b)) => {
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert!((a + b - 1.0).abs() < 1e-12);
            }
            (None, None) => prop_assert!(positive.iter().all(|&p| p) || positive.iter().all(|&p| !p)),
            _ => prop_assert!(false, "definedness differs"),
        }
    }

    #[test]
    fn metrics_lie_in_the_unit_interval(rows in prop::collection::vec((prop::array::uniform3(0.01f64..1.0), 0..3usize), 3..60)) {
        let probs: Vec<Vec<f64>> = rows.iter().map(|(p, _)| {
            let s: f64 = p.iter().sum();
            p.iter().map(|v| v / s).collect()
        }).collect();
        let targets: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let m = classification_metrics(&probs, &targets, 3).unwrap();
        let all = [Some(m.accuracy), Some(m.balanced_accuracy), Some(m.precision), Some(m.recall), Some(m.f1), m.auroc];
        prop_assert_eq!(m.auroc, macro_auroc(&probs, &targets, 3));
        for v in all.into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn mcnemar_is_symmetric_in_its_arguments(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
        let a: Vec<bool> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        match (mcnemar_midp(&a, &b), mcnemar_midp(&b, &a)) {
            (Ok(x), Ok(y)) => {
                prop_assert_eq!((x.b, x.c), (y.c, y.b));
                prop_assert!((x.midp - y.midp).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&x.midp));
            }
            (Err(_), Err(_)) => prop_assert!(a == b),
            _ => prop_assert!(false, "one order failed"),
        }
    }

    #[test]
    fn cohens_d_flips_sign_and_ignores_shift(
        a in prop::collection::vec(0.0f64..1.0, 2..10),
        b in prop::collection::vec(0.0f64..1.0, 2..10),
        shift in -3.0f64..3.0,
    ) {
        if let Ok(d) = cohens_d(&a, &b) {
            prop_assert!((d + cohens_d(&b, &a).unwrap()).abs() < 1e-9);
            let sa: Vec<f64> = a.iter().map(|x| x + shift).collect();
            let sb: Vec<f64> = b.iter().map(|x| x + shift).collect();
            prop_assert!((d - cohens_d(&sa, &sb).unwrap()).abs() < 1e-6 * (1.0 + d.abs()));
        }
    }
}
