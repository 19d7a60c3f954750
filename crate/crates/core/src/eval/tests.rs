use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::ingest::{GeoFeature, Geometry};

fn labeled(counts: &[(&str, usize)]) -> TabularDataset {
    let labels: Vec<Option<String>> =
        counts.iter().flat_map(|(c, n)| std::iter::repeat_n(Some(c.to_string()), *n)).collect();
    TabularDataset::new((0..labels.len()).map(|i| format!("r{i:03}")).collect(), labels)
}

fn squares(n: usize) -> FeatureCollection {
    let feats = (0..n)
        .map(|i| {
            let (x, y) = ((i % 40) as f64, (i / 40) as f64);
            GeoFeature {
                id: format!("c{i:04}"),
                geometry: Geometry::polygon([(x, y), (x + 0.5, y), (x + 0.5, y + 0.5), (x, y + 0.5), (x, y)]).unwrap(),
                attributes: BTreeMap::new(),
                label: None,
            }
        })
        .collect();
    FeatureCollection::new("city", Vec::new(), feats).unwrap()
}

fn scope() -> Scope {
    Scope::new(-1.0, -1.0, 41.0, 41.0).unwrap()
}

#[test]
fn holdout_sizes_and_repeatability() {
    let ds = labeled(&[("A", 37), ("B", 63)]);
    let f = holdout(&ds, 0.8, 5, true).unwrap();
    assert_eq!((f.train.len(), f.test.len()), (80, 20));
    assert_eq!(f, holdout(&ds, 0.8, 5, true).unwrap());
    assert_ne!(f, holdout(&ds, 0.8, 6, true).unwrap());
    let a_train = f.train.iter().filter(|&&i| i < 37).count() as f64;
    assert!((a_train - 0.8 * 37.0).abs() <= 1.0);
    let plain = holdout(&ds, 0.8, 5, false).unwrap();
    assert_eq!((plain.train.len(), plain.test.len()), (80, 20));
}

#[test]
fn split_errors() {
    let ds = labeled(&[("A", 1), ("B", 9)]);
    assert!(matches!(holdout(&ds, 0.7, 0, true), Err(EvalError::TinyClass(c)) if c == "A"));
    assert!(holdout(&ds, 0.7, 0, false).is_ok());
    assert!(matches!(holdout(&ds, 1.0, 0, false), Err(EvalError::Fraction(_))));
    assert!(matches!(k_fold(&ds, 1, 0, false), Err(EvalError::Folds { .. })));
}

#[test]
fn k_fold_partitions_rows() {
    let ds = labeled(&[("A", 11), ("B", 20), ("C", 3)]);
    let folds = k_fold(&ds, 3, 9, true).unwrap();
    let mut seen: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..34).collect::<Vec<_>>());
    for f in &folds {
        assert_eq!(f.train.len() + f.test.len(), 34);
        assert!(f.test.len() == 11 || f.test.len() == 12);
    }
}

proptest! {
    #[test]
    fn holdout_is_a_stratified_partition(
        a in 2usize..40, b in 2usize..40, c in 2usize..40,
        frac in 0.05f64..0.95, seed in any::<u64>(),
    ) {
        let ds = labeled(&[("A", a), ("B", b), ("C", c)]);
        let f = holdout(&ds, frac, seed, true).unwrap();
        let mut all: Vec<usize> = f.train.iter().chain(&f.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..a + b + c).collect::<Vec<_>>());
        let bounds = [(0, a), (a, a + b), (a + b, a + b + c)];
        for (lo, hi) in bounds {
            let n = f.train.iter().filter(|&&i| i >= lo && i < hi).count() as f64;
            let want = frac * (hi - lo) as f64;
            prop_assert!((n - want).abs() <= 1.0 + 1e-9, "{} vs {}", n, want);
        }
    }
}

#[test]
fn clean_noise_is_identity() {
    let c = squares(30);
    for spec in [NoiseSpec { p: 0.0, q: 0.3 }, NoiseSpec { p: 1.0, q: 0.0 }] {
        let (out, hit) = inject_noise(&c, &spec, &scope(), 1).unwrap();
        assert_eq!(out, c);
        assert_eq!(hit, 0);
    }
    assert!(inject_noise(&c, &NoiseSpec { p: 1.5, q: 0.1 }, &scope(), 1).is_err());
}

#[test]
fn noise_moves_within_bounds_and_recloses() {
    let c = squares(200);
    let s = Scope::new(0.0, 0.0, 40.0, 5.5).unwrap();
    let (out, hit) = inject_noise(&c, &NoiseSpec { p: 1.0, q: 1.0 }, &s, 3).unwrap();
    assert_eq!(hit, 200);
    for (a, b) in c.features().iter().zip(out.features()) {
        let g = b.geometry.coords();
        assert_eq!(g.first(), g.last());
        assert!(s.contains_geometry(&b.geometry));
        let e = a.geometry.extent();
        for (p, q) in a.geometry.coords().iter().zip(g) {
            assert!((p.lon - q.lon).abs() <= e + 1e-12 && (p.lat - q.lat).abs() <= e + 1e-12);
        }
    }
    assert_ne!(out, c);
}

#[test]
fn perturbed_fraction_concentrates() {
    let c = squares(1000);
    let fracs: Vec<f64> = (0..50)
        .map(|seed| inject_noise(&c, &NoiseSpec { p: 0.5, q: 0.1 }, &scope(), seed).unwrap().1 as f64 / 1000.0)
        .collect();
    // per seed sd is sqrt(0.25 / 1000) ~ 0.0158, so +-0.05 is a 3.2 sd band
    let outside = fracs.iter().filter(|f| (*f - 0.5).abs() > 0.05).count();
    assert!(outside <= 2, "{fracs:?}");
    let mean = fracs.iter().sum::<f64>() / 50.0;
    let sd = (fracs.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / 49.0).sqrt();
    assert!((mean - 0.5).abs() < 0.01, "{mean}");
    assert!(sd < 0.025, "{sd}");
}

#[test]
fn sigma_conventions() {
    let (pop, sample) = sigma(&[91.0, 92.0, 96.0]);
    // direct formula: mean 93, squared deviations 4 + 1 + 9
    assert!((pop - (14.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert!((pop - 2.160).abs() < 1e-3);
    assert!((sample - (7.0f64).sqrt()).abs() < 1e-12);
    assert_eq!(sigma(&[0.5]), (0.0, 0.0));
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn report_from_predictions() {
    let classes = strings(&["A", "B", "C"]);
    let actual = strings(&["A", "A", "B", "B", "B", "C"]);
    let perfect = EvalReport::from_predictions(&classes, &actual, &actual).unwrap();
    assert!(perfect.classes.iter().all(|c| c.accuracy == Some(1.0)));
    assert_eq!((perfect.sigma_population, perfect.overall_accuracy), (0.0, 1.0));

    let pred = strings(&["A", "B", "B", "B", "C", "A"]);
    let r = EvalReport::from_predictions(&classes, &actual, &pred).unwrap();
    for (i, c) in r.classes.iter().enumerate() {
        assert_eq!(r.confusion[i].iter().sum::<usize>(), c.count);
    }
    let trace: usize = (0..3).map(|i| r.confusion[i][i]).sum();
    assert_eq!(r.overall_accuracy, trace as f64 / 6.0);
    assert_eq!(r.classes[2].accuracy, Some(0.0));
    assert!(matches!(
        EvalReport::from_predictions(&classes, &strings(&["D"]), &strings(&["A"])),
        Err(EvalError::UnseenLabel(_))
    ));
    assert!(matches!(EvalReport::from_predictions(&classes, &[], &[]), Err(EvalError::EmptyTest)));
}

#[test]
fn sweep_tables_are_sorted() {
    let mut rows = vec![
        SweepRow { p: 0.2, q: 0.1, seed: 1, accuracy: 0.8 },
        SweepRow { p: 0.1, q: 0.1, seed: 2, accuracy: 0.9 },
        SweepRow { p: 0.1, q: 0.1, seed: 1, accuracy: 0.7 },
    ];
    sort_sweep(&mut rows);
    assert_eq!(rows[0].seed, 1);
    let means = sweep_means(&rows);
    assert_eq!(means.len(), 2);
    assert!((means[0].mean_accuracy - 0.8).abs() < 1e-12);
    assert!(sweep_table(&rows).starts_with("p\tq\tseed\taccuracy\n0.1\t0.1\t1\t0.700000\n"));
}
