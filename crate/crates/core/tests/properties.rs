mod common;

use proptest::prelude::*;
use vprgate::calibration::{fit_logistic_report, predict_prob, LogisticModel};
use vprgate::dataset::{geo_distance, is_correct, DistanceThreshold, GeoRecord, LatLon, Manifest};
use vprgate::evaluation::{auprc, pr_curve, recall_at_k};
use vprgate::matching::InlierTable;
use vprgate::rerank::{rerank, GatePolicy};
use vprgate::retrieval::{build_index, search, Shortlist, ShortlistEntry};
use vprgate::uncertainty::{u_pa, Estimator};

fn latlon() -> impl Strategy<Value = LatLon> {
    (-89.9f64..89.9, -180.0f64..180.0).prop_map(|(lat, lon)| LatLon::new(lat, lon))
}

fn rec(id: &str, p: LatLon) -> GeoRecord {
    GeoRecord { id: id.into(), lat: p.lat, lon: p.lon, descriptor_index: 0 }
}

fn shortlist(n: usize) -> Shortlist {
    Shortlist {
        query_id: "q".into(),
        entries: (0..n)
            .map(|i| ShortlistEntry { db_id: format!("d{i}"), distance: i as f64 })
            .collect(),
    }
}

proptest! {
    #[test]
    fn distance_is_a_metric(a in latlon(), b in latlon(), c in latlon()) {
        let ab = geo_distance(a, b);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - geo_distance(b, a)).abs() <= 1e-9 * ab.max(1.0));
        prop_assert!(ab <= geo_distance(a, c) + geo_distance(c, b) + 1e-6);
        prop_assert_eq!(geo_distance(a, a), 0.0);
    }

    #[test]
    fn distance_matches_chord_oracle(a in latlon(), b in latlon()) {
        let want = common::chord_distance(a.lat, a.lon, b.lat, b.lon);
        prop_assert!((geo_distance(a, b) - want).abs() < 1e-6 * want.max(1.0));
    }

    #[test]
    fn correctness_is_monotone_in_tau(a in latlon(), dn in -200.0f64..200.0, t1 in 0.1f64..300.0, t2 in 0.1f64..300.0) {
        let b = LatLon::new(a.lat + (dn / common::R).to_degrees(), a.lon);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let (q, c) = (rec("q", a), rec("c", b));
        if is_correct(&q, &c, DistanceThreshold::new(lo).unwrap()) {
            prop_assert!(is_correct(&q, &c, DistanceThreshold::new(hi).unwrap()));
        }
    }

    #[test]
    fn search_equals_full_sort(seed in any::<u64>(), n in 1usize..300, dim in 1usize..24, k in 1usize..50, dups in 0usize..5) {
        let mut rng = common::rng(seed);
        let mut rows = common::unit_rows(&mut rng, n, dim);
        for i in 0..dups.min(n - 1) {
            rows[i + 1] = rows[0].clone();
        }
        let index = build_index(&common::split_of("d", &rows)).unwrap();
        let q = common::unit_rows(&mut rng, 1, dim).remove(0);
        let got = index.nearest(&q, k).unwrap();
        let want = common::knn_full_sort(&rows, &q, k);
        prop_assert_eq!(got.iter().map(|g| g.0).collect::<Vec<_>>(), want.iter().map(|w| w.0).collect::<Vec<_>>());
        for (row, d2) in got {
            let dot: f64 = rows[row].iter().zip(&q).map(|(&a, &b)| a as f64 * b as f64).sum();
            prop_assert!((d2 - (2.0 - 2.0 * dot)).abs() < 1e-5);
        }
        let s = search(&index, "q", &q, k).unwrap();
        prop_assert!(s.entries.windows(2).all(|w| w[0].distance <= w[1].distance));
    }

    #[test]
    fn rerank_is_the_stable_sort(counts in prop::collection::vec(prop::option::weighted(0.8, 0u32..6), 1..40)) {
        let s = shortlist(counts.len());
        let mut table = InlierTable::new();
        for (i, c) in counts.iter().enumerate() {
            if let Some(c) = c {
                table.insert("q", &format!("d{i}"), *c).unwrap();
            }
        }
        let r = rerank(&s, &table).unwrap();
        let got: Vec<usize> = r.entries.iter().map(|e| e.original_rank - 1).collect();
        prop_assert_eq!(got, common::rerank_order(&counts));
        prop_assert_eq!(r.diagnostics.len(), counts.iter().filter(|c| c.is_none()).count());
    }

    #[test]
    fn rerank_keeps_recall_at_full_length(
        n in 1usize..30,
        near in prop::collection::vec(any::<bool>(), 30),
        counts in prop::collection::vec(0u32..50, 30),
    ) {
        let q = LatLon::new(10.0, 10.0);
        let queries = Manifest::new(vec![rec("q", q)]).unwrap();
        let db = Manifest::new((0..n).map(|i| {
            let off = if near[i] { 1e-5 } else { 1e-2 };
            rec(&format!("d{i}"), LatLon::new(q.lat + off, q.lon))
        }).collect()).unwrap();
        let s = shortlist(n);
        let mut table = InlierTable::new();
        for (i, &c) in counts.iter().take(n).enumerate() {
            table.insert("q", &format!("d{i}"), c).unwrap();
        }
        let r = rerank(&s, &table).unwrap();
        let tau = DistanceThreshold::default();
        let before = recall_at_k(std::slice::from_ref(&s), queries.geo(), db.geo(), n, tau).unwrap();
        let after = recall_at_k(&[r], queries.geo(), db.geo(), n, tau).unwrap();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn auprc_ignores_monotone_transforms(
        samples in prop::collection::vec((-50i32..50, any::<bool>()), 1..60),
        scale in 0.01f64..100.0,
        shift in -1e3f64..1e3,
    ) {
        prop_assume!(samples.iter().any(|s| s.1));
        let base: Vec<(f64, bool)> = samples.iter().map(|&(c, y)| (c as f64, y)).collect();
        let moved: Vec<(f64, bool)> = base.iter().map(|&(c, y)| ((c / 10.0).exp() * scale + shift, y)).collect();
        let a = auprc(&pr_curve(&base).unwrap()).unwrap();
        let b = auprc(&pr_curve(&moved).unwrap()).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((a - common::area_by_thresholds(&base)).abs() < 1e-12);
    }

    #[test]
    fn pa_score_is_a_ratio_in_unit_interval(mut d in prop::collection::vec(0.0f64..4.0, 2..10)) {
        d.sort_by(f64::total_cmp);
        let s = Shortlist {
            query_id: "q".into(),
            entries: d.iter().enumerate().map(|(i, &x)| ShortlistEntry { db_id: format!("d{i}"), distance: x }).collect(),
        };
        let u = u_pa(&s).unwrap().u;
        prop_assert!((0.0..=1.0).contains(&u));
    }

    #[test]
    fn predict_matches_plain_sigmoid(w in -5.0f64..5.0, b in -5.0f64..5.0, m in -10.0f64..10.0, sd in 0.1f64..10.0, u in -30.0f64..30.0) {
        let model = LogisticModel { weight: w, bias: b, feature_mean: m, feature_std: sd };
        let want = common::plain_sigmoid(w * (u - m) / sd + b);
        prop_assert!((predict_prob(&model, u) - want).abs() < 1e-12);
    }

    #[test]
    fn gate_is_monotone_in_threshold(w in 0.1f64..5.0, u in -10.0f64..10.0, t1 in 0.001f64..0.999, t2 in 0.001f64..0.999) {
        let model = LogisticModel { weight: w, bias: 0.0, feature_mean: 0.0, feature_std: 1.0 };
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let fires = |t| GatePolicy::new(model, t, Estimator::L2).unwrap().fires(u);
        if fires(hi) {
            prop_assert!(fires(lo));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn logistic_fit_is_affine_invariant(seed in any::<u64>(), scale in 0.01f64..100.0, shift in -1e3f64..1e3) {
        use rand::Rng;
        let mut rng = common::rng(seed);
        let data: Vec<(f64, bool)> = (0..200)
            .map(|_| {
                let u: f64 = rng.random_range(-3.0..3.0);
                (u, rng.random_bool(common::plain_sigmoid(1.5 * u - 0.3)))
            })
            .collect();
        prop_assume!(data.iter().any(|d| d.1) && data.iter().any(|d| !d.1));
        let a = fit_logistic_report(&data).unwrap();
        let moved: Vec<(f64, bool)> = data.iter().map(|&(u, y)| (u * scale + shift, y)).collect();
        let b = fit_logistic_report(&moved).unwrap();
        for &(u, _) in data.iter().take(20) {
            let pa = a.model.predict(u);
            let pb = b.model.predict(u * scale + shift);
            prop_assert!((pa - pb).abs() < 1e-8, "{} vs {}", pa, pb);
        }
        for r in [&a, &b] {
            prop_assert!(r.loss_history.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
