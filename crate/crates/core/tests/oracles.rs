mod common;

use rand::Rng;
use vprgate::calibration::fit_logistic_report;
use vprgate::dataset::{geo_distance, GeoRecord, LatLon, Manifest};
use vprgate::evaluation::{auprc, pr_curve};
use vprgate::retrieval::{Shortlist, ShortlistEntry};
use vprgate::uncertainty::{u_random, u_sue, SueParams};

#[test]
fn one_degree_of_longitude_on_the_equator() {
    let d = geo_distance(LatLon::new(0.0, 0.0), LatLon::new(0.0, 1.0));
    assert!((d - 111_194.93).abs() < 0.01, "{d}");
    assert!((d - common::chord_distance(0.0, 0.0, 0.0, 1.0)).abs() < 1e-6);
}

#[test]
fn logistic_recovers_generating_coefficients() {
    let (w_true, b_true) = (2.0, 1.0);
    let mut rng = common::rng(11);
    let data: Vec<(f64, bool)> = (0..10_000)
        .map(|_| {
            let u: f64 = rng.random_range(-3.0..3.0);
            (u, rng.random_bool(common::plain_sigmoid(w_true * u + b_true)))
        })
        .collect();
    let fit = fit_logistic_report(&data).unwrap();
    assert!(fit.converged);
    let (w, b) = fit.model.raw_coefficients();
    assert!((w - w_true).abs() / w_true < 0.05, "w = {w}");
    assert!((b - b_true).abs() / b_true < 0.05, "b = {b}");
}

#[test]
fn random_scores_have_prevalence_auprc() {
    let mut rng = common::rng(5);
    let labels: Vec<bool> = (0..1000).map(|_| rng.random_bool(0.3)).collect();
    let prevalence = labels.iter().filter(|&&y| y).count() as f64 / labels.len() as f64;
    let mean: f64 = (0..50u64)
        .map(|seed| {
            let samples: Vec<(f64, bool)> = labels
                .iter()
                .enumerate()
                .map(|(i, &y)| (-u_random(&format!("q{i}"), seed).u, y))
                .collect();
            auprc(&pr_curve(&samples).unwrap()).unwrap()
        })
        .sum::<f64>()
        / 50.0;
    assert!((mean - prevalence).abs() < 0.02, "{mean} vs {prevalence}");
}

#[test]
fn random_scores_are_uniform_and_keyed() {
    let us: Vec<f64> = (0..20_000).map(|i| u_random(&format!("q{i}"), 9).u).collect();
    assert!(us.iter().all(|u| (0.0..1.0).contains(u)));
    let mean = us.iter().sum::<f64>() / us.len() as f64;
    assert!((mean - 0.5).abs() < 0.01);
    assert_eq!(u_random("q1", 9), u_random("q1", 9));
    assert_ne!(u_random("q1", 9).u, u_random("q1", 10).u);
}

/// Candidates on one meridian: the spread is a one-dimensional weighted
/// variance of northward offsets.
#[test]
fn sue_on_a_meridian_matches_weighted_variance() {
    let north = [0.0, 12.0, -30.0, 55.0, 200.0, -7.5];
    let dists = [0.40, 0.45, 0.52, 0.60, 0.61, 0.90];
    let lat0 = 30.0;
    let db = Manifest::new(
        north
            .iter()
            .enumerate()
            .map(|(i, m)| GeoRecord {
                id: format!("d{i}"),
                lat: lat0 + (m / common::R).to_degrees(),
                lon: 12.0,
                descriptor_index: i,
            })
            .collect(),
    )
    .unwrap();
    let s = Shortlist {
        query_id: "q".into(),
        entries: dists
            .iter()
            .enumerate()
            .map(|(i, &d)| ShortlistEntry { db_id: format!("d{i}"), distance: d })
            .collect(),
    };
    for sigma in [0.1, 0.3, 1.0, 5.0] {
        let w: Vec<f64> = dists.iter().map(|d| (-d * d / (sigma * sigma)).exp()).collect();
        let total: f64 = w.iter().sum();
        let mean: f64 = w.iter().zip(&north).map(|(w, y)| w * y).sum::<f64>() / total;
        let var: f64 = w.iter().zip(&north).map(|(w, y)| w * (y - mean).powi(2)).sum::<f64>() / total;
        let got = u_sue(&s, db.geo(), SueParams { top_l: 10, sigma: Some(sigma) }).unwrap().u;
        assert!((got - var).abs() < 1e-9 * var.max(1.0), "sigma {sigma}: {got} vs {var}");
    }
    let top3 = u_sue(&s, db.geo(), SueParams { top_l: 3, sigma: Some(1.0) }).unwrap().u;
    let full = u_sue(&s, db.geo(), SueParams { top_l: 6, sigma: Some(1.0) }).unwrap().u;
    assert!(top3 < full);
}
