//! Scores a confident and an ambiguous shortlist with every estimator.

use vprgate::dataset::{GeoRecord, Manifest};
use vprgate::matching::InlierTable;
use vprgate::retrieval::{Shortlist, ShortlistEntry};
use vprgate::uncertainty::{estimate, Estimator, EstimatorContext, SueParams};

fn main() -> vprgate::Result<()> {
    // db0..db4 cluster within a few meters; db5..db9 scatter over kilometers
    let db: Vec<GeoRecord> = (0..10)
        .map(|i| {
            let spread = if i < 5 { 2e-5 } else { 2e-2 };
            GeoRecord {
                id: format!("db{i}"),
                lat: 45.0 + spread * i as f64,
                lon: 7.0 - spread * (i % 3) as f64,
                descriptor_index: i,
            }
        })
        .collect();
    let db = Manifest::new(db)?;

    let list = |q: &str, ids: &[usize], dists: &[f64]| Shortlist {
        query_id: q.into(),
        entries: ids
            .iter()
            .zip(dists)
            .map(|(i, d)| ShortlistEntry { db_id: format!("db{i}"), distance: *d })
            .collect(),
    };
    let confident = list("confident", &[0, 1, 2, 3, 4], &[0.30, 0.90, 0.92, 0.95, 0.97]);
    let ambiguous = list("ambiguous", &[5, 6, 7, 8, 9], &[0.80, 0.81, 0.82, 0.84, 0.85]);

    let mut inliers = InlierTable::new();
    inliers.insert("confident", "db0", 180)?;
    inliers.insert("ambiguous", "db5", 12)?;

    let ctx = EstimatorContext {
        db: db.geo(),
        provider: &inliers,
        seed: 42,
        sue: SueParams::default(),
    };
    println!("{:<8} {:>14} {:>14}", "", confident.query_id, ambiguous.query_id);
    for est in Estimator::ALL {
        let a = estimate(est, &confident, &ctx)?;
        let b = estimate(est, &ambiguous, &ctx)?;
        println!("{:<8} {:>14.4} {:>14.4}", est.name(), a.u, b.u);
    }
    Ok(())
}
