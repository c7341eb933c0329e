//! A correct retrieval top-1 loses to a wrong candidate with more inliers.

use vprgate::dataset::{DistanceThreshold, GeoRecord, Manifest};
use vprgate::evaluation::recall_at_k;
use vprgate::matching::InlierTable;
use vprgate::rerank::rerank;
use vprgate::retrieval::{Shortlist, ShortlistEntry};

fn rec(id: &str, lat: f64, lon: f64) -> GeoRecord {
    GeoRecord { id: id.into(), lat, lon, descriptor_index: 0 }
}

fn main() -> vprgate::Result<()> {
    let queries = Manifest::new(vec![rec("query", 45.0, 7.0)])?;
    let db = Manifest::new(vec![
        rec("same_street", 45.00005, 7.0), // ~5.6 m away
        rec("similar_facade", 45.01, 7.0), // ~1.1 km away
    ])?;

    let shortlist = Shortlist {
        query_id: "query".into(),
        entries: vec![
            ShortlistEntry { db_id: "same_street".into(), distance: 0.62 },
            ShortlistEntry { db_id: "similar_facade".into(), distance: 0.71 },
        ],
    };

    let mut inliers = InlierTable::new();
    inliers.insert("query", "same_street", 7)?;
    inliers.insert("query", "similar_facade", 26)?;

    let reranked = rerank(&shortlist, &inliers)?;
    for (i, e) in reranked.entries.iter().enumerate() {
        println!(
            "rank {} <- {}  {:<15} inliers={}",
            i + 1,
            e.original_rank,
            e.db_id,
            e.inliers.unwrap_or(0)
        );
    }

    let tau = DistanceThreshold::default();
    let before = recall_at_k(&[shortlist], queries.geo(), db.geo(), 1, tau)?;
    let after = recall_at_k(&[reranked], queries.geo(), db.geo(), 1, tau)?;
    println!("R@1 at {} m: retrieval {before:.0}%, re-ranked {after:.0}%", tau.meters());
    Ok(())
}
