//! Independent reference implementations used by the integration and
//! acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vprgate::dataset::{DescriptorBlob, GeoRecord, Split};
use vprgate::evaluation::PrPoint;

pub const R: f64 = 6_371_000.0;

/// Great-circle distance from the chord between unit vectors.
pub fn chord_distance(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let v = |lat: f64, lon: f64| {
        let (la, lo) = (lat.to_radians(), lon.to_radians());
        [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
    };
    let (a, b) = (v(lat1, lon1), v(lat2, lon2));
    let c = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    2.0 * R * (c / 2.0).min(1.0).asin()
}

/// Full stable sort of every row; ties stay in row order.
pub fn knn_full_sort(db: &[Vec<f32>], q: &[f32], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = db
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let d: f64 = r.iter().zip(q).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
            (i, d)
        })
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    all.truncate(k);
    all
}

/// Indices of `counts` in re-ranked order: larger counts first, missing last,
/// original order otherwise.
pub fn rerank_order(counts: &[Option<u32>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..counts.len()).collect();
    idx.sort_by_key(|&i| std::cmp::Reverse(counts[i].map_or(-1, i64::from)));
    idx
}

/// Precision-recall by enumerating every distinct threshold `conf >= t`.
pub fn pr_by_thresholds(samples: &[(f64, bool)]) -> Vec<PrPoint> {
    let mut ts: Vec<f64> = samples.iter().map(|s| s.0).collect();
    ts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ts.dedup();
    let pos = samples.iter().filter(|s| s.1).count() as f64;
    ts.iter()
        .map(|&t| {
            let picked: Vec<_> = samples.iter().filter(|s| s.0 >= t).collect();
            let tp = picked.iter().filter(|s| s.1).count() as f64;
            PrPoint {
                recall: tp / pos,
                precision: tp / picked.len() as f64,
            }
        })
        .collect()
}

pub fn area_by_thresholds(samples: &[(f64, bool)]) -> f64 {
    let mut prev = 0.0;
    pr_by_thresholds(samples)
        .iter()
        .map(|p| {
            let a = (p.recall - prev) * p.precision;
            prev = p.recall;
            a
        })
        .sum()
}

pub fn plain_sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn unit_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| {
            let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

pub fn split_of(prefix: &str, rows: &[Vec<f32>]) -> Split {
    let records = (0..rows.len())
        .map(|i| GeoRecord {
            id: format!("{prefix}{i}"),
            lat: 0.0,
            lon: 0.0,
            descriptor_index: i,
        })
        .collect();
    Split::new(records, DescriptorBlob::from_rows(rows[0].len(), rows.concat()).unwrap()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
