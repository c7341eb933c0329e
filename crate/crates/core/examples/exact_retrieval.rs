//! Builds an exact index over random unit descriptors, retrieves shortlists,
//! and round-trips them through CSV.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vprgate::dataset::{DescriptorBlob, GeoRecord, Split};
use vprgate::retrieval::{build_index, read_shortlists, search_all, write_shortlists};

fn split(prefix: &str, n: usize, dim: usize, rng: &mut ChaCha8Rng) -> vprgate::Result<Split> {
    let data: Vec<f32> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let records = (0..n)
        .map(|i| GeoRecord {
            id: format!("{prefix}{i:04}"),
            lat: 45.0 + i as f64 * 1e-3,
            lon: 7.0,
            descriptor_index: i,
        })
        .collect();
    // rows are not unit length yet; the blob normalizes them
    Split::new(records, DescriptorBlob::from_rows(dim, data)?)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let db = split("db", 5000, 64, &mut rng)?;
    let queries = split("q", 8, 64, &mut rng)?;

    let index = build_index(&db)?;
    let shortlists = search_all(&index, &queries, 5)?;
    for s in &shortlists {
        let ranked: Vec<String> = s
            .entries
            .iter()
            .map(|e| format!("{}({:.3})", e.db_id, e.distance))
            .collect();
        println!("{}: {}", s.query_id, ranked.join(" "));
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("shortlists.csv");
    write_shortlists(&path, &shortlists)?;
    assert_eq!(read_shortlists(&path)?, shortlists);
    println!("round-tripped {} shortlists through {}", shortlists.len(), path.display());
    Ok(())
}
