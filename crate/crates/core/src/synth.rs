//! Deterministic synthetic instances: geotagged database and queries,
//! descriptors with a controlled retrieval difficulty, and an inlier table with
//! a controlled matcher reliability.
//!
//! Database places sit on a square grid with [`GRID_SPACING_M`] spacing; each
//! query is placed within [`QUERY_OFFSET_M`] of exactly one of them, so the
//! ground truth is unambiguous at both 25 m and 100 m.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{DescriptorBlob, GeoRecord, Split, EARTH_RADIUS_M};
use crate::error::{Error, Result};
use crate::matching::InlierTable;
use crate::retrieval::{build_index, csv_io, search_all, Shortlist};

pub const GRID_SPACING_M: f64 = 200.0;
pub const QUERY_OFFSET_M: f64 = 4.0;
const ORIGIN: (f64, f64) = (45.0, 7.0);

/// Weight of the true place in an easy query's descriptor; the rest goes to
/// one distractor. Hard queries use the complement the other way round.
const EASY_WEIGHT: f64 = 0.75;
const HARD_WEIGHT: f64 = 0.35;
/// Per-query descriptor noise amplitude is drawn uniformly from these ranges.
const EASY_NOISE: (f64, f64) = (0.05, 0.3);
const HARD_NOISE: (f64, f64) = (0.05, 0.6);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_db: usize,
    pub n_queries: usize,
    pub dim: usize,
    /// Fraction of queries whose nearest descriptor is the true place.
    pub target_retrieval_r1: f64,
    /// Probability that the true place receives the strictly highest inlier count.
    pub matcher_quality: f64,
    /// Spread of inlier counts.
    pub inlier_noise_scale: f64,
    pub seed: u64,
    /// Candidates per query for which inlier counts are generated.
    pub shortlist_k: usize,
    /// Standard deviation (m) of GPS noise added to query positions. Non-zero
    /// values can break the one-positive-per-query guarantee on purpose.
    pub gps_noise_m: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_db: 1000,
            n_queries: 500,
            dim: 32,
            target_retrieval_r1: 0.9,
            matcher_quality: 0.9,
            inlier_noise_scale: 10.0,
            seed: 0,
            shortlist_k: 100,
            gps_noise_m: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_queries == 0 {
            return bad("n_queries must be positive".into());
        }
        if self.n_db < 2 || self.n_db < self.n_queries {
            return bad(format!(
                "need n_db >= max(2, n_queries), got n_db={} n_queries={}",
                self.n_db, self.n_queries
            ));
        }
        if self.dim < 2 {
            return bad(format!("dim must be at least 2, got {}", self.dim));
        }
        for (name, p) in [
            ("target_retrieval_r1", self.target_retrieval_r1),
            ("matcher_quality", self.matcher_quality),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(self.inlier_noise_scale >= 0.0 && self.inlier_noise_scale.is_finite()) {
            return bad(format!("inlier_noise_scale must be non-negative, got {}", self.inlier_noise_scale));
        }
        if !(self.gps_noise_m >= 0.0 && self.gps_noise_m.is_finite()) {
            return bad(format!("gps_noise_m must be non-negative, got {}", self.gps_noise_m));
        }
        if self.shortlist_k == 0 {
            return bad("shortlist_k must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthInstance {
    pub db: Split,
    pub queries: Split,
    pub inliers: InlierTable,
    /// Database row of each query's true place.
    pub ground_truth: Vec<usize>,
    /// The shortlists the inlier table was generated for.
    pub shortlists: Vec<Shortlist>,
}

/// Output file locations written by [`SynthInstance::write`].
#[derive(Debug, Clone)]
pub struct SynthPaths {
    pub db_manifest: PathBuf,
    pub db_blob: PathBuf,
    pub query_manifest: PathBuf,
    pub query_blob: PathBuf,
    pub inliers: PathBuf,
    pub ground_truth: PathBuf,
}

impl SynthPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            db_manifest: dir.join("db.jsonl"),
            db_blob: dir.join("db.vprd"),
            query_manifest: dir.join("queries.jsonl"),
            query_blob: dir.join("queries.vprd"),
            inliers: dir.join("inliers.csv"),
            ground_truth: dir.join("ground_truth.csv"),
        }
    }
}

impl SynthInstance {
    pub fn write(&self, dir: &Path) -> Result<SynthPaths> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = SynthPaths::in_dir(dir);
        self.db.write(&paths.db_manifest, &paths.db_blob)?;
        self.queries.write(&paths.query_manifest, &paths.query_blob)?;
        self.inliers.write(&paths.inliers)?;
        let p = &paths.ground_truth;
        let mut w = csv::Writer::from_path(p).map_err(|e| csv_io(p, e))?;
        w.write_record(["query_id", "db_id"]).map_err(|e| csv_io(p, e))?;
        for (q, &d) in self.queries.records().iter().zip(&self.ground_truth) {
            w.write_record([q.id.as_str(), self.db.records()[d].id.as_str()])
                .map_err(|e| csv_io(p, e))?;
        }
        w.flush().map_err(|e| Error::io(p, e))?;
        Ok(paths)
    }
}

fn offset_deg(lat0: f64, north_m: f64, east_m: f64) -> (f64, f64) {
    (
        (north_m / EARTH_RADIUS_M).to_degrees(),
        (east_m / (EARTH_RADIUS_M * lat0.to_radians().cos())).to_degrees(),
    )
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalized(v: Vec<f64>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / n) as f32).collect()
}

fn half_normal(rng: &mut ChaCha8Rng) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z.abs()
}

pub fn generate(config: &SynthConfig) -> Result<SynthInstance> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (n_db, n_q, dim) = (config.n_db, config.n_queries, config.dim);

    let cols = (n_db as f64).sqrt().ceil() as usize;
    let db_records: Vec<GeoRecord> = (0..n_db)
        .map(|i| {
            let (dlat, dlon) = offset_deg(
                ORIGIN.0,
                (i / cols) as f64 * GRID_SPACING_M,
                (i % cols) as f64 * GRID_SPACING_M,
            );
            GeoRecord {
                id: format!("db{i:06}"),
                lat: ORIGIN.0 + dlat,
                lon: ORIGIN.1 + dlon,
                descriptor_index: i,
            }
        })
        .collect();
    let db_desc: Vec<Vec<f32>> = (0..n_db)
        .map(|_| normalized(gaussian_vec(&mut rng, dim)))
        .collect();

    let mut places: Vec<usize> = (0..n_db).collect();
    places.shuffle(&mut rng);
    let ground_truth: Vec<usize> = places[..n_q].to_vec();

    let n_easy = (config.target_retrieval_r1 * n_q as f64).round() as usize;
    let mut easy = vec![false; n_q];
    easy[..n_easy].iter_mut().for_each(|e| *e = true);
    easy.shuffle(&mut rng);

    let mut query_records = Vec::with_capacity(n_q);
    let mut query_desc = Vec::with_capacity(n_q * dim);
    for (qi, &truth) in ground_truth.iter().enumerate() {
        let place = &db_records[truth];
        let r = QUERY_OFFSET_M * rng.random::<f64>().sqrt();
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let (mut north, mut east) = (r * theta.sin(), r * theta.cos());
        if config.gps_noise_m > 0.0 {
            let nz: f64 = StandardNormal.sample(&mut rng);
            let ez: f64 = StandardNormal.sample(&mut rng);
            north += nz * config.gps_noise_m;
            east += ez * config.gps_noise_m;
        }
        let (dlat, dlon) = offset_deg(place.lat, north, east);
        query_records.push(GeoRecord {
            id: format!("q{qi:06}"),
            lat: (place.lat + dlat).clamp(-90.0, 90.0),
            lon: place.lon + dlon,
            descriptor_index: qi,
        });

        let distractor = loop {
            let d = rng.random_range(0..n_db);
            if d != truth {
                break d;
            }
        };
        let w_true = if easy[qi] { EASY_WEIGHT } else { HARD_WEIGHT };
        let noise = gaussian_vec(&mut rng, dim);
        let (lo, hi) = if easy[qi] { EASY_NOISE } else { HARD_NOISE };
        let scale = rng.random_range(lo..hi) / (dim as f64).sqrt();
        let mixed: Vec<f64> = (0..dim)
            .map(|j| {
                w_true * f64::from(db_desc[truth][j])
                    + (1.0 - w_true) * f64::from(db_desc[distractor][j])
                    + scale * noise[j]
            })
            .collect();
        query_desc.extend(normalized(mixed));
    }

    let db = Split::new(db_records, DescriptorBlob::from_rows(dim, db_desc.concat())?)?;
    let queries = Split::new(query_records, DescriptorBlob::from_rows(dim, query_desc)?)?;

    let index = build_index(&db)?;
    let shortlists = search_all(&index, &queries, config.shortlist_k)?;

    let mut inliers = InlierTable::new();
    let noise = config.inlier_noise_scale;
    for (s, &truth) in shortlists.iter().zip(&ground_truth) {
        let truth_id = db.records()[truth].id.as_str();
        let mut counts: Vec<u32> = s
            .entries
            .iter()
            .map(|_| (half_normal(&mut rng) * noise).round() as u32)
            .collect();
        let truth_pos = s.entries.iter().position(|e| e.db_id == truth_id);
        let mut true_count = (3.0 * noise + half_normal(&mut rng) * noise).round() as u32 + 1;
        let reliable = rng.random::<f64>() < config.matcher_quality;
        let others: Vec<usize> = (0..s.len()).filter(|&j| Some(j) != truth_pos).collect();
        if let Some(tp) = truth_pos {
            let max_other = others.iter().map(|&j| counts[j]).max().unwrap_or(0);
            if reliable || others.is_empty() {
                true_count = true_count.max(max_other + 1);
            } else {
                let impostor = others[rng.random_range(0..others.len())];
                counts[impostor] =
                    max_other.max(true_count) + 1 + (half_normal(&mut rng) * noise).round() as u32;
            }
            counts[tp] = true_count;
        }
        for (e, &n) in s.entries.iter().zip(&counts) {
            inliers.insert(&s.query_id, &e.db_id, n)?;
        }
    }

    Ok(SynthInstance {
        db,
        queries,
        inliers,
        ground_truth,
        shortlists,
    })
}
