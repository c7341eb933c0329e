//! Geotagged splits: JSONL manifests, binary descriptor blobs, and the
//! geographic ground-truth rule.
//!
//! A split is a manifest (one `{"id", "lat", "lon"}` object per line) plus a
//! descriptor blob whose row `i` belongs to manifest line `i`. The blob layout
//! is `b"VPRD"`, `u32` row count, `u32` dim, then `rows * dim` little-endian
//! `f32` values in row-major order.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BLOB_MAGIC: &[u8; 4] = b"VPRD";

/// Mean Earth radius used by [`geo_distance`].
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Rows whose norm deviates from 1 by more than this are re-normalized on load.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoRecord {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub descriptor_index: usize,
}

impl GeoRecord {
    pub fn position(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    id: String,
    lat: f64,
    lon: f64,
}

/// Row-major unit-norm descriptors for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorBlob {
    dim: usize,
    data: Vec<f32>,
    renormalized: bool,
}

impl DescriptorBlob {
    /// Builds a blob from raw rows, normalizing any row that is not unit norm.
    pub fn from_rows(dim: usize, mut data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Blob("dim must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Blob(format!(
                "{} values do not form rows of dim {dim}",
                data.len()
            )));
        }
        let mut renormalized = false;
        for (row_idx, row) in data.chunks_exact_mut(dim).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("descriptor row {row_idx}")));
            }
            let norm = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Blob(format!("row {row_idx} has zero norm")));
            }
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                renormalized = true;
                for v in row.iter_mut() {
                    *v = (f64::from(*v) / norm) as f32;
                }
            }
        }
        Ok(Self {
            dim,
            data,
            renormalized,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Whether any row had to be re-normalized during construction.
    pub fn renormalized(&self) -> bool {
        self.renormalized
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.data.len() * 4);
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&(self.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Blob("truncated header".into()));
        }
        if &bytes[..4] != BLOB_MAGIC {
            return Err(Error::Blob("bad magic, expected \"VPRD\"".into()));
        }
        let declared = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(Error::Blob("bad dim 0".into()));
        }
        let payload = &bytes[12..];
        let row_bytes = dim * 4;
        if !payload.len().is_multiple_of(row_bytes) {
            return Err(Error::Blob(format!(
                "payload of {} bytes is not a whole number of {dim}-float rows",
                payload.len()
            )));
        }
        let actual = payload.len() / row_bytes;
        if actual != declared {
            return Err(Error::RowCountMismatch { declared, actual });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_rows(dim, data)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Manifest records plus their descriptors.
#[derive(Debug, Clone)]
pub struct Split {
    records: Vec<GeoRecord>,
    blob: DescriptorBlob,
    by_id: HashMap<String, usize>,
}

impl Split {
    pub fn new(records: Vec<GeoRecord>, blob: DescriptorBlob) -> Result<Self> {
        if records.len() != blob.rows() {
            return Err(Error::CountMismatch {
                manifest: records.len(),
                blob: blob.rows(),
            });
        }
        let by_id = index_ids(&records)?;
        for r in &records {
            if !r.position().is_valid() {
                return Err(Error::InvalidConfig(format!(
                    "record {:?} has out-of-range coordinates ({}, {})",
                    r.id, r.lat, r.lon
                )));
            }
            if r.descriptor_index >= blob.rows() {
                return Err(Error::Blob(format!(
                    "record {:?} points at row {} of {}",
                    r.id,
                    r.descriptor_index,
                    blob.rows()
                )));
            }
        }
        Ok(Self {
            records,
            blob,
            by_id,
        })
    }

    pub fn records(&self) -> &[GeoRecord] {
        &self.records
    }

    pub fn blob(&self) -> &DescriptorBlob {
        &self.blob
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        self.blob.row(self.records[i].descriptor_index)
    }

    pub fn get(&self, id: &str) -> Option<&GeoRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn position_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// A geographic id lookup over this split's records.
    pub fn geo(&self) -> GeoLookup<'_> {
        GeoLookup {
            records: &self.records,
            by_id: &self.by_id,
        }
    }

    pub fn write(&self, manifest_path: &Path, blob_path: &Path) -> Result<()> {
        write_manifest(manifest_path, &self.records)?;
        self.blob.write(blob_path)
    }
}

/// Borrowed `id -> GeoRecord` lookup.
#[derive(Debug, Clone, Copy)]
pub struct GeoLookup<'a> {
    records: &'a [GeoRecord],
    by_id: &'a HashMap<String, usize>,
}

impl<'a> GeoLookup<'a> {
    pub fn get(&self, id: &str) -> Option<&'a GeoRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn require(&self, id: &str) -> Result<&'a GeoRecord> {
        self.get(id).ok_or_else(|| Error::UnknownId(id.to_owned()))
    }

    pub fn records(&self) -> &'a [GeoRecord] {
        self.records
    }
}

/// Records without descriptors, for commands that only need coordinates.
#[derive(Debug, Clone)]
pub struct Manifest {
    records: Vec<GeoRecord>,
    by_id: HashMap<String, usize>,
}

impl Manifest {
    pub fn new(records: Vec<GeoRecord>) -> Result<Self> {
        let by_id = index_ids(&records)?;
        Ok(Self { records, by_id })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::new(read_manifest(path)?)
    }

    pub fn records(&self) -> &[GeoRecord] {
        &self.records
    }

    pub fn geo(&self) -> GeoLookup<'_> {
        GeoLookup {
            records: &self.records,
            by_id: &self.by_id,
        }
    }
}

fn index_ids(records: &[GeoRecord]) -> Result<HashMap<String, usize>> {
    let mut by_id = HashMap::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if by_id.insert(r.id.clone(), i).is_some() {
            return Err(Error::DuplicateId(r.id.clone()));
        }
    }
    Ok(by_id)
}

/// Parses a JSONL manifest. Blank lines are skipped; line numbers are 1-based.
pub fn parse_manifest(reader: impl BufRead) -> Result<Vec<GeoRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.map_err(|e| Error::Manifest {
            line: line_no,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: line_no,
            msg: e.to_string(),
        })?;
        let pos = LatLon::new(parsed.lat, parsed.lon);
        if !pos.is_valid() {
            return Err(Error::Manifest {
                line: line_no,
                msg: format!("coordinates ({}, {}) out of range", parsed.lat, parsed.lon),
            });
        }
        records.push(GeoRecord {
            id: parsed.id,
            lat: parsed.lat,
            lon: parsed.lon,
            descriptor_index: records.len(),
        });
    }
    Ok(records)
}

pub fn read_manifest(path: &Path) -> Result<Vec<GeoRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(BufReader::new(file))
}

pub fn write_manifest(path: &Path, records: &[GeoRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(&ManifestLine {
            id: r.id.clone(),
            lat: r.lat,
            lon: r.lon,
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a manifest and its descriptor blob as one [`Split`].
pub fn load_split(manifest_path: &Path, blob_path: &Path) -> Result<Split> {
    let records = read_manifest(manifest_path)?;
    let blob = DescriptorBlob::read(blob_path)?;
    Split::new(records, blob)
}

/// Great-circle distance in meters (haversine on a sphere of [`EARTH_RADIUS_M`]).
pub fn geo_distance(a: LatLon, b: LatLon) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Correctness radius in meters.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DistanceThreshold(f64);

impl DistanceThreshold {
    pub const DEFAULT_METERS: f64 = 25.0;

    pub fn new(meters: f64) -> Result<Self> {
        if meters.is_finite() && meters > 0.0 {
            Ok(Self(meters))
        } else {
            Err(Error::InvalidConfig(format!(
                "distance threshold must be positive, got {meters}"
            )))
        }
    }

    pub fn meters(self) -> f64 {
        self.0
    }
}

impl Default for DistanceThreshold {
    fn default() -> Self {
        Self(Self::DEFAULT_METERS)
    }
}

impl TryFrom<f64> for DistanceThreshold {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DistanceThreshold> for f64 {
    fn from(t: DistanceThreshold) -> f64 {
        t.0
    }
}

/// A candidate localizes the query when it lies within `threshold` meters (inclusive).
pub fn is_correct(query: &GeoRecord, candidate: &GeoRecord, threshold: DistanceThreshold) -> bool {
    geo_distance(query.position(), candidate.position()) <= threshold.meters()
}
