//! Exact nearest-neighbor retrieval over database descriptors.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Split;
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortlistEntry {
    pub db_id: String,
    pub distance: f64,
}

/// A query's ranked candidates, nearest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shortlist {
    pub query_id: String,
    pub entries: Vec<ShortlistEntry>,
}

impl Shortlist {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn db_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.iter().map(|e| e.db_id.as_str())
    }

    pub fn top1(&self) -> Option<&ShortlistEntry> {
        self.entries.first()
    }
}

/// Squared Euclidean distance accumulated in `f64`.
#[inline]
pub fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

/// Immutable brute-force index. Row order is insertion order and breaks ties.
#[derive(Debug, Clone)]
pub struct Index {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
}

pub fn build_index(db: &Split) -> Result<Index> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let dim = db.blob().dim();
    let mut data = Vec::with_capacity(db.len() * dim);
    for i in 0..db.len() {
        data.extend_from_slice(db.descriptor(i));
    }
    Ok(Index {
        ids: db.records().iter().map(|r| r.id.clone()).collect(),
        dim,
        data,
    })
}

impl Index {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// `(row, squared distance)` for the `k` nearest rows, ascending.
    pub fn nearest(&self, query: &[f32], k: usize) -> Result<Vec<(usize, f64)>> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        let mut scored: Vec<(usize, f64)> = self
            .data
            .chunks_exact(self.dim)
            .map(|row| squared_l2(query, row))
            .enumerate()
            .collect();
        let k = k.min(scored.len());
        let by_dist_then_row =
            |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_dist_then_row);
            scored.truncate(k);
        }
        scored.sort_unstable_by(by_dist_then_row);
        Ok(scored)
    }
}

pub fn search(index: &Index, query_id: &str, query: &[f32], k: usize) -> Result<Shortlist> {
    let entries = index
        .nearest(query, k)?
        .into_iter()
        .map(|(row, d2)| ShortlistEntry {
            db_id: index.ids[row].clone(),
            distance: d2.sqrt(),
        })
        .collect();
    Ok(Shortlist {
        query_id: query_id.to_owned(),
        entries,
    })
}

/// Searches every query of a split. Runs on the ambient rayon pool; output
/// order follows the query split.
pub fn search_all(index: &Index, queries: &Split, k: usize) -> Result<Vec<Shortlist>> {
    queries
        .records()
        .par_iter()
        .enumerate()
        .map(|(i, q)| search(index, &q.id, queries.descriptor(i), k))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ShortlistRow {
    query_id: String,
    rank: usize,
    db_id: String,
    distance: f64,
}

pub fn write_shortlists(path: &Path, shortlists: &[Shortlist]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for s in shortlists {
        for (i, e) in s.entries.iter().enumerate() {
            w.serialize(ShortlistRow {
                query_id: s.query_id.clone(),
                rank: i + 1,
                db_id: e.db_id.clone(),
                distance: e.distance,
            })
            .map_err(|e| csv_io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads shortlist CSV. Rows of one query must be contiguous with ranks 1, 2, ...
pub fn read_shortlists(path: &Path) -> Result<Vec<Shortlist>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    check_header(&mut rdr, path, "shortlist", &["query_id", "rank", "db_id", "distance"])?;
    let mut out: Vec<Shortlist> = Vec::new();
    for (i, row) in rdr.deserialize::<ShortlistRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Csv {
            what: "shortlist",
            line,
            msg: e.to_string(),
        })?;
        if !row.distance.is_finite() || row.distance < 0.0 {
            return Err(Error::Csv {
                what: "shortlist",
                line,
                msg: format!("bad distance {}", row.distance),
            });
        }
        let entry = ShortlistEntry {
            db_id: row.db_id,
            distance: row.distance,
        };
        match out.last_mut() {
            Some(s) if s.query_id == row.query_id => {
                if row.rank != s.entries.len() + 1 {
                    return Err(Error::Csv {
                        what: "shortlist",
                        line,
                        msg: format!("expected rank {}, got {}", s.entries.len() + 1, row.rank),
                    });
                }
                s.entries.push(entry);
            }
            _ => {
                if row.rank != 1 {
                    return Err(Error::Csv {
                        what: "shortlist",
                        line,
                        msg: format!("query {:?} must start at rank 1", row.query_id),
                    });
                }
                if out.iter().any(|s| s.query_id == row.query_id) {
                    return Err(Error::DuplicateId(row.query_id));
                }
                out.push(Shortlist {
                    query_id: row.query_id,
                    entries: vec![entry],
                });
            }
        }
    }
    Ok(out)
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Csv {
            what: "csv",
            line: 0,
            msg: format!("{other:?}"),
        },
    }
}

pub(crate) fn check_header<R: std::io::Read>(
    rdr: &mut csv::Reader<R>,
    path: &Path,
    what: &'static str,
    expected: &[&str],
) -> Result<()> {
    let headers = rdr.headers().map_err(|e| csv_io(path, e))?;
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::Csv {
            what,
            line: 1,
            msg: format!("expected header {:?}, got {:?}", expected.join(","), headers),
        });
    }
    Ok(())
}
