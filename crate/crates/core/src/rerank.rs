//! Inlier-count re-ranking of shortlists and the per-query gate that decides
//! whether to re-rank at all.

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{predict_prob, LogisticModel};
use crate::error::{Error, Result};
use crate::matching::{InlierSource, MatchError};
use crate::retrieval::{csv_io, Shortlist};
use crate::uncertainty::{Estimator, UncertaintyScore};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankedEntry {
    pub db_id: String,
    pub inliers: Option<u32>,
    /// 1-based rank in the retrieval shortlist.
    pub original_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RerankedShortlist {
    pub query_id: String,
    pub entries: Vec<RerankedEntry>,
    pub gate_fired: bool,
    /// Pairs whose inlier count could not be obtained.
    pub diagnostics: Vec<MatchError>,
}

impl RerankedShortlist {
    /// The retrieval order, untouched.
    pub fn unchanged(shortlist: &Shortlist) -> Self {
        Self {
            query_id: shortlist.query_id.clone(),
            entries: shortlist
                .entries
                .iter()
                .enumerate()
                .map(|(i, e)| RerankedEntry {
                    db_id: e.db_id.clone(),
                    inliers: None,
                    original_rank: i + 1,
                })
                .collect(),
            gate_fired: false,
            diagnostics: Vec::new(),
        }
    }

    pub fn db_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.iter().map(|e| e.db_id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Present counts first (descending), then missing ones; ties keep retrieval order.
fn rerank_order(a: &RerankedEntry, b: &RerankedEntry) -> Ordering {
    let by_count = match (a.inliers, b.inliers) {
        (Some(x), Some(y)) => y.cmp(&x),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    };
    by_count.then(a.original_rank.cmp(&b.original_rank))
}

/// Sorts the shortlist by inlier count. Per-pair matcher failures demote that
/// candidate to "missing" and are recorded in `diagnostics`.
pub fn rerank(shortlist: &Shortlist, provider: &(impl InlierSource + ?Sized)) -> Result<RerankedShortlist> {
    if shortlist.is_empty() {
        return Err(Error::ShortlistTooShort {
            query: shortlist.query_id.clone(),
            len: 0,
            need: 1,
        });
    }
    let counts: Vec<Result<u32, MatchError>> = shortlist
        .entries
        .par_iter()
        .map(|e| provider.inliers(&shortlist.query_id, &e.db_id))
        .collect();

    let mut diagnostics = Vec::new();
    let mut entries: Vec<RerankedEntry> = shortlist
        .entries
        .iter()
        .zip(counts)
        .enumerate()
        .map(|(i, (e, count))| RerankedEntry {
            db_id: e.db_id.clone(),
            inliers: count.map_err(|err| diagnostics.push(err)).ok(),
            original_rank: i + 1,
        })
        .collect();
    entries.sort_by(rerank_order);

    Ok(RerankedShortlist {
        query_id: shortlist.query_id.clone(),
        entries,
        gate_fired: true,
        diagnostics,
    })
}

/// Threshold on the calibrated probability of a wrong top-1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatePolicy {
    pub model: LogisticModel,
    pub threshold: f64,
    pub estimator: Estimator,
}

impl GatePolicy {
    pub const DEFAULT_THRESHOLD: f64 = 0.5;

    pub fn new(model: LogisticModel, threshold: f64, estimator: Estimator) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gate threshold must lie strictly between 0 and 1, got {threshold}"
            )));
        }
        Ok(Self {
            model,
            threshold,
            estimator,
        })
    }

    /// Gate fires when `P(wrong | u)` strictly exceeds the threshold.
    pub fn fires(&self, u: f64) -> bool {
        predict_prob(&self.model, u) > self.threshold
    }
}

/// Re-ranks only when the policy judges the query uncertain. A closed gate
/// queries the matcher for nothing; the top-1 count is filled in only when
/// `u` already is the negated top-1 inlier count.
pub fn adaptive_rerank(
    shortlist: &Shortlist,
    provider: &(impl InlierSource + ?Sized),
    policy: &GatePolicy,
    u: &UncertaintyScore,
) -> Result<RerankedShortlist> {
    if u.estimator != policy.estimator {
        return Err(Error::InvalidConfig(format!(
            "gate expects {} scores, got {}",
            policy.estimator, u.estimator
        )));
    }
    if u.query_id != shortlist.query_id {
        return Err(Error::InvalidConfig(format!(
            "score for {:?} applied to shortlist of {:?}",
            u.query_id, shortlist.query_id
        )));
    }
    let top1 = (u.estimator == Estimator::Inlier).then(|| (-u.u) as u32);
    gated(shortlist, provider, policy.fires(u.u), top1)
}

/// Applies an already-made gate decision.
pub fn gated(
    shortlist: &Shortlist,
    provider: &(impl InlierSource + ?Sized),
    fire: bool,
    top1_inliers: Option<u32>,
) -> Result<RerankedShortlist> {
    if fire {
        return rerank(shortlist, provider);
    }
    if shortlist.is_empty() {
        return Err(Error::ShortlistTooShort {
            query: shortlist.query_id.clone(),
            len: 0,
            need: 1,
        });
    }
    let mut out = RerankedShortlist::unchanged(shortlist);
    out.entries[0].inliers = top1_inliers;
    Ok(out)
}

pub fn write_reranked(path: &Path, lists: &[RerankedShortlist]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["query_id", "new_rank", "db_id", "inliers", "original_rank", "gate_fired"])
        .map_err(|e| csv_io(path, e))?;
    for l in lists {
        for (i, e) in l.entries.iter().enumerate() {
            w.write_record([
                l.query_id.as_str(),
                &(i + 1).to_string(),
                e.db_id.as_str(),
                &e.inliers.map(|n| n.to_string()).unwrap_or_default(),
                &e.original_rank.to_string(),
                if l.gate_fired { "true" } else { "false" },
            ])
            .map_err(|e| csv_io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
