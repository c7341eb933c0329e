//! Recall@K at a distance threshold, precision-recall curves over uncertainty
//! scores, and the end-to-end evaluation report.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{fit_logistic, LogisticModel};
use crate::dataset::{is_correct, DistanceThreshold, GeoLookup, Split};
use crate::error::{Error, Result};
use crate::matching::InlierSource;
use crate::rerank::{gated, rerank, GatePolicy, RerankedShortlist};
use crate::retrieval::{build_index, csv_io, search_all, Shortlist, DEFAULT_K};
use crate::uncertainty::{estimate, Estimator, EstimatorContext, SueParams, UncertaintyScore};

/// A ranked candidate list for one query.
pub trait Ranked: Sync {
    fn query_id(&self) -> &str;
    fn ranked_ids(&self) -> Vec<&str>;
}

impl Ranked for Shortlist {
    fn query_id(&self) -> &str {
        &self.query_id
    }

    fn ranked_ids(&self) -> Vec<&str> {
        self.db_ids().collect()
    }
}

impl Ranked for RerankedShortlist {
    fn query_id(&self) -> &str {
        &self.query_id
    }

    fn ranked_ids(&self) -> Vec<&str> {
        self.db_ids().collect()
    }
}

/// Whether any of the first `k` candidates lies within `threshold` of the query.
pub fn hit_at_k(
    result: &impl Ranked,
    queries: GeoLookup<'_>,
    db: GeoLookup<'_>,
    k: usize,
    threshold: DistanceThreshold,
) -> Result<bool> {
    let q = queries.require(result.query_id())?;
    for id in result.ranked_ids().into_iter().take(k) {
        if is_correct(q, db.require(id)?, threshold) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Percentage of queries with a correct candidate in the top `k`. Empty
/// lists count as misses.
pub fn recall_at_k<R: Ranked>(
    results: &[R],
    queries: GeoLookup<'_>,
    db: GeoLookup<'_>,
    k: usize,
    threshold: DistanceThreshold,
) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::NoQueries);
    }
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    let hits = results
        .par_iter()
        .map(|r| hit_at_k(r, queries, db, k, threshold).map(usize::from))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(100.0 * hits as f64 / results.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Precision-recall points for classifying queries as correctly localized.
///
/// `samples` are `(confidence, correct)`; confidence is usually `-u`. Samples
/// are swept by descending confidence and equal confidences form a single
/// threshold, so the output does not depend on input order.
pub fn pr_curve(samples: &[(f64, bool)]) -> Result<Vec<PrPoint>> {
    if let Some(&(c, _)) = samples.iter().find(|s| !s.0.is_finite()) {
        return Err(Error::NonFinite(format!("confidence {c}")));
    }
    let positives = samples.iter().filter(|s| s.1).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut curve = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let c = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == c {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push(PrPoint {
            recall: tp as f64 / positives as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    Ok(curve)
}

/// Step-wise area `sum (r_i - r_{i-1}) * p_i` with `r_0 = 0`.
pub fn auprc(curve: &[PrPoint]) -> Result<f64> {
    if curve.is_empty() {
        return Err(Error::EmptyCurve);
    }
    let mut prev = 0.0;
    let mut area = 0.0;
    for p in curve {
        area += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    Ok(area)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GateSignal {
    Estimator(Estimator),
    /// Fires exactly on queries whose retrieval top-1 is wrong at the first
    /// threshold. An upper reference for any real gate.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub signal: GateSignal,
    pub threshold: f64,
    /// Calibration to apply. When absent the model is fit on this instance.
    pub model: Option<LogisticModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Shortlist length.
    pub k: usize,
    pub recall_ks: Vec<usize>,
    /// The first threshold labels queries for AUPRC and gate calibration.
    pub taus: Vec<DistanceThreshold>,
    pub estimators: Vec<Estimator>,
    pub gate: Option<GateConfig>,
    pub seed: u64,
    pub sue: SueParams,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            recall_ks: vec![1, 5, 10, 100],
            taus: vec![DistanceThreshold::default()],
            estimators: Estimator::ALL.to_vec(),
            gate: None,
            seed: 0,
            sue: SueParams::default(),
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallAtK {
    pub k: usize,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub method: String,
    pub tau: f64,
    pub values: Vec<RecallAtK>,
}

impl RecallRow {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.values.iter().find(|v| v.k == k).map(|v| v.recall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub estimator: Estimator,
    pub tau: f64,
    /// `None` when no query is correct at this threshold.
    pub auprc: Option<f64>,
    pub curve: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSummary {
    pub signal: GateSignal,
    pub threshold: f64,
    pub model: Option<LogisticModel>,
    pub fired: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauCount {
    pub tau: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_queries: usize,
    pub shortlist_k: usize,
    pub recalls: Vec<RecallRow>,
    pub correct_top1: Vec<TauCount>,
    pub estimators: Vec<EstimatorReport>,
    pub gate: Option<GateSummary>,
    /// Pairs the matcher could not score during full re-ranking.
    pub missing_pairs: usize,
}

impl EvalReport {
    pub fn row(&self, method: &str, tau: f64) -> Option<&RecallRow> {
        self.recalls
            .iter()
            .find(|r| r.method == method && r.tau == tau)
    }

    pub fn recall(&self, method: &str, tau: f64, k: usize) -> Option<f64> {
        self.row(method, tau)?.at(k)
    }

    pub fn auprc(&self, estimator: Estimator, tau: f64) -> Option<f64> {
        self.estimators
            .iter()
            .find(|e| e.estimator == estimator && e.tau == tau)?
            .auprc
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Human-readable table; percentages to one decimal.
    pub fn to_table(&self) -> String {
        let ks: Vec<usize> = self
            .recalls
            .first()
            .map(|r| r.values.iter().map(|v| v.k).collect())
            .unwrap_or_default();
        let mut out = String::new();
        let _ = write!(out, "{:<10} {:>7}", "method", "tau(m)");
        for k in &ks {
            let _ = write!(out, " {:>7}", format!("R@{k}"));
        }
        out.push('\n');
        for r in &self.recalls {
            let _ = write!(out, "{:<10} {:>7.1}", r.method, r.tau);
            for v in &r.values {
                let _ = write!(out, " {:>7.1}", v.recall);
            }
            out.push('\n');
        }
        out.push('\n');
        let _ = writeln!(out, "{:<10} {:>7} {:>7}", "estimator", "tau(m)", "AUPRC");
        for e in &self.estimators {
            let a = e
                .auprc
                .map(|a| format!("{:.1}", 100.0 * a))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(out, "{:<10} {:>7.1} {:>7}", e.estimator.name(), e.tau, a);
        }
        let _ = writeln!(out, "\nqueries: {}", self.n_queries);
        for c in &self.correct_top1 {
            let _ = writeln!(out, "correct top-1 @ {:.1} m: {}", c.tau, c.count);
        }
        if let Some(g) = &self.gate {
            let _ = writeln!(out, "gate firings: {} (threshold {})", g.fired, g.threshold);
        }
        if self.missing_pairs > 0 {
            let _ = writeln!(out, "missing inlier pairs: {}", self.missing_pairs);
        }
        out
    }

    /// `estimator,recall,precision` rows for the first threshold.
    pub fn write_curves(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(["estimator", "recall", "precision"])
            .map_err(|e| csv_io(path, e))?;
        let first_tau = self.estimators.first().map(|e| e.tau);
        for e in self.estimators.iter().filter(|e| Some(e.tau) == first_tau) {
            for p in &e.curve {
                w.write_record([e.estimator.name(), &p.recall.to_string(), &p.precision.to_string()])
                    .map_err(|e| csv_io(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn validate(config: &PipelineConfig) -> Result<()> {
    if config.k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if config.taus.is_empty() {
        return Err(Error::InvalidConfig("at least one distance threshold is required".into()));
    }
    if config.recall_ks.is_empty() || config.recall_ks.contains(&0) {
        return Err(Error::InvalidConfig("recall K values must be positive".into()));
    }
    if let Some(g) = &config.gate {
        if !(g.threshold > 0.0 && g.threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gate threshold must lie strictly between 0 and 1, got {}",
                g.threshold
            )));
        }
    }
    Ok(())
}

/// Retrieves shortlists for every query, then evaluates them.
pub fn evaluate_pipeline(
    queries: &Split,
    db: &Split,
    provider: &dyn InlierSource,
    config: &PipelineConfig,
) -> Result<EvalReport> {
    validate(config)?;
    with_pool(config.threads, || {
        let index = build_index(db)?;
        let shortlists = search_all(&index, queries, config.k)?;
        evaluate_inner(&shortlists, queries.geo(), db.geo(), provider, config)
    })
}

/// Evaluates precomputed shortlists: retrieval-only, full re-rank, optional
/// gated re-rank, and AUPRC for each estimator.
pub fn evaluate_shortlists(
    shortlists: &[Shortlist],
    queries: GeoLookup<'_>,
    db: GeoLookup<'_>,
    provider: &dyn InlierSource,
    config: &PipelineConfig,
) -> Result<EvalReport> {
    validate(config)?;
    with_pool(config.threads, || {
        evaluate_inner(shortlists, queries, db, provider, config)
    })
}

fn evaluate_inner(
    shortlists: &[Shortlist],
    queries: GeoLookup<'_>,
    db: GeoLookup<'_>,
    provider: &dyn InlierSource,
    config: &PipelineConfig,
) -> Result<EvalReport> {
    if shortlists.is_empty() {
        return Err(Error::NoQueries);
    }
    let primary_tau = config.taus[0];

    let reranked: Vec<RerankedShortlist> = shortlists
        .par_iter()
        .map(|s| rerank(s, provider).map_err(|e| e.in_query(&s.query_id)))
        .collect::<Result<_>>()?;
    let missing_pairs = reranked.iter().map(|r| r.diagnostics.len()).sum();

    let top1_correct = |tau: DistanceThreshold| -> Result<Vec<bool>> {
        shortlists
            .par_iter()
            .map(|s| hit_at_k(s, queries, db, 1, tau).map_err(|e| e.in_query(&s.query_id)))
            .collect()
    };
    let primary_correct = top1_correct(primary_tau)?;

    let ctx = EstimatorContext {
        db,
        provider,
        seed: config.seed,
        sue: config.sue,
    };
    let scores_for = |estimator: Estimator| -> Result<Vec<UncertaintyScore>> {
        shortlists
            .par_iter()
            .map(|s| estimate(estimator, s, &ctx).map_err(|e| e.in_query(&s.query_id)))
            .collect()
    };

    let mut estimator_scores = Vec::with_capacity(config.estimators.len());
    for &e in &config.estimators {
        estimator_scores.push((e, scores_for(e)?));
    }

    let mut gate_summary = None;
    let adaptive: Option<Vec<RerankedShortlist>> = match &config.gate {
        None => None,
        Some(gate) => {
            let (fire, top1, model): (Vec<bool>, Vec<Option<u32>>, Option<LogisticModel>) = match gate.signal {
                GateSignal::Oracle => (
                    primary_correct.iter().map(|&ok| !ok).collect(),
                    vec![None; shortlists.len()],
                    None,
                ),
                GateSignal::Estimator(est) => {
                    let scores = match estimator_scores.iter().find(|(e, _)| *e == est) {
                        Some((_, s)) => s.clone(),
                        None => scores_for(est)?,
                    };
                    let model = match gate.model {
                        Some(m) => m,
                        None => {
                            let training: Vec<(f64, bool)> = scores
                                .iter()
                                .zip(&primary_correct)
                                .map(|(s, &ok)| (s.u, !ok))
                                .collect();
                            fit_logistic(&training).map_err(|e| {
                                Error::InvalidConfig(format!(
                                    "cannot calibrate the gate on this instance ({e}); supply a model"
                                ))
                            })?
                        }
                    };
                    let policy = GatePolicy::new(model, gate.threshold, est)?;
                    let top1 = scores
                        .iter()
                        .map(|s| (est == Estimator::Inlier).then(|| (-s.u) as u32))
                        .collect();
                    (scores.iter().map(|s| policy.fires(s.u)).collect(), top1, Some(model))
                }
            };
            let out = shortlists
                .par_iter()
                .zip(fire.par_iter().zip(top1.par_iter()))
                .map(|(s, (&f, &t))| gated(s, provider, f, t).map_err(|e| e.in_query(&s.query_id)))
                .collect::<Result<Vec<_>>>()?;
            gate_summary = Some(GateSummary {
                signal: gate.signal,
                threshold: gate.threshold,
                model,
                fired: fire.iter().filter(|&&f| f).count(),
            });
            Some(out)
        }
    };

    let mut recalls = Vec::new();
    let mut correct_top1 = Vec::new();
    let mut estimators = Vec::new();
    for &tau in &config.taus {
        let row = |method: &str, values: Vec<RecallAtK>| RecallRow {
            method: method.into(),
            tau: tau.meters(),
            values,
        };
        let values_for = |results: &dyn Fn(usize) -> Result<f64>| -> Result<Vec<RecallAtK>> {
            config
                .recall_ks
                .iter()
                .map(|&k| Ok(RecallAtK { k, recall: results(k)? }))
                .collect()
        };
        recalls.push(row(
            "retrieval",
            values_for(&|k| recall_at_k(shortlists, queries, db, k, tau))?,
        ));
        recalls.push(row(
            "rerank",
            values_for(&|k| recall_at_k(&reranked, queries, db, k, tau))?,
        ));
        if let Some(adaptive) = &adaptive {
            recalls.push(row(
                "adaptive",
                values_for(&|k| recall_at_k(adaptive, queries, db, k, tau))?,
            ));
        }

        let correct = if tau == primary_tau {
            primary_correct.clone()
        } else {
            top1_correct(tau)?
        };
        correct_top1.push(TauCount {
            tau: tau.meters(),
            count: correct.iter().filter(|&&c| c).count(),
        });

        for (estimator, scores) in &estimator_scores {
            let samples: Vec<(f64, bool)> = scores
                .iter()
                .zip(&correct)
                .map(|(s, &ok)| (-s.u, ok))
                .collect();
            let (curve, area) = match pr_curve(&samples) {
                Ok(curve) => {
                    let a = auprc(&curve)?;
                    (curve, Some(a))
                }
                Err(Error::NoPositives) => (Vec::new(), None),
                Err(e) => return Err(e),
            };
            estimators.push(EstimatorReport {
                estimator: *estimator,
                tau: tau.meters(),
                auprc: area,
                curve,
            });
        }
    }

    Ok(EvalReport {
        n_queries: shortlists.len(),
        shortlist_k: shortlists.iter().map(|s| s.len()).max().unwrap_or(0),
        recalls,
        correct_top1,
        estimators,
        gate: gate_summary,
        missing_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{GeoRecord, Manifest, EARTH_RADIUS_M};
    use crate::retrieval::ShortlistEntry;

    fn north(m: f64) -> f64 {
        45.0 + (m / EARTH_RADIUS_M).to_degrees()
    }

    fn rec(id: &str, lat: f64) -> GeoRecord {
        GeoRecord {
            id: id.into(),
            lat,
            lon: 7.0,
            descriptor_index: 0,
        }
    }

    fn shortlist(q: &str, ids: &[&str]) -> Shortlist {
        Shortlist {
            query_id: q.into(),
            entries: ids
                .iter()
                .map(|id| ShortlistEntry { db_id: (*id).into(), distance: 0.5 })
                .collect(),
        }
    }

    #[test]
    fn recall_counts_queries() {
        let queries = Manifest::new(vec![rec("q0", 45.0), rec("q1", 45.0), rec("q2", 45.0)]).unwrap();
        let db = Manifest::new(vec![
            rec("a", north(10.0)),
            rec("b", north(30.0)),
            rec("c", north(20.0)),
        ])
        .unwrap();
        let results = vec![
            shortlist("q0", &["a"]),
            shortlist("q1", &["b"]),
            shortlist("q2", &["c"]),
        ];
        let tau = DistanceThreshold::default();
        let r = recall_at_k(&results, queries.geo(), db.geo(), 1, tau).unwrap();
        assert!((r - 200.0 / 3.0).abs() < 1e-12);
        assert!((r - 66.667).abs() < 1e-3);

        let wide = DistanceThreshold::new(100.0).unwrap();
        assert_eq!(recall_at_k(&results, queries.geo(), db.geo(), 1, wide).unwrap(), 100.0);

        let empty: Vec<Shortlist> = vec![];
        assert!(matches!(
            recall_at_k(&empty, queries.geo(), db.geo(), 1, tau),
            Err(Error::NoQueries)
        ));
    }

    #[test]
    fn self_match_and_empty_lists() {
        let queries = Manifest::new(vec![rec("q0", 45.0), rec("q1", 45.0)]).unwrap();
        let db = Manifest::new(vec![rec("q0", 45.0)]).unwrap();
        let tau = DistanceThreshold::default();
        let one = vec![shortlist("q0", &["q0"])];
        assert_eq!(recall_at_k(&one, queries.geo(), db.geo(), 1, tau).unwrap(), 100.0);
        let with_empty = vec![shortlist("q0", &["q0"]), shortlist("q1", &[])];
        assert_eq!(recall_at_k(&with_empty, queries.geo(), db.geo(), 5, tau).unwrap(), 50.0);
    }

    #[test]
    fn hand_enumerated_curve() {
        let curve = pr_curve(&[(3.0, true), (2.0, false), (1.0, true)]).unwrap();
        let expected = [(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)];
        assert_eq!(curve.len(), 3);
        for (p, (r, pr)) in curve.iter().zip(expected) {
            assert_eq!(p.recall, r);
            assert!((p.precision - pr).abs() < 1e-15);
        }
        let area = auprc(&curve).unwrap();
        assert!((area - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn tie_group_is_one_point() {
        let samples = [(0.7, true), (0.7, false), (0.7, true), (0.7, false), (0.7, true)];
        let curve = pr_curve(&samples).unwrap();
        assert_eq!(curve, vec![PrPoint { recall: 1.0, precision: 0.6 }]);
        assert_eq!(auprc(&curve).unwrap(), 0.6);
    }

    #[test]
    fn separable_curve_is_perfect() {
        let samples: Vec<_> = (0..10).map(|i| (i as f64, i >= 4)).collect();
        let curve = pr_curve(&samples).unwrap();
        assert!(curve.iter().filter(|p| p.recall <= 1.0).take(6).all(|p| p.precision == 1.0));
        assert_eq!(auprc(&curve).unwrap(), 1.0);
    }

    #[test]
    fn curve_errors() {
        assert!(matches!(pr_curve(&[(1.0, false)]), Err(Error::NoPositives)));
        assert!(matches!(pr_curve(&[]), Err(Error::NoPositives)));
        assert!(matches!(pr_curve(&[(f64::NAN, true)]), Err(Error::NonFinite(_))));
        assert!(matches!(auprc(&[]), Err(Error::EmptyCurve)));
    }

    #[test]
    fn table_formats_one_decimal() {
        let report = EvalReport {
            n_queries: 3,
            shortlist_k: 1,
            recalls: vec![RecallRow {
                method: "retrieval".into(),
                tau: 25.0,
                values: vec![RecallAtK { k: 1, recall: 200.0 / 3.0 }],
            }],
            correct_top1: vec![TauCount { tau: 25.0, count: 2 }],
            estimators: vec![],
            gate: None,
            missing_pairs: 0,
        };
        let t = report.to_table();
        assert!(t.contains("R@1"));
        assert!(t.contains("66.7"), "{t}");
    }
}
