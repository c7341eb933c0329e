//! Verification-gated visual place recognition.
//!
//! Queries are localized by exact descriptor retrieval against a geotagged
//! database. Each shortlist can be re-ranked by the number of geometric
//! inliers an external image matcher finds between the query and a candidate.
//! The same inlier count, taken on the top-1 pair, is a strong uncertainty
//! signal: [`calibration`] turns it into the probability that the top-1 is
//! wrong, and [`rerank::adaptive_rerank`] re-ranks only the queries where that
//! probability is high. [`evaluation`] measures Recall@K at a distance
//! threshold and AUPRC of every uncertainty estimator.
//!
//! | module | role |
//! |---|---|
//! | [`dataset`] | JSONL manifests, `VPRD` descriptor blobs, haversine ground truth |
//! | [`retrieval`] | exact k-NN shortlists |
//! | [`matching`] | inlier tables and subprocess matchers |
//! | [`uncertainty`] | L2, PA-score, SUE, random and inlier estimators |
//! | [`calibration`] | logistic regression on one uncertainty score |
//! | [`rerank`] | inlier re-ranking and the adaptive gate |
//! | [`evaluation`] | Recall@K, PR curves, AUPRC, full reports |
//! | [`synth`] | reproducible synthetic instances |
//!
//! Runnable walkthroughs live in `examples/`.

pub mod calibration;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod matching;
pub mod rerank;
pub mod retrieval;
pub mod synth;
pub mod uncertainty;

pub use calibration::{fit_logistic, predict_prob, LogisticModel};
pub use dataset::{geo_distance, is_correct, load_split, DistanceThreshold, GeoRecord, LatLon, Split};
pub use error::{Error, Result};
pub use evaluation::{auprc, evaluate_pipeline, pr_curve, recall_at_k, EvalReport, PipelineConfig};
pub use matching::{load_inlier_table, InlierSource, InlierTable, MatchError, MatcherProvider};
pub use rerank::{adaptive_rerank, rerank, GatePolicy, RerankedShortlist};
pub use retrieval::{build_index, search, Index, Shortlist};
pub use synth::{generate, SynthConfig, SynthInstance};
pub use uncertainty::{Estimator, UncertaintyScore};
