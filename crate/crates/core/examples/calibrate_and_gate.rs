//! Fits P(wrong | u) on one synthetic instance, then gates re-ranking on a
//! fresh instance with that model.

use vprgate::calibration::fit_logistic_report;
use vprgate::dataset::DistanceThreshold;
use vprgate::evaluation::{hit_at_k, recall_at_k};
use vprgate::rerank::{adaptive_rerank, rerank, GatePolicy};
use vprgate::synth::{generate, SynthConfig, SynthInstance};
use vprgate::uncertainty::{estimate, Estimator, EstimatorContext, SueParams};

const ESTIMATOR: Estimator = Estimator::Inlier;

fn scored(inst: &SynthInstance) -> vprgate::Result<Vec<(vprgate::UncertaintyScore, bool)>> {
    let ctx = EstimatorContext {
        db: inst.db.geo(),
        provider: &inst.inliers,
        seed: 0,
        sue: SueParams::default(),
    };
    inst.shortlists
        .iter()
        .map(|s| {
            let u = estimate(ESTIMATOR, s, &ctx)?;
            let wrong = !hit_at_k(s, inst.queries.geo(), inst.db.geo(), 1, DistanceThreshold::default())?;
            Ok((u, wrong))
        })
        .collect()
}

fn main() -> vprgate::Result<()> {
    let config = SynthConfig {
        n_db: 2000,
        n_queries: 1000,
        target_retrieval_r1: 0.9,
        matcher_quality: 0.9,
        ..SynthConfig::default()
    };
    let train = generate(&SynthConfig { seed: 1, ..config.clone() })?;
    let test = generate(&SynthConfig { seed: 2, ..config })?;

    let samples: Vec<(f64, bool)> = scored(&train)?.into_iter().map(|(u, w)| (u.u, w)).collect();
    let fit = fit_logistic_report(&samples)?;
    let (w, b) = fit.model.raw_coefficients();
    println!(
        "fit in {} iterations (converged={}): P(wrong) = sigmoid({w:.4} * u + {b:.4})",
        fit.iterations, fit.converged
    );

    let (q, db) = (test.queries.geo(), test.db.geo());
    let tau = DistanceThreshold::default();
    let full = test
        .shortlists
        .iter()
        .map(|s| rerank(s, &test.inliers))
        .collect::<vprgate::Result<Vec<_>>>()?;
    println!("retrieval   R@1 {:5.1}", recall_at_k(&test.shortlists, q, db, 1, tau)?);
    println!("full rerank R@1 {:5.1}", recall_at_k(&full, q, db, 1, tau)?);

    let scores = scored(&test)?;
    for threshold in [0.1, 0.5, 0.9] {
        let policy = GatePolicy::new(fit.model, threshold, ESTIMATOR)?;
        let gated = test
            .shortlists
            .iter()
            .zip(&scores)
            .map(|(s, (u, _))| adaptive_rerank(s, &test.inliers, &policy, u))
            .collect::<vprgate::Result<Vec<_>>>()?;
        let fired = gated.iter().filter(|g| g.gate_fired).count();
        println!(
            "gate @ {threshold:.1}  R@1 {:5.1}  re-ranked {fired} of {} queries",
            recall_at_k(&gated, q, db, 1, tau)?,
            gated.len()
        );
    }
    Ok(())
}
