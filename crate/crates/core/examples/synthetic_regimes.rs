//! End-to-end reports on two synthetic regimes: one where blanket re-ranking
//! hurts a strong retriever, one where it rescues a weak one.

use vprgate::dataset::DistanceThreshold;
use vprgate::evaluation::{evaluate_pipeline, GateConfig, GateSignal, PipelineConfig};
use vprgate::synth::{generate, SynthConfig};
use vprgate::uncertainty::Estimator;

fn main() -> vprgate::Result<()> {
    let regimes = [
        ("strong retrieval, noisy matcher", 0.98, 0.85),
        ("weak retrieval, reliable matcher", 0.5, 0.98),
    ];
    for (name, r1, quality) in regimes {
        let inst = generate(&SynthConfig {
            n_db: 2000,
            n_queries: 1000,
            target_retrieval_r1: r1,
            matcher_quality: quality,
            seed: 7,
            ..SynthConfig::default()
        })?;
        let config = PipelineConfig {
            taus: vec![DistanceThreshold::default(), DistanceThreshold::new(100.0)?],
            gate: Some(GateConfig {
                signal: GateSignal::Estimator(Estimator::Inlier),
                threshold: 0.5,
                model: None,
            }),
            ..PipelineConfig::default()
        };
        let report = evaluate_pipeline(&inst.queries, &inst.db, &inst.inliers, &config)?;
        println!("## {name}\n");
        println!("{}", report.to_table());
    }
    Ok(())
}
