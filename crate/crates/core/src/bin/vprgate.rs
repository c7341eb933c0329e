use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use vprgate::dataset::{load_split, DistanceThreshold, GeoLookup, Manifest};
use vprgate::evaluation::{evaluate_shortlists, hit_at_k, GateConfig, GateSignal, PipelineConfig};
use vprgate::matching::{ImageLayout, InlierSource, InlierTable, MatcherProvider, SubprocessMatcher};
use vprgate::rerank::{adaptive_rerank, rerank, write_reranked, GatePolicy};
use vprgate::retrieval::{build_index, read_shortlists, search_all, write_shortlists, Shortlist};
use vprgate::synth::{generate, SynthConfig};
use vprgate::uncertainty::{estimate, read_scores, write_scores, Estimator, EstimatorContext, SueParams};
use vprgate::{fit_logistic, Error, LogisticModel, Result};

#[derive(Parser)]
#[command(name = "vprgate", version, about = "Verification-gated place recognition toolkit")]
struct Cli {
    /// Correctness radius in meters.
    #[arg(long, global = true, default_value_t = 25.0)]
    tau: f64,
    /// Shortlist length.
    #[arg(long, global = true, default_value_t = 100)]
    k: usize,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Uncertainty estimator: l2, pa, sue, random, inlier.
    #[arg(long, global = true, default_value = "inlier")]
    estimator: Estimator,
    /// Gate probability threshold.
    #[arg(long, global = true, default_value_t = 0.5)]
    threshold: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    db_manifest: PathBuf,
    #[arg(long)]
    db_blob: PathBuf,
    #[arg(long)]
    query_manifest: PathBuf,
    #[arg(long)]
    query_blob: PathBuf,
}

#[derive(Args)]
struct MatcherArgs {
    /// Precomputed inlier CSV.
    #[arg(long, conflicts_with = "matcher_cmd")]
    inliers: Option<PathBuf>,
    /// External matcher command with {query} and {db} placeholders.
    #[arg(long, requires_all = ["query_images", "db_images"])]
    matcher_cmd: Option<String>,
    #[arg(long)]
    query_images: Option<PathBuf>,
    #[arg(long)]
    db_images: Option<PathBuf>,
    #[arg(long, default_value = ".jpg")]
    image_ext: String,
    /// Per-pair timeout in seconds.
    #[arg(long, default_value_t = 60.0)]
    matcher_timeout: f64,
    /// Maximum concurrent matcher processes.
    #[arg(long, default_value_t = 4)]
    matcher_jobs: usize,
}

impl MatcherArgs {
    fn provider(&self) -> Result<Option<MatcherProvider>> {
        if let Some(path) = &self.inliers {
            return Ok(Some(MatcherProvider::Table(InlierTable::load(path)?)));
        }
        let Some(cmd) = &self.matcher_cmd else {
            return Ok(None);
        };
        if !(self.matcher_timeout > 0.0 && self.matcher_timeout.is_finite()) {
            return Err(Error::InvalidConfig("--matcher-timeout must be positive".into()));
        }
        let m = SubprocessMatcher::new(cmd.clone(), Duration::from_secs_f64(self.matcher_timeout), self.matcher_jobs)?
            .with_layout(ImageLayout {
                query_dir: self.query_images.clone().unwrap_or_default(),
                db_dir: self.db_images.clone().unwrap_or_default(),
                extension: self.image_ext.clone(),
            });
        Ok(Some(MatcherProvider::Subprocess(m)))
    }

    fn require(&self) -> Result<MatcherProvider> {
        self.provider()?
            .ok_or_else(|| Error::InvalidConfig("pass --inliers or --matcher-cmd".into()))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GateMode {
    None,
    Estimator,
    Oracle,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance (manifests, blobs, inlier CSV, ground truth).
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n_db: usize,
        #[arg(long, default_value_t = 500)]
        n_queries: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 0.9)]
        target_r1: f64,
        #[arg(long, default_value_t = 0.9)]
        matcher_quality: f64,
        #[arg(long, default_value_t = 10.0)]
        inlier_noise: f64,
        #[arg(long, default_value_t = 0.0)]
        gps_noise: f64,
    },
    /// Exact k-NN shortlists for every query.
    Retrieve {
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-rank every shortlist by inlier count.
    Rerank {
        #[arg(long)]
        shortlists: PathBuf,
        #[command(flatten)]
        matcher: MatcherArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-query uncertainty scores, optionally calibrated.
    Uncertainty {
        #[arg(long)]
        shortlists: PathBuf,
        /// Needed by the SUE estimator.
        #[arg(long)]
        db_manifest: Option<PathBuf>,
        #[command(flatten)]
        matcher: MatcherArgs,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the wrong-localization logistic model on scored queries.
    Calibrate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        shortlists: PathBuf,
        #[arg(long)]
        query_manifest: PathBuf,
        #[arg(long)]
        db_manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-rank only the queries the calibrated gate flags as uncertain.
    Gate {
        #[arg(long)]
        shortlists: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        db_manifest: Option<PathBuf>,
        #[command(flatten)]
        matcher: MatcherArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recall@K and AUPRC report for retrieval, re-ranking and gating.
    Evaluate {
        #[command(flatten)]
        split: SplitArgs,
        #[command(flatten)]
        matcher: MatcherArgs,
        /// Additional thresholds reported next to --tau.
        #[arg(long)]
        extra_tau: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,100")]
        recall_ks: Vec<usize>,
        #[arg(long, value_enum, default_value_t = GateMode::Estimator)]
        gate: GateMode,
        /// Gate calibration; fitted on the evaluated queries when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Machine-readable report.
        #[arg(long)]
        out: PathBuf,
        /// Aligned text table; printed to stdout when omitted.
        #[arg(long)]
        table: Option<PathBuf>,
        /// PR curves as `estimator,recall,precision`.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
}

fn db_lookup(manifest: &Option<PathBuf>, estimator: Estimator) -> Result<Manifest> {
    match manifest {
        Some(p) => Manifest::read(p),
        None if estimator == Estimator::SUE => {
            Err(Error::InvalidConfig("the sue estimator needs --db-manifest".into()))
        }
        None => Manifest::new(Vec::new()),
    }
}

fn context<'a>(db: GeoLookup<'a>, provider: &'a dyn InlierSource, seed: u64) -> EstimatorContext<'a> {
    EstimatorContext {
        db,
        provider,
        seed,
        sue: SueParams::default(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    let tau = DistanceThreshold::new(cli.tau)?;
    match cli.command {
        Command::Synth {
            out_dir,
            n_db,
            n_queries,
            dim,
            target_r1,
            matcher_quality,
            inlier_noise,
            gps_noise,
        } => {
            let config = SynthConfig {
                n_db,
                n_queries,
                dim,
                target_retrieval_r1: target_r1,
                matcher_quality,
                inlier_noise_scale: inlier_noise,
                seed: cli.seed,
                shortlist_k: cli.k,
                gps_noise_m: gps_noise,
            };
            let paths = generate(&config)?.write(&out_dir)?;
            eprintln!("wrote synthetic instance to {}", out_dir.display());
            eprintln!("  inliers: {}", paths.inliers.display());
        }
        Command::Retrieve { split, out } => {
            let db = load_split(&split.db_manifest, &split.db_blob)?;
            let queries = load_split(&split.query_manifest, &split.query_blob)?;
            for (name, s) in [("database", &db), ("query", &queries)] {
                if s.blob().renormalized() {
                    eprintln!("warning: {name} descriptors were re-normalized to unit length");
                }
            }
            let shortlists = search_all(&build_index(&db)?, &queries, cli.k)?;
            write_shortlists(&out, &shortlists)?;
        }
        Command::Rerank {
            shortlists,
            matcher,
            out,
        } => {
            let lists = read_shortlists(&shortlists)?;
            let provider = matcher.require()?;
            let reranked = lists
                .par_iter()
                .map(|s| rerank(s, &provider))
                .collect::<Result<Vec<_>>>()?;
            let missing: usize = reranked.iter().map(|r| r.diagnostics.len()).sum();
            if missing > 0 {
                eprintln!("warning: {missing} pairs without an inlier count were ranked last");
            }
            write_reranked(&out, &reranked)?;
        }
        Command::Uncertainty {
            shortlists,
            db_manifest,
            matcher,
            model,
            out,
        } => {
            let lists = read_shortlists(&shortlists)?;
            let db = db_lookup(&db_manifest, cli.estimator)?;
            let provider = matcher.provider()?.unwrap_or(MatcherProvider::Table(InlierTable::new()));
            let model = model.as_deref().map(LogisticModel::load).transpose()?;
            let ctx = context(db.geo(), &provider, cli.seed);
            let rows = lists
                .par_iter()
                .map(|s| {
                    let score = estimate(cli.estimator, s, &ctx)?;
                    let prob = model.as_ref().map(|m| m.predict(score.u));
                    Ok((score, prob))
                })
                .collect::<Result<Vec<_>>>()?;
            write_scores(&out, &rows)?;
        }
        Command::Calibrate {
            scores,
            shortlists,
            query_manifest,
            db_manifest,
            out,
        } => {
            let queries = Manifest::read(&query_manifest)?;
            let db = Manifest::read(&db_manifest)?;
            let lists: Vec<Shortlist> = read_shortlists(&shortlists)?;
            let by_query: std::collections::HashMap<&str, &Shortlist> =
                lists.iter().map(|s| (s.query_id.as_str(), s)).collect();
            let mut training = Vec::new();
            for (score, _) in read_scores(&scores)? {
                if score.estimator != cli.estimator {
                    continue;
                }
                let s = by_query
                    .get(score.query_id.as_str())
                    .ok_or_else(|| Error::UnknownId(score.query_id.clone()))?;
                let correct = hit_at_k(*s, queries.geo(), db.geo(), 1, tau)?;
                training.push((score.u, !correct));
            }
            let model = fit_logistic(&training)?;
            model.save(&out)?;
        }
        Command::Gate {
            shortlists,
            model,
            db_manifest,
            matcher,
            out,
        } => {
            let lists = read_shortlists(&shortlists)?;
            let db = db_lookup(&db_manifest, cli.estimator)?;
            let provider = matcher.require()?;
            let policy = GatePolicy::new(LogisticModel::load(&model)?, cli.threshold, cli.estimator)?;
            let ctx = context(db.geo(), &provider, cli.seed);
            let reranked = lists
                .par_iter()
                .map(|s| {
                    let u = estimate(cli.estimator, s, &ctx)?;
                    adaptive_rerank(s, &provider, &policy, &u)
                })
                .collect::<Result<Vec<_>>>()?;
            let fired = reranked.iter().filter(|r| r.gate_fired).count();
            eprintln!("gate fired on {fired} of {} queries", reranked.len());
            write_reranked(&out, &reranked)?;
        }
        Command::Evaluate {
            split,
            matcher,
            extra_tau,
            recall_ks,
            gate,
            model,
            threads,
            out,
            table,
            curves,
        } => {
            let db = load_split(&split.db_manifest, &split.db_blob)?;
            let queries = load_split(&split.query_manifest, &split.query_blob)?;
            let provider = matcher.require()?;
            let mut taus = vec![tau];
            for t in extra_tau {
                taus.push(DistanceThreshold::new(t)?);
            }
            let model = model.as_deref().map(LogisticModel::load).transpose()?;
            let gate = match gate {
                GateMode::None => None,
                GateMode::Estimator => Some(GateConfig {
                    signal: GateSignal::Estimator(cli.estimator),
                    threshold: cli.threshold,
                    model,
                }),
                GateMode::Oracle => Some(GateConfig {
                    signal: GateSignal::Oracle,
                    threshold: cli.threshold,
                    model: None,
                }),
            };
            let config = PipelineConfig {
                k: cli.k,
                recall_ks,
                taus,
                gate,
                seed: cli.seed,
                threads,
                ..PipelineConfig::default()
            };
            let shortlists = {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?;
                pool.install(|| search_all(&build_index(&db)?, &queries, cli.k))?
            };
            let report = evaluate_shortlists(&shortlists, queries.geo(), db.geo(), &provider, &config)?;
            write_text(&out, &(report.to_json()? + "\n"))?;
            match table {
                Some(p) => write_text(&p, &report.to_table())?,
                None => print!("{}", report.to_table()),
            }
            if let Some(p) = curves {
                report.write_curves(&p)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
