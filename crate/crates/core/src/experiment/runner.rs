//! Experiment execution: per-seed pipelines (generate, solve, fit, run),
//! a bounded worker pool over seeds, artifact persistence, aggregation,
//! and paired arm comparison.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::aggregate::{aggregate, AggregateSummary};
use crate::experiment::config::{
    ExperimentConfig, FeatureMeasure, FeaturesConfig, InitConfig, ModeConfig,
};
use crate::experiment::io::{write_plot_csv, write_run_csv, save_json_value};
use crate::features::{build_realizable_features, one_hot_features, FeatureMap, LinearQ};
use crate::fqi::{
    basin_init, run_fqi, run_homotopy, FqiEnv, FqiMode, FqiParams, FqiRunRecord, RefSolverParams,
    SoftRefs,
};
use crate::mdp::{behavior_measure, dirichlet_behavior_policy, generate_garnet, sample_reset_dataset};
use crate::soft_bellman::Temperature;
use crate::stationary::StateActionMeasure;

/// Everything produced by one arm.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub summary: AggregateSummary,
    pub completed: Vec<(u64, FqiRunRecord)>,
    pub failed: Vec<(u64, String)>,
    /// True when some seeds failed but aggregation proceeded.
    pub partial: bool,
}

/// Runs one seed of an arm end to end.
pub fn run_single_seed(config: &ExperimentConfig, seed: u64) -> Result<FqiRunRecord> {
    let spec = config.garnet.spec_for_seed(seed);
    let mdp = generate_garnet(&spec)?;
    let behavior = dirichlet_behavior_policy(&mdp, seed);
    let nu_b = behavior_measure(&mdp, &behavior);
    let tau = Temperature::new(config.tau_target)?;
    let solver = RefSolverParams {
        qstar_tol: config.qstar_tol,
        stationary_tol: config.stationary_tol,
        ..RefSolverParams::default()
    };
    let refs = SoftRefs::solve(&mdp, tau, &solver)?;

    let features = build_features(config, &refs, seed)?;
    let q0 = build_init(config, &features, &refs, seed)?;

    let dataset = match config.mode {
        ModeConfig::Fitted { n_transitions } => {
            Some(sample_reset_dataset(&mdp, &behavior, n_transitions, seed)?)
        }
        ModeConfig::Population => None,
    };
    let mode = match &dataset {
        Some(d) => FqiMode::Fitted(d),
        None => FqiMode::Population,
    };

    let env = FqiEnv {
        mdp: &mdp,
        features: &features,
        behavior: &behavior,
        nu_b,
    };
    let params = FqiParams {
        warm_start_unweighted: config.warm_start_unweighted,
        stationary_tol: config.stationary_tol,
        noise_seed: seed,
        ..FqiParams::new(tau, config.iters, config.ridge, config.weighting.clone())
    };

    match &config.homotopy {
        Some(schedule) => run_homotopy(&env, mode, &q0, schedule, &params, &solver),
        None => run_fqi(&env, mode, &q0, &params, &refs),
    }
}

fn build_features(
    config: &ExperimentConfig,
    refs: &SoftRefs,
    seed: u64,
) -> Result<FeatureMap> {
    match &config.features {
        FeaturesConfig::OneHot => {
            let spec = config.garnet.spec_for_seed(seed);
            let mdp = generate_garnet(&spec)?;
            Ok(one_hot_features(&mdp))
        }
        FeaturesConfig::Realizable { p, measure } => {
            let m = match measure {
                FeatureMeasure::MuStar => refs.mu_star.clone(),
                FeatureMeasure::Uniform => {
                    let (n, k) = refs.q_star.shape();
                    StateActionMeasure::uniform(n, k)
                }
            };
            build_realizable_features(&refs.q_star, *p, seed, &m)
        }
    }
}

fn build_init(
    config: &ExperimentConfig,
    features: &FeatureMap,
    refs: &SoftRefs,
    seed: u64,
) -> Result<LinearQ> {
    match config.init {
        InitConfig::Zero => Ok(LinearQ::zeros(features)),
        InitConfig::Basin { delta } => basin_init(features, refs, delta, seed),
    }
}

/// Runs an arm over its seed sweep with at most `workers` parallel seeds
/// (`None` = rayon default), persists artifacts, and aggregates.
pub fn run_experiment_with_workers(
    config: &ExperimentConfig,
    workers: Option<usize>,
) -> Result<ExperimentOutput> {
    config.validate()?;
    let seeds = config.seeds.seeds();
    let results: Vec<(u64, std::result::Result<FqiRunRecord, String>)> = match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
            pool.install(|| collect_runs(config, &seeds))
        }
        None => collect_runs(config, &seeds),
    };

    let out_dir = &config.output_dir;
    let runs_dir = out_dir.join("runs");
    std::fs::create_dir_all(&runs_dir)?;
    std::fs::write(out_dir.join("config.toml"), config.to_toml_string())?;

    let mut completed = Vec::new();
    let mut failed = Vec::new();
    for (seed, res) in results {
        match res {
            Ok(record) => {
                let run_id = format!("{}_seed{:05}", config.name, seed);
                write_run_csv(&runs_dir.join(format!("{run_id}.csv")), &run_id, &record)?;
                completed.push((seed, record));
            }
            Err(msg) => failed.push((seed, msg)),
        }
    }

    let summary = aggregate(
        &config.name,
        &completed,
        &failed.iter().map(|(s, _)| *s).collect::<Vec<_>>(),
    )?;
    save_json_value(&out_dir.join("summary.json"), "aggregate_summary", &summary)?;
    write_plot_csv(&out_dir.join("plot_data.csv"), &summary.per_iteration)?;
    if !failed.is_empty() {
        save_json_value(&out_dir.join("failures.json"), "seed_failures", &failed)?;
    }

    let partial = !failed.is_empty();
    Ok(ExperimentOutput {
        summary,
        completed,
        failed,
        partial,
    })
}

fn collect_runs(
    config: &ExperimentConfig,
    seeds: &[u64],
) -> Vec<(u64, std::result::Result<FqiRunRecord, String>)> {
    seeds
        .par_iter()
        .map(|&seed| (seed, run_single_seed(config, seed).map_err(|e| e.to_string())))
        .collect()
}

/// Runs an arm with the default worker pool.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    run_experiment_with_workers(config, None)
}

/// Paired comparison of one arm against a baseline. All quantities are
/// measured against the target-temperature optimum, so homotopy arms with
/// different stage references stay comparable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmComparison {
    pub base_arm: String,
    pub other_arm: String,
    pub n_pairs: usize,
    /// Mean over paired seeds of `other.error_sq / base.error_sq` per
    /// iteration (over iterations both traces reached).
    pub per_iteration_error_ratio: Vec<f64>,
    /// Fraction of paired seeds where the other arm's final squared error
    /// is strictly below the baseline's.
    pub frac_final_error_below_base: f64,
    /// Fraction of paired seeds where the other arm's max-over-path error
    /// (excluding the shared initialization row) is strictly below the
    /// baseline's.
    pub frac_max_path_error_below_base: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub paired_seeds: bool,
    pub arms: Vec<String>,
    pub comparisons: Vec<ArmComparison>,
}

/// Runs every config and compares each arm against the first. With
/// `paired_seeds`, seed sets must match and the configs may differ only in
/// weighting, homotopy, initialization, and output location.
pub fn compare_arms(
    configs: &[ExperimentConfig],
    paired_seeds: bool,
    workers: Option<usize>,
) -> Result<(ComparisonReport, Vec<ExperimentOutput>)> {
    if configs.len() < 2 {
        return Err(Error::InvalidConfig(
            "compare_arms needs at least two configs".into(),
        ));
    }
    if paired_seeds {
        let base = &configs[0];
        for other in &configs[1..] {
            if other.seeds.seeds() != base.seeds.seeds() {
                return Err(Error::InvalidConfig(
                    "paired comparison requires identical seed sets".into(),
                ));
            }
            if other.garnet != base.garnet
                || other.features != base.features
                || other.mode != base.mode
                || (other.tau_target - base.tau_target).abs() > 0.0
            {
                return Err(Error::InvalidConfig(
                    "paired configs may differ only in weighting/homotopy/init".into(),
                ));
            }
        }
    }
    let mut outputs = Vec::with_capacity(configs.len());
    for cfg in configs {
        outputs.push(run_experiment_with_workers(cfg, workers)?);
    }
    let base = &outputs[0];
    let base_by_seed: std::collections::BTreeMap<u64, &FqiRunRecord> =
        base.completed.iter().map(|(s, r)| (*s, r)).collect();
    let mut comparisons = Vec::new();
    for (cfg, out) in configs.iter().zip(&outputs).skip(1) {
        let mut pairs: Vec<(&FqiRunRecord, &FqiRunRecord)> = Vec::new();
        for (seed, rec) in &out.completed {
            if let Some(base_rec) = base_by_seed.get(seed) {
                pairs.push((base_rec, rec));
            }
        }
        if pairs.is_empty() {
            return Err(Error::NoCompletedRuns(format!(
                "no shared completed seeds between {} and {}",
                configs[0].name, cfg.name
            )));
        }
        let horizon = pairs
            .iter()
            .map(|(b, o)| b.target_errors.len().min(o.target_errors.len()))
            .min()
            .unwrap_or(0);
        let mut ratio = Vec::with_capacity(horizon);
        for i in 0..horizon {
            let mut acc = 0.0;
            let mut count = 0usize;
            for (b, o) in &pairs {
                let be = b.target_errors[i] * b.target_errors[i];
                let oe = o.target_errors[i] * o.target_errors[i];
                if be > 0.0 && be.is_finite() && oe.is_finite() {
                    acc += oe / be;
                    count += 1;
                }
            }
            ratio.push(if count > 0 { acc / count as f64 } else { f64::NAN });
        }
        let final_target = |r: &FqiRunRecord| {
            r.target_errors.last().copied().unwrap_or(f64::INFINITY)
        };
        let below_final = pairs
            .iter()
            .filter(|(b, o)| final_target(o) < final_target(b))
            .count();
        let below_max = pairs
            .iter()
            .filter(|(b, o)| o.max_path_error() < b.max_path_error())
            .count();
        comparisons.push(ArmComparison {
            base_arm: configs[0].name.clone(),
            other_arm: cfg.name.clone(),
            n_pairs: pairs.len(),
            per_iteration_error_ratio: ratio,
            frac_final_error_below_base: below_final as f64 / pairs.len() as f64,
            frac_max_path_error_below_base: below_max as f64 / pairs.len() as f64,
        });
    }
    let report = ComparisonReport {
        schema_version: 1,
        paired_seeds,
        arms: configs.iter().map(|c| c.name.clone()).collect(),
        comparisons,
    };
    Ok((report, outputs))
}

/// Writes a comparison report as JSON.
pub fn save_comparison(path: &Path, report: &ComparisonReport) -> Result<()> {
    save_json_value(path, "comparison_report", report)
}
