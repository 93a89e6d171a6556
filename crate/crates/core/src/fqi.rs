//! Population and fitted (sampled) soft Q-iteration with pluggable
//! regression weights, weight-refresh policies, synthetic weight-error
//! injection, and the temperature-homotopy controller.
//!
//! One iteration regresses the soft Bellman target of the current iterate
//! onto the function class under a weighted norm. Stationary reweighting
//! uses the density ratio of the current policy's stationary distribution
//! against the behavior distribution, aligning the regression geometry
//! with the norm in which the operator contracts.

use rand::distributions::Distribution;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{evaluate_linear, FeatureMap, LinearQ};
use crate::mdp::{TabularMdp, TabularPolicy, TransitionDataset};
use crate::rng::{stream_rng, Stream};
use crate::soft_bellman::{
    logsumexp_backup, soft_bellman_apply, softmax_policy, solve_soft_q_star, QTable, Temperature,
};
use crate::stationary::{
    contraction_profile, density_ratio, misspecification_gap, projection_weighted_ls, solve_spd,
    stationary_power_iteration, weighted_l2_distance, ContractionProfile, DensityRatio,
    StateActionMeasure, RATIO_FLOOR,
};

/// Error level beyond which a run is truncated and flagged as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// How regression weights are chosen and refreshed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightingMode {
    /// Unweighted regression under the behavior distribution.
    Behavior,
    /// Exact stationary ratio of the current iterate's softmax policy,
    /// recomputed every `refresh_period` iterations.
    StationaryExact { refresh_period: usize },
    /// Exact ratio perturbed multiplicatively by `exp(noise_scale * g)`,
    /// `g` i.i.d. standard normal, renormalized against the behavior
    /// measure; a surrogate for weight-estimation error.
    StationaryNoisy {
        noise_scale: f64,
        refresh_period: usize,
    },
    /// A caller-supplied fixed ratio, never refreshed.
    Fixed { ratio: DensityRatio },
}

impl WeightingMode {
    pub fn validate(&self) -> Result<()> {
        match self {
            WeightingMode::StationaryExact { refresh_period }
            | WeightingMode::StationaryNoisy { refresh_period, .. } => {
                if *refresh_period == 0 {
                    return Err(Error::InvalidConfig("refresh_period must be >= 1".into()));
                }
            }
            _ => {}
        }
        if let WeightingMode::StationaryNoisy { noise_scale, .. } = self {
            if !(*noise_scale >= 0.0) {
                return Err(Error::InvalidConfig("noise_scale must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Temperature decay shape for the homotopy path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HomotopyDecay {
    Geometric,
    Linear,
}

/// Temperature schedule: `stages` solves from `tau_init` down to
/// `tau_target`, each stage warm-starting from the previous iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomotopySchedule {
    pub tau_init: f64,
    pub tau_target: f64,
    pub stages: usize,
    pub iters_per_stage: usize,
    pub decay: HomotopyDecay,
}

impl HomotopySchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_target > 0.0) || !(self.tau_init >= self.tau_target) {
            return Err(Error::InvalidConfig(format!(
                "need tau_init >= tau_target > 0, got {} and {}",
                self.tau_init, self.tau_target
            )));
        }
        if self.stages == 0 || self.iters_per_stage == 0 {
            return Err(Error::InvalidConfig(
                "stages and iters_per_stage must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// The stage temperatures; a single stage sits at the target.
    pub fn stage_taus(&self) -> Vec<f64> {
        if self.stages == 1 {
            return vec![self.tau_target];
        }
        let n = self.stages;
        (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                match self.decay {
                    HomotopyDecay::Geometric => {
                        self.tau_init * (self.tau_target / self.tau_init).powf(t)
                    }
                    HomotopyDecay::Linear => {
                        self.tau_init + t * (self.tau_target - self.tau_init)
                    }
                }
            })
            .collect()
    }
}

/// One logged iteration of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub k: usize,
    pub tau: f64,
    /// `||Q^(k) - Q*_tau||_{2,mu*}` against the current stage's reference.
    pub error_mu_star: f64,
    /// Lagged modulus `e_k / e_{k-1}`; absent at the first row of a run.
    pub rho: Option<f64>,
    /// `||w_hat/w - 1||_{2,mu*}` over the exact ratio's support, known at
    /// refresh iterations of the stationary modes.
    pub weight_err: Option<f64>,
    /// Whether `e_k <= r_max` under the run's contraction profile.
    pub in_basin: bool,
}

impl IterationRow {
    pub fn error_sq(&self) -> f64 {
        self.error_mu_star * self.error_mu_star
    }
}

/// Full trace of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FqiRunRecord {
    pub rows: Vec<IterationRow>,
    /// Row indices where a new homotopy stage begins.
    pub stage_boundaries: Vec<usize>,
    /// `||Q^(k) - Q*_target||_{2,mu*_target}` per row: the error against
    /// the target-temperature optimum throughout. Equal to the row errors
    /// for single-temperature runs; under homotopy the row errors track
    /// the current stage's optimum while this tracks the final one.
    pub target_errors: Vec<f64>,
    pub final_error: f64,
    pub diverged: bool,
}

impl FqiRunRecord {
    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.error_mu_star).collect()
    }

    pub fn max_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.error_mu_star)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Max error against the target-temperature optimum over iterates the
    /// run itself produced (the shared initialization row is excluded).
    pub fn max_target_error_excluding_init(&self) -> f64 {
        self.target_errors
            .iter()
            .skip(1)
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Max target-metric error over the differentiated part of the path:
    /// from the second homotopy stage on. Early homotopy iterates of
    /// paired arms share a transient toward the initial-temperature
    /// optimum that differs only at rounding level, so instability
    /// comparisons start once the weighting has had a stage to act. Runs
    /// without stages skip only the shared initialization row.
    pub fn max_path_error(&self) -> f64 {
        let start = self.stage_boundaries.get(1).copied().unwrap_or(1).max(1);
        let start = start.min(self.target_errors.len().saturating_sub(1));
        self.target_errors[start..]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Reference solution at one temperature: the soft optimum, its softmax
/// policy, and the stationary measure that defines the error norm.
#[derive(Debug, Clone)]
pub struct SoftRefs {
    pub tau: Temperature,
    pub q_star: QTable,
    pub pi_star: TabularPolicy,
    pub mu_star: StateActionMeasure,
}

/// Solver tolerances for reference solutions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefSolverParams {
    pub qstar_tol: f64,
    pub qstar_max_iter: usize,
    pub stationary_tol: f64,
    pub stationary_max_iter: usize,
}

impl Default for RefSolverParams {
    fn default() -> Self {
        RefSolverParams {
            qstar_tol: 1e-11,
            qstar_max_iter: 5_000_000,
            stationary_tol: 1e-13,
            stationary_max_iter: 5_000_000,
        }
    }
}

impl SoftRefs {
    pub fn solve(mdp: &TabularMdp, tau: Temperature, solver: &RefSolverParams) -> Result<Self> {
        let q_star = solve_soft_q_star(mdp, tau, solver.qstar_tol, solver.qstar_max_iter)?.q_star;
        let pi_star = softmax_policy(&q_star, tau);
        let uniform = StateActionMeasure::uniform(mdp.n_states(), mdp.n_actions());
        let mu_star = stationary_power_iteration(
            mdp,
            &pi_star,
            &uniform,
            solver.stationary_tol,
            solver.stationary_max_iter,
            1.0,
        )?;
        Ok(SoftRefs {
            tau,
            q_star,
            pi_star,
            mu_star,
        })
    }
}

/// Immutable per-run environment.
#[derive(Debug, Clone)]
pub struct FqiEnv<'a> {
    pub mdp: &'a TabularMdp,
    pub features: &'a FeatureMap,
    pub behavior: &'a TabularPolicy,
    pub nu_b: StateActionMeasure,
}

/// Population vs sampled regression targets.
#[derive(Debug, Clone, Copy)]
pub enum FqiMode<'a> {
    Population,
    Fitted(&'a TransitionDataset),
}

/// Knobs of one run.
#[derive(Debug, Clone)]
pub struct FqiParams {
    pub tau: Temperature,
    pub iters: usize,
    pub ridge: f64,
    pub weighting: WeightingMode,
    /// Initial iterations forced to behavior weighting (warm start).
    pub warm_start_unweighted: usize,
    pub ratio_floor: f64,
    pub stationary_tol: f64,
    pub stationary_max_iter: usize,
    pub divergence_threshold: f64,
    /// Seed of the weight-noise stream (`StationaryNoisy`).
    pub noise_seed: u64,
}

impl FqiParams {
    pub fn new(tau: Temperature, iters: usize, ridge: f64, weighting: WeightingMode) -> Self {
        FqiParams {
            tau,
            iters,
            ridge,
            weighting,
            warm_start_unweighted: 0,
            ratio_floor: RATIO_FLOOR,
            stationary_tol: 1e-12,
            stationary_max_iter: 5_000_000,
            divergence_threshold: DIVERGENCE_THRESHOLD,
            noise_seed: 0,
        }
    }
}

/// One population update: the exact soft Bellman target of `q` projected
/// onto the class under `weight_measure`. Equals `Pi_F T(Q)` in that norm.
pub fn population_step(
    mdp: &TabularMdp,
    q: &QTable,
    tau: Temperature,
    features: &FeatureMap,
    weight_measure: &StateActionMeasure,
    ridge: f64,
) -> Result<LinearQ> {
    let target = soft_bellman_apply(mdp, q, tau)?;
    projection_weighted_ls(&target, features, weight_measure, ridge)
}

/// Weighted least squares over explicit sample pairs and targets:
/// minimizes `(1/n) sum_i w(s_i,a_i) (y_i - phi(s_i,a_i)^T theta)^2
/// + ridge ||theta||^2`.
pub fn weighted_regression(
    pairs: &[(usize, usize)],
    targets: &[f64],
    weights: &DensityRatio,
    features: &FeatureMap,
    ridge: f64,
) -> Result<LinearQ> {
    if pairs.is_empty() {
        return Err(Error::InvalidSpec("empty regression sample".into()));
    }
    if pairs.len() != targets.len() {
        return Err(Error::dim("regression targets", pairs.len(), targets.len()));
    }
    let p = features.p();
    let n = pairs.len() as f64;
    let mut gram = nalgebra::DMatrix::<f64>::zeros(p, p);
    let mut rhs = nalgebra::DVector::<f64>::zeros(p);
    for (&(s, a), &y) in pairs.iter().zip(targets) {
        let w = weights.at(s, a) / n;
        if w == 0.0 {
            continue;
        }
        let phi = features.row(s, a);
        for j in 0..p {
            let wj = w * phi[j];
            rhs[j] += wj * y;
            for l in j..p {
                gram[(j, l)] += wj * phi[l];
            }
        }
    }
    for j in 0..p {
        gram[(j, j)] += ridge;
        for l in 0..j {
            gram[(j, l)] = gram[(l, j)];
        }
    }
    solve_spd(gram, rhs, features)
}

/// One fitted update from offline transitions: empirical soft Bellman
/// targets `y_i = r_i + gamma tau log sum_a' exp(Q(s_i', a')/tau)` regressed
/// onto the class with per-sample weights `ratio(s_i, a_i)`.
pub fn fitted_step(
    dataset: &TransitionDataset,
    mdp: &TabularMdp,
    q: &QTable,
    tau: Temperature,
    features: &FeatureMap,
    ratio: &DensityRatio,
    ridge: f64,
) -> Result<LinearQ> {
    if dataset.is_empty() {
        return Err(Error::InvalidSpec("fitted_step needs a nonempty dataset".into()));
    }
    // Soft state values once per iteration, indexed by the sampled s'.
    let v: Vec<f64> = (0..q.n_states())
        .map(|s| logsumexp_backup(q.row(s), tau))
        .collect();
    let gamma = mdp.discount();
    let pairs: Vec<(usize, usize)> = dataset.records.iter().map(|t| (t.state, t.action)).collect();
    let targets: Vec<f64> = dataset
        .records
        .iter()
        .map(|t| t.reward + gamma * v[t.next_state])
        .collect();
    weighted_regression(&pairs, &targets, ratio, features, ridge)
}

struct WeightState {
    ratio: DensityRatio,
    /// Stationary measure of the latest refreshed policy; warm start.
    mu_current: Option<StateActionMeasure>,
    weight_err: Option<f64>,
}

/// `||w_hat/w - 1||_{2,mu*}` accumulated over the support of the exact
/// ratio.
fn weight_error(
    w_hat: &DensityRatio,
    w_exact: &DensityRatio,
    mu_star: &StateActionMeasure,
) -> f64 {
    let mut acc = 0.0;
    for ((&h, &w), &m) in w_hat
        .values()
        .iter()
        .zip(w_exact.values())
        .zip(mu_star.weights())
    {
        if w > 0.0 {
            let d = h / w - 1.0;
            acc += m * d * d;
        }
    }
    acc.sqrt()
}

/// Runs soft FQI and logs the per-iteration trace. Rows cover
/// `k = 0..=iters`; row `k` describes the iterate after `k` regression
/// steps. Never panics on blow-up: past the divergence threshold the run
/// is truncated and flagged.
pub fn run_fqi(
    env: &FqiEnv,
    mode: FqiMode,
    q0: &LinearQ,
    params: &FqiParams,
    refs: &SoftRefs,
) -> Result<FqiRunRecord> {
    let mut record = FqiRunRecord {
        rows: Vec::with_capacity(params.iters + 1),
        stage_boundaries: vec![0],
        target_errors: Vec::with_capacity(params.iters + 1),
        final_error: f64::NAN,
        diverged: false,
    };
    let theta = q0.clone();
    run_stage(env, mode, theta, params, refs, 0, &[], None, &mut record)?;
    finalize(&mut record);
    Ok(record)
}

/// Runs the temperature-homotopy path: stages at decreasing temperatures,
/// each warm-started from the previous iterate, with per-stage reference
/// solutions so errors are always measured against the current-temperature
/// optimum. `params.iters` is the total budget; whatever the staged path
/// does not consume continues as a final stage at the target temperature.
pub fn run_homotopy(
    env: &FqiEnv,
    mode: FqiMode,
    q0: &LinearQ,
    schedule: &HomotopySchedule,
    params: &FqiParams,
    solver: &RefSolverParams,
) -> Result<FqiRunRecord> {
    schedule.validate()?;
    let path_total = schedule.stages * schedule.iters_per_stage;
    if path_total > params.iters {
        return Err(Error::InvalidConfig(format!(
            "homotopy path of {path_total} iterations exceeds the budget of {}",
            params.iters
        )));
    }
    let mut record = FqiRunRecord {
        rows: Vec::new(),
        stage_boundaries: Vec::new(),
        target_errors: Vec::new(),
        final_error: f64::NAN,
        diverged: false,
    };
    let mut theta = q0.clone();
    let mut k_offset = 0usize;
    let mut stage_lengths: Vec<(f64, usize)> = schedule
        .stage_taus()
        .into_iter()
        .map(|tau| (tau, schedule.iters_per_stage))
        .collect();
    if params.iters > path_total {
        stage_lengths.push((schedule.tau_target, params.iters - path_total));
    }
    let target_refs = SoftRefs::solve(env.mdp, Temperature::new(schedule.tau_target)?, solver)?;
    for (stage, (tau, iters)) in stage_lengths.into_iter().enumerate() {
        let tau = Temperature::new(tau)?;
        let at_target = (tau.get() - schedule.tau_target).abs() <= f64::EPSILON * schedule.tau_target;
        let refs = if at_target {
            target_refs.clone()
        } else {
            SoftRefs::solve(env.mdp, tau, solver)?
        };
        let stage_params = FqiParams {
            tau,
            iters,
            // Weight noise must not replay across stages.
            noise_seed: params.noise_seed.wrapping_add(stage as u64),
            weighting: params.weighting.clone(),
            ..*params
        };
        record.stage_boundaries.push(record.rows.len());
        theta = run_stage(
            env,
            mode,
            theta,
            &stage_params,
            &refs,
            k_offset,
            &[],
            Some(&target_refs),
            &mut record,
        )?;
        if record.diverged {
            break;
        }
        k_offset = record.rows.last().map(|r| r.k + 1).unwrap_or(0);
    }
    finalize(&mut record);
    Ok(record)
}

/// Outcome of a single-iteration weight-perturbation experiment.
#[derive(Debug, Clone)]
pub struct WeightErrorExperiment {
    pub clean: FqiRunRecord,
    pub perturbed: FqiRunRecord,
    /// `e_k(perturbed) - e_k(clean)` for every shared row.
    pub excess: Vec<f64>,
}

/// Runs population-mode stationary-weighted FQI twice: once clean and once
/// with the weights of the listed iterations multiplied entrywise by their
/// perturbations (and renormalized), recording the downstream excess error.
pub fn inject_weight_errors(
    env: &FqiEnv,
    q0: &LinearQ,
    params: &FqiParams,
    refs: &SoftRefs,
    injections: &[(usize, DensityRatio)],
) -> Result<WeightErrorExperiment> {
    for (at, _) in injections {
        if *at >= params.iters {
            return Err(Error::InvalidSpec(format!(
                "injection iteration {at} is outside the run of {} iters",
                params.iters
            )));
        }
    }
    let clean = run_fqi(env, FqiMode::Population, q0, params, refs)?;
    let mut perturbed = FqiRunRecord {
        rows: Vec::with_capacity(params.iters + 1),
        stage_boundaries: vec![0],
        target_errors: Vec::with_capacity(params.iters + 1),
        final_error: f64::NAN,
        diverged: false,
    };
    let borrowed: Vec<(usize, &DensityRatio)> =
        injections.iter().map(|(at, p)| (*at, p)).collect();
    run_stage(
        env,
        FqiMode::Population,
        q0.clone(),
        params,
        refs,
        0,
        &borrowed,
        None,
        &mut perturbed,
    )?;
    finalize(&mut perturbed);
    let excess = clean
        .rows
        .iter()
        .zip(&perturbed.rows)
        .map(|(c, p)| p.error_mu_star - c.error_mu_star)
        .collect();
    Ok(WeightErrorExperiment {
        clean,
        perturbed,
        excess,
    })
}

/// Single-perturbation convenience wrapper around [`inject_weight_errors`].
pub fn inject_weight_error_once(
    env: &FqiEnv,
    q0: &LinearQ,
    params: &FqiParams,
    refs: &SoftRefs,
    at_iteration: usize,
    perturbation: &DensityRatio,
) -> Result<WeightErrorExperiment> {
    inject_weight_errors(env, q0, params, refs, &[(at_iteration, perturbation.clone())])
}

fn finalize(record: &mut FqiRunRecord) {
    record.final_error = record
        .rows
        .last()
        .map(|r| r.error_mu_star)
        .unwrap_or(f64::NAN);
}

/// Contraction profile for basin bookkeeping; absent when the stationary
/// support is degenerate (e.g. near-hardmax temperatures).
fn basin_profile(env: &FqiEnv, refs: &SoftRefs) -> Option<ContractionProfile> {
    let gap = misspecification_gap(&refs.q_star, env.features, &refs.mu_star).ok()?;
    contraction_profile(env.mdp, refs.tau, &refs.mu_star, &refs.pi_star, gap).ok()
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    env: &FqiEnv,
    mode: FqiMode,
    theta0: LinearQ,
    params: &FqiParams,
    refs: &SoftRefs,
    k_offset: usize,
    injections: &[(usize, &DensityRatio)],
    target_refs: Option<&SoftRefs>,
    record: &mut FqiRunRecord,
) -> Result<LinearQ> {
    params.weighting.validate()?;
    let (n, m) = (env.mdp.n_states(), env.mdp.n_actions());
    let profile = basin_profile(env, refs);
    let r_max = profile.as_ref().map(|p| p.r_max());
    let mut noise_rng = stream_rng(params.noise_seed, Stream::WeightNoise);

    let mut theta = theta0;
    let mut q_table = evaluate_linear(&theta, env.features)?;
    let mut weights = WeightState {
        ratio: DensityRatio::ones(n, m),
        mu_current: None,
        weight_err: None,
    };
    let mut prev_error: Option<f64> = None;

    for k in 0..=params.iters {
        let error = weighted_l2_distance(&q_table, &refs.q_star, &refs.mu_star)?;
        let target_error = match target_refs {
            Some(t) => weighted_l2_distance(&q_table, &t.q_star, &t.mu_star)?,
            None => error,
        };
        let in_basin = r_max.map(|r| error <= r).unwrap_or(false);

        if !error.is_finite() || error > params.divergence_threshold {
            record.rows.push(IterationRow {
                k: k_offset + k,
                tau: refs.tau.get(),
                error_mu_star: error,
                rho: prev_error.map(|e| error / e),
                weight_err: None,
                in_basin: false,
            });
            record.target_errors.push(target_error);
            record.diverged = true;
            return Ok(theta);
        }

        // Refresh weights for the upcoming step, based on the current iterate.
        if k < params.iters {
            refresh_weights(env, params, &q_table, k, &mut weights, &mut noise_rng)?;
            for (at, pert) in injections {
                if *at == k {
                    apply_perturbation(env, &mut weights, pert, &refs.mu_star)?;
                }
            }
        }

        record.rows.push(IterationRow {
            k: k_offset + k,
            tau: refs.tau.get(),
            error_mu_star: error,
            rho: prev_error.map(|e| error / e),
            weight_err: if k < params.iters { weights.weight_err } else { None },
            in_basin,
        });
        record.target_errors.push(target_error);
        prev_error = Some(error);

        if k == params.iters {
            break;
        }

        theta = match mode {
            FqiMode::Population => {
                let measure = weights.ratio.reweight(&env.nu_b)?;
                population_step(env.mdp, &q_table, params.tau, env.features, &measure, params.ridge)?
            }
            FqiMode::Fitted(dataset) => fitted_step(
                dataset,
                env.mdp,
                &q_table,
                params.tau,
                env.features,
                &weights.ratio,
                params.ridge,
            )?,
        };
        if !theta.is_finite() {
            record.diverged = true;
            return Ok(theta);
        }
        q_table = evaluate_linear(&theta, env.features)?;
    }
    Ok(theta)
}

fn refresh_weights(
    env: &FqiEnv,
    params: &FqiParams,
    q_table: &QTable,
    k: usize,
    weights: &mut WeightState,
    noise_rng: &mut rand_chacha::ChaCha12Rng,
) -> Result<()> {
    let forced_behavior = k < params.warm_start_unweighted;
    if forced_behavior {
        weights.ratio = DensityRatio::ones(env.mdp.n_states(), env.mdp.n_actions());
        weights.weight_err = None;
        return Ok(());
    }
    match &params.weighting {
        WeightingMode::Behavior => {
            if k == 0 {
                weights.ratio = DensityRatio::ones(env.mdp.n_states(), env.mdp.n_actions());
            }
            weights.weight_err = None;
        }
        WeightingMode::Fixed { ratio } => {
            if k == 0 {
                weights.ratio = ratio.clone();
            }
            weights.weight_err = None;
        }
        WeightingMode::StationaryExact { refresh_period } => {
            if k % refresh_period == 0 || weights.mu_current.is_none() {
                let exact = exact_ratio(env, params, q_table, weights)?;
                weights.ratio = exact;
                weights.weight_err = Some(0.0);
            } else {
                weights.weight_err = None;
            }
        }
        WeightingMode::StationaryNoisy {
            noise_scale,
            refresh_period,
        } => {
            if k % refresh_period == 0 || weights.mu_current.is_none() {
                let exact = exact_ratio(env, params, q_table, weights)?;
                let mut noisy = exact.clone();
                for v in noisy.values_mut() {
                    let g: f64 = StandardNormal.sample(noise_rng);
                    *v *= (noise_scale * g).exp();
                }
                renormalize_ratio(&mut noisy, &env.nu_b);
                let mu = weights
                    .mu_current
                    .as_ref()
                    .expect("exact_ratio populated mu_current");
                weights.weight_err = Some(weight_error(&noisy, &exact, mu));
                weights.ratio = noisy;
            } else {
                weights.weight_err = None;
            }
        }
    }
    Ok(())
}

/// Exact stationary ratio of the current iterate's softmax policy,
/// warm-starting the power iteration from the previous refresh.
fn exact_ratio(
    env: &FqiEnv,
    params: &FqiParams,
    q_table: &QTable,
    weights: &mut WeightState,
) -> Result<DensityRatio> {
    let pi = softmax_policy(q_table, params.tau);
    let init = weights
        .mu_current
        .clone()
        .unwrap_or_else(|| StateActionMeasure::uniform(env.mdp.n_states(), env.mdp.n_actions()));
    let mu = stationary_power_iteration(
        env.mdp,
        &pi,
        &init,
        params.stationary_tol,
        params.stationary_max_iter,
        1.0,
    )?;
    let ratio = density_ratio(&mu, &env.nu_b, params.ratio_floor)?;
    weights.mu_current = Some(mu);
    Ok(ratio)
}

fn apply_perturbation(
    env: &FqiEnv,
    weights: &mut WeightState,
    perturbation: &DensityRatio,
    mu_star: &StateActionMeasure,
) -> Result<()> {
    if perturbation.shape() != weights.ratio.shape() {
        return Err(Error::dim(
            "weight perturbation",
            format!("{:?}", weights.ratio.shape()),
            format!("{:?}", perturbation.shape()),
        ));
    }
    let exact = weights.ratio.clone();
    for (v, &p) in weights.ratio.values_mut().iter_mut().zip(perturbation.values()) {
        *v *= p;
    }
    renormalize_ratio(&mut weights.ratio, &env.nu_b);
    weights.weight_err = Some(weight_error(&weights.ratio, &exact, mu_star));
    Ok(())
}

/// Rescales a ratio so the implied measure `w * nu_b` has total mass one.
fn renormalize_ratio(ratio: &mut DensityRatio, nu_b: &StateActionMeasure) {
    let mass: f64 = ratio
        .values()
        .iter()
        .zip(nu_b.weights())
        .map(|(&w, &b)| w * b)
        .sum();
    if mass > 0.0 && mass.is_finite() {
        for v in ratio.values_mut() {
            *v /= mass;
        }
    }
}

/// Locates the fixed point of the projected operator by Picard iteration
/// under the stationary measure, returning the point and its fixed-point
/// residual `||Pi_F T(Q+) - Q+||_{2,mu*}`.
pub fn projected_fixed_point(
    mdp: &TabularMdp,
    features: &FeatureMap,
    refs: &SoftRefs,
    ridge: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(LinearQ, f64)> {
    let mut theta = projection_weighted_ls(&refs.q_star, features, &refs.mu_star, ridge)?;
    let mut table = evaluate_linear(&theta, features)?;
    for _ in 0..max_iter {
        let next =
            population_step(mdp, &table, refs.tau, features, &refs.mu_star, ridge)?;
        let next_table = evaluate_linear(&next, features)?;
        let step = weighted_l2_distance(&next_table, &table, &refs.mu_star)?;
        theta = next;
        table = next_table;
        if step <= tol {
            let once = population_step(mdp, &table, refs.tau, features, &refs.mu_star, ridge)?;
            let once_table = evaluate_linear(&once, features)?;
            let residual = weighted_l2_distance(&once_table, &table, &refs.mu_star)?;
            return Ok((theta, residual));
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: f64::NAN,
    })
}

/// Basin-targeted initializer `Pi_F(Q* + delta * u)` for a random unit
/// direction `u` in the stationary norm.
pub fn basin_init(
    features: &FeatureMap,
    refs: &SoftRefs,
    delta: f64,
    seed: u64,
) -> Result<LinearQ> {
    let mut rng = stream_rng(seed, Stream::BasinInit);
    let (n, m) = refs.q_star.shape();
    let mut dir = QTable::zeros(n, m);
    loop {
        for v in dir.values_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let norm = crate::stationary::weighted_l2_norm(&dir, &refs.mu_star)?;
        if norm > 1e-12 {
            for v in dir.values_mut() {
                *v /= norm;
            }
            break;
        }
    }
    let target = refs.q_star.axpy(delta, &dir);
    projection_weighted_ls(&target, features, &refs.mu_star, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_realizable_features, one_hot_features};
    use crate::mdp::{
        behavior_measure, dirichlet_behavior_policy, generate_garnet, sample_reset_dataset,
        GarnetSpec,
    };

    fn garnet(seed: u64) -> TabularMdp {
        generate_garnet(&GarnetSpec {
            n_states: 50,
            n_actions: 4,
            branching: 5,
            reward_std: 0.1,
            discount: 0.99,
            seed,
        })
        .unwrap()
    }

    fn setup(seed: u64, tau: f64) -> (TabularMdp, TabularPolicy, SoftRefs) {
        let mdp = garnet(seed);
        let behavior = dirichlet_behavior_policy(&mdp, seed);
        let refs = SoftRefs::solve(
            &mdp,
            Temperature::new(tau).unwrap(),
            &RefSolverParams::default(),
        )
        .unwrap();
        (mdp, behavior, refs)
    }

    #[test]
    fn population_step_one_hot_equals_bellman_target() {
        let (mdp, behavior, refs) = setup(1, 0.5);
        let f = one_hot_features(&mdp);
        let nu = behavior_measure(&mdp, &behavior);
        let mut q = QTable::zeros(50, 4);
        for (i, v) in q.values_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.21).sin();
        }
        let step = population_step(&mdp, &q, refs.tau, &f, &nu, 0.0).unwrap();
        let table = evaluate_linear(&step, &f).unwrap();
        let target = soft_bellman_apply(&mdp, &q, refs.tau).unwrap();
        assert!(table.sup_distance(&target) <= 1e-10);
    }

    #[test]
    fn population_step_mu_star_and_exact_ratio_agree() {
        // Weighting by mu* directly vs by the exact ratio times nu_b.
        let (mdp, behavior, refs) = setup(2, 0.5);
        let f = build_realizable_features(&refs.q_star, 5, 2, &refs.mu_star).unwrap();
        let nu = behavior_measure(&mdp, &behavior);
        let ratio = density_ratio(&refs.mu_star, &nu, RATIO_FLOOR).unwrap();
        let reweighted = ratio.reweight(&nu).unwrap();
        let mut q = QTable::zeros(50, 4);
        for (i, v) in q.values_mut().iter_mut().enumerate() {
            *v = refs.q_star.values()[i] + 0.01 * ((i * 3) as f64).sin();
        }
        let a = population_step(&mdp, &q, refs.tau, &f, &refs.mu_star, 0.0).unwrap();
        let b = population_step(&mdp, &q, refs.tau, &f, &reweighted, 0.0).unwrap();
        let ta = evaluate_linear(&a, &f).unwrap();
        let tb = evaluate_linear(&b, &f).unwrap();
        assert!(
            weighted_l2_distance(&ta, &tb, &refs.mu_star).unwrap() <= 1e-10,
            "mismatch {}",
            weighted_l2_distance(&ta, &tb, &refs.mu_star).unwrap()
        );
    }

    #[test]
    fn population_fixed_point_is_stationary_under_step() {
        let (mdp, _, refs) = setup(3, 0.5);
        let f = build_realizable_features(&refs.q_star, 5, 3, &refs.mu_star).unwrap();
        let (q_plus, residual) =
            projected_fixed_point(&mdp, &f, &refs, 0.0, 1e-12, 100_000).unwrap();
        assert!(residual <= 1e-9, "residual {residual}");
        let table = evaluate_linear(&q_plus, &f).unwrap();
        let step = population_step(&mdp, &table, refs.tau, &f, &refs.mu_star, 0.0).unwrap();
        let step_table = evaluate_linear(&step, &f).unwrap();
        assert!(
            weighted_l2_distance(&step_table, &table, &refs.mu_star).unwrap() <= 1e-9
        );
        // Realizable class: the projected fixed point is the soft optimum.
        assert!(
            weighted_l2_distance(&table, &refs.q_star, &refs.mu_star).unwrap() <= 1e-8
        );
    }

    #[test]
    fn fitted_census_dataset_matches_population_step() {
        // A dataset enumerating every (s,a) once, with exact-expectation
        // targets, reproduces the population projection under the
        // uniform-count measure.
        let (mdp, _, refs) = setup(4, 0.5);
        let f = build_realizable_features(&refs.q_star, 5, 4, &refs.mu_star).unwrap();
        let mut q = QTable::zeros(50, 4);
        for (i, v) in q.values_mut().iter_mut().enumerate() {
            *v = refs.q_star.values()[i] + 0.05 * ((i * 7) as f64).cos();
        }
        let target = soft_bellman_apply(&mdp, &q, refs.tau).unwrap();
        let pairs: Vec<(usize, usize)> =
            (0..50).flat_map(|s| (0..4).map(move |a| (s, a))).collect();
        let targets: Vec<f64> = pairs.iter().map(|&(s, a)| target.at(s, a)).collect();
        let ratio = DensityRatio::ones(50, 4);
        let fitted = weighted_regression(&pairs, &targets, &ratio, &f, 0.0).unwrap();
        let uniform = StateActionMeasure::uniform(50, 4);
        let pop = population_step(&mdp, &q, refs.tau, &f, &uniform, 0.0).unwrap();
        let tf = evaluate_linear(&fitted, &f).unwrap();
        let tp = evaluate_linear(&pop, &f).unwrap();
        assert!(tf.sup_distance(&tp) <= 1e-10);
    }

    #[test]
    fn fitted_step_large_sample_tracks_population() {
        let (mdp, behavior, refs) = setup(5, 0.5);
        let f = build_realizable_features(&refs.q_star, 5, 5, &refs.mu_star).unwrap();
        let nu = behavior_measure(&mdp, &behavior);
        let dataset = sample_reset_dataset(&mdp, &behavior, 100_000, 5).unwrap();
        let ratio = density_ratio(&refs.mu_star, &nu, RATIO_FLOOR).unwrap();
        let mut q = QTable::zeros(50, 4);
        for (i, v) in q.values_mut().iter_mut().enumerate() {
            *v = refs.q_star.values()[i] + 0.02 * ((i * 5) as f64).sin();
        }
        let fitted =
            fitted_step(&dataset, &mdp, &q, refs.tau, &f, &ratio, 1e-10).unwrap();
        let pop = population_step(&mdp, &q, refs.tau, &f, &refs.mu_star, 0.0).unwrap();
        let tf = evaluate_linear(&fitted, &f).unwrap();
        let tp = evaluate_linear(&pop, &f).unwrap();
        let gap = weighted_l2_distance(&tf, &tp, &refs.mu_star).unwrap();
        assert!(gap <= 0.05, "fitted vs population gap {gap}");
    }

    #[test]
    fn fitted_step_unweighted_runs() {
        let (mdp, behavior, refs) = setup(6, 0.5);
        let f = build_realizable_features(&refs.q_star, 5, 6, &refs.mu_star).unwrap();
        let dataset = sample_reset_dataset(&mdp, &behavior, 5_000, 6).unwrap();
        let ratio = DensityRatio::ones(50, 4);
        let q = QTable::zeros(50, 4);
        let out = fitted_step(&dataset, &mdp, &q, refs.tau, &f, &ratio, 1e-10).unwrap();
        assert!(out.is_finite());
    }

    #[test]
    fn homotopy_single_stage_equals_plain_run() {
        let (mdp, behavior, refs) = setup(7, 0.5);
        let f = build_realizable_features(&refs.q_star, 5, 7, &refs.mu_star).unwrap();
        let nu = behavior_measure(&mdp, &behavior);
        let env = FqiEnv {
            mdp: &mdp,
            features: &f,
            behavior: &behavior,
            nu_b: nu,
        };
        let params = FqiParams::new(
            refs.tau,
            10,
            0.0,
            WeightingMode::StationaryExact { refresh_period: 1 },
        );
        let q0 = LinearQ::zeros(&f);
        let plain = run_fqi(&env, FqiMode::Population, &q0, &params, &refs).unwrap();
        let schedule = HomotopySchedule {
            tau_init: 0.5,
            tau_target: 0.5,
            stages: 1,
            iters_per_stage: 10,
            decay: HomotopyDecay::Geometric,
        };
        let hom = run_homotopy(
            &env,
            FqiMode::Population,
            &q0,
            &schedule,
            &params,
            &RefSolverParams::default(),
        )
        .unwrap();
        assert_eq!(plain.rows.len(), hom.rows.len());
        for (a, b) in plain.rows.iter().zip(&hom.rows) {
            assert_eq!(a.error_mu_star, b.error_mu_star);
        }
    }

    #[test]
    fn run_record_is_deterministic() {
        let (mdp, behavior, refs) = setup(8, 0.5);
        let f = build_realizable_features(&refs.q_star, 5, 8, &refs.mu_star).unwrap();
        let nu = behavior_measure(&mdp, &behavior);
        let env = FqiEnv {
            mdp: &mdp,
            features: &f,
            behavior: &behavior,
            nu_b: nu,
        };
        let params = FqiParams {
            noise_seed: 8,
            ..FqiParams::new(
                refs.tau,
                8,
                0.0,
                WeightingMode::StationaryNoisy {
                    noise_scale: 0.3,
                    refresh_period: 1,
                },
            )
        };
        let q0 = LinearQ::zeros(&f);
        let r1 = run_fqi(&env, FqiMode::Population, &q0, &params, &refs).unwrap();
        let r2 = run_fqi(&env, FqiMode::Population, &q0, &params, &refs).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn zero_perturbation_produces_zero_excess() {
        let (mdp, behavior, refs) = setup(9, 0.5);
        let f = build_realizable_features(&refs.q_star, 5, 9, &refs.mu_star).unwrap();
        let nu = behavior_measure(&mdp, &behavior);
        let env = FqiEnv {
            mdp: &mdp,
            features: &f,
            behavior: &behavior,
            nu_b: nu,
        };
        let params = FqiParams::new(
            refs.tau,
            12,
            0.0,
            WeightingMode::StationaryExact { refresh_period: 1 },
        );
        let q0 = basin_init(&f, &refs, 0.01, 9).unwrap();
        let exp = inject_weight_error_once(
            &env,
            &q0,
            &params,
            &refs,
            4,
            &DensityRatio::ones(50, 4),
        )
        .unwrap();
        assert!(exp.excess.iter().all(|&d| d.abs() <= 1e-12));
    }

    #[test]
    fn weighting_mode_validation() {
        assert!(WeightingMode::StationaryExact { refresh_period: 0 }
            .validate()
            .is_err());
        assert!(WeightingMode::StationaryNoisy {
            noise_scale: -0.1,
            refresh_period: 1
        }
        .validate()
        .is_err());
        let sched = HomotopySchedule {
            tau_init: 0.01,
            tau_target: 0.1,
            stages: 2,
            iters_per_stage: 5,
            decay: HomotopyDecay::Geometric,
        };
        assert!(sched.validate().is_err());
    }

    #[test]
    fn homotopy_stage_taus_shapes() {
        let sched = HomotopySchedule {
            tau_init: 0.1,
            tau_target: 1e-6,
            stages: 10,
            iters_per_stage: 30,
            decay: HomotopyDecay::Geometric,
        };
        let taus = sched.stage_taus();
        assert_eq!(taus.len(), 10);
        assert!((taus[0] - 0.1).abs() <= 1e-15);
        assert!((taus[9] - 1e-6).abs() <= 1e-18);
        for w in taus.windows(2) {
            assert!(w[1] < w[0]);
        }
    }
}
