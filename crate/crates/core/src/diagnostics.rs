//! Numerical certification of the local theory: finite-difference oracles
//! for the operator derivatives, ball-sampling contraction certificates,
//! second-order remainder checks, and action-gap measurement.

use rand::distributions::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{evaluate_linear, FeatureMap, LinearQ};
use crate::mdp::TabularMdp;
use crate::rng::{stream_rng, Stream};
use crate::soft_bellman::{
    d2t_apply, dt_apply, soft_bellman_apply, soft_remainder_table, softmax_policy,
    solve_soft_q_star, QTable, Temperature,
};
use crate::stationary::{
    contraction_profile, projection_weighted_ls, weighted_l2_distance, weighted_l2_norm,
    StateActionMeasure,
};

/// Temperature below which finite differences of the operator are not
/// trusted; derivative checks refuse to run under it.
pub const DERIVATIVE_CHECK_TAU_FLOOR: f64 = 0.01;

/// Hardmax proxy temperature for action-gap measurement.
pub const HARDMAX_TAU: f64 = 1e-9;

/// Slack added to the theoretical modulus before counting a sampled pair
/// as a contraction violation.
pub const CONTRACTION_SLACK: f64 = 1e-9;

/// Outcome of a ball-sampling contraction certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractionCertificate {
    pub radius_tested: f64,
    pub pairs_tested: usize,
    /// Max over pairs of `||T Q1 - T Q2|| / ||Q1 - Q2||` in the stationary norm.
    pub max_observed_ratio: f64,
    /// Same ratio for the projected operator `Pi_F T`.
    pub max_projected_ratio: f64,
    /// Theoretical modulus `rho(radius)`.
    pub bound_rho: f64,
    /// Pairs where either operator exceeded `bound_rho + slack`.
    pub violations: usize,
}

/// Uniform action gap of the hardmax-limit optimal values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    /// Half the minimum best-vs-second-best margin; `+inf` with one action.
    pub delta: f64,
    pub argmax_actions: Vec<usize>,
    pub margin_stats: MarginStats,
    /// States whose top-two values tie within the requested tolerance.
    pub ties: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// Random direction table with unit stationary norm.
fn random_unit_direction<R: Rng>(
    rng: &mut R,
    mu_star: &StateActionMeasure,
) -> Result<QTable> {
    let (n, m) = mu_star.shape();
    loop {
        let mut h = QTable::zeros(n, m);
        for v in h.values_mut() {
            *v = StandardNormal.sample(rng);
        }
        let norm = weighted_l2_norm(&h, mu_star)?;
        if norm > 1e-12 {
            for v in h.values_mut() {
                *v /= norm;
            }
            return Ok(h);
        }
    }
}

/// Random unit direction inside the span of `features`.
fn random_unit_span_direction<R: Rng>(
    rng: &mut R,
    features: &FeatureMap,
    mu_star: &StateActionMeasure,
) -> Result<QTable> {
    loop {
        let theta: Vec<f64> = (0..features.p()).map(|_| StandardNormal.sample(rng)).collect();
        let table = evaluate_linear(&LinearQ::new(theta, features.id()), features)?;
        let norm = weighted_l2_norm(&table, mu_star)?;
        if norm > 1e-12 {
            let mut out = table;
            for v in out.values_mut() {
                *v /= norm;
            }
            return Ok(out);
        }
    }
}

fn relative_error_in_norm(
    analytic: &QTable,
    fd: &QTable,
    mu_star: &StateActionMeasure,
) -> Result<f64> {
    let diff = weighted_l2_distance(analytic, fd, mu_star)?;
    let scale = weighted_l2_norm(analytic, mu_star)?;
    if scale == 0.0 && diff == 0.0 {
        return Ok(0.0);
    }
    Ok(diff / scale.max(1e-300))
}

/// Worst relative error, over random unit directions, of the analytic first
/// derivative against the central finite difference
/// `(T(q + eps h) - T(q - eps h)) / (2 eps)`, measured in the stationary norm.
pub fn check_first_derivative(
    mdp: &TabularMdp,
    q: &QTable,
    tau: Temperature,
    mu_star: &StateActionMeasure,
    n_directions: usize,
    eps: f64,
    seed: u64,
) -> Result<f64> {
    if tau.get() < DERIVATIVE_CHECK_TAU_FLOOR {
        return Err(Error::InvalidSpec(format!(
            "finite differences are unreliable below tau = {DERIVATIVE_CHECK_TAU_FLOOR}; got {}",
            tau.get()
        )));
    }
    let mut rng = stream_rng(seed, Stream::Directions);
    let mut worst = 0.0f64;
    for _ in 0..n_directions {
        let h = random_unit_direction(&mut rng, mu_star)?;
        let analytic = dt_apply(mdp, q, tau, &h)?;
        let plus = soft_bellman_apply(mdp, &q.axpy(eps, &h), tau)?;
        let minus = soft_bellman_apply(mdp, &q.axpy(-eps, &h), tau)?;
        let mut fd = plus;
        for (v, m) in fd.values_mut().iter_mut().zip(minus.values()) {
            *v = (*v - m) / (2.0 * eps);
        }
        worst = worst.max(relative_error_in_norm(&analytic, &fd, mu_star)?);
    }
    Ok(worst)
}

/// Worst relative error of the analytic second derivative against the
/// second central difference `(T(q+eps h) - 2 T(q) + T(q-eps h)) / eps^2`.
pub fn check_second_derivative(
    mdp: &TabularMdp,
    q: &QTable,
    tau: Temperature,
    mu_star: &StateActionMeasure,
    n_directions: usize,
    eps: f64,
    seed: u64,
) -> Result<f64> {
    if tau.get() < DERIVATIVE_CHECK_TAU_FLOOR {
        return Err(Error::InvalidSpec(format!(
            "finite differences are unreliable below tau = {DERIVATIVE_CHECK_TAU_FLOOR}; got {}",
            tau.get()
        )));
    }
    let mut rng = stream_rng(seed, Stream::Directions);
    let mid = soft_bellman_apply(mdp, q, tau)?;
    let mut worst = 0.0f64;
    for _ in 0..n_directions {
        let h = random_unit_direction(&mut rng, mu_star)?;
        let analytic = d2t_apply(mdp, q, tau, &h, &h)?;
        let plus = soft_bellman_apply(mdp, &q.axpy(eps, &h), tau)?;
        let minus = soft_bellman_apply(mdp, &q.axpy(-eps, &h), tau)?;
        let mut fd = plus;
        for ((v, c), m) in fd
            .values_mut()
            .iter_mut()
            .zip(mid.values())
            .zip(minus.values())
        {
            *v = (*v - 2.0 * c + m) / (eps * eps);
        }
        worst = worst.max(relative_error_in_norm(&analytic, &fd, mu_star)?);
    }
    Ok(worst)
}

/// Samples pairs in `F` intersected with the stationary-norm ball of the
/// given radius around `q_star` and certifies the contraction modulus
/// `rho(radius)` for both the soft Bellman operator and its projection.
///
/// Radii are drawn log-uniform in `[1e-3 * radius, radius]`; directions in
/// the coefficient space of `F`, normalized in the stationary norm.
#[allow(clippy::too_many_arguments)]
pub fn certify_contraction(
    mdp: &TabularMdp,
    tau: Temperature,
    q_star: &QTable,
    features: &FeatureMap,
    mu_star: &StateActionMeasure,
    radius: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<ContractionCertificate> {
    let pi_star = softmax_policy(q_star, tau);
    let profile = contraction_profile(mdp, tau, mu_star, &pi_star, 0.0)?;
    if radius >= profile.r0 {
        return Err(Error::OutOfRegion {
            radius,
            r0: profile.r0,
        });
    }
    if n_pairs == 0 {
        return Err(Error::InvalidSpec("n_pairs must be >= 1".into()));
    }
    let bound_rho = profile.rho(radius);
    let mut rng = stream_rng(seed, Stream::BallPairs);
    let mut max_ratio = 0.0f64;
    let mut max_proj_ratio = 0.0f64;
    let mut violations = 0usize;
    for _ in 0..n_pairs {
        let (q1, q2) = loop {
            let d1 = random_unit_span_direction(&mut rng, features, mu_star)?;
            let d2 = random_unit_span_direction(&mut rng, features, mu_star)?;
            let r1 = log_uniform(&mut rng, 1e-3 * radius, radius);
            let r2 = log_uniform(&mut rng, 1e-3 * radius, radius);
            let q1 = q_star.axpy(r1, &d1);
            let q2 = q_star.axpy(r2, &d2);
            // Coincident pairs have an undefined ratio; redraw.
            if weighted_l2_distance(&q1, &q2, mu_star)? > 1e-300 {
                break (q1, q2);
            }
        };
        let denom = weighted_l2_distance(&q1, &q2, mu_star)?;
        let t1 = soft_bellman_apply(mdp, &q1, tau)?;
        let t2 = soft_bellman_apply(mdp, &q2, tau)?;
        let ratio = weighted_l2_distance(&t1, &t2, mu_star)? / denom;

        let p1 = evaluate_linear(&projection_weighted_ls(&t1, features, mu_star, 0.0)?, features)?;
        let p2 = evaluate_linear(&projection_weighted_ls(&t2, features, mu_star, 0.0)?, features)?;
        let proj_ratio = weighted_l2_distance(&p1, &p2, mu_star)? / denom;

        max_ratio = max_ratio.max(ratio);
        max_proj_ratio = max_proj_ratio.max(proj_ratio);
        if ratio > bound_rho + CONTRACTION_SLACK || proj_ratio > bound_rho + CONTRACTION_SLACK {
            violations += 1;
        }
    }
    Ok(ContractionCertificate {
        radius_tested: radius,
        pairs_tested: n_pairs,
        max_observed_ratio: max_ratio,
        max_projected_ratio: max_proj_ratio,
        bound_rho,
        violations,
    })
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.gen();
    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
}

/// Samples tables at radii up to `max_radius` around `q_star` and returns
/// the worst slack `max(lhs - rhs)` of the second-order remainder bound
/// `||T(Q) - T^eval_{Q*}(Q)|| <= beta_loc / 2 * ||Q - Q*||^2`
/// (stationary norms, `alpha = 1`). Nonpositive means the bound held
/// everywhere.
pub fn check_remainder_bound(
    mdp: &TabularMdp,
    tau: Temperature,
    q_star: &QTable,
    mu_star: &StateActionMeasure,
    n_samples: usize,
    max_radius: f64,
    seed: u64,
) -> Result<f64> {
    let pi_star = softmax_policy(q_star, tau);
    let profile = contraction_profile(mdp, tau, mu_star, &pi_star, 0.0)?;
    let mut rng = stream_rng(seed, Stream::BallPairs);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n_samples {
        let h = random_unit_direction(&mut rng, mu_star)?;
        let r = log_uniform(&mut rng, 1e-3 * max_radius, max_radius);
        let q = q_star.axpy(r, &h);
        let remainder = soft_remainder_table(mdp, &q, q_star, tau)?;
        let lhs = weighted_l2_norm(&remainder, mu_star)?;
        let dist = weighted_l2_distance(&q, q_star, mu_star)?;
        let rhs = 0.5 * profile.beta_loc * dist * dist;
        worst = worst.max(lhs - rhs);
    }
    Ok(worst)
}

/// Measures the uniform action gap of the hardmax-limit optimal values
/// (soft solve at `tau = 1e-9`): per-state best-vs-second-best margins,
/// `delta` = half the minimum margin. States whose top two values tie
/// within `tol` force `delta = 0` and are listed.
pub fn measure_action_gap(mdp: &TabularMdp, tol: f64) -> Result<GapReport> {
    let tau = Temperature::new(HARDMAX_TAU).expect("positive");
    let report = solve_soft_q_star(mdp, tau, 1e-10, 5_000_000)?;
    let q = &report.q_star;
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let mut argmax_actions = Vec::with_capacity(n);
    if m == 1 {
        // No competing action: infinite gap by convention.
        for _ in 0..n {
            argmax_actions.push(0);
        }
        return Ok(GapReport {
            delta: f64::INFINITY,
            argmax_actions,
            margin_stats: MarginStats {
                min: f64::INFINITY,
                max: f64::INFINITY,
                mean: f64::INFINITY,
            },
            ties: Vec::new(),
        });
    }
    let mut margins = Vec::with_capacity(n);
    let mut ties = Vec::new();
    for s in 0..n {
        let row = q.row(s);
        let (mut best, mut best_a) = (f64::NEG_INFINITY, 0);
        for (a, &v) in row.iter().enumerate() {
            if v > best {
                best = v;
                best_a = a;
            }
        }
        let second = row
            .iter()
            .enumerate()
            .filter(|(a, _)| *a != best_a)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let margin = best - second;
        if margin <= tol {
            ties.push(s);
        }
        margins.push(margin);
        argmax_actions.push(best_a);
    }
    let min = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = margins.iter().sum::<f64>() / margins.len() as f64;
    let delta = if ties.is_empty() { min / 2.0 } else { 0.0 };
    Ok(GapReport {
        delta,
        argmax_actions,
        margin_stats: MarginStats { min, max, mean },
        ties,
    })
}
