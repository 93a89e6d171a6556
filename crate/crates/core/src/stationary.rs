//! Stationary state-action distributions, weighted L2 geometry, density
//! ratios, weighted least-squares projection, and the local-contraction
//! profile (curvature bound, radius, modulus).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMap, LinearQ};
use crate::mdp::{TabularMdp, TabularPolicy};
use crate::soft_bellman::{QTable, Temperature};

/// Default floor under which a denominator measure is treated as
/// unsupported when forming density ratios.
pub const RATIO_FLOOR: f64 = 1e-12;

/// Nonnegative weight table over state-action pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateActionMeasure {
    n_states: usize,
    n_actions: usize,
    weights: Vec<f64>,
    normalized: bool,
}

impl StateActionMeasure {
    /// Wraps weights that are known to sum to one.
    pub fn new_normalized(n_states: usize, n_actions: usize, weights: Vec<f64>) -> Self {
        debug_assert!({
            let s: f64 = weights.iter().sum();
            (s - 1.0).abs() <= 1e-9
        });
        StateActionMeasure {
            n_states,
            n_actions,
            weights,
            normalized: true,
        }
    }

    /// Wraps raw nonnegative weights without normalizing.
    pub fn new_unnormalized(n_states: usize, n_actions: usize, weights: Vec<f64>) -> Self {
        StateActionMeasure {
            n_states,
            n_actions,
            weights,
            normalized: false,
        }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let w = 1.0 / (n_states * n_actions) as f64;
        StateActionMeasure::new_normalized(n_states, n_actions, vec![w; n_states * n_actions])
    }

    /// Rescales to total mass one. Errors on zero total mass.
    pub fn normalize(mut self) -> Result<Self> {
        let sum: f64 = self.weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::DegenerateSupport(format!(
                "cannot normalize measure with total mass {sum}"
            )));
        }
        for w in &mut self.weights {
            *w /= sum;
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_states, self.n_actions)
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    #[inline]
    pub fn at(&self, s: usize, a: usize) -> f64 {
        self.weights[s * self.n_actions + a]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn min_weight(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// True when every pair carries strictly positive mass.
    pub fn full_support(&self) -> bool {
        self.weights.iter().all(|&w| w > 0.0)
    }
}

/// Nonnegative density-ratio table `w[s][a]`, together with the number of
/// pairs whose denominator fell below the floor when the ratio was formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRatio {
    n_states: usize,
    n_actions: usize,
    ratio: Vec<f64>,
    pub support_violations: usize,
}

impl DensityRatio {
    pub fn ones(n_states: usize, n_actions: usize) -> Self {
        DensityRatio {
            n_states,
            n_actions,
            ratio: vec![1.0; n_states * n_actions],
            support_violations: 0,
        }
    }

    pub fn from_values(n_states: usize, n_actions: usize, ratio: Vec<f64>) -> Result<Self> {
        if ratio.len() != n_states * n_actions {
            return Err(Error::dim("density ratio", n_states * n_actions, ratio.len()));
        }
        if ratio.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidSpec(
                "density ratio entries must be finite and nonnegative".into(),
            ));
        }
        Ok(DensityRatio {
            n_states,
            n_actions,
            ratio,
            support_violations: 0,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_states, self.n_actions)
    }

    #[inline]
    pub fn at(&self, s: usize, a: usize) -> f64 {
        self.ratio[s * self.n_actions + a]
    }

    pub fn values(&self) -> &[f64] {
        &self.ratio
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.ratio
    }

    /// The reweighted measure `w * base`, renormalized to mass one.
    pub fn reweight(&self, base: &StateActionMeasure) -> Result<StateActionMeasure> {
        let weights: Vec<f64> = self
            .ratio
            .iter()
            .zip(base.weights())
            .map(|(&w, &b)| w * b)
            .collect();
        StateActionMeasure::new_unnormalized(self.n_states, self.n_actions, weights).normalize()
    }
}

/// One step of the state-action chain `M[(s,a) -> (s',a')] = P(s'|s,a) pi(a'|s')`.
fn chain_step(mdp: &TabularMdp, policy: &TabularPolicy, m: &[f64], out: &mut [f64]) {
    let n = mdp.n_states();
    let k = mdp.n_actions();
    let mut next_state = vec![0.0; n];
    for s in 0..n {
        for a in 0..k {
            let mass = m[s * k + a];
            if mass > 0.0 {
                let row = mdp.transition_row(s, a);
                for (s2, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        next_state[s2] += mass * p;
                    }
                }
            }
        }
    }
    for s2 in 0..n {
        let pr = policy.row(s2);
        for a2 in 0..k {
            out[s2 * k + a2] = next_state[s2] * pr[a2];
        }
    }
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Power iteration for the stationary state-action distribution, starting
/// from `init`. Accepts the first iterate whose one-step L1 residual is at
/// most `tol`. `damping` (PageRank-style mixing toward uniform, `1` = off)
/// is an escape hatch for periodic chains; damped results solve the damped
/// chain, so callers must label them.
pub(crate) fn stationary_power_iteration(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    init: &StateActionMeasure,
    tol: f64,
    max_iter: usize,
    damping: f64,
) -> Result<StateActionMeasure> {
    if !(tol > 0.0) {
        return Err(Error::InvalidSpec(format!("tol must be positive, got {tol}")));
    }
    mdp.validate()?;
    let n = mdp.n_states();
    let k = mdp.n_actions();
    let uniform = 1.0 / (n * k) as f64;
    let mut m = init.weights().to_vec();
    let mut next = vec![0.0; n * k];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        chain_step(mdp, policy, &m, &mut next);
        if damping < 1.0 {
            for v in next.iter_mut() {
                *v = damping * *v + (1.0 - damping) * uniform;
            }
        }
        residual = l1_distance(&next, &m);
        if residual <= tol {
            // `m` is the accepted iterate: its one-step residual is exactly
            // what we just measured.
            return Ok(StateActionMeasure::new_normalized(n, k, m));
        }
        std::mem::swap(&mut m, &mut next);
        // Guard against mass drift over long runs.
        let sum: f64 = m.iter().sum();
        if (sum - 1.0).abs() > 1e-13 {
            for v in m.iter_mut() {
                *v /= sum;
            }
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Stationary state-action distribution of the chain induced by
/// `(policy, P)`, by power iteration from the uniform measure.
pub fn stationary_distribution(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    tol: f64,
    max_iter: usize,
) -> Result<StateActionMeasure> {
    let init = StateActionMeasure::uniform(mdp.n_states(), mdp.n_actions());
    stationary_power_iteration(mdp, policy, &init, tol, max_iter, 1.0)
}

/// Damped variant for chains that fail to converge undamped. The result is
/// the stationary measure of the damped chain and must be labeled as such.
pub fn stationary_distribution_damped(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    tol: f64,
    max_iter: usize,
    damping: f64,
) -> Result<StateActionMeasure> {
    if !(0.0 < damping && damping <= 1.0) {
        return Err(Error::InvalidSpec(format!(
            "damping must lie in (0, 1], got {damping}"
        )));
    }
    let init = StateActionMeasure::uniform(mdp.n_states(), mdp.n_actions());
    stationary_power_iteration(mdp, policy, &init, tol, max_iter, damping)
}

/// One-step L1 stationarity residual `||mu^T M - mu^T||_1` of a candidate
/// measure; used by self-checks and the verification suite.
pub fn stationarity_residual(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    measure: &StateActionMeasure,
) -> f64 {
    let mut next = vec![0.0; measure.weights().len()];
    chain_step(mdp, policy, measure.weights(), &mut next);
    l1_distance(&next, measure.weights())
}

/// Weighted L2 norm `sqrt(sum m[s][a] f(s,a)^2)`. The measure is expected
/// to be normalized.
pub fn weighted_l2_norm(f: &QTable, measure: &StateActionMeasure) -> Result<f64> {
    if f.shape() != measure.shape() {
        return Err(Error::dim(
            "weighted_l2_norm",
            format!("{:?}", measure.shape()),
            format!("{:?}", f.shape()),
        ));
    }
    debug_assert!(measure.is_normalized());
    let mut acc = 0.0;
    for (v, w) in f.values().iter().zip(measure.weights()) {
        acc += w * v * v;
    }
    Ok(acc.sqrt())
}

/// Weighted L2 distance `||a - b||_{2,m}`.
pub fn weighted_l2_distance(a: &QTable, b: &QTable, measure: &StateActionMeasure) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            "weighted_l2_distance",
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    let mut acc = 0.0;
    for ((x, y), w) in a.values().iter().zip(b.values()).zip(measure.weights()) {
        let d = x - y;
        acc += w * d * d;
    }
    Ok(acc.sqrt())
}

/// Entrywise ratio `numerator / denominator` where the denominator is at
/// least `floor`; pairs below the floor get ratio zero and are tallied in
/// `support_violations` instead of raising an error.
pub fn density_ratio(
    numerator: &StateActionMeasure,
    denominator: &StateActionMeasure,
    floor: f64,
) -> Result<DensityRatio> {
    if numerator.shape() != denominator.shape() {
        return Err(Error::dim(
            "density_ratio",
            format!("{:?}", denominator.shape()),
            format!("{:?}", numerator.shape()),
        ));
    }
    let (n, k) = numerator.shape();
    let mut ratio = vec![0.0; n * k];
    let mut violations = 0;
    for i in 0..n * k {
        let d = denominator.weights()[i];
        if d >= floor {
            ratio[i] = numerator.weights()[i] / d;
        } else {
            violations += 1;
        }
    }
    Ok(DensityRatio {
        n_states: n,
        n_actions: k,
        ratio,
        support_violations: violations,
    })
}

/// Weighted least squares of `target` onto the span of `features` in
/// `L2(measure)`: minimizes `sum_m (target - phi theta)^2 + ridge ||theta||^2`
/// through the normal equations with a symmetric positive-definite solve.
pub fn projection_weighted_ls(
    target: &QTable,
    features: &FeatureMap,
    measure: &StateActionMeasure,
    ridge: f64,
) -> Result<LinearQ> {
    if target.shape() != measure.shape() || target.shape() != features.shape() {
        return Err(Error::dim(
            "projection_weighted_ls",
            format!("{:?}", features.shape()),
            format!("{:?}", target.shape()),
        ));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidSpec(format!("ridge must be >= 0, got {ridge}")));
    }
    let p = features.p();
    let sa = target.values().len();
    let mut gram = nalgebra::DMatrix::<f64>::zeros(p, p);
    let mut rhs = nalgebra::DVector::<f64>::zeros(p);
    for i in 0..sa {
        let w = measure.weights()[i];
        if w == 0.0 {
            continue;
        }
        let phi = features.row_flat(i);
        let y = target.values()[i];
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

pub(crate) fn solve_spd(
    gram: nalgebra::DMatrix<f64>,
    rhs: nalgebra::DVector<f64>,
    features: &FeatureMap,
) -> Result<LinearQ> {
    match gram.cholesky() {
        Some(chol) => {
            let theta = chol.solve(&rhs);
            Ok(LinearQ::new(theta.iter().copied().collect(), features.id()))
        }
        None => Err(Error::SingularProjection),
    }
}

/// Misspecification gap `||Pi_F Q* - Q*||_{2,mu*}` of the class against the
/// soft optimum, using ridge-free projection.
pub fn misspecification_gap(
    q_star: &QTable,
    features: &FeatureMap,
    mu_star: &StateActionMeasure,
) -> Result<f64> {
    let proj = projection_weighted_ls(q_star, features, mu_star, 0.0)?;
    let table = crate::features::evaluate_linear(&proj, features)?;
    weighted_l2_distance(&table, q_star, mu_star)
}

/// Local-contraction geometry at one temperature: curvature bound
/// `beta_loc = gamma / (2 tau) * C_inf * sqrt(|A| / pi_min)`, radius
/// `r0 = ((1 - gamma) / beta_loc)^(1/alpha)`, and modulus
/// `rho(r) = gamma + beta_loc r^alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionProfile {
    pub gamma: f64,
    pub tau: f64,
    pub n_actions: usize,
    pub alpha: f64,
    pub pi_min: f64,
    pub c_inf: f64,
    pub beta_loc: f64,
    pub r0: f64,
    /// Misspecification displacement; `r_max = r0 - eps_f`.
    pub eps_f: f64,
}

impl ContractionProfile {
    /// Contraction modulus over a radius-`r` ball around the soft optimum.
    pub fn rho(&self, r: f64) -> f64 {
        self.gamma + self.beta_loc * r.powf(self.alpha)
    }

    /// Effective modulus around the projected fixed point.
    pub fn rho_eff(&self, r: f64) -> f64 {
        self.gamma + self.beta_loc * (r + self.eps_f).powf(self.alpha)
    }

    /// Basin radius around the projected fixed point.
    pub fn r_max(&self) -> f64 {
        self.r0 - self.eps_f
    }
}

/// Builds the contraction profile from the stationary measure and policy of
/// the soft optimum, with the tabular instantiation `alpha = 1`,
/// `C_inf = 1 / sqrt(min mu*)`.
pub fn contraction_profile(
    mdp: &TabularMdp,
    tau: Temperature,
    mu_star: &StateActionMeasure,
    pi_star: &TabularPolicy,
    eps_f: f64,
) -> Result<ContractionProfile> {
    if !mu_star.full_support() {
        return Err(Error::DegenerateSupport(
            "stationary measure must have full support for the contraction profile".into(),
        ));
    }
    let pi_min = pi_star
        .probs()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !(pi_min > 0.0) {
        return Err(Error::DegenerateSupport(
            "soft-optimal policy has a zero-probability action".into(),
        ));
    }
    let c_inf = 1.0 / mu_star.min_weight().sqrt();
    let gamma = mdp.discount();
    let alpha = 1.0;
    let beta_loc =
        gamma / (2.0 * tau.get()) * c_inf * ((mdp.n_actions() as f64) / pi_min).sqrt();
    let r0 = ((1.0 - gamma) / beta_loc).powf(1.0 / alpha);
    Ok(ContractionProfile {
        gamma,
        tau: tau.get(),
        n_actions: mdp.n_actions(),
        alpha,
        pi_min,
        c_inf,
        beta_loc,
        r0,
        eps_f,
    })
}

/// Gap-enhanced profile: under a uniform action gap `delta` the curvature
/// bound improves to `gamma / tau * C_inf * sqrt(|A|/pi_min) * c_gap *
/// exp(-delta / (2 tau))`, and the radius is capped by the margin-stable
/// ball radius `r_gap`.
pub fn gap_enhanced_profile(
    profile: &ContractionProfile,
    action_gap: f64,
    c_gap: f64,
    r_gap: f64,
) -> Result<ContractionProfile> {
    if !(action_gap > 0.0) {
        return Err(Error::NoActionGap(action_gap));
    }
    let beta_gap = profile.gamma / profile.tau
        * profile.c_inf
        * ((profile.n_actions as f64) / profile.pi_min).sqrt()
        * c_gap
        * (-action_gap / (2.0 * profile.tau)).exp();
    let geometric = ((1.0 - profile.gamma) / beta_gap).powf(1.0 / profile.alpha);
    let r0 = r_gap.min(geometric);
    Ok(ContractionProfile {
        beta_loc: beta_gap,
        r0,
        ..profile.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{dirichlet_behavior_policy, generate_garnet, GarnetSpec};
    use crate::soft_bellman::{softmax_policy, solve_soft_q_star};

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

    #[test]
    fn stationary_single_state() {
        let mdp = TabularMdp::from_parts(1, 1, vec![1.0], vec![0.0], 0.5).unwrap();
        let pi = TabularPolicy::from_probs(1, 1, vec![1.0]).unwrap();
        let mu = stationary_distribution(&mdp, &pi, 1e-14, 100).unwrap();
        assert_eq!(mu.weights(), &[1.0]);
    }

    #[test]
    fn stationary_two_state_swap() {
        // Deterministic swap 0 <-> 1 with one action; the stationary measure
        // is (1/2, 1/2): the uniform start is already stationary.
        let mdp = TabularMdp::from_parts(2, 1, vec![0.0, 1.0, 1.0, 0.0], vec![0.0, 0.0], 0.5)
            .unwrap();
        let pi = TabularPolicy::from_probs(2, 1, vec![1.0, 1.0]).unwrap();
        let mu = stationary_distribution(&mdp, &pi, 1e-12, 1000).unwrap();
        assert!((mu.at(0, 0) - 0.5).abs() <= 1e-12);
        assert!((mu.at(1, 0) - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn stationary_garnet_residual_self_check() {
        let mdp = garnet(4);
        let qs = solve_soft_q_star(&mdp, Temperature::new(0.1).unwrap(), 1e-10, 200_000)
            .unwrap()
            .q_star;
        let pi = softmax_policy(&qs, Temperature::new(0.1).unwrap());
        let mu = stationary_distribution(&mdp, &pi, 1e-12, 2_000_000).unwrap();
        assert!(stationarity_residual(&mdp, &pi, &mu) <= 1e-12);
        let sum: f64 = mu.weights().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn stationary_nonconvergence_carries_residual() {
        let mdp = garnet(4);
        let pi = dirichlet_behavior_policy(&mdp, 4);
        match stationary_distribution(&mdp, &pi, 1e-12, 2) {
            Err(Error::NonConvergence { residual, .. }) => assert!(residual > 0.0),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn weighted_norm_basics() {
        let m = StateActionMeasure::new_normalized(1, 2, vec![0.3, 0.7]);
        let f = QTable::from_values(1, 2, vec![2.0, 2.0]).unwrap();
        assert!((weighted_l2_norm(&f, &m).unwrap() - 2.0).abs() <= 1e-15);
        let ind = QTable::from_values(1, 2, vec![1.0, 0.0]).unwrap();
        assert!((weighted_l2_norm(&ind, &m).unwrap() - 0.3f64.sqrt()).abs() <= 1e-15);
    }

    #[test]
    fn weighted_norm_matches_naive_sum() {
        let mdp = garnet(5);
        let pi = dirichlet_behavior_policy(&mdp, 5);
        let mu = crate::mdp::behavior_measure(&mdp, &pi);
        let mut f = QTable::zeros(50, 4);
        for (i, v) in f.values_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.31).sin();
        }
        let mut naive = 0.0;
        for s in 0..50 {
            for a in 0..4 {
                naive += mu.at(s, a) * f.at(s, a) * f.at(s, a);
            }
        }
        assert!((weighted_l2_norm(&f, &mu).unwrap() - naive.sqrt()).abs() <= 1e-14);
    }

    #[test]
    fn density_ratio_cases() {
        let m = StateActionMeasure::new_normalized(1, 2, vec![0.75, 0.25]);
        let nu = StateActionMeasure::new_normalized(1, 2, vec![0.5, 0.5]);
        let w = density_ratio(&m, &nu, RATIO_FLOOR).unwrap();
        assert_eq!(w.values(), &[1.5, 0.5]);
        assert_eq!(w.support_violations, 0);

        let same = density_ratio(&nu, &nu, RATIO_FLOOR).unwrap();
        assert!(same.values().iter().all(|&v| (v - 1.0).abs() <= 1e-15));

        // Full-support behavior: no violations on a Garnet instance.
        let mdp = garnet(6);
        let pib = dirichlet_behavior_policy(&mdp, 6);
        let nu_b = crate::mdp::behavior_measure(&mdp, &pib);
        let t = Temperature::new(0.1).unwrap();
        let qs = solve_soft_q_star(&mdp, t, 1e-10, 200_000).unwrap().q_star;
        let mu = stationary_distribution(&mdp, &softmax_policy(&qs, t), 1e-12, 2_000_000).unwrap();
        let ratio = density_ratio(&mu, &nu_b, RATIO_FLOOR).unwrap();
        assert_eq!(ratio.support_violations, 0);
    }

    #[test]
    fn norm_equivalence_with_exact_ratio() {
        // ||f||_{2, w nu_b} == ||f||_{2, mu*} when w is the exact ratio.
        let mdp = garnet(7);
        let pib = dirichlet_behavior_policy(&mdp, 7);
        let nu_b = crate::mdp::behavior_measure(&mdp, &pib);
        let t = Temperature::new(0.5).unwrap();
        let qs = solve_soft_q_star(&mdp, t, 1e-11, 200_000).unwrap().q_star;
        let mu = stationary_distribution(&mdp, &softmax_policy(&qs, t), 1e-13, 2_000_000).unwrap();
        let w = density_ratio(&mu, &nu_b, RATIO_FLOOR).unwrap();
        let reweighted = w.reweight(&nu_b).unwrap();
        let mut f = QTable::zeros(50, 4);
        for (i, v) in f.values_mut().iter_mut().enumerate() {
            *v = ((i * 13) as f64 * 0.17).cos();
        }
        let a = weighted_l2_norm(&f, &reweighted).unwrap();
        let b = weighted_l2_norm(&f, &mu).unwrap();
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    #[test]
    fn contraction_profile_scaling_laws() {
        let mdp = garnet(8);
        let t = Temperature::new(0.1).unwrap();
        let qs = solve_soft_q_star(&mdp, t, 1e-10, 200_000).unwrap().q_star;
        let pi = softmax_policy(&qs, t);
        let mu = stationary_distribution(&mdp, &pi, 1e-12, 2_000_000).unwrap();
        let prof = contraction_profile(&mdp, t, &mu, &pi, 0.0).unwrap();

        // rho(0) = gamma.
        assert!((prof.rho(0.0) - 0.99).abs() <= 1e-15);

        // Doubling tau with the same (mu, pi) halves beta_loc and doubles r0.
        let prof2 =
            contraction_profile(&mdp, Temperature::new(0.2).unwrap(), &mu, &pi, 0.0).unwrap();
        assert!((prof2.beta_loc - prof.beta_loc / 2.0).abs() <= prof.beta_loc * 1e-12);
        assert!((prof2.r0 - 2.0 * prof.r0).abs() <= prof.r0 * 1e-12);

        // Brute-force formula re-evaluation.
        let pi_min = pi.probs().iter().copied().fold(f64::INFINITY, f64::min);
        let c_inf = 1.0 / mu.min_weight().sqrt();
        let beta = 0.99 / (2.0 * 0.1) * c_inf * (4.0 / pi_min).sqrt();
        let r0 = (1.0 - 0.99) / beta;
        assert!((prof.beta_loc - beta).abs() <= beta * 1e-14);
        assert!((prof.r0 - r0).abs() <= r0 * 1e-14);
    }

    #[test]
    fn gap_profile_formula() {
        let mdp = garnet(8);
        let t = Temperature::new(0.01).unwrap();
        let prof = ContractionProfile {
            gamma: mdp.discount(),
            tau: t.get(),
            n_actions: 4,
            alpha: 1.0,
            pi_min: 0.2,
            c_inf: 5.0,
            beta_loc: 1.0,
            r0: 0.01,
            eps_f: 0.0,
        };
        let gap = gap_enhanced_profile(&prof, 0.2, 2.0, 0.5).unwrap();
        let expect_beta = 0.99 / 0.01 * 5.0 * (4.0f64 / 0.2).sqrt() * 2.0 * (-10.0f64).exp();
        assert!((gap.beta_loc - expect_beta).abs() <= expect_beta * 1e-12);
        let geometric = (1.0 - 0.99) / expect_beta;
        assert!((gap.r0 - 0.5f64.min(geometric)).abs() <= 1e-15);

        // tau -> 0 with fixed gap: beta -> 0, radius -> r_gap.
        let cold = ContractionProfile { tau: 1e-4, ..prof.clone() };
        let gap_cold = gap_enhanced_profile(&cold, 0.2, 2.0, 0.5).unwrap();
        assert!(gap_cold.beta_loc < 1e-300);
        assert_eq!(gap_cold.r0, 0.5);

        assert!(matches!(
            gap_enhanced_profile(&prof, 0.0, 2.0, 0.5),
            Err(Error::NoActionGap(_))
        ));
    }
}
