//! Linear feature maps over state-action pairs: the realizable-but-not-
//! Bellman-complete construction (soft optimum plus random directions,
//! orthonormalized in the stationary geometry) and the one-hot complete
//! basis used as a control arm.

use rand::distributions::Distribution;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::rng::{stream_rng, Stream};
use crate::soft_bellman::QTable;
use crate::stationary::StateActionMeasure;

/// Stable fingerprint tying coefficient vectors to the feature map they
/// were fit against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureMapId(pub u64);

/// Dense feature tensor `phi[s][a][j]`, `j = 0..p`, stored row-major with
/// stride `p` per state-action pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    n_states: usize,
    n_actions: usize,
    p: usize,
    features: Vec<f64>,
    rank: usize,
    id: FeatureMapId,
}

impl FeatureMap {
    /// Wraps a raw tensor, computing the numerical column rank.
    pub fn from_tensor(
        n_states: usize,
        n_actions: usize,
        p: usize,
        features: Vec<f64>,
    ) -> Result<Self> {
        if features.len() != n_states * n_actions * p {
            return Err(Error::dim(
                "feature tensor",
                n_states * n_actions * p,
                features.len(),
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec(
                "feature tensor contains non-finite entries".into(),
            ));
        }
        let rank = numerical_rank(n_states * n_actions, p, &features);
        let id = fingerprint(n_states, n_actions, p, &features);
        Ok(FeatureMap {
            n_states,
            n_actions,
            p,
            features,
            rank,
            id,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_states, self.n_actions)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn id(&self) -> FeatureMapId {
        self.id
    }

    /// Feature row for flattened pair index `i = s * n_actions + a`.
    #[inline]
    pub fn row_flat(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        self.row_flat(s * self.n_actions + a)
    }

    pub fn tensor(&self) -> &[f64] {
        &self.features
    }

    /// Column `j` as a table over state-action pairs.
    pub fn column(&self, j: usize) -> QTable {
        let sa = self.n_states * self.n_actions;
        let mut values = vec![0.0; sa];
        for i in 0..sa {
            values[i] = self.features[i * self.p + j];
        }
        QTable::from_values(self.n_states, self.n_actions, values).expect("finite by construction")
    }

    /// Gram matrix of the columns in `L2(measure)`.
    pub fn gram(&self, measure: &StateActionMeasure) -> nalgebra::DMatrix<f64> {
        let sa = self.n_states * self.n_actions;
        let mut g = nalgebra::DMatrix::<f64>::zeros(self.p, self.p);
        for i in 0..sa {
            let w = measure.weights()[i];
            if w == 0.0 {
                continue;
            }
            let phi = self.row_flat(i);
            for j in 0..self.p {
                for l in j..self.p {
                    g[(j, l)] += w * phi[j] * phi[l];
                }
            }
        }
        for j in 0..self.p {
            for l in 0..j {
                g[(j, l)] = g[(l, j)];
            }
        }
        g
    }
}

fn fingerprint(n_states: usize, n_actions: usize, p: usize, data: &[f64]) -> FeatureMapId {
    // FNV-1a over the dims and raw bit patterns; stable across runs.
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(n_states as u64);
    eat(n_actions as u64);
    eat(p as u64);
    for v in data {
        eat(v.to_bits());
    }
    FeatureMapId(h)
}

fn numerical_rank(rows: usize, p: usize, data: &[f64]) -> usize {
    let mat = nalgebra::DMatrix::from_row_slice(rows, p, data);
    mat.rank(1e-10 * (rows.max(p) as f64))
}

/// Linear action-value function: coefficients over a named feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearQ {
    theta: Vec<f64>,
    feature_ref: FeatureMapId,
}

impl LinearQ {
    pub fn new(theta: Vec<f64>, feature_ref: FeatureMapId) -> Self {
        LinearQ { theta, feature_ref }
    }

    pub fn zeros(features: &FeatureMap) -> Self {
        LinearQ {
            theta: vec![0.0; features.p()],
            feature_ref: features.id(),
        }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn feature_ref(&self) -> FeatureMapId {
        self.feature_ref
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }
}

/// Evaluates `Q[s][a] = sum_j phi[s][a][j] theta[j]` as a dense table.
pub fn evaluate_linear(q: &LinearQ, features: &FeatureMap) -> Result<QTable> {
    if q.feature_ref() != features.id() {
        return Err(Error::FeatureMapMismatch);
    }
    if q.theta().len() != features.p() {
        return Err(Error::dim("linear q coefficients", features.p(), q.theta().len()));
    }
    let (n, m) = features.shape();
    let mut values = vec![0.0; n * m];
    for (i, v) in values.iter_mut().enumerate() {
        let phi = features.row_flat(i);
        *v = phi.iter().zip(q.theta()).map(|(&f, &t)| f * t).sum();
    }
    QTable::from_values(n, m, values)
}

fn inner(measure: &StateActionMeasure, a: &[f64], b: &[f64]) -> f64 {
    measure
        .weights()
        .iter()
        .zip(a.iter().zip(b))
        .map(|(&w, (&x, &y))| w * x * y)
        .sum()
}

/// Realizable feature class: column 1 is the soft optimum itself, columns
/// 2..p are i.i.d. standard Gaussian tables, all orthonormalized in
/// `L2(mu_star)` by modified Gram-Schmidt with reorthogonalization. The
/// span contains `q_star` by construction; Bellman completeness fails
/// generically. Redraws the random columns up to 10 times on rank
/// deficiency.
pub fn build_realizable_features(
    q_star: &QTable,
    p: usize,
    seed: u64,
    mu_star: &StateActionMeasure,
) -> Result<FeatureMap> {
    if p < 2 {
        return Err(Error::InvalidSpec(format!(
            "realizable feature class needs p >= 2, got {p}"
        )));
    }
    let (n, m) = q_star.shape();
    if mu_star.shape() != (n, m) {
        return Err(Error::dim(
            "build_realizable_features measure",
            format!("{:?}", q_star.shape()),
            format!("{:?}", mu_star.shape()),
        ));
    }
    let sa = n * m;
    let mut rng = stream_rng(seed, Stream::Features);
    'attempt: for _ in 0..10 {
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(p);
        cols.push(q_star.values().to_vec());
        for _ in 1..p {
            cols.push((0..sa).map(|_| StandardNormal.sample(&mut rng)).collect());
        }
        // Modified Gram-Schmidt, two orthogonalization passes per column.
        let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(p);
        for col in cols {
            let mut v = col;
            for _ in 0..2 {
                for e in &ortho {
                    let c = inner(mu_star, &v, e);
                    for (vi, ei) in v.iter_mut().zip(e) {
                        *vi -= c * ei;
                    }
                }
            }
            let norm = inner(mu_star, &v, &v).sqrt();
            if !(norm > 1e-10) {
                continue 'attempt;
            }
            for vi in &mut v {
                *vi /= norm;
            }
            ortho.push(v);
        }
        let mut tensor = vec![0.0; sa * p];
        for (j, col) in ortho.iter().enumerate() {
            for i in 0..sa {
                tensor[i * p + j] = col[i];
            }
        }
        return FeatureMap::from_tensor(n, m, p, tensor);
    }
    Err(Error::DegenerateSupport(
        "rank-deficient realizable feature draw after 10 attempts".into(),
    ))
}

/// Complete one-hot basis: `p = |S| * |A|` indicator features. Projection
/// under any full-support measure is exact, so fitted iteration with these
/// features reduces to exact soft value iteration.
pub fn one_hot_features(mdp: &TabularMdp) -> FeatureMap {
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let sa = n * m;
    let mut tensor = vec![0.0; sa * sa];
    for i in 0..sa {
        tensor[i * sa + i] = 1.0;
    }
    FeatureMap {
        n_states: n,
        n_actions: m,
        p: sa,
        rank: sa,
        id: fingerprint(n, m, sa, &tensor),
        features: tensor,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{dirichlet_behavior_policy, generate_garnet, GarnetSpec};
    use crate::soft_bellman::{softmax_policy, solve_soft_q_star, Temperature};
    use crate::stationary::{
        misspecification_gap, projection_weighted_ls, stationary_distribution, weighted_l2_norm,
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

    fn solved(seed: u64, tau: f64) -> (TabularMdp, QTable, StateActionMeasure) {
        let mdp = garnet(seed);
        let t = Temperature::new(tau).unwrap();
        let qs = solve_soft_q_star(&mdp, t, 1e-11, 500_000).unwrap().q_star;
        let pi = softmax_policy(&qs, t);
        let mu = stationary_distribution(&mdp, &pi, 1e-13, 5_000_000).unwrap();
        (mdp, qs, mu)
    }

    #[test]
    fn realizable_contains_q_star_and_is_orthonormal() {
        for seed in [1u64, 2, 3] {
            let (_, qs, mu) = solved(seed, 0.5);
            let f = build_realizable_features(&qs, 5, seed, &mu).unwrap();
            assert_eq!(f.rank(), 5);
            let gap = misspecification_gap(&qs, &f, &mu).unwrap();
            assert!(gap <= 1e-9, "seed {seed} gap {gap}");
            let g = f.gram(&mu);
            for j in 0..5 {
                for l in 0..5 {
                    let expect = if j == l { 1.0 } else { 0.0 };
                    assert!((g[(j, l)] - expect).abs() <= 1e-10, "gram[{j}][{l}] = {}", g[(j, l)]);
                }
            }
        }
    }

    #[test]
    fn evaluate_linear_cases() {
        let (_, qs, mu) = solved(4, 0.5);
        let f = build_realizable_features(&qs, 5, 4, &mu).unwrap();

        // theta = 0 gives the zero table.
        let zero = evaluate_linear(&LinearQ::zeros(&f), &f).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));

        // Naive triple-loop oracle.
        let theta: Vec<f64> = (0..5).map(|j| (j as f64 + 1.0) * 0.3).collect();
        let q = LinearQ::new(theta.clone(), f.id());
        let fast = evaluate_linear(&q, &f).unwrap();
        for s in 0..50 {
            for a in 0..4 {
                let mut acc = 0.0;
                for j in 0..5 {
                    acc += f.row(s, a)[j] * theta[j];
                }
                assert!((fast.at(s, a) - acc).abs() <= 1e-14);
            }
        }

        // Recovering q_star: project q_star onto the class and evaluate.
        let proj = projection_weighted_ls(&qs, &f, &mu, 0.0).unwrap();
        let table = evaluate_linear(&proj, &f).unwrap();
        let diff = crate::stationary::weighted_l2_distance(&table, &qs, &mu).unwrap();
        assert!(diff <= 1e-9);
    }

    #[test]
    fn evaluate_linear_is_linear_in_theta() {
        let (_, qs, mu) = solved(5, 0.5);
        let f = build_realizable_features(&qs, 4, 5, &mu).unwrap();
        let t1: Vec<f64> = (0..4).map(|j| (j as f64).sin()).collect();
        let t2: Vec<f64> = (0..4).map(|j| (j as f64).cos()).collect();
        let (a, b) = (0.7, -1.3);
        let combo: Vec<f64> = t1.iter().zip(&t2).map(|(x, y)| a * x + b * y).collect();
        let lhs = evaluate_linear(&LinearQ::new(combo, f.id()), &f).unwrap();
        let q1 = evaluate_linear(&LinearQ::new(t1, f.id()), &f).unwrap();
        let q2 = evaluate_linear(&LinearQ::new(t2, f.id()), &f).unwrap();
        let rhs = {
            let mut out = q1.clone();
            for (i, v) in out.values_mut().iter_mut().enumerate() {
                *v = a * q1.values()[i] + b * q2.values()[i];
            }
            out
        };
        assert!(lhs.sup_distance(&rhs) <= 1e-12);
    }

    #[test]
    fn evaluate_linear_rejects_foreign_coefficients() {
        let (_, qs, mu) = solved(6, 0.5);
        let f1 = build_realizable_features(&qs, 3, 6, &mu).unwrap();
        let f2 = build_realizable_features(&qs, 3, 7, &mu).unwrap();
        let q = LinearQ::zeros(&f1);
        assert!(matches!(
            evaluate_linear(&q, &f2),
            Err(Error::FeatureMapMismatch)
        ));
    }

    #[test]
    fn one_hot_is_complete() {
        let mdp = garnet(7);
        let f = one_hot_features(&mdp);
        assert_eq!(f.p(), 200);
        assert_eq!(f.rank(), 200);
        let pi = dirichlet_behavior_policy(&mdp, 7);
        let nu = crate::mdp::behavior_measure(&mdp, &pi);
        let mut target = QTable::zeros(50, 4);
        for (i, v) in target.values_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.73).sin();
        }
        let proj = projection_weighted_ls(&target, &f, &nu, 0.0).unwrap();
        let table = evaluate_linear(&proj, &f).unwrap();
        assert!(table.sup_distance(&target) <= 1e-10);
    }

    #[test]
    fn bellman_completeness_violation_witness() {
        // ||(I - Pi_F) T(phi_2)||_{2,mu*} is strictly positive for generic
        // Garnet draws: the class is realizable but not Bellman complete.
        for seed in [1u64, 2, 3, 4, 5] {
            let (mdp, qs, mu) = solved(seed, 0.5);
            let f = build_realizable_features(&qs, 5, seed, &mu).unwrap();
            let phi2 = f.column(1);
            let t = Temperature::new(0.5).unwrap();
            let target = crate::soft_bellman::soft_bellman_apply(&mdp, &phi2, t).unwrap();
            let proj = projection_weighted_ls(&target, &f, &mu, 0.0).unwrap();
            let table = evaluate_linear(&proj, &f).unwrap();
            let residual =
                crate::stationary::weighted_l2_distance(&table, &target, &mu).unwrap();
            assert!(residual > 1e-6, "seed {seed} residual {residual}");
        }
    }

    #[test]
    fn realizable_gap_zero_across_seed_sweep() {
        let (_, qs, mu) = solved(8, 0.5);
        for seed in 0..20 {
            let f = build_realizable_features(&qs, 5, seed, &mu).unwrap();
            let gap = misspecification_gap(&qs, &f, &mu).unwrap();
            assert!(gap <= 1e-9, "seed {seed} gap {gap}");
            let norm_q = weighted_l2_norm(&qs, &mu).unwrap();
            assert!(norm_q > 0.0);
        }
    }
}
