//! Finite tabular MDPs, Garnet random instances, behavior policies, and
//! offline one-step transition datasets.
//!
//! All values are immutable after construction and all generators are pure
//! functions of `(spec, seed)`, so instances can be shared across threads
//! and regenerated bit-exactly.

use rand::distributions::Distribution;
use rand::Rng;
use rand_distr::{Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::stationary::StateActionMeasure;

/// Tolerance used when validating probability rows.
pub const PROB_ROW_TOL: f64 = 1e-12;

/// A finite discounted MDP with dense transition tensor `P[s][a][s']`,
/// reward table `r0[s][a]`, and discount `gamma` in `[0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Row-major `[s][a][s']`.
    transition: Vec<f64>,
    /// Row-major `[s][a]`.
    reward: Vec<f64>,
    discount: f64,
}

impl TabularMdp {
    /// Builds an MDP after checking stochasticity of every transition row,
    /// finiteness of rewards, and `0 <= gamma < 1`.
    pub fn from_parts(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        let mdp = Self::from_parts_unchecked(n_states, n_actions, transition, reward, discount);
        mdp.validate()?;
        Ok(mdp)
    }

    /// Skips validation. Intended for deserialization internals and for
    /// negative-control tests that need a deliberately broken instance.
    #[doc(hidden)]
    pub fn from_parts_unchecked(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
    ) -> Self {
        TabularMdp {
            n_states,
            n_actions,
            transition,
            reward,
            discount,
        }
    }

    /// Re-checks every structural invariant, naming the first violation.
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::InvalidSpec(
                "n_states and n_actions must be positive".into(),
            ));
        }
        if self.transition.len() != self.n_states * self.n_actions * self.n_states {
            return Err(Error::dim(
                "transition tensor",
                self.n_states * self.n_actions * self.n_states,
                self.transition.len(),
            ));
        }
        if self.reward.len() != self.n_states * self.n_actions {
            return Err(Error::dim(
                "reward table",
                self.n_states * self.n_actions,
                self.reward.len(),
            ));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::InvalidSpec(format!(
                "discount must lie in [0, 1), got {}",
                self.discount
            )));
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.transition_row(s, a);
                let mut sum = 0.0;
                for &p in row {
                    if !(p >= 0.0) {
                        return Err(Error::InvalidSpec(format!(
                            "transition probability P[{s}][{a}] contains a negative entry"
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > PROB_ROW_TOL {
                    return Err(Error::InvalidSpec(format!(
                        "transition row P[{s}][{a}] sums to {sum}, expected 1 within {PROB_ROW_TOL:e}"
                    )));
                }
            }
        }
        if self.reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidSpec("reward table contains non-finite entries".into()));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// `P[s][a][.]` as a slice of length `n_states`.
    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    #[inline]
    pub fn reward_at(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn reward_table(&self) -> &[f64] {
        &self.reward
    }

    pub fn transition_tensor(&self) -> &[f64] {
        &self.transition
    }
}

/// A stationary Markov policy as a dense `pi[s][a]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn from_probs(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::dim("policy table", n_states * n_actions, probs.len()));
        }
        for s in 0..n_states {
            let row = &probs[s * n_actions..(s + 1) * n_actions];
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > PROB_ROW_TOL {
                return Err(Error::InvalidSpec(format!(
                    "policy row {s} is not a probability distribution (sum {sum})"
                )));
            }
        }
        Ok(TabularPolicy {
            n_states,
            n_actions,
            probs,
        })
    }

    pub(crate) fn from_probs_unchecked(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Self {
        TabularPolicy {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Parameters of the Garnet random-MDP family: each `(s, a)` pair gets
/// exactly `branching` successor states, successor probabilities come from
/// sorted uniform spacings, and rewards are i.i.d. `N(0, reward_std^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarnetSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub branching: usize,
    pub reward_std: f64,
    pub discount: f64,
    pub seed: u64,
}

impl GarnetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 || self.branching == 0 {
            return Err(Error::InvalidSpec(
                "n_states, n_actions, branching must be positive".into(),
            ));
        }
        if self.branching > self.n_states {
            return Err(Error::InvalidSpec(format!(
                "branching {} exceeds n_states {}",
                self.branching, self.n_states
            )));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::InvalidSpec(format!(
                "discount must lie in [0, 1), got {}",
                self.discount
            )));
        }
        if !(self.reward_std >= 0.0) {
            return Err(Error::InvalidSpec("reward_std must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One offline transition `(s, a, r, s')`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// A batch of one-step transitions collected under a behavior policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionDataset {
    pub records: Vec<Transition>,
}

impl TransitionDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Generates a Garnet MDP. Successor sets are drawn without replacement,
/// successor probabilities by sorted uniform spacings, rewards i.i.d.
/// Gaussian. Deterministic in `spec.seed`.
pub fn generate_garnet(spec: &GarnetSpec) -> Result<TabularMdp> {
    spec.validate()?;
    let n = spec.n_states;
    let m = spec.n_actions;
    let b = spec.branching;

    let mut trans_rng = stream_rng(spec.seed, Stream::GarnetTransitions);
    let mut transition = vec![0.0; n * m * n];
    for s in 0..n {
        for a in 0..m {
            let mut successors = rand::seq::index::sample(&mut trans_rng, n, b).into_vec();
            successors.sort_unstable();
            let probs = uniform_spacings(&mut trans_rng, b);
            let base = (s * m + a) * n;
            for (i, &s2) in successors.iter().enumerate() {
                transition[base + s2] = probs[i];
            }
        }
    }

    let mut reward_rng = stream_rng(spec.seed, Stream::GarnetRewards);
    let normal = Normal::new(0.0, spec.reward_std)
        .map_err(|e| Error::InvalidSpec(format!("reward distribution: {e}")))?;
    let reward: Vec<f64> = (0..n * m).map(|_| normal.sample(&mut reward_rng)).collect();

    TabularMdp::from_parts(n, m, transition, reward, spec.discount)
}

/// `k` probabilities from the spacings of `k - 1` sorted Uniform(0,1) points.
fn uniform_spacings<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    let mut cuts: Vec<f64> = (0..k - 1).map(|_| rng.gen::<f64>()).collect();
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut probs = Vec::with_capacity(k);
    let mut prev = 0.0;
    for &c in &cuts {
        probs.push(c - prev);
        prev = c;
    }
    probs.push(1.0 - prev);
    probs
}

/// Behavior policy with each state's action distribution drawn from a
/// uniform Dirichlet. Sampled as normalized i.i.d. Exp(1) variates, which
/// is exactly Dirichlet(1, ..., 1).
pub fn dirichlet_behavior_policy(mdp: &TabularMdp, seed: u64) -> TabularPolicy {
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let mut rng = stream_rng(seed, Stream::BehaviorPolicy);
    let mut probs = vec![0.0; n * m];
    for s in 0..n {
        if m == 1 {
            probs[s] = 1.0;
            continue;
        }
        let row = &mut probs[s * m..(s + 1) * m];
        let mut sum = 0.0;
        for p in row.iter_mut() {
            let e: f64 = Exp1.sample(&mut rng);
            *p = e;
            sum += e;
        }
        for p in row.iter_mut() {
            *p /= sum;
        }
    }
    TabularPolicy::from_probs_unchecked(n, m, probs)
}

/// Samples `n` reset-style transitions: states i.i.d. uniform over `S`,
/// actions from the behavior policy, rewards from the reward table (the
/// Garnet reward is deterministic given `(s, a)`), successors from `P`.
pub fn sample_reset_dataset(
    mdp: &TabularMdp,
    behavior: &TabularPolicy,
    n: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    if n == 0 {
        return Err(Error::InvalidSpec("dataset size must be >= 1".into()));
    }
    if behavior.n_states() != mdp.n_states() || behavior.n_actions() != mdp.n_actions() {
        return Err(Error::dim(
            "behavior policy shape",
            format!("{}x{}", mdp.n_states(), mdp.n_actions()),
            format!("{}x{}", behavior.n_states(), behavior.n_actions()),
        ));
    }
    let mut rng = stream_rng(seed, Stream::Dataset);
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let s = rng.gen_range(0..mdp.n_states());
        let a = sample_categorical(&mut rng, behavior.row(s));
        let r = mdp.reward_at(s, a);
        let s_next = sample_categorical(&mut rng, mdp.transition_row(s, a));
        records.push(Transition {
            state: s,
            action: a,
            reward: r,
            next_state: s_next,
        });
    }
    Ok(TransitionDataset { records })
}

/// Draws an index from a probability row by inverse CDF scan.
pub(crate) fn sample_categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left acc slightly below 1; the draw belongs to the last
    // nonzero cell.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Exact behavior state-action measure for reset sampling:
/// `nu_b[s][a] = pi_b(a|s) / n_states`.
pub fn behavior_measure(mdp: &TabularMdp, behavior: &TabularPolicy) -> StateActionMeasure {
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let mut weights = vec![0.0; n * m];
    for s in 0..n {
        for a in 0..m {
            weights[s * m + a] = behavior.prob(s, a) / n as f64;
        }
    }
    StateActionMeasure::new_normalized(n, m, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_spec(seed: u64) -> GarnetSpec {
        GarnetSpec {
            n_states: 50,
            n_actions: 4,
            branching: 5,
            reward_std: 0.1,
            discount: 0.99,
            seed,
        }
    }

    #[test]
    fn garnet_has_exact_branching() {
        let mdp = generate_garnet(&paper_spec(7)).unwrap();
        for s in 0..50 {
            for a in 0..4 {
                let nonzero = mdp.transition_row(s, a).iter().filter(|&&p| p > 0.0).count();
                assert_eq!(nonzero, 5, "row ({s},{a})");
            }
        }
    }

    #[test]
    fn garnet_full_branching_is_dense() {
        let spec = GarnetSpec {
            n_states: 3,
            n_actions: 2,
            branching: 3,
            reward_std: 0.5,
            discount: 0.9,
            seed: 11,
        };
        let mdp = generate_garnet(&spec).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                let row = mdp.transition_row(s, a);
                assert!(row.iter().all(|&p| p > 0.0));
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() <= PROB_ROW_TOL);
            }
        }
    }

    #[test]
    fn garnet_is_deterministic() {
        let a = generate_garnet(&paper_spec(42)).unwrap();
        let b = generate_garnet(&paper_spec(42)).unwrap();
        assert_eq!(a.transition_tensor(), b.transition_tensor());
        assert_eq!(a.reward_table(), b.reward_table());
    }

    #[test]
    fn garnet_rejects_oversized_branching() {
        let spec = GarnetSpec {
            n_states: 3,
            n_actions: 2,
            branching: 4,
            reward_std: 0.1,
            discount: 0.9,
            seed: 0,
        };
        assert!(matches!(generate_garnet(&spec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn garnet_invariants_hold_over_seed_sweep() {
        for seed in 0..100 {
            let mdp = generate_garnet(&paper_spec(seed)).unwrap();
            mdp.validate().unwrap();
        }
    }

    #[test]
    fn dirichlet_policy_single_action() {
        let spec = GarnetSpec {
            n_actions: 1,
            ..paper_spec(3)
        };
        let mdp = generate_garnet(&spec).unwrap();
        let pi = dirichlet_behavior_policy(&mdp, 9);
        assert!(pi.probs().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn dirichlet_policy_rows_are_simplex_and_deterministic() {
        let mdp = generate_garnet(&paper_spec(3)).unwrap();
        let pi = dirichlet_behavior_policy(&mdp, 5);
        let pi2 = dirichlet_behavior_policy(&mdp, 5);
        assert_eq!(pi.probs(), pi2.probs());
        for s in 0..50 {
            let row = pi.row(s);
            assert!(row.iter().all(|&p| p >= 0.0));
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "sum {sum}");
        }
    }

    #[test]
    fn dataset_has_requested_size() {
        let mdp = generate_garnet(&paper_spec(1)).unwrap();
        let pi = dirichlet_behavior_policy(&mdp, 1);
        let ds = sample_reset_dataset(&mdp, &pi, 100_000, 1).unwrap();
        assert_eq!(ds.len(), 100_000);
        assert!(ds
            .records
            .iter()
            .all(|t| t.state < 50 && t.action < 4 && t.next_state < 50));
    }

    #[test]
    fn dataset_single_state_forces_successor() {
        let mdp = TabularMdp::from_parts(1, 2, vec![1.0, 1.0], vec![0.3, -0.7], 0.9).unwrap();
        let pi = TabularPolicy::from_probs(1, 2, vec![0.5, 0.5]).unwrap();
        let ds = sample_reset_dataset(&mdp, &pi, 1, 4).unwrap();
        let t = ds.records[0];
        assert_eq!(t.state, 0);
        assert_eq!(t.next_state, 0);
        assert_eq!(t.reward, mdp.reward_at(0, t.action));
    }

    #[test]
    fn dataset_state_marginal_is_uniform() {
        // Binomial oracle: each state frequency of a 5-state uniform draw at
        // n = 1e6 lies within 3 sigma of 0.2, sigma = sqrt(0.2 * 0.8 / n).
        let spec = GarnetSpec {
            n_states: 5,
            n_actions: 2,
            branching: 2,
            reward_std: 0.1,
            discount: 0.9,
            seed: 13,
        };
        let mdp = generate_garnet(&spec).unwrap();
        let pi = dirichlet_behavior_policy(&mdp, 13);
        let n = 1_000_000;
        let ds = sample_reset_dataset(&mdp, &pi, n, 13).unwrap();
        let mut counts = [0usize; 5];
        for t in &ds.records {
            counts[t.state] += 1;
        }
        let sigma = (0.2 * 0.8 / n as f64).sqrt();
        for &c in &counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.2).abs() <= 3.0 * sigma, "freq {freq}");
        }
    }

    #[test]
    fn dataset_conditional_transitions_match_tensor() {
        // Monte-Carlo vs exact tensor: TV distance of empirical successor
        // frequencies for a fixed (s, a) at 1e6 conditional draws <= 0.01.
        let mdp = generate_garnet(&paper_spec(21)).unwrap();
        let (s, a) = (17, 2);
        let mut rng = stream_rng(21, Stream::Dataset);
        let n = 1_000_000usize;
        let mut counts = vec![0usize; mdp.n_states()];
        for _ in 0..n {
            counts[sample_categorical(&mut rng, mdp.transition_row(s, a))] += 1;
        }
        let tv: f64 = mdp
            .transition_row(s, a)
            .iter()
            .zip(&counts)
            .map(|(&p, &c)| (p - c as f64 / n as f64).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.01, "tv {tv}");
    }

    #[test]
    fn behavior_measure_uniform_case() {
        let mdp = TabularMdp::from_parts(
            2,
            2,
            vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5],
            vec![0.0; 4],
            0.9,
        )
        .unwrap();
        let pi = TabularPolicy::from_probs(2, 2, vec![0.5; 4]).unwrap();
        let nu = behavior_measure(&mdp, &pi);
        assert!(nu.weights().iter().all(|&w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn behavior_measure_sums_to_one_and_counts_support() {
        let mdp = generate_garnet(&paper_spec(2)).unwrap();
        let pi = dirichlet_behavior_policy(&mdp, 2);
        let nu = behavior_measure(&mdp, &pi);
        let sum: f64 = nu.weights().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);

        // Deterministic behavior on 3 states: exactly 3 entries of 1/3.
        let det = TabularPolicy::from_probs(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let mdp3 = TabularMdp::from_parts(
            3,
            2,
            vec![
                1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0,
                0.0, 1.0,
            ],
            vec![0.0; 6],
            0.5,
        )
        .unwrap();
        let nu3 = behavior_measure(&mdp3, &det);
        let nonzero: Vec<f64> = nu3.weights().iter().copied().filter(|&w| w > 0.0).collect();
        assert_eq!(nonzero.len(), 3);
        assert!(nonzero.iter().all(|&w| (w - 1.0 / 3.0).abs() <= 1e-15));
    }
}
