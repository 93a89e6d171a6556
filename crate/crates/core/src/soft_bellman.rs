//! Softmax policies, the soft Bellman optimality operator, exact soft value
//! iteration, and the operator's first and second directional derivatives.
//!
//! The operator acting on an action-value table `Q` is
//!
//! ```text
//! (T Q)(s,a) = r0(s,a) + gamma * sum_{s'} P(s'|s,a) * tau * log sum_{a'} exp(Q(s',a')/tau)
//! ```
//!
//! with every log-sum-exp evaluated through the max-shift so the whole
//! module stays finite for temperatures down to 1e-9.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, TabularPolicy};

/// Dense action-value table `Q[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QTable {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::dim("q table", n_states * n_actions, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("q table contains non-finite entries".into()));
        }
        Ok(QTable {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_states, self.n_actions)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    #[inline]
    pub fn at(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Sup-norm distance to another table of the same shape.
    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Entrywise `self + c * other`.
    pub fn axpy(&self, c: f64, other: &QTable) -> QTable {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + c * b)
            .collect();
        QTable {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values,
        }
    }
}

/// Softmax temperature, strictly positive. The hardmax limit is always
/// represented by a small positive temperature, never by zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "temperature must be a positive finite real, got {tau}"
            )));
        }
        Ok(Temperature(tau))
    }

    #[inline]
    pub fn get(&self) -> f64 {
        self.0
    }
}

/// Outcome of exact soft value iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoftSolveReport {
    pub q_star: QTable,
    pub iterations: usize,
    /// `||T Q - Q||_inf` at the returned table.
    pub final_residual: f64,
}

fn check_shape(mdp: &TabularMdp, q: &QTable, context: &'static str) -> Result<()> {
    if q.n_states() != mdp.n_states() || q.n_actions() != mdp.n_actions() {
        return Err(Error::dim(
            context,
            format!("{}x{}", mdp.n_states(), mdp.n_actions()),
            format!("{}x{}", q.n_states(), q.n_actions()),
        ));
    }
    Ok(())
}

/// Max-shifted `tau * log sum_a exp(v_a / tau)`.
pub fn logsumexp_backup(values: &[f64], tau: Temperature) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t = tau.get();
    let sum: f64 = values.iter().map(|&v| ((v - m) / t).exp()).sum();
    m + t * sum.ln()
}

/// Softmax policy `pi_Q(a|s) = exp(Q(s,a)/tau) / sum_b exp(Q(s,b)/tau)`,
/// computed with the max-shift per state row.
pub fn softmax_policy(q: &QTable, tau: Temperature) -> TabularPolicy {
    let (n, m) = q.shape();
    let t = tau.get();
    let mut probs = vec![0.0; n * m];
    for s in 0..n {
        let row = q.row(s);
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let out = &mut probs[s * m..(s + 1) * m];
        let mut sum = 0.0;
        for (o, &v) in out.iter_mut().zip(row) {
            let e = ((v - mx) / t).exp();
            *o = e;
            sum += e;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }
    TabularPolicy::from_probs_unchecked(n, m, probs)
}

/// One application of the soft Bellman optimality operator.
pub fn soft_bellman_apply(mdp: &TabularMdp, q: &QTable, tau: Temperature) -> Result<QTable> {
    check_shape(mdp, q, "soft_bellman_apply")?;
    let n = mdp.n_states();
    let m = mdp.n_actions();
    // Soft state values v(s') shared across all (s, a) backups.
    let v: Vec<f64> = (0..n).map(|s| logsumexp_backup(q.row(s), tau)).collect();
    let mut out = QTable::zeros(n, m);
    for s in 0..n {
        for a in 0..m {
            let row = mdp.transition_row(s, a);
            let mut acc = 0.0;
            for (s2, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    acc += p * v[s2];
                }
            }
            out.set(s, a, mdp.reward_at(s, a) + mdp.discount() * acc);
        }
    }
    Ok(out)
}

/// The evaluation transition operator `(P^eval_pi f)(s,a) =
/// E_{s' ~ P(.|s,a), a' ~ pi(.|s')}[f(s',a')]`, without reward or discount.
pub fn soft_eval_apply(mdp: &TabularMdp, policy: &TabularPolicy, f: &QTable) -> Result<QTable> {
    check_shape(mdp, f, "soft_eval_apply")?;
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(Error::dim(
            "soft_eval_apply policy",
            format!("{}x{}", mdp.n_states(), mdp.n_actions()),
            format!("{}x{}", policy.n_states(), policy.n_actions()),
        ));
    }
    let n = mdp.n_states();
    let m = mdp.n_actions();
    // g(s') = E_{a' ~ pi(.|s')} f(s',a')
    let g: Vec<f64> = (0..n)
        .map(|s| {
            policy
                .row(s)
                .iter()
                .zip(f.row(s))
                .map(|(&p, &v)| p * v)
                .sum()
        })
        .collect();
    let mut out = QTable::zeros(n, m);
    for s in 0..n {
        for a in 0..m {
            let row = mdp.transition_row(s, a);
            let mut acc = 0.0;
            for (s2, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    acc += p * g[s2];
                }
            }
            out.set(s, a, acc);
        }
    }
    Ok(out)
}

/// Discounted expected entropy bonus
/// `(s,a) -> gamma * sum_{s'} P(s'|s,a) * tau * H(pi_Q(.|s'))`.
///
/// Together with [`soft_eval_apply`] this reconstructs the evaluation
/// operator `T^eval_Q f = r0 + entropy_bonus + gamma * P^eval_{pi_Q} f`,
/// and `T^eval_Q(Q) = T(Q)` holds identically.
pub fn entropy_bonus(mdp: &TabularMdp, q: &QTable, tau: Temperature) -> Result<QTable> {
    check_shape(mdp, q, "entropy_bonus")?;
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let pi = softmax_policy(q, tau);
    let h: Vec<f64> = (0..n)
        .map(|s| {
            pi.row(s)
                .iter()
                .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
                .sum()
        })
        .collect();
    let t = tau.get();
    let mut out = QTable::zeros(n, m);
    for s in 0..n {
        for a in 0..m {
            let row = mdp.transition_row(s, a);
            let mut acc = 0.0;
            for (s2, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    acc += p * h[s2];
                }
            }
            out.set(s, a, mdp.discount() * t * acc);
        }
    }
    Ok(out)
}

/// Full evaluation operator `T^eval_{Q_pi}(f)` for the softmax policy of
/// `q_policy`: soft reward plus discounted policy evaluation of `f`.
pub fn soft_eval_bellman_apply(
    mdp: &TabularMdp,
    q_policy: &QTable,
    tau: Temperature,
    f: &QTable,
) -> Result<QTable> {
    let pi = softmax_policy(q_policy, tau);
    let pf = soft_eval_apply(mdp, &pi, f)?;
    let bonus = entropy_bonus(mdp, q_policy, tau)?;
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let mut out = QTable::zeros(n, m);
    for s in 0..n {
        for a in 0..m {
            out.set(
                s,
                a,
                mdp.reward_at(s, a) + bonus.at(s, a) + mdp.discount() * pf.at(s, a),
            );
        }
    }
    Ok(out)
}

/// Second-order remainder `T(q) - T^eval_{q_anchor}(q)` of the soft
/// Bellman operator around an anchor table, evaluated through the
/// per-state Bregman form of the log-sum-exp:
///
/// ```text
/// d(s') = lse(q(s',.)) - lse(anchor(s',.)) - sum_a pi_anchor(a|s') (q - anchor)(s',a)
/// out(s,a) = gamma * sum_{s'} P(s'|s,a) d(s')
/// ```
///
/// Algebraically identical to subtracting the two operator applications
/// (the reward and entropy terms cancel exactly), but free of the large-
/// value cancellation that swamps the naive subtraction when the remainder
/// is tiny: the `lse` difference is taken through `expm1`/`ln_1p` on the
/// row differences.
pub fn soft_remainder_table(
    mdp: &TabularMdp,
    q: &QTable,
    q_anchor: &QTable,
    tau: Temperature,
) -> Result<QTable> {
    check_shape(mdp, q, "soft_remainder_table")?;
    check_shape(mdp, q_anchor, "soft_remainder_table anchor")?;
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let t = tau.get();
    let mut d = vec![0.0; n];
    for s in 0..n {
        let row = q.row(s);
        let anchor = q_anchor.row(s);
        let mx = anchor.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s_anchor = 0.0; // sum exp((anchor - mx)/tau)
        let mut s_delta = 0.0; // sum exp((anchor - mx)/tau) * expm1(diff/tau)
        let mut linear = 0.0; // unnormalized sum exp(..) * diff
        for (&qa, &aa) in row.iter().zip(anchor) {
            let e = ((aa - mx) / t).exp();
            let diff = qa - aa;
            s_anchor += e;
            s_delta += e * (diff / t).exp_m1();
            linear += e * diff;
        }
        d[s] = t * (s_delta / s_anchor).ln_1p() - linear / s_anchor;
    }
    let mut out = QTable::zeros(n, m);
    for s in 0..n {
        for a in 0..m {
            let row = mdp.transition_row(s, a);
            let mut acc = 0.0;
            for (s2, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    acc += p * d[s2];
                }
            }
            out.set(s, a, mdp.discount() * acc);
        }
    }
    Ok(out)
}

/// Exact soft value iteration from `Q = 0`.
///
/// Stops once the sup-norm step `||T Q - Q||_inf` drops below
/// `tol * (1 - gamma) / gamma`, which by the contraction bound guarantees
/// `||Q - Q*||_inf <= tol` for the returned table.
pub fn solve_soft_q_star(
    mdp: &TabularMdp,
    tau: Temperature,
    tol: f64,
    max_iter: usize,
) -> Result<SoftSolveReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidSpec(format!("tol must be positive, got {tol}")));
    }
    let gamma = mdp.discount();
    let threshold = if gamma > 0.0 {
        tol * (1.0 - gamma) / gamma
    } else {
        f64::INFINITY
    };
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    let mut last_step = f64::INFINITY;
    for it in 0..max_iter {
        let next = soft_bellman_apply(mdp, &q, tau)?;
        last_step = next.sup_distance(&q);
        q = next;
        if last_step <= threshold {
            let final_residual = soft_bellman_apply(mdp, &q, tau)?.sup_distance(&q);
            return Ok(SoftSolveReport {
                q_star: q,
                iterations: it + 1,
                final_residual,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: last_step,
    })
}

/// First directional derivative `DT(Q)[h] = gamma * P^eval_{pi_Q} h`.
pub fn dt_apply(mdp: &TabularMdp, q: &QTable, tau: Temperature, h: &QTable) -> Result<QTable> {
    check_shape(mdp, q, "dt_apply")?;
    check_shape(mdp, h, "dt_apply direction")?;
    let pi = softmax_policy(q, tau);
    let pf = soft_eval_apply(mdp, &pi, h)?;
    let mut out = pf;
    for v in out.values_mut() {
        *v *= mdp.discount();
    }
    Ok(out)
}

/// Second directional derivative
/// `D2T(Q)[h1,h2](s,a) = gamma * sum_{s'} P(s'|s,a) * Cov_{pi_Q(.|s')}(h1(s',.), h2(s',.)) / tau`.
pub fn d2t_apply(
    mdp: &TabularMdp,
    q: &QTable,
    tau: Temperature,
    h1: &QTable,
    h2: &QTable,
) -> Result<QTable> {
    check_shape(mdp, q, "d2t_apply")?;
    check_shape(mdp, h1, "d2t_apply direction 1")?;
    check_shape(mdp, h2, "d2t_apply direction 2")?;
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let pi = softmax_policy(q, tau);
    // Per-successor covariance of the two directions under the softmax row.
    let cov: Vec<f64> = (0..n)
        .map(|s| {
            let p = pi.row(s);
            let r1 = h1.row(s);
            let r2 = h2.row(s);
            let m1: f64 = p.iter().zip(r1).map(|(&w, &v)| w * v).sum();
            let m2: f64 = p.iter().zip(r2).map(|(&w, &v)| w * v).sum();
            p.iter()
                .zip(r1.iter().zip(r2))
                .map(|(&w, (&a, &b))| w * (a - m1) * (b - m2))
                .sum()
        })
        .collect();
    let scale = mdp.discount() / tau.get();
    let mut out = QTable::zeros(n, m);
    for s in 0..n {
        for a in 0..m {
            let row = mdp.transition_row(s, a);
            let mut acc = 0.0;
            for (s2, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    acc += p * cov[s2];
                }
            }
            out.set(s, a, scale * acc);
        }
    }
    Ok(out)
}
