//! Exact dynamic-programming oracles for entropic-risk values.
//!
//! All recursions run in the exponential domain, where the backup is a plain
//! linear combination:
//!
//! ```text
//! E_h(s) = sum_a pi_h(a|s) e^{beta r_{h,m}(s,a)} sum_{s'} P_h(s'|s,a) E_{h+1}(s')
//! ```
//!
//! and the log-domain value is recovered once at the end as
//! `V = (1/beta) log E`. The `|beta| * H <= 30` validation guard keeps every
//! intermediate within double range, so no log-sum-exp machinery is needed.
//!
//! Three oracles are provided for an agent `m` against a joint policy:
//! plain evaluation, the best response (which optimizes the deviator's own
//! action against the per-state marginal of the others), and the best
//! strategy modification (which remaps agent m's recommended action and may
//! condition on it). Optima are `max` for `beta > 0` and `min` for
//! `beta < 0`; both maximize the log-domain value. Ties break to the lowest
//! action index.

use crate::game_model::{JointPolicy, MgSpec};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RiskDpError {
    #[error("exponential value {value} outside [{lo}, {hi}] at (h={h}, s={s})")]
    Domain {
        h: usize,
        s: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
}

/// Exponential-domain value table `E_h(s) = E[e^{beta_m sum_{i>=h} r_i} | s_h=s]`
/// for one agent; row `H` is the all-ones terminal row.
#[derive(Debug, Clone)]
pub struct ExpValueTable {
    pub agent: usize,
    pub beta: f64,
    pub horizon: usize,
    /// `values[h][s]` for `h` in `0..=H`.
    values: Vec<Vec<f64>>,
}

impl ExpValueTable {
    fn new(agent: usize, beta: f64, horizon: usize, num_states: usize) -> Self {
        Self {
            agent,
            beta,
            horizon,
            values: vec![vec![1.0; num_states]; horizon + 1],
        }
    }

    pub fn exp_value(&self, h: usize, s: usize) -> f64 {
        self.values[h][s]
    }

    /// Log-domain value `(1/beta) log E_h(s)`, with a sign-dependent range
    /// check: for the remaining horizon `u = H - h`, the exponential value
    /// must lie between `min(1, e^{beta u})` and `max(1, e^{beta u})` up to
    /// 1e-9 slack.
    pub fn to_value(&self, h: usize, s: usize) -> Result<f64, RiskDpError> {
        let u = (self.horizon - h) as f64;
        let bound = (self.beta * u).exp();
        let (lo, hi) = if bound < 1.0 { (bound, 1.0) } else { (1.0, bound) };
        let v = self.values[h][s];
        let slack = 1e-9 + 1e-12 * hi;
        if v < lo - slack || v > hi + slack {
            return Err(RiskDpError::Domain { h, s, value: v, lo, hi });
        }
        Ok(v.ln() / self.beta)
    }

    /// Log-domain value at the start of the episode.
    pub fn start_value(&self, initial_state: usize) -> Result<f64, RiskDpError> {
        self.to_value(0, initial_state)
    }
}

/// Best response: exponential table plus the maximizing deterministic Markov
/// policy of the deviating agent, `policy[h][s] -> a_m`.
#[derive(Debug, Clone)]
pub struct BestResponseResult {
    pub table: ExpValueTable,
    pub policy: Vec<Vec<usize>>,
}

/// Best strategy modification: exponential table plus the maximizing map
/// `modification[h][s][a_m] -> b`; identity on zero-marginal recommendations.
#[derive(Debug, Clone)]
pub struct BestModificationResult {
    pub table: ExpValueTable,
    pub modification: Vec<Vec<Vec<usize>>>,
}

/// For agent `m`'s joint action `a`, the one-step exponential backup
/// `e^{beta r_{h,m}(s,a)} * sum_{s'} P_h(s'|s,a) * next[s']`.
#[inline]
fn exp_backup(spec: &MgSpec, beta: f64, h: usize, m: usize, s: usize, a: usize, next: &[f64]) -> f64 {
    let mut future = 0.0;
    for (sp, &p) in spec.transitions[h][s][a].iter().enumerate() {
        if p > 0.0 {
            future += p * next[sp];
        }
    }
    (beta * spec.rewards[h][m][s][a]).exp() * future
}

/// Evaluates the entropic-risk exponential value of `policy` for agent `m`.
pub fn eval_policy(spec: &MgSpec, policy: &JointPolicy, m: usize) -> ExpValueTable {
    let beta = spec.betas[m];
    let mut table = ExpValueTable::new(m, beta, spec.horizon, spec.num_states);
    for h in (0..spec.horizon).rev() {
        let (head, tail) = table.values.split_at_mut(h + 1);
        let next = &tail[0];
        for s in 0..spec.num_states {
            let mut total = 0.0;
            for (a, &p) in policy.dist[h][s].iter().enumerate() {
                if p > 0.0 {
                    total += p * exp_backup(spec, beta, h, m, s, a, next);
                }
            }
            head[h][s] = total;
        }
    }
    table
}

/// Best response of agent `m` against the per-state marginal of the other
/// agents' play under `policy`.
pub fn best_response(spec: &MgSpec, policy: &JointPolicy, m: usize) -> BestResponseResult {
    let beta = spec.betas[m];
    let space = spec.joint_space();
    let own_actions = spec.action_sizes[m];
    let mut table = ExpValueTable::new(m, beta, spec.horizon, spec.num_states);
    let mut greedy = vec![vec![0usize; spec.num_states]; spec.horizon];
    for h in (0..spec.horizon).rev() {
        let (head, tail) = table.values.split_at_mut(h + 1);
        let next = &tail[0];
        for s in 0..spec.num_states {
            let marg = policy
                .marginal_of_others(h, s, m)
                .expect("indices in range for valid inputs");
            let mut best = f64::NAN;
            let mut best_action = 0usize;
            for b in 0..own_actions {
                let mut value = 0.0;
                for (others, &w) in marg.iter().enumerate() {
                    if w > 0.0 {
                        let a = space.compose(m, b, others);
                        value += w * exp_backup(spec, beta, h, m, s, a, next);
                    }
                }
                let better = if beta > 0.0 { value > best } else { value < best };
                if best.is_nan() || better {
                    best = value;
                    best_action = b;
                }
            }
            head[h][s] = best;
            greedy[h][s] = best_action;
        }
    }
    BestResponseResult { table, policy: greedy }
}

/// Best strategy modification for agent `m`: per recommendation `a_m` the
/// deviator plays `psi(h, s, a_m)` while the others follow the joint draw.
pub fn best_modification(spec: &MgSpec, policy: &JointPolicy, m: usize) -> BestModificationResult {
    let beta = spec.betas[m];
    let space = spec.joint_space();
    let own_actions = spec.action_sizes[m];
    let others_len = space.others_len(m);
    let mut table = ExpValueTable::new(m, beta, spec.horizon, spec.num_states);
    let mut modification = vec![vec![vec![0usize; own_actions]; spec.num_states]; spec.horizon];
    for h in (0..spec.horizon).rev() {
        let (head, tail) = table.values.split_at_mut(h + 1);
        let next = &tail[0];
        for s in 0..spec.num_states {
            // Joint mass of (a_m, a_{-m}) grouped by recommendation.
            let mut by_rec = vec![vec![0.0; others_len]; own_actions];
            for (joint, &p) in policy.dist[h][s].iter().enumerate() {
                by_rec[space.action_of(joint, m)][space.others_index(joint, m)] += p;
            }
            let mut total = 0.0;
            for a_m in 0..own_actions {
                let mass: f64 = by_rec[a_m].iter().sum();
                if mass == 0.0 {
                    // Identity on zero-marginal recommendations.
                    modification[h][s][a_m] = a_m;
                    continue;
                }
                let mut best = f64::NAN;
                let mut best_swap = 0usize;
                for b in 0..own_actions {
                    let mut value = 0.0;
                    for (others, &w) in by_rec[a_m].iter().enumerate() {
                        if w > 0.0 {
                            let a = space.compose(m, b, others);
                            value += w * exp_backup(spec, beta, h, m, s, a, next);
                        }
                    }
                    let better = if beta > 0.0 { value > best } else { value < best };
                    if best.is_nan() || better {
                        best = value;
                        best_swap = b;
                    }
                }
                total += best;
                modification[h][s][a_m] = best_swap;
            }
            head[h][s] = total;
        }
    }
    BestModificationResult { table, modification }
}
