//! Tabular Markov-game data model: game specification, joint policies,
//! validation, and environment stepping.
//!
//! Joint actions are stored flattened with a fixed mixed-radix encoding in
//! which agent 1 is the most significant digit; all tensors are dense.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Tolerance for probability rows summing to one.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Tolerance for the product-policy factorization check.
pub const PRODUCT_TOL: f64 = 1e-10;
/// Numeric-range guard: |beta| * H must not exceed this, so that e^{beta H}
/// stays comfortably within double precision.
pub const BETA_HORIZON_GUARD: f64 = 30.0;

const ENCODING_TAG: &str = "agent1_most_significant";

#[derive(Debug, Error)]
pub enum GameModelError {
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("zero-marginal recommendation: h={h} s={s} agent={agent} action={action}")]
    ZeroMarginal {
        h: usize,
        s: usize,
        agent: usize,
        action: usize,
    },
}

/// Mixed-radix indexer over the joint action space `A = A_1 x ... x A_M`.
///
/// Agent 0 occupies the most significant digit, so for sizes `[2, 3]` the
/// joint index of `(a_0, a_1)` is `a_0 * 3 + a_1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointActionSpace {
    sizes: Vec<usize>,
    strides: Vec<usize>,
}

impl JointActionSpace {
    pub fn new(sizes: &[usize]) -> Self {
        assert!(!sizes.is_empty(), "at least one agent required");
        assert!(sizes.iter().all(|&a| a >= 1), "action sets must be nonempty");
        let mut strides = vec![1usize; sizes.len()];
        for m in (0..sizes.len().saturating_sub(1)).rev() {
            strides[m] = strides[m + 1] * sizes[m + 1];
        }
        Self {
            sizes: sizes.to_vec(),
            strides,
        }
    }

    pub fn num_agents(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Total number of joint actions.
    pub fn len(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn encode(&self, actions: &[usize]) -> usize {
        debug_assert_eq!(actions.len(), self.sizes.len());
        actions
            .iter()
            .zip(&self.strides)
            .map(|(&a, &st)| a * st)
            .sum()
    }

    pub fn decode(&self, joint: usize) -> Vec<usize> {
        (0..self.sizes.len())
            .map(|m| self.action_of(joint, m))
            .collect()
    }

    /// Action of agent `m` within the flattened joint index.
    pub fn action_of(&self, joint: usize, m: usize) -> usize {
        (joint / self.strides[m]) % self.sizes[m]
    }

    /// Replaces agent `m`'s action inside a joint index.
    pub fn with_action(&self, joint: usize, m: usize, b: usize) -> usize {
        let old = self.action_of(joint, m);
        joint - old * self.strides[m] + b * self.strides[m]
    }

    /// Size of the reduced space `A_{-m}`.
    pub fn others_len(&self, m: usize) -> usize {
        self.len() / self.sizes[m]
    }

    /// Index into `A_{-m}` of the joint action, preserving agent order.
    pub fn others_index(&self, joint: usize, m: usize) -> usize {
        let mut idx = 0;
        for j in 0..self.sizes.len() {
            if j != m {
                idx = idx * self.sizes[j] + self.action_of(joint, j);
            }
        }
        idx
    }

    /// Composes a full joint index from agent `m`'s own action and an index
    /// into `A_{-m}`.
    pub fn compose(&self, m: usize, own: usize, mut others: usize) -> usize {
        let mut joint = own * self.strides[m];
        for j in (0..self.sizes.len()).rev() {
            if j != m {
                joint += (others % self.sizes[j]) * self.strides[j];
                others /= self.sizes[j];
            }
        }
        joint
    }
}

/// Full description of a tabular general-sum Markov game.
///
/// * `transitions[h][s][a][s']` is the kernel `P_h(s' | s, a)`;
/// * `rewards[h][m][s][a]` is agent m's reward in `[0, 1]`;
/// * joint actions `a` use the mixed-radix encoding of [`JointActionSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MgSpec {
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "S")]
    pub num_states: usize,
    pub action_sizes: Vec<usize>,
    pub betas: Vec<f64>,
    pub initial_state: usize,
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    pub rewards: Vec<Vec<Vec<Vec<f64>>>>,
    #[serde(default = "default_encoding")]
    pub encoding: String,
}

fn default_encoding() -> String {
    ENCODING_TAG.to_string()
}

impl MgSpec {
    pub fn num_agents(&self) -> usize {
        self.action_sizes.len()
    }

    pub fn num_joint_actions(&self) -> usize {
        self.action_sizes.iter().product()
    }

    pub fn joint_space(&self) -> JointActionSpace {
        JointActionSpace::new(&self.action_sizes)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("MgSpec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Environment step: reads the reward vector and samples the successor
    /// state by inverse CDF over the stored transition row.
    pub fn step<R: Rng>(
        &self,
        h: usize,
        s: usize,
        a: usize,
        rng: &mut R,
    ) -> Result<(Vec<f64>, usize), GameModelError> {
        self.check_indices(h, s, a)?;
        let rewards = (0..self.num_agents())
            .map(|m| self.rewards[h][m][s][a])
            .collect();
        let row = &self.transitions[h][s][a];
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut next = row.len() - 1;
        for (sp, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = sp;
                break;
            }
        }
        Ok((rewards, next))
    }

    fn check_indices(&self, h: usize, s: usize, a: usize) -> Result<(), GameModelError> {
        if h >= self.horizon || s >= self.num_states || a >= self.num_joint_actions() {
            return Err(GameModelError::IndexOutOfRange(format!(
                "(h={h}, s={s}, a={a}) vs (H={}, S={}, A={})",
                self.horizon,
                self.num_states,
                self.num_joint_actions()
            )));
        }
        Ok(())
    }
}

/// A single violated invariant, with coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum SpecViolation {
    Shape(String),
    TransitionRowSum { h: usize, s: usize, a: usize, sum: f64 },
    NegativeTransition { h: usize, s: usize, a: usize, sp: usize, value: f64 },
    RewardOutOfRange { h: usize, m: usize, s: usize, a: usize, value: f64 },
    ZeroBeta { m: usize },
    BetaHorizonGuard { m: usize, product: f64 },
    InitialStateOutOfRange { s: usize },
    UnknownEncoding { found: String },
}

impl fmt::Display for SpecViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpecViolation::Shape(msg) => write!(f, "shape: {msg}"),
            SpecViolation::TransitionRowSum { h, s, a, sum } => write!(
                f,
                "transition row (h={h}, s={s}, a={a}) sums to {sum}, expected 1"
            ),
            SpecViolation::NegativeTransition { h, s, a, sp, value } => write!(
                f,
                "transition P_{h}({sp}|{s},{a}) = {value} is negative"
            ),
            SpecViolation::RewardOutOfRange { h, m, s, a, value } => write!(
                f,
                "reward r_(h={h}, m={m})(s={s}, a={a}) = {value} outside [0, 1]"
            ),
            SpecViolation::ZeroBeta { m } => write!(f, "beta must be nonzero (agent {m})"),
            SpecViolation::BetaHorizonGuard { m, product } => write!(
                f,
                "|beta_{m}| * H = {product} exceeds the numeric-range guard {BETA_HORIZON_GUARD}"
            ),
            SpecViolation::InitialStateOutOfRange { s } => {
                write!(f, "initial state {s} out of range")
            }
            SpecViolation::UnknownEncoding { found } => {
                write!(f, "unknown joint-action encoding tag {found:?}")
            }
        }
    }
}

/// Checks every `MgSpec` invariant and reports all violations; an empty
/// report means the spec is valid. Shape errors short-circuit the value
/// checks that would index out of bounds.
pub fn validate_spec(spec: &MgSpec) -> Vec<SpecViolation> {
    let mut report = Vec::new();
    let h_count = spec.horizon;
    let s_count = spec.num_states;
    let m_count = spec.num_agents();
    let a_count: usize = spec.action_sizes.iter().product();

    if h_count == 0 {
        report.push(SpecViolation::Shape("horizon must be >= 1".into()));
    }
    if s_count == 0 {
        report.push(SpecViolation::Shape("state space must be nonempty".into()));
    }
    if m_count == 0 {
        report.push(SpecViolation::Shape("at least one agent required".into()));
    }
    if spec.action_sizes.contains(&0) {
        report.push(SpecViolation::Shape("action sets must be nonempty".into()));
    }
    if spec.betas.len() != m_count {
        report.push(SpecViolation::Shape(format!(
            "betas has length {}, expected {m_count}",
            spec.betas.len()
        )));
    }
    if spec.initial_state >= s_count {
        report.push(SpecViolation::InitialStateOutOfRange {
            s: spec.initial_state,
        });
    }
    if spec.encoding != ENCODING_TAG {
        report.push(SpecViolation::UnknownEncoding {
            found: spec.encoding.clone(),
        });
    }

    let trans_ok = spec.transitions.len() == h_count
        && spec.transitions.iter().all(|per_s| {
            per_s.len() == s_count
                && per_s
                    .iter()
                    .all(|per_a| per_a.len() == a_count && per_a.iter().all(|row| row.len() == s_count))
        });
    if !trans_ok {
        report.push(SpecViolation::Shape(format!(
            "transitions must have shape [{h_count}][{s_count}][{a_count}][{s_count}]"
        )));
    }
    let rew_ok = spec.rewards.len() == h_count
        && spec.rewards.iter().all(|per_m| {
            per_m.len() == m_count
                && per_m
                    .iter()
                    .all(|per_s| per_s.len() == s_count && per_s.iter().all(|row| row.len() == a_count))
        });
    if !rew_ok {
        report.push(SpecViolation::Shape(format!(
            "rewards must have shape [{h_count}][{m_count}][{s_count}][{a_count}]"
        )));
    }

    if trans_ok {
        for (h, per_s) in spec.transitions.iter().enumerate() {
            for (s, per_a) in per_s.iter().enumerate() {
                for (a, row) in per_a.iter().enumerate() {
                    for (sp, &p) in row.iter().enumerate() {
                        if p < 0.0 {
                            report.push(SpecViolation::NegativeTransition { h, s, a, sp, value: p });
                        }
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOL {
                        report.push(SpecViolation::TransitionRowSum { h, s, a, sum });
                    }
                }
            }
        }
    }
    if rew_ok {
        for (h, per_m) in spec.rewards.iter().enumerate() {
            for (m, per_s) in per_m.iter().enumerate() {
                for (s, row) in per_s.iter().enumerate() {
                    for (a, &r) in row.iter().enumerate() {
                        if !(0.0..=1.0).contains(&r) {
                            report.push(SpecViolation::RewardOutOfRange { h, m, s, a, value: r });
                        }
                    }
                }
            }
        }
    }
    for (m, &beta) in spec.betas.iter().enumerate() {
        if beta == 0.0 || !beta.is_finite() {
            report.push(SpecViolation::ZeroBeta { m });
        } else if beta.abs() * h_count as f64 > BETA_HORIZON_GUARD {
            report.push(SpecViolation::BetaHorizonGuard {
                m,
                product: beta.abs() * h_count as f64,
            });
        }
    }
    report
}

/// Per-step, per-state distribution over the joint action space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointPolicy {
    pub action_sizes: Vec<usize>,
    /// `dist[h][s][a]` with `a` in the mixed-radix joint encoding.
    pub dist: Vec<Vec<Vec<f64>>>,
    pub is_product: bool,
    #[serde(default = "default_encoding")]
    pub encoding: String,
}

impl JointPolicy {
    /// Uniform joint policy over the spec's action space.
    pub fn uniform(spec: &MgSpec) -> Self {
        let a = spec.num_joint_actions();
        let p = 1.0 / a as f64;
        Self {
            action_sizes: spec.action_sizes.clone(),
            dist: vec![vec![vec![p; a]; spec.num_states]; spec.horizon],
            is_product: true,
            encoding: default_encoding(),
        }
    }

    /// Builds a product policy from per-agent tables `per_agent[m][h][s][a_m]`.
    pub fn from_product(action_sizes: &[usize], per_agent: &[Vec<Vec<Vec<f64>>>]) -> Self {
        let space = JointActionSpace::new(action_sizes);
        let horizon = per_agent[0].len();
        let states = per_agent[0][0].len();
        let a = space.len();
        let mut dist = vec![vec![vec![0.0; a]; states]; horizon];
        for h in 0..horizon {
            for s in 0..states {
                for joint in 0..a {
                    let mut p = 1.0;
                    for (m, table) in per_agent.iter().enumerate() {
                        p *= table[h][s][space.action_of(joint, m)];
                    }
                    dist[h][s][joint] = p;
                }
            }
        }
        Self {
            action_sizes: action_sizes.to_vec(),
            dist,
            is_product: true,
            encoding: default_encoding(),
        }
    }

    /// Builds the pure product policy in which every agent plays a fixed
    /// action at every `(h, s)`: `per_agent_action[m]`.
    pub fn pure(action_sizes: &[usize], horizon: usize, states: usize, per_agent_action: &[usize]) -> Self {
        let space = JointActionSpace::new(action_sizes);
        let joint = space.encode(per_agent_action);
        let mut row = vec![0.0; space.len()];
        row[joint] = 1.0;
        Self {
            action_sizes: action_sizes.to_vec(),
            dist: vec![vec![row; states]; horizon],
            is_product: true,
            encoding: default_encoding(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.dist.len()
    }

    pub fn num_states(&self) -> usize {
        self.dist.first().map_or(0, |per_s| per_s.len())
    }

    pub fn space(&self) -> JointActionSpace {
        JointActionSpace::new(&self.action_sizes)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("JointPolicy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Own-action marginal of agent `m` at `(h, s)`.
    pub fn own_marginal(&self, h: usize, s: usize, m: usize) -> Result<Vec<f64>, GameModelError> {
        self.check(h, s, m)?;
        let space = self.space();
        let mut out = vec![0.0; self.action_sizes[m]];
        for (joint, &p) in self.dist[h][s].iter().enumerate() {
            out[space.action_of(joint, m)] += p;
        }
        Ok(out)
    }

    /// Marginal over the joint actions of all agents except `m`:
    /// `sum_{a_m} pi_h(a_m, a_{-m} | s)`.
    pub fn marginal_of_others(&self, h: usize, s: usize, m: usize) -> Result<Vec<f64>, GameModelError> {
        self.check(h, s, m)?;
        let space = self.space();
        let mut out = vec![0.0; space.others_len(m)];
        for (joint, &p) in self.dist[h][s].iter().enumerate() {
            out[space.others_index(joint, m)] += p;
        }
        Ok(out)
    }

    /// Conditional distribution `pi_h(a_{-m} | a_m, s)` given agent `m`'s
    /// recommendation. Fails with `ZeroMarginal` when the recommendation has
    /// probability zero.
    pub fn conditional_given_own(
        &self,
        h: usize,
        s: usize,
        m: usize,
        a_m: usize,
    ) -> Result<Vec<f64>, GameModelError> {
        self.check(h, s, m)?;
        if a_m >= self.action_sizes[m] {
            return Err(GameModelError::IndexOutOfRange(format!(
                "own action {a_m} vs A_{m} = {}",
                self.action_sizes[m]
            )));
        }
        let space = self.space();
        let mut out = vec![0.0; space.others_len(m)];
        let mut mass = 0.0;
        for (joint, &p) in self.dist[h][s].iter().enumerate() {
            if space.action_of(joint, m) == a_m {
                out[space.others_index(joint, m)] += p;
                mass += p;
            }
        }
        if mass <= 0.0 {
            return Err(GameModelError::ZeroMarginal {
                h,
                s,
                agent: m,
                action: a_m,
            });
        }
        for v in &mut out {
            *v /= mass;
        }
        Ok(out)
    }

    /// Validates distribution rows and, when `is_product` is set, the
    /// factorization into per-agent marginals.
    pub fn validate(&self) -> Vec<String> {
        let mut report = Vec::new();
        let space = self.space();
        let a = space.len();
        for (h, per_s) in self.dist.iter().enumerate() {
            for (s, row) in per_s.iter().enumerate() {
                if row.len() != a {
                    report.push(format!("dist[{h}][{s}] has length {}, expected {a}", row.len()));
                    continue;
                }
                if let Some((i, &p)) = row.iter().enumerate().find(|(_, &p)| p < 0.0) {
                    report.push(format!("dist[{h}][{s}][{i}] = {p} is negative"));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    report.push(format!("dist[{h}][{s}] sums to {sum}, expected 1"));
                }
                if self.is_product {
                    let marginals: Vec<Vec<f64>> = (0..self.action_sizes.len())
                        .map(|m| {
                            let mut out = vec![0.0; self.action_sizes[m]];
                            for (joint, &p) in row.iter().enumerate() {
                                out[space.action_of(joint, m)] += p;
                            }
                            out
                        })
                        .collect();
                    for (joint, &p) in row.iter().enumerate() {
                        let prod: f64 = marginals
                            .iter()
                            .enumerate()
                            .map(|(m, marg)| marg[space.action_of(joint, m)])
                            .product();
                        if (p - prod).abs() > PRODUCT_TOL {
                            report.push(format!(
                                "dist[{h}][{s}] does not factorize at joint action {joint}: {p} vs {prod}"
                            ));
                        }
                    }
                }
            }
        }
        report
    }

    fn check(&self, h: usize, s: usize, m: usize) -> Result<(), GameModelError> {
        if h >= self.horizon() || s >= self.num_states() || m >= self.action_sizes.len() {
            return Err(GameModelError::IndexOutOfRange(format!(
                "(h={h}, s={s}, m={m}) vs (H={}, S={}, M={})",
                self.horizon(),
                self.num_states(),
                self.action_sizes.len()
            )));
        }
        Ok(())
    }
}

/// One environment step of a recorded episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub h: usize,
    pub state: usize,
    pub joint_action: usize,
    pub rewards: Vec<f64>,
    pub next_state: usize,
}

/// Ordered record of one episode, exactly `H` steps.
pub type Trajectory = Vec<TrajectoryStep>;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// 1-state 1-agent MG with a single action; valid by construction.
    fn trivial_spec() -> MgSpec {
        MgSpec {
            horizon: 2,
            num_states: 1,
            action_sizes: vec![1],
            betas: vec![1.0],
            initial_state: 0,
            transitions: vec![vec![vec![vec![1.0]]]; 2],
            rewards: vec![vec![vec![vec![1.0]]]; 2],
            encoding: "agent1_most_significant".into(),
        }
    }

    fn two_state_spec() -> MgSpec {
        // S=2, H=2, two agents with 2 actions each (A=4).
        let a = 4;
        let row = |p: f64| vec![p, 1.0 - p];
        let transitions = vec![
            vec![
                vec![row(0.5), row(0.2), row(0.9), row(1.0)],
                vec![row(0.3), row(0.7), row(0.1), row(0.6)],
            ];
            2
        ];
        let rewards = vec![
            vec![
                vec![vec![0.1; a], vec![0.9; a]],
                vec![vec![0.4; a], vec![0.2; a]],
            ];
            2
        ];
        MgSpec {
            horizon: 2,
            num_states: 2,
            action_sizes: vec![2, 2],
            betas: vec![0.5, -0.5],
            initial_state: 0,
            transitions,
            rewards,
            encoding: "agent1_most_significant".into(),
        }
    }

    #[test]
    fn mixed_radix_round_trip() {
        let space = JointActionSpace::new(&[2, 3, 2]);
        assert_eq!(space.len(), 12);
        for joint in 0..space.len() {
            let actions = space.decode(joint);
            assert_eq!(space.encode(&actions), joint);
            for m in 0..3 {
                assert_eq!(space.action_of(joint, m), actions[m]);
                let others = space.others_index(joint, m);
                assert_eq!(space.compose(m, actions[m], others), joint);
            }
        }
        // Agent 0 is the most significant digit.
        assert_eq!(space.encode(&[1, 0, 0]), 6);
        assert_eq!(space.encode(&[0, 1, 0]), 2);
        assert_eq!(space.encode(&[0, 0, 1]), 1);
    }

    #[test]
    fn with_action_replaces_one_digit() {
        let space = JointActionSpace::new(&[2, 3]);
        let joint = space.encode(&[1, 2]);
        assert_eq!(space.with_action(joint, 0, 0), space.encode(&[0, 2]));
        assert_eq!(space.with_action(joint, 1, 0), space.encode(&[1, 0]));
    }

    #[test]
    fn validate_passes_on_well_formed_spec() {
        assert!(validate_spec(&trivial_spec()).is_empty());
        assert!(validate_spec(&two_state_spec()).is_empty());
    }

    #[test]
    fn validate_reports_bad_row_sum_with_coordinates() {
        let mut spec = two_state_spec();
        spec.transitions[1][0][2] = vec![0.5, 0.4];
        let report = validate_spec(&spec);
        assert_eq!(report.len(), 1);
        match &report[0] {
            SpecViolation::TransitionRowSum { h, s, a, sum } => {
                assert_eq!((*h, *s, *a), (1, 0, 2));
                assert!((sum - 0.9).abs() < 1e-12);
            }
            other => panic!("unexpected violation {other:?}"),
        }
    }

    #[test]
    fn validate_reports_zero_beta() {
        let mut spec = trivial_spec();
        spec.betas[0] = 0.0;
        let report = validate_spec(&spec);
        assert!(report
            .iter()
            .any(|v| matches!(v, SpecViolation::ZeroBeta { m: 0 })));
        assert!(report[0].to_string().contains("beta must be nonzero"));
    }

    #[test]
    fn validate_reports_reward_out_of_range_and_beta_guard() {
        let mut spec = trivial_spec();
        spec.rewards[0][0][0][0] = 1.5;
        spec.betas[0] = 20.0; // |beta| * H = 40 > 30
        let report = validate_spec(&spec);
        assert!(report
            .iter()
            .any(|v| matches!(v, SpecViolation::RewardOutOfRange { .. })));
        assert!(report
            .iter()
            .any(|v| matches!(v, SpecViolation::BetaHorizonGuard { .. })));
    }

    #[test]
    fn uniform_marginal_of_others_is_uniform() {
        let spec = two_state_spec();
        let policy = JointPolicy::uniform(&spec);
        let marg = policy.marginal_of_others(0, 0, 0).unwrap();
        assert_eq!(marg.len(), 2);
        for &p in &marg {
            assert!((p - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn product_policy_marginal_recovers_factor() {
        let p = vec![vec![vec![0.3, 0.7]]];
        let q = vec![vec![vec![0.8, 0.2]]];
        let policy = JointPolicy::from_product(&[2, 2], &[p, q.clone()]);
        let marg = policy.marginal_of_others(0, 0, 0).unwrap();
        assert!((marg[0] - 0.8).abs() < 1e-15);
        assert!((marg[1] - 0.2).abs() < 1e-15);
        assert!(policy.validate().is_empty());
    }

    /// Correlated coin: mass 1/2 on (0,0) and 1/2 on (1,1).
    fn correlated_coin() -> JointPolicy {
        JointPolicy {
            action_sizes: vec![2, 2],
            dist: vec![vec![vec![0.5, 0.0, 0.0, 0.5]]],
            is_product: false,
            encoding: "agent1_most_significant".into(),
        }
    }

    #[test]
    fn correlated_coin_marginal_and_conditional() {
        let policy = correlated_coin();
        let marg = policy.marginal_of_others(0, 0, 0).unwrap();
        assert!((marg[0] - 0.5).abs() < 1e-15 && (marg[1] - 0.5).abs() < 1e-15);
        // Conditioning on own action 0 pins the opponent to action 0.
        let cond = policy.conditional_given_own(0, 0, 0, 0).unwrap();
        assert!((cond[0] - 1.0).abs() < 1e-15 && cond[1].abs() < 1e-15);
    }

    #[test]
    fn conditional_equals_marginal_for_product_policy() {
        let p = vec![vec![vec![0.4, 0.6]]];
        let q = vec![vec![vec![0.25, 0.75]]];
        let policy = JointPolicy::from_product(&[2, 2], &[p, q]);
        for a_m in 0..2 {
            let cond = policy.conditional_given_own(0, 0, 0, a_m).unwrap();
            let marg = policy.marginal_of_others(0, 0, 0).unwrap();
            for (c, m) in cond.iter().zip(&marg) {
                assert!((c - m).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conditional_zero_marginal_errors() {
        let policy = JointPolicy {
            action_sizes: vec![2, 2],
            dist: vec![vec![vec![0.0, 0.0, 0.6, 0.4]]],
            is_product: false,
            encoding: "agent1_most_significant".into(),
        };
        let err = policy.conditional_given_own(0, 0, 0, 0).unwrap_err();
        assert!(matches!(err, GameModelError::ZeroMarginal { action: 0, .. }));
    }

    /// Chain rule: sum_{a_m} own_marginal(a_m) * conditional(a_m) rebuilds the
    /// joint distribution.
    #[test]
    fn chain_rule_recovers_joint() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mut row: Vec<f64> = (0..6).map(|_| rng.gen::<f64>()).collect();
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= sum);
            let policy = JointPolicy {
                action_sizes: vec![2, 3],
                dist: vec![vec![row.clone()]],
                is_product: false,
                encoding: "agent1_most_significant".into(),
            };
            let space = policy.space();
            for m in 0..2 {
                let own = policy.own_marginal(0, 0, m).unwrap();
                let mut rebuilt = [0.0; 6];
                for (a_m, &w) in own.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let cond = policy.conditional_given_own(0, 0, m, a_m).unwrap();
                    for (o, &c) in cond.iter().enumerate() {
                        rebuilt[space.compose(m, a_m, o)] += w * c;
                    }
                }
                for (p, q) in rebuilt.iter().zip(&row) {
                    assert!((p - q).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn step_deterministic_kernel_ignores_seed() {
        let spec = trivial_spec();
        for seed in [0u64, 1, 99] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (rewards, next) = spec.step(0, 0, 0, &mut rng).unwrap();
            assert_eq!(next, 0);
            assert_eq!(rewards, vec![1.0]);
        }
    }

    #[test]
    fn step_replay_is_bit_identical() {
        let spec = two_state_spec();
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|i| spec.step(i % 2, i % 2, i % 4, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
    }

    #[test]
    fn step_two_successor_frequency() {
        // 0.5/0.5 kernel: empirical frequency within 0.01 of 0.5 over 1e5 draws.
        let spec = two_state_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(12345);
        let n = 100_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let (_, next) = spec.step(0, 0, 0, &mut rng).unwrap();
            if next == 0 {
                hits += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.01, "freq = {freq}");
    }

    #[test]
    fn spec_json_round_trip_is_lossless() {
        let spec = two_state_spec();
        let json = spec.to_json();
        assert!(json.contains("\"encoding\":\"agent1_most_significant\""));
        let back = MgSpec::from_json(&json).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn spec_json_rejects_unknown_fields() {
        let mut doc: serde_json::Value = serde_json::from_str(&trivial_spec().to_json()).unwrap();
        doc.as_object_mut()
            .unwrap()
            .insert("bogus".into(), serde_json::json!(1));
        assert!(MgSpec::from_json(&doc.to_string()).is_err());
    }
}
