//! Hard-instance generators and seeded random games.
//!
//! * [`bias_instance`] — the single-state equilibrium-bias game: every
//!   agent's reward depends only on its own action (`g` pays
//!   `Phi_H(beta_*) / sqrt(K)`, `b` pays 0), so the game decomposes into
//!   independent single-agent problems. The canonical biased policy, in
//!   which all agents but the last play `b`, has zero gap for the most
//!   risk-sensitive agent and an exponentially large raw gap for the rest.
//! * [`lower_bound_mg`] — the three-state reduction of a two-armed bandit:
//!   a dummy initial state whose transition depends only on the probed
//!   agent's action, one rewarding absorbing state and one barren one, with
//!   arm probabilities chosen so the two machines are statistically hard to
//!   tell apart at sample size K.
//! * [`random_mg`] — seeded random games for property tests.

use crate::game_model::{validate_spec, JointActionSpace, JointPolicy, MgSpec};
use crate::regret_eval::phi;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Arm-probability regime of the lower-bound instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `p_2 = e^{-|beta_*| (H-1)}`; requires `|beta_*| (H-1) >= log 4`, `H >= 2`.
    Exp,
    /// `p_2 = 1/H`; requires `|beta_*| (H-1) <= log H`, `H > 8`.
    InvH,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::Exp => f.write_str("exp"),
            Regime::InvH => f.write_str("inv_h"),
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exp" => Ok(Regime::Exp),
            "inv_h" => Ok(Regime::InvH),
            other => Err(format!("unknown regime {other:?} (expected exp|inv_h)")),
        }
    }
}

/// Generator parameters, echoed losslessly in the descriptor sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceParams {
    Bias {
        num_agents: usize,
        betas: Vec<f64>,
        horizon: usize,
        episodes: usize,
    },
    LowerBound {
        beta_star: f64,
        horizon: usize,
        episodes: usize,
        machine: u8,
        regime: Regime,
        num_agents: usize,
    },
    Random {
        seed: u64,
        states: usize,
        horizon: usize,
        action_sizes: Vec<usize>,
        betas: Vec<f64>,
        sparsity: f64,
    },
}

/// A generated instance: the parameters that produced it plus the resolved
/// game specification.
#[derive(Debug, Clone)]
pub struct InstanceDescriptor {
    pub params: InstanceParams,
    pub spec: MgSpec,
}

impl InstanceDescriptor {
    pub fn params_json(&self) -> String {
        serde_json::to_string(&self.params).expect("params serialize")
    }
}

/// Arm probabilities of the lower-bound construction (the Bernoulli
/// parameters `p_1, p_2` or `q_1, q_2`, not the success probabilities).
#[derive(Debug, Clone, Copy)]
pub struct ArmProbabilities {
    pub first: f64,
    pub second: f64,
    pub p_bar: f64,
}

/// Equilibrium-bias instance: single state, two actions per agent
/// (0 = `g`, 1 = `b`), reward `Phi_H(beta_*)/sqrt(K)` whenever the agent's
/// own action is `g` and 0 otherwise, for every step.
///
/// Also returns the canonical biased policy (agents `1..M-1` play `b`, agent
/// `M` plays `g`). Requires `K >= Phi_H(beta_*)^2` so that the reward lies
/// in `[0, 1]`.
pub fn bias_instance(
    num_agents: usize,
    betas: &[f64],
    horizon: usize,
    episodes: usize,
) -> Result<(InstanceDescriptor, JointPolicy), InstanceError> {
    if num_agents == 0 || betas.len() != num_agents {
        return Err(InstanceError::Parameter(format!(
            "need one beta per agent (M={num_agents}, got {})",
            betas.len()
        )));
    }
    if horizon == 0 || episodes == 0 {
        return Err(InstanceError::Parameter("horizon and episodes must be >= 1".into()));
    }
    if betas.contains(&0.0) {
        return Err(InstanceError::Parameter("betas must be nonzero".into()));
    }
    let (_, beta_star) = crate::regret_eval::most_risk_sensitive(betas);
    let phi_star = phi(horizon as f64, beta_star)
        .map_err(|e| InstanceError::Parameter(e.to_string()))?;
    let reward = phi_star / (episodes as f64).sqrt();
    if reward > 1.0 {
        return Err(InstanceError::Parameter(format!(
            "g-reward Phi_H(beta_*)/sqrt(K) = {reward} exceeds 1; need K >= Phi_H(beta_*)^2 = {}",
            phi_star * phi_star
        )));
    }

    let action_sizes = vec![2usize; num_agents];
    let space = JointActionSpace::new(&action_sizes);
    let a_total = space.len();
    let transitions = vec![vec![vec![vec![1.0]; a_total]]; horizon];
    let mut rewards = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let per_m: Vec<Vec<Vec<f64>>> = (0..num_agents)
            .map(|m| {
                vec![(0..a_total)
                    .map(|a| if space.action_of(a, m) == 0 { reward } else { 0.0 })
                    .collect()]
            })
            .collect();
        rewards.push(per_m);
    }
    let spec = MgSpec {
        horizon,
        num_states: 1,
        action_sizes: action_sizes.clone(),
        betas: betas.to_vec(),
        initial_state: 0,
        transitions,
        rewards,
        encoding: "agent1_most_significant".into(),
    };
    debug_assert!(validate_spec(&spec).is_empty());

    // Agents 1..M-1 play b (= 1), agent M plays g (= 0).
    let mut profile = vec![1usize; num_agents];
    profile[num_agents - 1] = 0;
    let biased = JointPolicy::pure(&action_sizes, horizon, 1, &profile);

    Ok((
        InstanceDescriptor {
            params: InstanceParams::Bias {
                num_agents,
                betas: betas.to_vec(),
                horizon,
                episodes,
            },
            spec,
        },
        biased,
    ))
}

/// Arm probabilities for the given regime/machine, shared with the tests.
pub fn lower_bound_arm_probabilities(
    beta_star: f64,
    horizon: usize,
    episodes: usize,
    machine: u8,
    regime: Regime,
) -> Result<ArmProbabilities, InstanceError> {
    if beta_star == 0.0 {
        return Err(InstanceError::Parameter("beta_star must be nonzero".into()));
    }
    let h = horizon as f64;
    let b = beta_star.abs();
    let p2 = match regime {
        Regime::Exp => {
            if horizon < 2 || b * (h - 1.0) < 4f64.ln() {
                return Err(InstanceError::Parameter(format!(
                    "regime exp requires |beta_*| (H-1) >= log 4 and H >= 2 (got |beta_*|(H-1) = {})",
                    b * (h - 1.0)
                )));
            }
            (-b * (h - 1.0)).exp()
        }
        Regime::InvH => {
            if horizon <= 8 || b * (h - 1.0) > h.ln() {
                return Err(InstanceError::Parameter(format!(
                    "regime inv_h requires |beta_*| (H-1) <= log H and H > 8 (got |beta_*|(H-1) = {}, log H = {})",
                    b * (h - 1.0),
                    h.ln()
                )));
            }
            1.0 / h
        }
    };
    if (episodes as f64) < 16.0 / p2 {
        return Err(InstanceError::Parameter(format!(
            "need K >= 16 / p_2 = {} so that p_bar <= p_2 / 4",
            16.0 / p2
        )));
    }
    let p_bar = (p2 * (1.0 - p2) / episodes as f64).sqrt();
    let shift = if beta_star > 0.0 { p_bar } else { -p_bar };
    let (first, second) = match machine {
        1 => (p2 + shift, p2),
        2 => (p2 + shift, p2 + 2.0 * shift),
        other => {
            return Err(InstanceError::Parameter(format!(
                "machine must be 1 or 2, got {other}"
            )))
        }
    };
    Ok(ArmProbabilities { first, second, p_bar })
}

/// Three-state lower-bound Markov game.
///
/// State 0 is a dummy initial state occupied at step 1 only: the probed
/// agent's action selects an arm, and the game moves to the rewarding
/// absorbing state 1 with the arm's success probability, else to the barren
/// absorbing state 2. The probed agent (agent 1) earns 1 per step in state 1
/// and 0 elsewhere, so its total reward is `H - 1` on success and 0 on
/// failure; all other agents earn identical rewards everywhere and have zero
/// gap by construction.
pub fn lower_bound_mg(
    beta_star: f64,
    horizon: usize,
    episodes: usize,
    machine: u8,
    regime: Regime,
    num_agents: usize,
) -> Result<InstanceDescriptor, InstanceError> {
    if num_agents == 0 {
        return Err(InstanceError::Parameter("need at least one agent".into()));
    }
    if beta_star.abs() * horizon as f64 > crate::game_model::BETA_HORIZON_GUARD {
        return Err(InstanceError::Parameter(format!(
            "|beta_*| H = {} exceeds the numeric-range guard",
            beta_star.abs() * horizon as f64
        )));
    }
    let arms = lower_bound_arm_probabilities(beta_star, horizon, episodes, machine, regime)?;
    // Bernoulli parameter -> success probability of reaching state 1.
    let success = |p: f64| if beta_star > 0.0 { p } else { 1.0 - p };
    let arm_success = [success(arms.first), success(arms.second)];

    let action_sizes = vec![2usize; num_agents];
    let space = JointActionSpace::new(&action_sizes);
    let a_total = space.len();
    let probed = 0usize; // the risk-probed agent

    let mut transitions = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let mut per_s = Vec::with_capacity(3);
        for s in 0..3 {
            let mut per_a = Vec::with_capacity(a_total);
            for a in 0..a_total {
                let row = if s == 0 && h == 0 {
                    let arm = space.action_of(a, probed);
                    vec![0.0, arm_success[arm], 1.0 - arm_success[arm]]
                } else {
                    // Absorbing self-loops; the dummy state is unreachable
                    // after step 1 and self-loops as well.
                    let mut r = vec![0.0; 3];
                    r[s] = 1.0;
                    r
                };
                per_a.push(row);
            }
            per_s.push(per_a);
        }
        transitions.push(per_s);
    }

    let mut rewards = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let per_m: Vec<Vec<Vec<f64>>> = (0..num_agents)
            .map(|m| {
                (0..3)
                    .map(|s| {
                        let r = if m == probed {
                            if s == 1 {
                                1.0
                            } else {
                                0.0
                            }
                        } else {
                            // Identical rewards in both absorbing states.
                            if s == 0 {
                                0.0
                            } else {
                                1.0
                            }
                        };
                        vec![r; a_total]
                    })
                    .collect()
            })
            .collect();
        rewards.push(per_m);
    }

    let spec = MgSpec {
        horizon,
        num_states: 3,
        action_sizes,
        betas: vec![beta_star; num_agents],
        initial_state: 0,
        transitions,
        rewards,
        encoding: "agent1_most_significant".into(),
    };
    debug_assert!(validate_spec(&spec).is_empty());
    Ok(InstanceDescriptor {
        params: InstanceParams::LowerBound {
            beta_star,
            horizon,
            episodes,
            machine,
            regime,
            num_agents,
        },
        spec,
    })
}

/// Seeded random game: rewards uniform in `[0, 1]`, transition rows built
/// from uniform positive weights (optionally sparsified) and normalized.
pub fn random_mg(
    seed: u64,
    states: usize,
    horizon: usize,
    action_sizes: &[usize],
    betas: &[f64],
    sparsity: f64,
) -> Result<InstanceDescriptor, InstanceError> {
    if states == 0 || horizon == 0 || action_sizes.is_empty() {
        return Err(InstanceError::Parameter("sizes must be >= 1".into()));
    }
    if action_sizes.contains(&0) {
        return Err(InstanceError::Parameter("action sets must be nonempty".into()));
    }
    if betas.len() != action_sizes.len() {
        return Err(InstanceError::Parameter("need one beta per agent".into()));
    }
    if betas.iter().any(|&b| b == 0.0 || b.abs() * horizon as f64 > crate::game_model::BETA_HORIZON_GUARD) {
        return Err(InstanceError::Parameter(
            "betas must be nonzero with |beta| H within the numeric-range guard".into(),
        ));
    }
    if !(0.0..1.0).contains(&sparsity) {
        return Err(InstanceError::Parameter("sparsity must lie in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a_total: usize = action_sizes.iter().product();
    let m_total = action_sizes.len();

    let mut transitions = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let mut per_s = Vec::with_capacity(states);
        for _ in 0..states {
            let mut per_a = Vec::with_capacity(a_total);
            for _ in 0..a_total {
                let mut row: Vec<f64> = (0..states).map(|_| rng.gen::<f64>() + 1e-3).collect();
                if sparsity > 0.0 {
                    for p in row.iter_mut() {
                        if rng.gen::<f64>() < sparsity {
                            *p = 0.0;
                        }
                    }
                    if row.iter().all(|&p| p == 0.0) {
                        row[0] = 1.0;
                    }
                }
                let total: f64 = row.iter().sum();
                for p in row.iter_mut() {
                    *p /= total;
                }
                // Exact renormalization so the row passes the 1e-12 check.
                let drift: f64 = row.iter().sum::<f64>() - 1.0;
                if drift != 0.0 {
                    let argmax = (0..states)
                        .max_by(|&i, &j| row[i].total_cmp(&row[j]))
                        .expect("nonempty row");
                    row[argmax] -= drift;
                }
                per_a.push(row);
            }
            per_s.push(per_a);
        }
        transitions.push(per_s);
    }

    let mut rewards = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let per_m: Vec<Vec<Vec<f64>>> = (0..m_total)
            .map(|_| {
                (0..states)
                    .map(|_| (0..a_total).map(|_| rng.gen::<f64>()).collect())
                    .collect()
            })
            .collect();
        rewards.push(per_m);
    }

    let spec = MgSpec {
        horizon,
        num_states: states,
        action_sizes: action_sizes.to_vec(),
        betas: betas.to_vec(),
        initial_state: 0,
        transitions,
        rewards,
        encoding: "agent1_most_significant".into(),
    };
    debug_assert!(validate_spec(&spec).is_empty());
    Ok(InstanceDescriptor {
        params: InstanceParams::Random {
            seed,
            states,
            horizon,
            action_sizes: action_sizes.to_vec(),
            betas: betas.to_vec(),
            sparsity,
        },
        spec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eq_solvers::EquilibriumKind;
    use crate::regret_eval::{episode_gaps, phi};

    #[test]
    fn bias_reward_in_range_at_minimal_k() {
        // K = ceil(Phi_3(2)^2) is the smallest K accepted.
        let phi_star = phi(3.0, 2.0).unwrap();
        let k = (phi_star * phi_star).ceil() as usize;
        assert_eq!(k, 4499);
        let (inst, _) = bias_instance(2, &[0.1, 2.0], 3, k).unwrap();
        let reward = inst.spec.rewards[0][0][0][0];
        assert!(reward > 0.0 && reward <= 1.0, "reward = {reward}");
        assert!(validate_spec(&inst.spec).is_empty());
    }

    #[test]
    fn bias_rejects_k_below_phi_squared() {
        // One below the threshold: the g-reward would exceed 1.
        let err = bias_instance(2, &[0.1, 2.0], 3, 4498).unwrap_err();
        assert!(err.to_string().contains("exceeds 1"), "{err}");
    }

    #[test]
    fn bias_step_rewards_g_action_for_every_agent() {
        use rand::SeedableRng;
        let (inst, _) = bias_instance(2, &[0.1, 2.0], 3, 4499).unwrap();
        let reward = phi(3.0, 2.0).unwrap() / (4499f64).sqrt();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        // Joint action 0 = everyone plays g.
        let (rewards, next) = inst.spec.step(0, 0, 0, &mut rng).unwrap();
        assert_eq!(next, 0);
        for r in rewards {
            assert!((r - reward).abs() < 1e-15);
        }
        // Everyone plays b: zero reward.
        let all_b = inst.spec.num_joint_actions() - 1;
        let (rewards, _) = inst.spec.step(1, 0, all_b, &mut rng).unwrap();
        assert!(rewards.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn bias_gaps_match_closed_form() {
        let (inst, biased) = bias_instance(3, &[0.2, -0.5, 1.5], 2, 2000).unwrap();
        let gaps = episode_gaps(&inst.spec, &biased, EquilibriumKind::Cce).unwrap();
        let expected = 2.0 * phi(2.0, 1.5).unwrap() / (2000f64).sqrt();
        // Agents playing b have the full gap; the last agent has none.
        assert!((gaps[0] - expected).abs() < 1e-9);
        assert!((gaps[1] - expected).abs() < 1e-9);
        assert!(gaps[2].abs() < 1e-12);
    }

    #[test]
    fn lower_bound_worked_example() {
        // regime exp, beta_* = 2, H = 3, K = 1000, machine 1:
        // p_2 = e^{-4}, p_bar = sqrt(p_2 (1 - p_2) / 1000).
        let arms = lower_bound_arm_probabilities(2.0, 3, 1000, 1, Regime::Exp).unwrap();
        let p2 = (-4.0f64).exp();
        assert!((arms.second - p2).abs() < 1e-15);
        assert!((p2 - 0.0183156).abs() < 1e-7);
        let p_bar = (p2 * (1.0 - p2) / 1000.0).sqrt();
        assert!((arms.p_bar - p_bar).abs() < 1e-15);
        assert!((arms.first - (p2 + p_bar)).abs() < 1e-15);
        for p in [arms.first, arms.second] {
            assert!(p > 0.0 && p <= 0.5);
        }
    }

    #[test]
    fn lower_bound_machines_share_first_arm() {
        let m1 = lower_bound_arm_probabilities(1.0, 3, 2000, 1, Regime::Exp).unwrap();
        let m2 = lower_bound_arm_probabilities(1.0, 3, 2000, 2, Regime::Exp).unwrap();
        assert_eq!(m1.first, m2.first);
        assert!((m2.second - (m1.second + 2.0 * m1.p_bar)).abs() < 1e-15);
    }

    #[test]
    fn lower_bound_inv_h_regime_valid_points() {
        // The inv_h regime needs small |beta_*| relative to log(H)/(H-1).
        for (beta, h) in [(0.2, 9usize), (0.15, 12), (-0.2, 9)] {
            let arms =
                lower_bound_arm_probabilities(beta, h, 10_000, 2, Regime::InvH).unwrap();
            assert!((arms.second - (1.0 / h as f64 + 2.0 * arms.p_bar * beta.signum())).abs() < 1e-12);
            for p in [arms.first, arms.second] {
                assert!(p > 0.0 && p <= 0.5, "p = {p}");
            }
        }
    }

    #[test]
    fn lower_bound_rejects_invalid_regimes() {
        // beta too small for exp at H = 3.
        assert!(lower_bound_arm_probabilities(0.5, 3, 2000, 1, Regime::Exp).is_err());
        // H too small for inv_h.
        assert!(lower_bound_arm_probabilities(0.2, 5, 2000, 1, Regime::InvH).is_err());
        // K below 16 / p_2.
        assert!(lower_bound_arm_probabilities(2.0, 3, 100, 1, Regime::Exp).is_err());
    }

    #[test]
    fn lower_bound_single_agent_arm_value_closed_form() {
        // Entropic value of pulling arm i: (1/beta) log(s e^{beta (H-1)} + 1 - s)
        // where s is the success probability of the arm.
        let inst = lower_bound_mg(1.0, 3, 2000, 1, Regime::Exp, 1).unwrap();
        let spec = &inst.spec;
        assert!(validate_spec(spec).is_empty());
        let arms = lower_bound_arm_probabilities(1.0, 3, 2000, 1, Regime::Exp).unwrap();
        for (arm, p) in [(0usize, arms.first), (1usize, arms.second)] {
            let policy = JointPolicy::pure(&[2], 3, 3, &[arm]);
            let v = crate::risk_dp::eval_policy(spec, &policy, 0)
                .start_value(0)
                .unwrap();
            let expected = (p * (2.0f64).exp() + (1.0 - p)).ln();
            assert!((v - expected).abs() < 1e-12, "arm {arm}: {v} vs {expected}");
        }
    }

    #[test]
    fn lower_bound_negative_beta_flips_success() {
        let inst = lower_bound_mg(-1.0, 3, 2000, 1, Regime::Exp, 1).unwrap();
        let arms = lower_bound_arm_probabilities(-1.0, 3, 2000, 1, Regime::Exp).unwrap();
        // Success probability of arm 2 is 1 - p_2 for beta < 0.
        let row = &inst.spec.transitions[0][0][1];
        assert!((row[1] - (1.0 - arms.second)).abs() < 1e-15);
        for p in [arms.first, arms.second] {
            assert!(p > 0.0 && p <= 0.5);
        }
    }

    #[test]
    fn lower_bound_other_agents_have_zero_gap() {
        let inst = lower_bound_mg(1.0, 3, 2000, 1, Regime::Exp, 2).unwrap();
        let policy = JointPolicy::uniform(&inst.spec);
        let gaps = episode_gaps(&inst.spec, &policy, EquilibriumKind::Cce).unwrap();
        assert!(gaps[1].abs() < 1e-10, "non-probed agent gap {}", gaps[1]);
        assert!(gaps[0] > 0.0);
    }

    #[test]
    fn random_mg_is_deterministic_and_valid() {
        let a = random_mg(99, 3, 2, &[2, 2], &[0.5, -0.5], 0.0).unwrap();
        let b = random_mg(99, 3, 2, &[2, 2], &[0.5, -0.5], 0.0).unwrap();
        assert_eq!(a.spec, b.spec);
        assert!(validate_spec(&a.spec).is_empty());
        // Dense rows: all entries strictly positive at sparsity 0.
        for per_s in &a.spec.transitions {
            for per_a in per_s {
                for row in per_a {
                    assert!(row.iter().all(|&p| p > 0.0));
                }
            }
        }
    }

    #[test]
    fn random_mg_sparsity_zeroes_entries() {
        let inst = random_mg(7, 4, 2, &[2], &[1.0], 0.6).unwrap();
        assert!(validate_spec(&inst.spec).is_empty());
        let zeros = inst
            .spec
            .transitions
            .iter()
            .flat_map(|per_s| per_s.iter())
            .flat_map(|per_a| per_a.iter())
            .flat_map(|row| row.iter())
            .filter(|&&p| p == 0.0)
            .count();
        assert!(zeros > 0);
    }

    #[test]
    fn descriptors_round_trip_through_json() {
        let inst = random_mg(3, 2, 2, &[2, 2], &[0.4, -0.4], 0.25).unwrap();
        let spec_json = inst.spec.to_json();
        let spec_back = MgSpec::from_json(&spec_json).unwrap();
        assert_eq!(inst.spec, spec_back); // bit-equal floats via shortest repr
        let params_json = inst.params_json();
        let params_back: InstanceParams = serde_json::from_str(&params_json).unwrap();
        assert_eq!(inst.params, params_back);
    }
}
