//! Independent brute-force oracles used to cross-check the DP machinery.
//!
//! `trajectory_eval` enumerates every `(action, successor)` path of an
//! episode and sums `prob * e^{beta * total reward}` directly — it shares no
//! code with the crate's backward recursions. `oracle_eval` is a separate
//! straight-line exponential DP kept in test code; it is itself checked
//! against `trajectory_eval` and then used as the inner evaluator for the
//! exhaustive policy / modification enumerations (full trajectory sums would
//! be needlessly slow inside the 2^18-map loops).

use mars_games::game_model::{JointPolicy, MgSpec};

/// Exhaustive trajectory sum of `E[e^{beta_m * total reward}]` from the
/// initial state.
pub fn trajectory_eval(spec: &MgSpec, policy: &JointPolicy, m: usize) -> f64 {
    fn recurse(
        spec: &MgSpec,
        policy: &JointPolicy,
        m: usize,
        h: usize,
        s: usize,
        prob: f64,
        reward_sum: f64,
        total: &mut f64,
    ) {
        if h == spec.horizon {
            *total += prob * (spec.betas[m] * reward_sum).exp();
            return;
        }
        for (a, &pa) in policy.dist[h][s].iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            let r = spec.rewards[h][m][s][a];
            for (sp, &pt) in spec.transitions[h][s][a].iter().enumerate() {
                if pt == 0.0 {
                    continue;
                }
                recurse(spec, policy, m, h + 1, sp, prob * pa * pt, reward_sum + r, total);
            }
        }
    }
    let mut total = 0.0;
    recurse(spec, policy, m, 0, spec.initial_state, 1.0, 0.0, &mut total);
    total
}

/// Straight-line exponential-domain policy evaluation (test-local).
pub fn oracle_eval(spec: &MgSpec, dist: &[Vec<Vec<f64>>], m: usize) -> f64 {
    let beta = spec.betas[m];
    let mut next = vec![1.0; spec.num_states];
    for h in (0..spec.horizon).rev() {
        let mut current = vec![0.0; spec.num_states];
        for s in 0..spec.num_states {
            let mut acc = 0.0;
            for (a, &pa) in dist[h][s].iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                let mut future = 0.0;
                for (sp, &pt) in spec.transitions[h][s][a].iter().enumerate() {
                    future += pt * next[sp];
                }
                acc += pa * (beta * spec.rewards[h][m][s][a]).exp() * future;
            }
            current[s] = acc;
        }
        next = current;
    }
    next[spec.initial_state]
}

fn others_marginals(policy: &JointPolicy, m: usize) -> Vec<Vec<Vec<f64>>> {
    (0..policy.horizon())
        .map(|h| {
            (0..policy.num_states())
                .map(|s| policy.marginal_of_others(h, s, m).unwrap())
                .collect()
        })
        .collect()
}

/// Exhaustive best response: max over all `A_m^(S*H)` deterministic Markov
/// policies of agent `m`, holding the others at their per-state marginals.
/// Returns the exponential-domain optimum.
pub fn enumerate_best_response(spec: &MgSpec, policy: &JointPolicy, m: usize) -> f64 {
    let space = spec.joint_space();
    let own = spec.action_sizes[m];
    let cells = spec.horizon * spec.num_states;
    let marginals = others_marginals(policy, m);
    let beta = spec.betas[m];
    let mut best = f64::NEG_INFINITY;
    let mut dist = vec![vec![vec![0.0; space.len()]; spec.num_states]; spec.horizon];
    let total = own.checked_pow(cells as u32).expect("desk-scale enumeration");
    for assignment in 0..total {
        let mut code = assignment;
        for h in 0..spec.horizon {
            for s in 0..spec.num_states {
                let b = code % own;
                code /= own;
                let row = &mut dist[h][s];
                row.iter_mut().for_each(|p| *p = 0.0);
                for (o, &w) in marginals[h][s].iter().enumerate() {
                    row[space.compose(m, b, o)] = w;
                }
            }
        }
        let value = oracle_eval(spec, &dist, m);
        // Exponential-domain optimum: max for beta > 0, min for beta < 0.
        if beta > 0.0 {
            best = best.max(value);
        } else if best.is_infinite() {
            best = value;
        } else {
            best = best.min(value);
        }
    }
    best
}

/// Exhaustive best strategy modification: max over all
/// `A_m^(H*S*A_m)` maps `psi(h, s, a_m) -> b`, applied to the joint draw.
/// Returns the exponential-domain optimum.
pub fn enumerate_best_modification(spec: &MgSpec, policy: &JointPolicy, m: usize) -> f64 {
    let space = spec.joint_space();
    let own = spec.action_sizes[m];
    let cells = spec.horizon * spec.num_states * own;
    let beta = spec.betas[m];
    let mut best = f64::NEG_INFINITY;
    let mut dist = vec![vec![vec![0.0; space.len()]; spec.num_states]; spec.horizon];
    let total = own.checked_pow(cells as u32).expect("desk-scale enumeration");
    for assignment in 0..total {
        let mut code = assignment;
        for h in 0..spec.horizon {
            for s in 0..spec.num_states {
                let row = &mut dist[h][s];
                row.iter_mut().for_each(|p| *p = 0.0);
                let mut swaps = vec![0usize; own];
                for swap in swaps.iter_mut() {
                    *swap = code % own;
                    code /= own;
                }
                for (joint, &p) in policy.dist[h][s].iter().enumerate() {
                    if p > 0.0 {
                        let rec = space.action_of(joint, m);
                        row[space.with_action(joint, m, swaps[rec])] += p;
                    }
                }
            }
        }
        let value = oracle_eval(spec, &dist, m);
        if beta > 0.0 {
            best = best.max(value);
        } else if best.is_infinite() {
            best = value;
        } else {
            best = best.min(value);
        }
    }
    best
}

/// Random joint (possibly correlated) policy with strictly positive mass.
pub fn random_joint_policy<R: rand::Rng>(spec: &MgSpec, rng: &mut R) -> JointPolicy {
    let a = spec.num_joint_actions();
    let dist = (0..spec.horizon)
        .map(|_| {
            (0..spec.num_states)
                .map(|_| {
                    let mut row: Vec<f64> = (0..a).map(|_| rng.gen::<f64>() + 1e-3).collect();
                    let total: f64 = row.iter().sum();
                    row.iter_mut().for_each(|p| *p /= total);
                    row
                })
                .collect()
        })
        .collect();
    JointPolicy {
        action_sizes: spec.action_sizes.clone(),
        dist,
        is_product: false,
        encoding: "agent1_most_significant".into(),
    }
}

/// Random product policy.
pub fn random_product_policy<R: rand::Rng>(spec: &MgSpec, rng: &mut R) -> JointPolicy {
    let per_agent: Vec<Vec<Vec<Vec<f64>>>> = (0..spec.num_agents())
        .map(|m| {
            (0..spec.horizon)
                .map(|_| {
                    (0..spec.num_states)
                        .map(|_| {
                            let mut row: Vec<f64> =
                                (0..spec.action_sizes[m]).map(|_| rng.gen::<f64>() + 1e-3).collect();
                            let total: f64 = row.iter().sum();
                            row.iter_mut().for_each(|p| *p /= total);
                            row
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    JointPolicy::from_product(&spec.action_sizes, &per_agent)
}
