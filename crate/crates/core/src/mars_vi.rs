//! MARS-VI: multi-agent risk-sensitive value iteration with self-play.
//!
//! Every episode runs a full backward pass that rebuilds optimistic and
//! pessimistic action-value bounds from the empirical kernel, extracts a
//! one-step equilibrium of the signed exponential upper estimates at every
//! `(h, s)`, certifies the policy with the smallest confidence gap seen so
//! far, and then executes the policy to collect one more trajectory.
//!
//! The confidence bonus is
//!
//! ```text
//! gamma_{h,m}(s,a) = C * |e^{beta_m (H-h+1)} - 1| * sqrt(S * iota / N_h(s,a))
//! ```
//!
//! with `iota = log(2 S A H K / delta)`, and it enters the exponential-domain
//! estimates with a sign that depends on `beta_m`: the exponential map is
//! increasing for `beta_m > 0` and decreasing for `beta_m < 0`, so widening a
//! confidence bound means adding the bonus in one case and subtracting it in
//! the other. Truncation keeps the upper estimate below `e^{beta (H-h+1)}`
//! side and the lower estimate on the `1` side, which makes the log argument
//! strictly positive by construction.

use crate::eq_solvers::{self, EquilibriumKind, GameMatrix, SolverError};
use crate::game_model::{JointPolicy, MgSpec, Trajectory, TrajectoryStep};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("bonus undefined for unvisited pair (h={h}, s={s}, a={a})")]
    ZeroCount { h: usize, s: usize, a: usize },
    #[error("equilibrium solver failed at episode {episode}, h={h}, s={s}: {source}")]
    Solver {
        episode: usize,
        h: usize,
        s: usize,
        source: SolverError,
    },
}

/// Run parameters of a MARS-VI learning run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarsViConfig {
    pub solver: EquilibriumKind,
    /// Bonus constant C.
    pub bonus_c: f64,
    /// Confidence level delta.
    pub delta: f64,
    /// Number of episodes K.
    pub episodes: usize,
    /// Store every j-th episode snapshot (1 = every episode). The first and
    /// last episodes are always stored.
    pub snapshot_stride: usize,
}

impl MarsViConfig {
    pub fn new(solver: EquilibriumKind, episodes: usize) -> Self {
        Self {
            solver,
            bonus_c: 1.0,
            delta: 0.1,
            episodes,
            snapshot_stride: 1,
        }
    }
}

/// Mutable learner state: visit counts, empirical kernel, exponential-domain
/// q-estimates, log-domain Q/V bounds, and the current joint policy.
#[derive(Debug, Clone)]
pub struct LearnerState {
    /// `counts[h][s][a]`.
    pub counts: Vec<Vec<Vec<u64>>>,
    /// `succ_counts[h][s][a][s']`.
    pub succ_counts: Vec<Vec<Vec<Vec<u64>>>>,
    /// Empirical kernel rows; rows with zero count are never read.
    pub p_hat: Vec<Vec<Vec<Vec<f64>>>>,
    /// Exponential-domain estimates `q[h][m][s][a]`.
    pub q_upper_exp: Vec<Vec<Vec<Vec<f64>>>>,
    pub q_lower_exp: Vec<Vec<Vec<Vec<f64>>>>,
    /// Log-domain bounds `Q[h][m][s][a]`.
    pub q_upper: Vec<Vec<Vec<Vec<f64>>>>,
    pub q_lower: Vec<Vec<Vec<Vec<f64>>>>,
    /// Log-domain value bounds `V[h][m][s]`, `h` in `0..=H` (row `H` is 0).
    pub v_upper: Vec<Vec<Vec<f64>>>,
    pub v_lower: Vec<Vec<Vec<f64>>>,
    /// Current joint policy `pi[h][s][a]`.
    pub policy: Vec<Vec<Vec<f64>>>,
    /// Episode index (1-based; 0 before the first backward pass).
    pub episode: usize,
    pub bonus_c: f64,
    pub delta: f64,
    /// `iota = log(2 S A H K / delta)`.
    pub iota: f64,
}

impl LearnerState {
    pub fn new(spec: &MgSpec, cfg: &MarsViConfig) -> Self {
        let (h_count, s_count, m_count, a_count) = (
            spec.horizon,
            spec.num_states,
            spec.num_agents(),
            spec.num_joint_actions(),
        );
        let iota = (2.0 * s_count as f64 * a_count as f64 * h_count as f64 * cfg.episodes as f64
            / cfg.delta)
            .ln();
        Self {
            counts: vec![vec![vec![0; a_count]; s_count]; h_count],
            succ_counts: vec![vec![vec![vec![0; s_count]; a_count]; s_count]; h_count],
            p_hat: vec![vec![vec![vec![0.0; s_count]; a_count]; s_count]; h_count],
            q_upper_exp: vec![vec![vec![vec![0.0; a_count]; s_count]; m_count]; h_count],
            q_lower_exp: vec![vec![vec![vec![0.0; a_count]; s_count]; m_count]; h_count],
            q_upper: vec![vec![vec![vec![0.0; a_count]; s_count]; m_count]; h_count],
            q_lower: vec![vec![vec![vec![0.0; a_count]; s_count]; m_count]; h_count],
            v_upper: vec![vec![vec![0.0; s_count]; m_count]; h_count + 1],
            v_lower: vec![vec![vec![0.0; s_count]; m_count]; h_count + 1],
            policy: vec![vec![vec![1.0 / a_count as f64; a_count]; s_count]; h_count],
            episode: 0,
            bonus_c: cfg.bonus_c,
            delta: cfg.delta,
            iota,
        }
    }

    /// Joint-policy snapshot of the current backward-pass output.
    pub fn policy_snapshot(&self, spec: &MgSpec, solver: EquilibriumKind) -> JointPolicy {
        JointPolicy {
            action_sizes: spec.action_sizes.clone(),
            dist: self.policy.clone(),
            is_product: matches!(solver, EquilibriumKind::Ne),
            encoding: "agent1_most_significant".into(),
        }
    }
}

/// Confidence bonus `gamma_{h,m}(s,a)`; requires at least one visit.
pub fn bonus(state: &LearnerState, spec: &MgSpec, h: usize, m: usize, s: usize, a: usize) -> Result<f64, LearnerError> {
    let n = state.counts[h][s][a];
    if n == 0 {
        return Err(LearnerError::ZeroCount { h, s, a });
    }
    let remaining = (spec.horizon - h) as f64;
    let beta = spec.betas[m];
    Ok(state.bonus_c
        * (beta * remaining).exp_m1().abs()
        * (spec.num_states as f64 * state.iota / n as f64).sqrt())
}

/// Q-Update for a visited pair: exponential-domain backup from the empirical
/// kernel, bonus with sign dispatch, truncation, and one log each.
/// Returns `(Q_upper, Q_lower)` in the log domain.
pub fn q_update(
    state: &mut LearnerState,
    spec: &MgSpec,
    h: usize,
    m: usize,
    s: usize,
    a: usize,
) -> (f64, f64) {
    let beta = spec.betas[m];
    let remaining = (spec.horizon - h) as f64;
    let gamma = bonus(state, spec, h, m, s, a).expect("q_update requires a visited pair");
    let reward_factor = (beta * spec.rewards[h][m][s][a]).exp();
    let row = &state.p_hat[h][s][a];
    let mut up = 0.0;
    let mut lo = 0.0;
    for (sp, &p) in row.iter().enumerate() {
        if p > 0.0 {
            up += p * (beta * state.v_upper[h + 1][m][sp]).exp();
            lo += p * (beta * state.v_lower[h + 1][m][sp]).exp();
        }
    }
    let q_up_exp = reward_factor * up;
    let q_lo_exp = reward_factor * lo;
    state.q_upper_exp[h][m][s][a] = q_up_exp;
    state.q_lower_exp[h][m][s][a] = q_lo_exp;

    let top = (beta * remaining).exp();
    let (q_upper, q_lower) = if beta > 0.0 {
        (
            (q_up_exp + gamma).min(top).ln() / beta,
            (q_lo_exp - gamma).max(1.0).ln() / beta,
        )
    } else {
        (
            (q_up_exp - gamma).max(top).ln() / beta,
            (q_lo_exp + gamma).min(1.0).ln() / beta,
        )
    };
    state.q_upper[h][m][s][a] = q_upper;
    state.q_lower[h][m][s][a] = q_lower;
    (q_upper, q_lower)
}

/// One full backward pass: Q-updates everywhere visited (defaults elsewhere),
/// equilibrium extraction on the signed exponential upper estimates, and
/// value backups under the extracted policy.
pub fn backward_pass(
    state: &mut LearnerState,
    spec: &MgSpec,
    solver: EquilibriumKind,
) -> Result<(), LearnerError> {
    let (s_count, m_count, a_count) = (spec.num_states, spec.num_agents(), spec.num_joint_actions());
    for h in (0..spec.horizon).rev() {
        let remaining = (spec.horizon - h) as f64;
        for m in 0..m_count {
            let beta = spec.betas[m];
            let top = (beta * remaining).exp();
            for s in 0..s_count {
                for a in 0..a_count {
                    // Unvisited defaults: q_upper = e^{beta(H-h+1)}, q_lower = 1,
                    // i.e. Q_upper = H-h+1 and Q_lower = 0.
                    state.q_upper_exp[h][m][s][a] = top;
                    state.q_lower_exp[h][m][s][a] = 1.0;
                    state.q_upper[h][m][s][a] = remaining;
                    state.q_lower[h][m][s][a] = 0.0;
                }
            }
        }
        for s in 0..s_count {
            for a in 0..a_count {
                if state.counts[h][s][a] >= 1 {
                    for m in 0..m_count {
                        q_update(state, spec, h, m, s, a);
                    }
                }
            }
        }
        for s in 0..s_count {
            let payoffs: Vec<Vec<f64>> = (0..m_count)
                .map(|m| {
                    let beta = spec.betas[m];
                    let sign = if beta < 0.0 { -1.0 } else { 1.0 };
                    (0..a_count)
                        .map(|a| sign * (beta * state.q_upper[h][m][s][a]).exp())
                        .collect()
                })
                .collect();
            let game = GameMatrix::new(spec.action_sizes.clone(), payoffs).map_err(|source| {
                LearnerError::Solver { episode: state.episode, h, s, source }
            })?;
            let eq = match solver {
                EquilibriumKind::Cce => eq_solvers::solve_cce(&game),
                EquilibriumKind::Ce => eq_solvers::solve_ce(&game),
                EquilibriumKind::Ne => eq_solvers::solve_ne(&game),
            }
            .map_err(|source| LearnerError::Solver { episode: state.episode, h, s, source })?;
            state.policy[h][s] = eq.dist;
            for m in 0..m_count {
                let beta = spec.betas[m];
                let mut up = 0.0;
                let mut lo = 0.0;
                for (a, &p) in state.policy[h][s].iter().enumerate() {
                    if p > 0.0 {
                        up += p * (beta * state.q_upper[h][m][s][a]).exp();
                        lo += p * (beta * state.q_lower[h][m][s][a]).exp();
                    }
                }
                state.v_upper[h][m][s] = up.ln() / beta;
                state.v_lower[h][m][s] = lo.ln() / beta;
            }
        }
    }
    Ok(())
}

/// Executes the current policy for one episode, updating counts and the
/// affected empirical-kernel rows.
pub fn act_and_record<R: Rng>(state: &mut LearnerState, spec: &MgSpec, rng: &mut R) -> Trajectory {
    let mut trajectory = Vec::with_capacity(spec.horizon);
    let mut s = spec.initial_state;
    for h in 0..spec.horizon {
        let a = sample_index(&state.policy[h][s], rng);
        let (rewards, next) = spec.step(h, s, a, rng).expect("indices in range");
        state.counts[h][s][a] += 1;
        state.succ_counts[h][s][a][next] += 1;
        let n = state.counts[h][s][a] as f64;
        for sp in 0..spec.num_states {
            state.p_hat[h][s][a][sp] = state.succ_counts[h][s][a][sp] as f64 / n;
        }
        trajectory.push(TrajectoryStep {
            h,
            state: s,
            joint_action: a,
            rewards,
            next_state: next,
        });
        s = next;
    }
    trajectory
}

fn sample_index<R: Rng>(dist: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.len() - 1
}

/// Best-so-far certified policy and its normalized confidence-gap statistic.
#[derive(Debug, Clone)]
pub struct CertifiedPolicy {
    pub policy: JointPolicy,
    /// Normalized gap `max_m H (e^{beta_m Vup} - e^{beta_m Vlo})(s_1) / (e^{beta_m H} - 1)`.
    pub delta_v: f64,
    /// Episode (1-based) at which the policy was recorded.
    pub episode: usize,
}

/// Normalized exponential-gap statistic of the current bounds at `(1, s_1)`.
/// Evaluates to `H` at episode 1 and to 0 when the bounds coincide, for
/// either sign of `beta`.
pub fn gap_statistic(state: &LearnerState, spec: &MgSpec) -> f64 {
    let s1 = spec.initial_state;
    let h_f = spec.horizon as f64;
    let mut g: f64 = 0.0;
    for (m, &beta) in spec.betas.iter().enumerate() {
        let up = state.v_upper[0][m][s1];
        let lo = state.v_lower[0][m][s1];
        // e^{b*up} - e^{b*lo} = e^{b*lo} * expm1(b*(up-lo)); both numerator
        // and denominator carry the sign of beta, so the ratio is >= 0.
        let numer = (beta * lo).exp() * (beta * (up - lo)).exp_m1();
        let denom = (beta * h_f).exp_m1();
        g = g.max(h_f * numer / denom);
    }
    // 0 <= Vlo <= Vup <= H makes g <= H exactly; clamp away rounding dust so
    // episode 1 (g = H by construction) always certifies against Delta_V = H.
    g.min(h_f)
}

/// Raw unnormalized gap `max_m (Vup - Vlo)(s_1)`, logged alongside the
/// normalized statistic.
pub fn raw_gap(state: &LearnerState, spec: &MgSpec) -> f64 {
    let s1 = spec.initial_state;
    spec.betas
        .iter()
        .enumerate()
        .map(|(m, _)| state.v_upper[0][m][s1] - state.v_lower[0][m][s1])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Records the current policy as certified when its gap statistic does not
/// exceed the best seen so far (non-strict, so ties re-copy). Returns true
/// when the certificate was updated.
pub fn certify(
    state: &LearnerState,
    spec: &MgSpec,
    solver: EquilibriumKind,
    cert: &mut Option<CertifiedPolicy>,
) -> bool {
    let g = gap_statistic(state, spec);
    let current_best = cert.as_ref().map_or(spec.horizon as f64, |c| c.delta_v);
    if g <= current_best {
        *cert = Some(CertifiedPolicy {
            policy: state.policy_snapshot(spec, solver),
            delta_v: g,
            episode: state.episode,
        });
        true
    } else {
        false
    }
}

/// Per-episode snapshot retained for regret evaluation.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    /// Episode number, 1-based.
    pub episode: usize,
    pub policy: JointPolicy,
    /// `Vup_{1,m}(s_1)` per agent.
    pub v_upper_start: Vec<f64>,
    /// `Vlo_{1,m}(s_1)` per agent.
    pub v_lower_start: Vec<f64>,
    /// Running certified gap after this episode's certification step.
    pub delta_v: f64,
    /// This episode's gap statistic and raw gap.
    pub gap_stat: f64,
    pub raw_gap: f64,
    /// Whether this episode updated the certified policy.
    pub certified: bool,
}

/// Output of a learning run.
#[derive(Debug)]
pub struct RunOutput {
    /// Snapshots on the stride grid (first and last episodes always present).
    pub records: Vec<EpisodeRecord>,
    pub certified: CertifiedPolicy,
    pub state: LearnerState,
}

/// Runs MARS-VI for `cfg.episodes` episodes of self-play. Deterministic
/// given the seed.
pub fn run(spec: &MgSpec, cfg: &MarsViConfig, seed: u64) -> Result<RunOutput, LearnerError> {
    assert!(cfg.episodes >= 1, "K must be >= 1");
    assert!(cfg.snapshot_stride >= 1, "snapshot stride must be >= 1");
    let mut state = LearnerState::new(spec, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cert: Option<CertifiedPolicy> = None;
    let mut records = Vec::new();
    let s1 = spec.initial_state;
    for k in 1..=cfg.episodes {
        state.episode = k;
        backward_pass(&mut state, spec, cfg.solver)?;
        let certified = certify(&state, spec, cfg.solver, &mut cert);
        let on_grid = k == 1 || k == cfg.episodes || (k - 1) % cfg.snapshot_stride == 0;
        if on_grid {
            records.push(EpisodeRecord {
                episode: k,
                policy: state.policy_snapshot(spec, cfg.solver),
                v_upper_start: (0..spec.num_agents()).map(|m| state.v_upper[0][m][s1]).collect(),
                v_lower_start: (0..spec.num_agents()).map(|m| state.v_lower[0][m][s1]).collect(),
                delta_v: cert.as_ref().map(|c| c.delta_v).unwrap_or(spec.horizon as f64),
                gap_stat: gap_statistic(&state, spec),
                raw_gap: raw_gap(&state, spec),
                certified,
            });
        }
        act_and_record(&mut state, spec, &mut rng);
    }
    Ok(RunOutput {
        records,
        certified: cert.expect("at least one episode ran"),
        state,
    })
}
