//! One-step normal-form equilibrium solvers over signed payoff tensors.
//!
//! CE and CCE are computed as feasibility linear programs with a welfare
//! objective (maximize the sum of all agents' expected payoffs) so that the
//! returned distribution is deterministic and canonical; NE is computed by
//! pure-profile search for any number of agents, plus support enumeration
//! for two-agent games. The solvers are sign-agnostic and always maximize
//! the payoffs exactly as given.

pub mod simplex;

use crate::game_model::JointActionSpace;
use serde::{Deserialize, Serialize};
use simplex::{lp_solve, LinearConstraint, LpError};
use std::fmt;
use thiserror::Error;

pub use simplex::LpSolution;

/// Incentive-constraint tolerance for returned equilibria.
pub const EQ_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EquilibriumKind {
    Ne,
    Ce,
    Cce,
}

impl fmt::Display for EquilibriumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EquilibriumKind::Ne => "ne",
            EquilibriumKind::Ce => "ce",
            EquilibriumKind::Cce => "cce",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for EquilibriumKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ne" => Ok(EquilibriumKind::Ne),
            "ce" => Ok(EquilibriumKind::Ce),
            "cce" => Ok(EquilibriumKind::Cce),
            other => Err(format!("unknown equilibrium kind {other:?} (expected ne|ce|cce)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    /// The LP backend failed; impossible for well-formed finite games, so the
    /// offending game is dumped for triage.
    #[error("equilibrium LP failed ({source}); game dump: {dump}")]
    Lp { source: LpError, dump: String },
    #[error("unsupported game for NE solver: {0}")]
    Unsupported(String),
    #[error("non-finite payoff at agent {agent}, joint action {action}")]
    NonFinitePayoff { agent: usize, action: usize },
}

/// Per-agent payoff tensors `u_m(a)` over flattened joint actions.
#[derive(Debug, Clone, PartialEq)]
pub struct GameMatrix {
    action_sizes: Vec<usize>,
    /// `payoffs[m][a]`.
    payoffs: Vec<Vec<f64>>,
}

impl GameMatrix {
    pub fn new(action_sizes: Vec<usize>, payoffs: Vec<Vec<f64>>) -> Result<Self, SolverError> {
        let a: usize = action_sizes.iter().product();
        assert_eq!(payoffs.len(), action_sizes.len(), "one payoff tensor per agent");
        for (m, tensor) in payoffs.iter().enumerate() {
            assert_eq!(tensor.len(), a, "agent {m} payoff tensor length");
            for (action, &u) in tensor.iter().enumerate() {
                if !u.is_finite() {
                    return Err(SolverError::NonFinitePayoff { agent: m, action });
                }
            }
        }
        Ok(Self { action_sizes, payoffs })
    }

    pub fn num_agents(&self) -> usize {
        self.action_sizes.len()
    }

    pub fn action_sizes(&self) -> &[usize] {
        &self.action_sizes
    }

    pub fn num_joint_actions(&self) -> usize {
        self.action_sizes.iter().product()
    }

    pub fn space(&self) -> JointActionSpace {
        JointActionSpace::new(&self.action_sizes)
    }

    pub fn payoff(&self, m: usize, a: usize) -> f64 {
        self.payoffs[m][a]
    }

    /// JSON debug dump for failure triage.
    pub fn debug_json(&self) -> String {
        serde_json::json!({
            "M": self.num_agents(),
            "action_sizes": self.action_sizes,
            "payoffs": self.payoffs,
        })
        .to_string()
    }

    /// Common positive scale that keeps LP data at O(1) magnitudes without
    /// changing the feasible set or the welfare argmax.
    fn scale(&self) -> f64 {
        let max_abs = self
            .payoffs
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0f64, |acc, &u| acc.max(u.abs()));
        max_abs.max(1.0)
    }
}

/// Probability vector over joint actions together with its equilibrium kind
/// and the largest incentive-constraint violation it attains.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumDist {
    pub dist: Vec<f64>,
    pub kind: EquilibriumKind,
    pub max_violation: f64,
}

/// Largest incentive-constraint violation of `x` for the given kind; zero
/// means an exact equilibrium, negative values mean strict slack.
///
/// * NE / CCE: best fixed-deviation gain, with the deviator facing the
///   marginal of the other agents' joint play;
/// * CE: best swap gain over all (recommendation, replacement) pairs.
pub fn verify(g: &GameMatrix, x: &[f64], kind: EquilibriumKind) -> f64 {
    let space = g.space();
    let a_total = g.num_joint_actions();
    debug_assert_eq!(x.len(), a_total);
    let mut worst = f64::NEG_INFINITY;
    match kind {
        EquilibriumKind::Ne | EquilibriumKind::Cce => {
            for m in 0..g.num_agents() {
                let current: f64 = (0..a_total).map(|a| x[a] * g.payoff(m, a)).sum();
                for b in 0..g.action_sizes[m] {
                    let deviated: f64 = (0..a_total)
                        .map(|a| x[a] * g.payoff(m, space.with_action(a, m, b)))
                        .sum();
                    worst = worst.max(deviated - current);
                }
            }
        }
        EquilibriumKind::Ce => {
            for m in 0..g.num_agents() {
                for rec in 0..g.action_sizes[m] {
                    for b in 0..g.action_sizes[m] {
                        let mut gain = 0.0;
                        for a in 0..a_total {
                            if space.action_of(a, m) == rec && x[a] > 0.0 {
                                gain += x[a] * (g.payoff(m, space.with_action(a, m, b)) - g.payoff(m, a));
                            }
                        }
                        worst = worst.max(gain);
                    }
                }
            }
        }
    }
    worst
}

fn clean_dist(mut x: Vec<f64>) -> Vec<f64> {
    for v in &mut x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let total: f64 = x.iter().sum();
    if total > 0.0 {
        for v in &mut x {
            *v /= total;
        }
    }
    x
}

fn solve_lp_equilibrium(g: &GameMatrix, kind: EquilibriumKind) -> Result<EquilibriumDist, SolverError> {
    let space = g.space();
    let a_total = g.num_joint_actions();
    let scale = g.scale();
    let mut constraints = Vec::new();
    constraints.push(LinearConstraint::eq(vec![1.0; a_total], 1.0));
    match kind {
        EquilibriumKind::Cce => {
            for m in 0..g.num_agents() {
                for b in 0..g.action_sizes()[m] {
                    let coeffs: Vec<f64> = (0..a_total)
                        .map(|a| (g.payoff(m, a) - g.payoff(m, space.with_action(a, m, b))) / scale)
                        .collect();
                    constraints.push(LinearConstraint::ge(coeffs, 0.0));
                }
            }
        }
        EquilibriumKind::Ce => {
            for m in 0..g.num_agents() {
                for rec in 0..g.action_sizes()[m] {
                    for b in 0..g.action_sizes()[m] {
                        if b == rec {
                            continue;
                        }
                        let coeffs: Vec<f64> = (0..a_total)
                            .map(|a| {
                                if space.action_of(a, m) == rec {
                                    (g.payoff(m, a) - g.payoff(m, space.with_action(a, m, b))) / scale
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        constraints.push(LinearConstraint::ge(coeffs, 0.0));
                    }
                }
            }
        }
        EquilibriumKind::Ne => unreachable!("NE is not LP-based"),
    }
    let welfare: Vec<f64> = (0..a_total)
        .map(|a| (0..g.num_agents()).map(|m| g.payoff(m, a) / scale).sum())
        .collect();
    let sol = lp_solve(&welfare, &constraints).map_err(|source| SolverError::Lp {
        source,
        dump: g.debug_json(),
    })?;
    let dist = clean_dist(sol.x);
    let max_violation = verify(g, &dist, kind);
    Ok(EquilibriumDist { dist, kind, max_violation })
}

/// Coarse correlated equilibrium with welfare tie-break.
pub fn solve_cce(g: &GameMatrix) -> Result<EquilibriumDist, SolverError> {
    solve_lp_equilibrium(g, EquilibriumKind::Cce)
}

/// Correlated equilibrium with welfare tie-break.
pub fn solve_ce(g: &GameMatrix) -> Result<EquilibriumDist, SolverError> {
    solve_lp_equilibrium(g, EquilibriumKind::Ce)
}

/// Nash equilibrium: pure-profile search for any number of agents, then
/// support enumeration for two-agent games. Intended for small games.
pub fn solve_ne(g: &GameMatrix) -> Result<EquilibriumDist, SolverError> {
    let a_total = g.num_joint_actions();
    if a_total > 64 && g.num_agents() != 2 {
        return Err(SolverError::Unsupported(format!(
            "pure-NE search limited to A <= 64 joint actions, got {a_total}"
        )));
    }
    let space = g.space();

    if a_total <= 64 {
        // Pure search: keep the welfare-maximal pure NE (lowest joint index
        // on ties).
        let mut best: Option<(usize, f64)> = None;
        'profiles: for a in 0..a_total {
            for m in 0..g.num_agents() {
                let u = g.payoff(m, a);
                for b in 0..g.action_sizes()[m] {
                    if g.payoff(m, space.with_action(a, m, b)) > u + 1e-12 {
                        continue 'profiles;
                    }
                }
            }
            let welfare: f64 = (0..g.num_agents()).map(|m| g.payoff(m, a)).sum();
            if best.is_none_or(|(_, w)| welfare > w + 1e-12) {
                best = Some((a, welfare));
            }
        }
        if let Some((a, _)) = best {
            let mut dist = vec![0.0; a_total];
            dist[a] = 1.0;
            let max_violation = verify(g, &dist, EquilibriumKind::Ne);
            return Ok(EquilibriumDist {
                dist,
                kind: EquilibriumKind::Ne,
                max_violation,
            });
        }
    }

    if g.num_agents() == 2 && g.action_sizes().iter().all(|&a| a <= 8) {
        if let Some(dist) = support_enumeration_2p(g) {
            let max_violation = verify(g, &dist, EquilibriumKind::Ne);
            return Ok(EquilibriumDist {
                dist,
                kind: EquilibriumKind::Ne,
                max_violation,
            });
        }
    }
    Err(SolverError::Unsupported(
        "no pure NE found and mixed support enumeration unavailable (requires M = 2, A_m <= 8)".into(),
    ))
}

/// Gaussian elimination with partial pivoting; `None` for singular systems.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in 0..n {
            if row != col {
                let factor = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= factor * a[col][k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Classic equal-size support enumeration for bimatrix games. Supports are
/// scanned in deterministic order (size ascending, then lexicographic), and
/// the first equilibrium found is returned.
fn support_enumeration_2p(g: &GameMatrix) -> Option<Vec<f64>> {
    let (a1, a2) = (g.action_sizes()[0], g.action_sizes()[1]);
    let space = g.space();
    let u = |m: usize, i: usize, j: usize| g.payoff(m, space.encode(&[i, j]));
    let subsets = |n: usize, k: usize| -> Vec<Vec<usize>> {
        (0usize..1 << n)
            .filter(|mask| mask.count_ones() as usize == k)
            .map(|mask| (0..n).filter(|i| mask >> i & 1 == 1).collect())
            .collect()
    };
    const TOL: f64 = 1e-9;

    for k in 1..=a1.min(a2) {
        for s1 in subsets(a1, k) {
            for s2 in subsets(a2, k) {
                // Opponent mix y on s2 makes agent 1 indifferent across s1.
                let mut rows = Vec::with_capacity(k + 1);
                let mut rhs = Vec::with_capacity(k + 1);
                for &i in &s1 {
                    let mut row: Vec<f64> = s2.iter().map(|&j| u(0, i, j)).collect();
                    row.push(-1.0); // value variable v1
                    rows.push(row);
                    rhs.push(0.0);
                }
                let mut norm = vec![1.0; k];
                norm.push(0.0);
                rows.push(norm);
                rhs.push(1.0);
                let Some(sol_y) = solve_linear(rows, rhs) else { continue };
                let (y, v1) = (&sol_y[..k], sol_y[k]);
                if y.iter().any(|&p| p < -TOL) {
                    continue;
                }
                if (0..a1).filter(|i| !s1.contains(i)).any(|i| {
                    s2.iter().zip(y).map(|(&j, &p)| u(0, i, j) * p).sum::<f64>() > v1 + TOL
                }) {
                    continue;
                }

                // Own mix x on s1 makes agent 2 indifferent across s2.
                let mut rows = Vec::with_capacity(k + 1);
                let mut rhs = Vec::with_capacity(k + 1);
                for &j in &s2 {
                    let mut row: Vec<f64> = s1.iter().map(|&i| u(1, i, j)).collect();
                    row.push(-1.0);
                    rows.push(row);
                    rhs.push(0.0);
                }
                let mut norm = vec![1.0; k];
                norm.push(0.0);
                rows.push(norm);
                rhs.push(1.0);
                let Some(sol_x) = solve_linear(rows, rhs) else { continue };
                let (x, v2) = (&sol_x[..k], sol_x[k]);
                if x.iter().any(|&p| p < -TOL) {
                    continue;
                }
                if (0..a2).filter(|j| !s2.contains(j)).any(|j| {
                    s1.iter().zip(x).map(|(&i, &p)| u(1, i, j) * p).sum::<f64>() > v2 + TOL
                }) {
                    continue;
                }

                let mut dist = vec![0.0; g.num_joint_actions()];
                for (pi, &i) in x.iter().zip(&s1) {
                    for (pj, &j) in y.iter().zip(&s2) {
                        dist[space.encode(&[i, j])] = pi.max(0.0) * pj.max(0.0);
                    }
                }
                return Some(clean_dist(dist));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bimatrix(u1: [[f64; 2]; 2], u2: [[f64; 2]; 2]) -> GameMatrix {
        let flat = |u: [[f64; 2]; 2]| vec![u[0][0], u[0][1], u[1][0], u[1][1]];
        GameMatrix::new(vec![2, 2], vec![flat(u1), flat(u2)]).unwrap()
    }

    fn matching_pennies() -> GameMatrix {
        bimatrix(
            [[1.0, -1.0], [-1.0, 1.0]],
            [[-1.0, 1.0], [1.0, -1.0]],
        )
    }

    fn prisoners_dilemma() -> GameMatrix {
        // Action 0 = cooperate, 1 = defect; defect strictly dominant.
        bimatrix(
            [[3.0, 0.0], [5.0, 1.0]],
            [[3.0, 5.0], [0.0, 1.0]],
        )
    }

    fn dominant_2x2() -> GameMatrix {
        // Action 0 strictly dominant for both agents.
        bimatrix(
            [[4.0, 3.0], [1.0, 0.0]],
            [[4.0, 1.0], [3.0, 0.0]],
        )
    }

    fn chicken() -> GameMatrix {
        // dare/dare 0,0; dare/chicken 7,2; chicken/dare 2,7; chicken/chicken 6,6.
        bimatrix(
            [[0.0, 7.0], [2.0, 6.0]],
            [[0.0, 2.0], [7.0, 6.0]],
        )
    }

    fn marginals(g: &GameMatrix, x: &[f64]) -> Vec<Vec<f64>> {
        let space = g.space();
        (0..g.num_agents())
            .map(|m| {
                let mut out = vec![0.0; g.action_sizes()[m]];
                for (a, &p) in x.iter().enumerate() {
                    out[space.action_of(a, m)] += p;
                }
                out
            })
            .collect()
    }

    #[test]
    fn cce_dominant_strategy_point_mass() {
        let eq = solve_cce(&dominant_2x2()).unwrap();
        assert!((eq.dist[0] - 1.0).abs() < 1e-9, "dist = {:?}", eq.dist);
        assert!(eq.max_violation <= EQ_TOL);
    }

    #[test]
    fn cce_matching_pennies_uniform_marginals_zero_value() {
        let g = matching_pennies();
        let eq = solve_cce(&g).unwrap();
        assert!(eq.max_violation <= EQ_TOL);
        for marg in marginals(&g, &eq.dist) {
            for &p in &marg {
                assert!((p - 0.5).abs() <= 1e-8, "marginals {marg:?}");
            }
        }
        for m in 0..2 {
            let value: f64 = eq.dist.iter().enumerate().map(|(a, &p)| p * g.payoff(m, a)).sum();
            assert!(value.abs() <= 1e-8);
        }
    }

    #[test]
    fn cce_single_agent_argmax() {
        let g = GameMatrix::new(vec![3], vec![vec![0.2, 0.9, 0.5]]).unwrap();
        let eq = solve_cce(&g).unwrap();
        assert!((eq.dist[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ce_dominant_strategy_point_mass() {
        let eq = solve_ce(&dominant_2x2()).unwrap();
        assert!((eq.dist[0] - 1.0).abs() < 1e-9);
        assert!(eq.max_violation <= EQ_TOL);
    }

    #[test]
    fn ce_chicken_beats_pure_ne_welfare() {
        let g = chicken();
        let eq = solve_ce(&g).unwrap();
        assert!(eq.max_violation <= EQ_TOL);
        // Enumerate pure NE and their welfare: (dare, chicken) and
        // (chicken, dare), welfare 9 each.
        let space = g.space();
        let mut best_pure_ne_welfare = f64::NEG_INFINITY;
        'outer: for a in 0..g.num_joint_actions() {
            for m in 0..2 {
                for b in 0..2 {
                    if g.payoff(m, space.with_action(a, m, b)) > g.payoff(m, a) + 1e-12 {
                        continue 'outer;
                    }
                }
            }
            best_pure_ne_welfare = best_pure_ne_welfare.max(g.payoff(0, a) + g.payoff(1, a));
        }
        assert!((best_pure_ne_welfare - 9.0).abs() < 1e-12);
        let welfare: f64 = eq
            .dist
            .iter()
            .enumerate()
            .map(|(a, &p)| p * (g.payoff(0, a) + g.payoff(1, a)))
            .sum();
        assert!(welfare >= best_pure_ne_welfare - 1e-9, "welfare = {welfare}");
        // CE constraints imply CCE constraints.
        assert!(verify(&g, &eq.dist, EquilibriumKind::Cce) <= EQ_TOL);
        // The CCE tie-break also reaches at least the best pure equilibrium.
        let cce = solve_cce(&g).unwrap();
        let cce_welfare: f64 = cce
            .dist
            .iter()
            .enumerate()
            .map(|(a, &p)| p * (g.payoff(0, a) + g.payoff(1, a)))
            .sum();
        assert!(cce_welfare >= best_pure_ne_welfare - 1e-9);
    }

    #[test]
    fn ne_prisoners_dilemma_defects() {
        let eq = solve_ne(&prisoners_dilemma()).unwrap();
        assert!((eq.dist[3] - 1.0).abs() < 1e-9, "dist = {:?}", eq.dist);
        assert!(eq.max_violation <= EQ_TOL);
    }

    #[test]
    fn ne_matching_pennies_uniform_mix() {
        let g = matching_pennies();
        let eq = solve_ne(&g).unwrap();
        assert!(eq.max_violation <= EQ_TOL);
        for marg in marginals(&g, &eq.dist) {
            for &p in &marg {
                assert!((p - 0.5).abs() <= 1e-8);
            }
        }
        // Product structure.
        let marg = marginals(&g, &eq.dist);
        let space = g.space();
        for a in 0..4 {
            let prod = marg[0][space.action_of(a, 0)] * marg[1][space.action_of(a, 1)];
            assert!((eq.dist[a] - prod).abs() < 1e-8);
        }
    }

    #[test]
    fn ne_three_agent_pure_profile() {
        // Payoff 1 for everyone at (0,0,0), else 0: a pure NE.
        let a_total = 8;
        let mut tensor = vec![0.0; a_total];
        tensor[0] = 1.0;
        let g = GameMatrix::new(vec![2, 2, 2], vec![tensor.clone(), tensor.clone(), tensor]).unwrap();
        let eq = solve_ne(&g).unwrap();
        assert!((eq.dist[0] - 1.0).abs() < 1e-12);
        assert!(verify(&g, &eq.dist, EquilibriumKind::Ce) <= EQ_TOL);
        assert!(verify(&g, &eq.dist, EquilibriumKind::Cce) <= EQ_TOL);
    }

    #[test]
    fn verify_reports_defection_gain() {
        let g = prisoners_dilemma();
        // Point mass on (cooperate, cooperate): defection gains 5 - 3 = 2.
        let x = vec![1.0, 0.0, 0.0, 0.0];
        let v = verify(&g, &x, EquilibriumKind::Ne);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn verify_constant_game_is_exact() {
        let g = GameMatrix::new(vec![2, 2], vec![vec![1.0; 4], vec![1.0; 4]]).unwrap();
        let x = vec![0.25; 4];
        for kind in [EquilibriumKind::Ne, EquilibriumKind::Ce, EquilibriumKind::Cce] {
            assert!(verify(&g, &x, kind).abs() < 1e-15);
        }
    }

    #[test]
    fn scale_invariance_of_violations() {
        let g = chicken();
        let eq = solve_ce(&g).unwrap();
        let violation = verify(&g, &eq.dist, EquilibriumKind::Ce);
        for c in [2.0, 10.0, 0.5] {
            let scaled = GameMatrix::new(
                vec![2, 2],
                vec![
                    g.payoffs[0].iter().map(|u| c * u).collect(),
                    g.payoffs[1].iter().map(|u| c * u).collect(),
                ],
            )
            .unwrap();
            let scaled_violation = verify(&scaled, &eq.dist, EquilibriumKind::Ce);
            assert!((scaled_violation - c * violation).abs() < 1e-9 * c.max(1.0));
        }
    }

    #[test]
    fn solver_outputs_are_finite_distributions() {
        let g = chicken();
        for eq in [solve_cce(&g).unwrap(), solve_ce(&g).unwrap(), solve_ne(&g).unwrap()] {
            assert!(eq.dist.iter().all(|p| p.is_finite() && *p >= 0.0));
            let total: f64 = eq.dist.iter().sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
    }
}
