//! Risk-dependent normalization, per-episode value gaps, and regret ledgers.
//!
//! The risk-dependent factor is `Phi_u(beta) = (e^{|beta| u} - 1) / (|beta| u)`:
//! even in `beta`, strictly greater than 1, increasing in both `|beta|` and
//! `u`, with limit 1 as `beta -> 0`. The naive regret accumulates the raw
//! per-episode worst-agent gap; the risk-balanced regret divides each agent's
//! gap by `Phi_H(beta_m)` before taking the worst, so that agents with very
//! different risk parameters are compared on the same scale.
//!
//! Gaps are computed from the exact DP oracles in [`crate::risk_dp`], in the
//! log domain with a single terminal `ln_1p`, which avoids catastrophic
//! cancellation when the gap is tiny.

use crate::eq_solvers::EquilibriumKind;
use crate::game_model::{JointPolicy, MgSpec};
use crate::risk_dp;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegretError {
    #[error("phi requires u > 0 and beta != 0 (got u={u}, beta={beta})")]
    PhiDomain { u: f64, beta: f64 },
    #[error("NE gaps require a product policy")]
    NotProductPolicy,
}

/// Risk-dependent factor `Phi_u(beta) = (e^{|beta| u} - 1) / (|beta| u)`.
pub fn phi(u: f64, beta: f64) -> Result<f64, RegretError> {
    if u <= 0.0 || beta == 0.0 || !u.is_finite() || !beta.is_finite() {
        return Err(RegretError::PhiDomain { u, beta });
    }
    let z = beta.abs() * u;
    Ok(z.exp_m1() / z)
}

/// Index of the most risk-sensitive agent (largest `|beta|`, lowest index on
/// ties) and its risk parameter.
pub fn most_risk_sensitive(betas: &[f64]) -> (usize, f64) {
    let mut index = 0;
    for (m, &beta) in betas.iter().enumerate() {
        if beta.abs() > betas[index].abs() {
            index = m;
        }
    }
    (index, betas[index])
}

/// Log-domain gap between two exponential start values of the same agent:
/// `(1/beta) log(target / base)` via `ln_1p`.
fn log_gap(beta: f64, target_exp: f64, base_exp: f64) -> f64 {
    ((target_exp - base_exp) / base_exp).ln_1p() / beta
}

/// Per-agent raw value gaps of a policy snapshot at `(1, s_1)`.
///
/// * NE / CCE: best-response value minus evaluation value;
/// * CE: best-modification value minus evaluation value.
///
/// The NE kind requires a product policy.
pub fn episode_gaps(
    spec: &MgSpec,
    policy: &JointPolicy,
    kind: EquilibriumKind,
) -> Result<Vec<f64>, RegretError> {
    if matches!(kind, EquilibriumKind::Ne) && !policy.is_product {
        return Err(RegretError::NotProductPolicy);
    }
    let s1 = spec.initial_state;
    let mut gaps = Vec::with_capacity(spec.num_agents());
    for m in 0..spec.num_agents() {
        let beta = spec.betas[m];
        let base = risk_dp::eval_policy(spec, policy, m).exp_value(0, s1);
        let target = match kind {
            EquilibriumKind::Ne | EquilibriumKind::Cce => {
                risk_dp::best_response(spec, policy, m).table.exp_value(0, s1)
            }
            EquilibriumKind::Ce => {
                risk_dp::best_modification(spec, policy, m).table.exp_value(0, s1)
            }
        };
        gaps.push(log_gap(beta, target, base));
    }
    Ok(gaps)
}

/// `(beta, eps)`-approximate-equilibrium certificate: the largest
/// `Phi_H(beta_m)`-normalized gap over agents.
pub fn certify_approx(
    spec: &MgSpec,
    policy: &JointPolicy,
    kind: EquilibriumKind,
) -> Result<f64, RegretError> {
    let gaps = episode_gaps(spec, policy, kind)?;
    let h = spec.horizon as f64;
    let mut eps = f64::NEG_INFINITY;
    for (m, &g) in gaps.iter().enumerate() {
        eps = eps.max(g / phi(h, spec.betas[m])?);
    }
    Ok(eps)
}

/// One recorded ledger row.
#[derive(Debug, Clone)]
pub struct LedgerRow {
    /// Episode number, 1-based.
    pub episode: usize,
    pub naive_inc: f64,
    pub balanced_inc: f64,
    pub naive_cum: f64,
    pub balanced_cum: f64,
    /// Per-agent raw gaps.
    pub gaps: Vec<f64>,
    /// Certified epsilon, present only on episodes where the learner
    /// updated its certified policy.
    pub eps_certified: Option<f64>,
    /// Learner's running certified gap, when available.
    pub delta_v: Option<f64>,
}

/// Accumulates naive and risk-balanced regrets over recorded episodes.
#[derive(Debug, Clone)]
pub struct RegretLedger {
    pub kind: EquilibriumKind,
    pub betas: Vec<f64>,
    pub horizon: usize,
    /// `Phi_H(beta_m)` per agent.
    pub phis: Vec<f64>,
    pub rows: Vec<LedgerRow>,
    /// Per-agent cumulative raw gaps (for per-agent regret readouts).
    pub per_agent_cum: Vec<f64>,
    naive_cum: f64,
    balanced_cum: f64,
}

impl RegretLedger {
    pub fn new(kind: EquilibriumKind, betas: &[f64], horizon: usize) -> Result<Self, RegretError> {
        let h = horizon as f64;
        let phis = betas.iter().map(|&b| phi(h, b)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            kind,
            betas: betas.to_vec(),
            horizon,
            phis,
            rows: Vec::new(),
            per_agent_cum: vec![0.0; betas.len()],
            naive_cum: 0.0,
            balanced_cum: 0.0,
        })
    }

    /// Folds one episode's gaps into the cumulative sums and records a row.
    pub fn accumulate(&mut self, episode: usize, gaps: Vec<f64>) -> &LedgerRow {
        debug_assert_eq!(gaps.len(), self.betas.len());
        let naive_inc = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let balanced_inc = gaps
            .iter()
            .zip(&self.phis)
            .map(|(g, p)| g / p)
            .fold(f64::NEG_INFINITY, f64::max);
        for (cum, &g) in self.per_agent_cum.iter_mut().zip(&gaps) {
            *cum += g;
        }
        self.naive_cum += naive_inc;
        self.balanced_cum += balanced_inc;
        self.rows.push(LedgerRow {
            episode,
            naive_inc,
            balanced_inc,
            naive_cum: self.naive_cum,
            balanced_cum: self.balanced_cum,
            gaps,
            eps_certified: None,
            delta_v: None,
        });
        self.rows.last().expect("just pushed")
    }

    pub fn naive_cum(&self) -> f64 {
        self.naive_cum
    }

    pub fn balanced_cum(&self) -> f64 {
        self.balanced_cum
    }

    /// CSV header for `num_agents` gap columns.
    pub fn csv_header(num_agents: usize) -> String {
        let mut header = String::from("episode,kind,naive_inc,balanced_inc,naive_cum,balanced_cum");
        for m in 1..=num_agents {
            header.push_str(&format!(",gap_agent_{m}"));
        }
        header.push_str(",eps_certified,delta_v");
        header
    }

    /// Serializes all rows in the CSV schema (one row per recorded episode).
    pub fn to_csv(&self) -> String {
        let mut out = Self::csv_header(self.betas.len());
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}",
                row.episode, self.kind, row.naive_inc, row.balanced_inc, row.naive_cum, row.balanced_cum
            ));
            for g in &row.gaps {
                out.push_str(&format!(",{g}"));
            }
            match row.eps_certified {
                Some(eps) => out.push_str(&format!(",{eps}")),
                None => out.push(','),
            }
            match row.delta_v {
                Some(dv) => out.push_str(&format!(",{dv}")),
                None => out.push(','),
            }
            out.push('\n');
        }
        out
    }
}
