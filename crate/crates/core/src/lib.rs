//! Risk-sensitive multi-agent reinforcement learning in tabular general-sum
//! Markov games.
//!
//! The crate provides:
//!
//! * [`game_model`] — the tabular Markov-game data model (`MgSpec`), joint
//!   policies, validation, and environment stepping;
//! * [`risk_dp`] — exact dynamic-programming oracles for entropic-risk
//!   values: policy evaluation, best response, and best strategy
//!   modification;
//! * [`eq_solvers`] — one-step normal-form equilibrium solvers (NE / CE /
//!   CCE) over signed exponential payoffs, backed by a self-contained dense
//!   simplex;
//! * [`mars_vi`] — the MARS-VI self-play learner: optimistic/pessimistic
//!   exponential value iteration with sign-dependent bonuses and
//!   certified-policy tracking;
//! * [`regret_eval`] — the risk-dependent factor Φ, naive and risk-balanced
//!   regret ledgers, and (β, ε)-approximate-equilibrium certification;
//! * [`instances`] — generators for the equilibrium-bias instance, the
//!   three-state bandit lower-bound instance, and seeded random games;
//! * [`harness`] — a batch experiment runner with CSV/JSON artifacts and
//!   log-log slope fits.
//!
//! All state, action, and step indices are 0-based throughout the crate;
//! episode numbers in emitted artifacts are 1-based.

pub mod eq_solvers;
pub mod game_model;
pub mod harness;
pub mod instances;
pub mod mars_vi;
pub mod regret_eval;
pub mod risk_dp;

pub use eq_solvers::{EquilibriumDist, EquilibriumKind, GameMatrix};
pub use game_model::{JointActionSpace, JointPolicy, MgSpec, Trajectory};
pub use mars_vi::{CertifiedPolicy, LearnerState, MarsViConfig, RunOutput};
pub use regret_eval::RegretLedger;
