//! Batch experiment runner: loads a JSON config, executes seeded MARS-VI
//! runs (or static evaluations of a fixed policy), drives regret evaluation
//! over the snapshot grid, and writes per-seed CSVs, plot-ready data files,
//! and an aggregate summary JSON.
//!
//! Wall-clock timings are reported on the returned summary value but are
//! deliberately kept out of the serialized artifacts so that reruns of the
//! same config and seeds produce byte-identical files.

use crate::eq_solvers::EquilibriumKind;
use crate::game_model::{validate_spec, JointPolicy, MgSpec};
use crate::instances::{self, InstanceParams};
use crate::mars_vi::{self, MarsViConfig};
use crate::regret_eval::{self, RegretLedger};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config validation error: {0}")]
    Validation(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("instance error: {0}")]
    Instance(#[from] instances::InstanceError),
    #[error("seed {seed} failed: {message}")]
    SeedFailure { seed: u64, message: String },
    #[error("{failures} of {total} seeds failed: {details}")]
    SeedFailures {
        failures: usize,
        total: usize,
        details: String,
    },
    #[error("insufficient data for slope fit: {0}")]
    InsufficientData(String),
}

/// Where the experiment's game comes from: a generator invocation or a
/// previously written MgSpec JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceRef {
    Path {
        path: String,
    },
    Inline(InstanceParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    /// MARS-VI self-play.
    Learn,
    /// Evaluate a fixed policy for every episode (no learning).
    Static,
}

fn default_c() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    0.1
}
fn default_stride() -> usize {
    1
}
fn default_solver() -> EquilibriumKind {
    EquilibriumKind::Cce
}
fn default_mode() -> RunMode {
    RunMode::Learn
}
fn default_workers() -> usize {
    1
}
fn default_slope_window() -> f64 {
    0.5
}

/// Experiment configuration, deserialized strictly (unknown fields are
/// rejected). Defaults: `c = 1.0`, `delta = 0.1`, `snapshot_stride = 1`,
/// `solver = cce`, `mode = learn`, `regret_kinds = [solver]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceRef,
    /// Number of episodes K.
    pub episodes: usize,
    #[serde(default = "default_solver")]
    pub solver: EquilibriumKind,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub regret_kinds: Option<Vec<EquilibriumKind>>,
    #[serde(default = "default_mode")]
    pub mode: RunMode,
    /// Fixed policy for static mode; defaults to the canonical biased policy
    /// when the instance is an inline bias generator.
    #[serde(default)]
    pub policy_path: Option<String>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Fraction of the snapshot grid (from the end) used by the slope fit.
    #[serde(default = "default_slope_window")]
    pub slope_window: f64,
}

impl ExperimentConfig {
    pub fn regret_kinds(&self) -> Vec<EquilibriumKind> {
        self.regret_kinds.clone().unwrap_or_else(|| vec![self.solver])
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.episodes == 0 {
            return Err(HarnessError::Validation("episodes (K) must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Validation("seed list must be nonempty".into()));
        }
        if self.snapshot_stride == 0 {
            return Err(HarnessError::Validation("snapshot_stride must be >= 1".into()));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(HarnessError::Validation("bonus constant c must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(HarnessError::Validation("delta must lie in (0, 1]".into()));
        }
        if !(self.slope_window > 0.0 && self.slope_window <= 1.0) {
            return Err(HarnessError::Validation("slope_window must lie in (0, 1]".into()));
        }
        if let InstanceRef::Path { path } = &self.instance {
            if !Path::new(path).exists() {
                return Err(HarnessError::Validation(format!(
                    "instance file {path} does not exist"
                )));
            }
        }
        for kind in self.regret_kinds() {
            if matches!(kind, EquilibriumKind::Ne) && !matches!(self.solver, EquilibriumKind::Ne) {
                return Err(HarnessError::Validation(
                    "NE regret evaluation requires the NE solver (product policies)".into(),
                ));
            }
        }
        Ok(())
    }

    /// Resolves the referenced game (generating or loading it).
    pub fn resolve_spec(&self) -> Result<(MgSpec, Option<JointPolicy>), HarnessError> {
        match &self.instance {
            InstanceRef::Path { path } => {
                let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
                    path: path.clone(),
                    source,
                })?;
                let spec = MgSpec::from_json(&text)
                    .map_err(|e| HarnessError::Parse(format!("{path}: {e}")))?;
                let report = validate_spec(&spec);
                if !report.is_empty() {
                    let lines: Vec<String> = report.iter().map(|v| v.to_string()).collect();
                    return Err(HarnessError::Validation(format!(
                        "{path} fails validation: {}",
                        lines.join("; ")
                    )));
                }
                Ok((spec, None))
            }
            InstanceRef::Inline(params) => {
                let (descriptor, fixture) = generate(params)?;
                Ok((descriptor.spec, fixture))
            }
        }
    }
}

/// Runs the generator named by the parameters; the second component is the
/// canonical biased policy for bias instances.
pub fn generate(
    params: &InstanceParams,
) -> Result<(instances::InstanceDescriptor, Option<JointPolicy>), HarnessError> {
    match params {
        InstanceParams::Bias {
            num_agents,
            betas,
            horizon,
            episodes,
        } => {
            let (descriptor, biased) = instances::bias_instance(*num_agents, betas, *horizon, *episodes)?;
            Ok((descriptor, Some(biased)))
        }
        InstanceParams::LowerBound {
            beta_star,
            horizon,
            episodes,
            machine,
            regime,
            num_agents,
        } => {
            let descriptor =
                instances::lower_bound_mg(*beta_star, *horizon, *episodes, *machine, *regime, *num_agents)?;
            Ok((descriptor, None))
        }
        InstanceParams::Random {
            seed,
            states,
            horizon,
            action_sizes,
            betas,
            sparsity,
        } => {
            let descriptor = instances::random_mg(*seed, *states, *horizon, action_sizes, betas, *sparsity)?;
            Ok((descriptor, None))
        }
    }
}

/// Loads and validates an experiment config, with all defaults materialized.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| HarnessError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Ordinary least squares on `(log k, log value)` over the trailing
/// `window` fraction of the series. Requires at least 8 points with
/// positive values inside the window.
pub fn fit_slope_windowed(points: &[(f64, f64)], window: f64) -> Result<f64, HarnessError> {
    let start = ((points.len() as f64) * (1.0 - window)).floor() as usize;
    let tail = &points[start.min(points.len())..];
    if tail.len() < 8 {
        return Err(HarnessError::InsufficientData(format!(
            "slope fit needs >= 8 points in the window, got {}",
            tail.len()
        )));
    }
    if tail.iter().any(|&(k, v)| k <= 0.0 || v <= 0.0) {
        return Err(HarnessError::InsufficientData(
            "slope fit requires positive abscissas and values".into(),
        ));
    }
    let n = tail.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(k, v) in tail {
        let (x, y) = (k.ln(), v.ln());
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return Err(HarnessError::InsufficientData("degenerate abscissas".into()));
    }
    Ok((n * sxy - sx * sy) / denom)
}

/// Slope over the second half of the grid (the default window).
pub fn fit_slope(points: &[(f64, f64)]) -> Result<f64, HarnessError> {
    fit_slope_windowed(points, 0.5)
}

/// Per-seed outcome; wall time is reported in memory only.
#[derive(Debug, Clone, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub kind: EquilibriumKind,
    pub final_naive_cum: f64,
    pub final_balanced_cum: f64,
    pub eps_certified: Option<f64>,
    pub delta_v: Option<f64>,
    pub slope: Option<f64>,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

fn aggregate(values: &[f64]) -> Option<Aggregate> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Some(Aggregate {
        median,
        min: sorted[0],
        max: sorted[n - 1],
    })
}

/// Aggregate summary across seeds (one block per evaluated regret kind).
#[derive(Debug, Clone, Serialize)]
pub struct KindSummary {
    pub kind: EquilibriumKind,
    pub per_seed: Vec<SeedOutcome>,
    pub naive_final: Option<Aggregate>,
    pub balanced_final: Option<Aggregate>,
    pub slope: Option<Aggregate>,
    pub eps_certified: Option<Aggregate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub episodes: usize,
    pub solver: EquilibriumKind,
    pub c: f64,
    pub delta: f64,
    pub snapshot_stride: usize,
    pub mode: RunMode,
    pub kinds: Vec<KindSummary>,
}

impl RunSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Evaluates one seed: runs the learner (or replicates the static policy),
/// folds gaps into ledgers per regret kind, and writes the seed's artifacts.
fn evaluate_seed(
    cfg: &ExperimentConfig,
    spec: &MgSpec,
    static_policy: Option<&JointPolicy>,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<SeedOutcome>, HarnessError> {
    let started = Instant::now();
    let kinds = cfg.regret_kinds();
    let mut ledgers: Vec<RegretLedger> = kinds
        .iter()
        .map(|&kind| RegretLedger::new(kind, &spec.betas, spec.horizon))
        .collect::<Result<_, _>>()
        .map_err(|e: regret_eval::RegretError| HarnessError::SeedFailure {
            seed,
            message: e.to_string(),
        })?;

    let mut eps_by_kind: Vec<Option<f64>> = vec![None; kinds.len()];
    let mut delta_v_final: Option<f64> = None;

    match cfg.mode {
        RunMode::Static => {
            let policy = static_policy.ok_or_else(|| HarnessError::SeedFailure {
                seed,
                message: "static mode requires a policy (policy_path or a bias instance)".into(),
            })?;
            for (ledger, (&kind, eps_slot)) in ledgers
                .iter_mut()
                .zip(kinds.iter().zip(eps_by_kind.iter_mut()))
            {
                let gaps = regret_eval::episode_gaps(spec, policy, kind).map_err(|e| {
                    HarnessError::SeedFailure { seed, message: e.to_string() }
                })?;
                let eps = regret_eval::certify_approx(spec, policy, kind).map_err(|e| {
                    HarnessError::SeedFailure { seed, message: e.to_string() }
                })?;
                *eps_slot = Some(eps);
                let k_total = cfg.episodes;
                for k in 1..=k_total {
                    let on_grid = k == 1 || k == k_total || (k - 1) % cfg.snapshot_stride == 0;
                    if !on_grid {
                        // Off-grid episodes still accumulate (piecewise-constant
                        // extension is exact here: the policy never changes).
                        ledger.accumulate(k, gaps.clone());
                        ledger.rows.pop();
                        continue;
                    }
                    ledger.accumulate(k, gaps.clone());
                }
            }
        }
        RunMode::Learn => {
            let learner_cfg = MarsViConfig {
                solver: cfg.solver,
                bonus_c: cfg.c,
                delta: cfg.delta,
                episodes: cfg.episodes,
                snapshot_stride: cfg.snapshot_stride,
            };
            let output = mars_vi::run(spec, &learner_cfg, seed).map_err(|e| {
                HarnessError::SeedFailure { seed, message: e.to_string() }
            })?;
            delta_v_final = Some(output.certified.delta_v);
            for (ledger, (&kind, eps_slot)) in ledgers
                .iter_mut()
                .zip(kinds.iter().zip(eps_by_kind.iter_mut()))
            {
                for record in &output.records {
                    let gaps =
                        regret_eval::episode_gaps(spec, &record.policy, kind).map_err(|e| {
                            HarnessError::SeedFailure { seed, message: e.to_string() }
                        })?;
                    ledger.accumulate(record.episode, gaps);
                    let row = ledger.rows.last_mut().expect("row just pushed");
                    row.delta_v = Some(record.delta_v);
                    if record.certified {
                        // Certified epsilon of the policy recorded at this
                        // episode, against the exact oracles.
                        let eps = regret_eval::certify_approx(spec, &record.policy, kind)
                            .map_err(|e| HarnessError::SeedFailure {
                                seed,
                                message: e.to_string(),
                            })?;
                        row.eps_certified = Some(eps);
                        *eps_slot = Some(eps);
                    }
                }
            }
        }
    }

    let wall_time = started.elapsed();
    let mut outcomes = Vec::with_capacity(kinds.len());
    for (ledger, (&kind, eps)) in ledgers.iter().zip(kinds.iter().zip(&eps_by_kind)) {
        let csv_path = out_dir.join(format!("{kind}_seed_{seed}.csv"));
        write_file(&csv_path, &ledger.to_csv())?;
        for (column, series) in [
            ("naive_cum", ledger.rows.iter().map(|r| (r.episode as f64, r.naive_cum)).collect::<Vec<_>>()),
            ("balanced_cum", ledger.rows.iter().map(|r| (r.episode as f64, r.balanced_cum)).collect::<Vec<_>>()),
        ] {
            let mut data = String::new();
            for (k, v) in &series {
                data.push_str(&format!("{k} {v}\n"));
            }
            write_file(&out_dir.join(format!("curve_{kind}_{column}_seed_{seed}.dat")), &data)?;
        }
        let slope_points: Vec<(f64, f64)> = ledger
            .rows
            .iter()
            .map(|r| (r.episode as f64, r.balanced_cum))
            .collect();
        let slope = fit_slope_windowed(&slope_points, cfg.slope_window).ok();
        outcomes.push(SeedOutcome {
            seed,
            kind,
            final_naive_cum: ledger.naive_cum(),
            final_balanced_cum: ledger.balanced_cum(),
            eps_certified: *eps,
            delta_v: delta_v_final,
            slope,
            wall_time,
        });
    }
    Ok(outcomes)
}

/// Runs the whole experiment: every seed, every regret kind, all artifacts.
///
/// Seeds execute in parallel up to `cfg.workers` OS threads; outputs are
/// seed-namespaced so the results are identical for any worker count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, HarnessError> {
    cfg.validate()?;
    let (spec, bias_fixture) = cfg.resolve_spec()?;
    let static_policy: Option<JointPolicy> = match (&cfg.mode, &cfg.policy_path) {
        (RunMode::Static, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
                path: path.clone(),
                source,
            })?;
            let policy = JointPolicy::from_json(&text)
                .map_err(|e| HarnessError::Parse(format!("{path}: {e}")))?;
            let report = policy.validate();
            if !report.is_empty() {
                return Err(HarnessError::Validation(format!(
                    "{path} fails validation: {}",
                    report.join("; ")
                )));
            }
            Some(policy)
        }
        (RunMode::Static, None) => bias_fixture,
        (RunMode::Learn, _) => None,
    };

    let out_dir = PathBuf::from(cfg.out_dir.clone().unwrap_or_else(|| "out".into()));
    fs::create_dir_all(&out_dir).map_err(|source| HarnessError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<Vec<SeedOutcome>, HarnessError>)>> =
        Mutex::new(Vec::new());
    let workers = cfg.workers.max(1).min(cfg.seeds.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= cfg.seeds.len() {
                    break;
                }
                let seed = cfg.seeds[idx];
                let outcome = evaluate_seed(cfg, &spec, static_policy.as_ref(), seed, &out_dir);
                results.lock().expect("no poisoned lock").push((idx, outcome));
            });
        }
    });

    let mut results = results.into_inner().expect("threads joined");
    results.sort_by_key(|(idx, _)| *idx);
    let total = results.len();
    let mut per_seed: Vec<Vec<SeedOutcome>> = Vec::new();
    let mut failures = Vec::new();
    for (idx, outcome) in results {
        match outcome {
            Ok(o) => per_seed.push(o),
            Err(e) => failures.push(format!("seed {}: {e}", cfg.seeds[idx])),
        }
    }
    if !failures.is_empty() {
        return Err(HarnessError::SeedFailures {
            failures: failures.len(),
            total,
            details: failures.join("; "),
        });
    }

    let kinds = cfg.regret_kinds();
    let mut kind_summaries = Vec::with_capacity(kinds.len());
    for (i, &kind) in kinds.iter().enumerate() {
        let outcomes: Vec<SeedOutcome> = per_seed.iter().map(|v| v[i].clone()).collect();
        let collect = |f: &dyn Fn(&SeedOutcome) -> Option<f64>| -> Vec<f64> {
            outcomes.iter().filter_map(f).collect()
        };
        kind_summaries.push(KindSummary {
            kind,
            naive_final: aggregate(&collect(&|o| Some(o.final_naive_cum))),
            balanced_final: aggregate(&collect(&|o| Some(o.final_balanced_cum))),
            slope: aggregate(&collect(&|o| o.slope)),
            eps_certified: aggregate(&collect(&|o| o.eps_certified)),
            per_seed: outcomes,
        });
    }
    let summary = RunSummary {
        episodes: cfg.episodes,
        solver: cfg.solver,
        c: cfg.c,
        delta: cfg.delta,
        snapshot_stride: cfg.snapshot_stride,
        mode: cfg.mode,
        kinds: kind_summaries,
    };
    write_file(&out_dir.join("summary.json"), &summary.to_json())?;
    Ok(summary)
}
