//! Self-contained dense two-phase simplex with Bland's anti-cycling rule.
//!
//! Solves `maximize c.x  subject to  A x {<=, =, >=} b, x >= 0` on a dense
//! tableau. Bland's rule (lowest-index entering column, lowest-index basic
//! variable on ratio ties) makes the pivot sequence, and hence the returned
//! vertex, deterministic and cycle-free.

use thiserror::Error;

/// Feasibility / pivot tolerance. Callers are expected to pre-scale inputs
/// to O(1) magnitudes.
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn le(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self { coeffs, relation: Relation::Le, rhs }
    }
    pub fn eq(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self { coeffs, relation: Relation::Eq, rhs }
    }
    pub fn ge(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self { coeffs, relation: Relation::Ge, rhs }
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LpError {
    #[error("infeasible")]
    Infeasible,
    #[error("unbounded")]
    Unbounded,
    #[error("iteration limit reached")]
    IterationLimit,
    #[error("bad shape: {0}")]
    BadShape(String),
}

struct Tableau {
    /// `rows x (cols + 1)`; last column is the rhs.
    data: Vec<Vec<f64>>,
    /// Basic variable per row.
    basis: Vec<usize>,
    cols: usize,
    iterations: usize,
}

impl Tableau {
    fn rhs(&self, row: usize) -> f64 {
        self.data[row][self.cols]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.data[row][col];
        for v in self.data[row].iter_mut() {
            *v /= piv;
        }
        for r in 0..self.data.len() {
            if r == row {
                continue;
            }
            let factor = self.data[r][col];
            if factor != 0.0 {
                for c in 0..=self.cols {
                    self.data[r][c] -= factor * self.data[row][c];
                }
                self.data[r][col] = 0.0;
            }
        }
        self.basis[row] = col;
        self.iterations += 1;
    }

    /// One simplex phase maximizing `obj` (a reduced-cost row updated in
    /// place at `self.data[obj_row]`, stored negated tableau-style).
    fn run_phase(&mut self, obj_row: usize, active_cols: usize, limit: usize) -> Result<(), LpError> {
        loop {
            if self.iterations > limit {
                return Err(LpError::IterationLimit);
            }
            // Bland: entering = lowest-index column with negative cost row
            // entry (i.e. positive reduced cost for maximization).
            let mut entering = None;
            for c in 0..active_cols {
                if self.data[obj_row][c] < -EPS {
                    entering = Some(c);
                    break;
                }
            }
            let Some(col) = entering else {
                return Ok(());
            };
            // Ratio test; ties by lowest basic-variable index.
            let mut leaving: Option<(usize, f64)> = None;
            for r in 0..self.basis.len() {
                let a = self.data[r][col];
                if a > EPS {
                    let ratio = self.rhs(r) / a;
                    let replace = match leaving {
                        None => true,
                        Some((best_r, best)) => {
                            ratio < best - EPS
                                || (ratio < best + EPS && self.basis[r] < self.basis[best_r])
                        }
                    };
                    if replace {
                        leaving = Some((r, ratio));
                    }
                }
            }
            let Some((row, _)) = leaving else {
                return Err(LpError::Unbounded);
            };
            self.pivot(row, col);
        }
    }
}

/// Maximizes `objective . x` subject to `constraints` and `x >= 0`.
///
/// Constraint residuals at the returned vertex are at the simplex tolerance
/// (1e-9 on O(1)-scaled data). Identical inputs produce identical vertices.
pub fn lp_solve(objective: &[f64], constraints: &[LinearConstraint]) -> Result<LpSolution, LpError> {
    let n = objective.len();
    for (i, c) in constraints.iter().enumerate() {
        if c.coeffs.len() != n {
            return Err(LpError::BadShape(format!(
                "constraint {i} has {} coefficients, expected {n}",
                c.coeffs.len()
            )));
        }
        if !c.rhs.is_finite() || c.coeffs.iter().any(|v| !v.is_finite()) {
            return Err(LpError::BadShape(format!("constraint {i} has non-finite entries")));
        }
    }
    if objective.iter().any(|v| !v.is_finite()) {
        return Err(LpError::BadShape("objective has non-finite entries".into()));
    }

    let m = constraints.len();
    // Normalize rows to nonnegative rhs, then count slack/artificial columns.
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = constraints
        .iter()
        .map(|c| {
            if c.rhs < 0.0 {
                let flipped = match c.relation {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
                (c.coeffs.iter().map(|v| -v).collect(), flipped, -c.rhs)
            } else {
                (c.coeffs.clone(), c.relation, c.rhs)
            }
        })
        .collect();

    let num_slack = rows
        .iter()
        .filter(|(_, rel, _)| matches!(rel, Relation::Le | Relation::Ge))
        .count();
    let num_art = rows
        .iter()
        .filter(|(_, rel, _)| matches!(rel, Relation::Ge | Relation::Eq))
        .count();
    let cols = n + num_slack + num_art;

    // Rows 0..m are constraints; row m is the phase-2 objective; row m+1 the
    // phase-1 objective (present only while artificials exist).
    let mut data = vec![vec![0.0; cols + 1]; m + 2];
    let mut basis = vec![0usize; m];
    let mut slack_at = n;
    let mut art_at = n + num_slack;
    let mut art_cols = Vec::with_capacity(num_art);
    for (r, (coeffs, rel, rhs)) in rows.drain(..).enumerate() {
        data[r][..n].copy_from_slice(&coeffs);
        data[r][cols] = rhs;
        match rel {
            Relation::Le => {
                data[r][slack_at] = 1.0;
                basis[r] = slack_at;
                slack_at += 1;
            }
            Relation::Ge => {
                data[r][slack_at] = -1.0;
                slack_at += 1;
                data[r][art_at] = 1.0;
                basis[r] = art_at;
                art_cols.push(art_at);
                art_at += 1;
            }
            Relation::Eq => {
                data[r][art_at] = 1.0;
                basis[r] = art_at;
                art_cols.push(art_at);
                art_at += 1;
            }
        }
    }
    // Phase-2 objective row: negated costs.
    for j in 0..n {
        data[m][j] = -objective[j];
    }
    // Phase-1 objective: maximize -(sum of artificials). Express the reduced
    // costs by subtracting each artificial's row from the objective row.
    if num_art > 0 {
        for &c in &art_cols {
            data[m + 1][c] = 1.0;
        }
        for r in 0..m {
            if art_cols.contains(&basis[r]) {
                for c in 0..=cols {
                    let v = data[r][c];
                    if v != 0.0 {
                        data[m + 1][c] -= v;
                    }
                }
            }
        }
    }

    let limit = 10_000 + 50 * (m + cols) * (m + cols);
    let mut tab = Tableau { data, basis, cols, iterations: 0 };

    if num_art > 0 {
        tab.run_phase(m + 1, cols, limit)?;
        let phase1 = -tab.data[m + 1][cols];
        if phase1.abs() > 1e-7 {
            return Err(LpError::Infeasible);
        }
        // Drive remaining basic artificials out of the basis when possible.
        for r in 0..m {
            if art_cols.contains(&tab.basis[r]) {
                let col = (0..n + num_slack).find(|&c| tab.data[r][c].abs() > EPS);
                if let Some(c) = col {
                    tab.pivot(r, c);
                }
                // A row with no eligible pivot is redundant; its basic
                // artificial stays at value zero and is harmless.
            }
        }
        // Retire artificial columns so phase 2 never re-enters them.
        for &c in &art_cols {
            for r in 0..m {
                tab.data[r][c] = 0.0;
            }
            tab.data[m][c] = 0.0;
        }
    }

    tab.run_phase(m, n + num_slack, limit)?;

    let mut x = vec![0.0; n];
    for (r, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] = tab.rhs(r);
        }
    }
    let objective_value = objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution {
        x,
        objective: objective_value,
        iterations: tab.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_variable_bound() {
        // maximize x1 s.t. x1 <= 3 -> 3.
        let sol = lp_solve(&[1.0], &[LinearConstraint::le(vec![1.0], 3.0)]).unwrap();
        assert!((sol.objective - 3.0).abs() < 1e-12);
        assert!((sol.x[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn equality_and_ge_constraints() {
        // maximize x + 2y s.t. x + y = 1, y >= 0.25 -> x = 0.75? No:
        // objective prefers y, so y = 0.75... y unbounded? x,y >= 0 and
        // x + y = 1 => best is y = 1, but y >= 0.25 does not bind. Optimum 2.
        let sol = lp_solve(
            &[1.0, 2.0],
            &[
                LinearConstraint::eq(vec![1.0, 1.0], 1.0),
                LinearConstraint::ge(vec![0.0, 1.0], 0.25),
            ],
        )
        .unwrap();
        assert!((sol.objective - 2.0).abs() < 1e-9);
        assert!((sol.x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible() {
        let err = lp_solve(
            &[1.0],
            &[
                LinearConstraint::le(vec![1.0], 1.0),
                LinearConstraint::ge(vec![1.0], 2.0),
            ],
        )
        .unwrap_err();
        assert_eq!(err, LpError::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let err = lp_solve(&[1.0, 0.0], &[LinearConstraint::le(vec![0.0, 1.0], 1.0)]).unwrap_err();
        assert_eq!(err, LpError::Unbounded);
    }

    #[test]
    fn degenerate_ties_are_reproducible() {
        // Two symmetric vertices attain the optimum; Bland's rule must pick
        // the same one every time.
        let objective = vec![1.0, 1.0];
        let constraints = vec![
            LinearConstraint::le(vec![1.0, 0.0], 1.0),
            LinearConstraint::le(vec![0.0, 1.0], 1.0),
            LinearConstraint::le(vec![1.0, 1.0], 1.0),
        ];
        let a = lp_solve(&objective, &constraints).unwrap();
        for _ in 0..5 {
            let b = lp_solve(&objective, &constraints).unwrap();
            assert_eq!(a.x, b.x);
            assert_eq!(a.iterations, b.iterations);
        }
    }

    #[test]
    fn feasibility_with_zero_objective() {
        // Pure feasibility: distribution over 3 atoms with a mean constraint.
        let sol = lp_solve(
            &[0.0, 0.0, 0.0],
            &[
                LinearConstraint::eq(vec![1.0, 1.0, 1.0], 1.0),
                LinearConstraint::ge(vec![0.0, 1.0, 2.0], 1.0),
            ],
        )
        .unwrap();
        let total: f64 = sol.x.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        let mean = sol.x[1] + 2.0 * sol.x[2];
        assert!(mean >= 1.0 - 1e-9);
    }

    #[test]
    fn negative_rhs_is_normalized() {
        // maximize -x s.t. -x <= -2  (i.e. x >= 2) -> x = 2.
        let sol = lp_solve(&[-1.0], &[LinearConstraint::le(vec![-1.0], -2.0)]).unwrap();
        assert!((sol.x[0] - 2.0).abs() < 1e-9);
    }
}
