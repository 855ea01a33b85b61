//! Dense simplex solver for small linear programs.
//!
//! The solver keeps a condensed (Tucker) tableau: one row per constraint, one
//! column per nonbasic variable, so slack columns are never stored. Phase one
//! drives out artificials introduced for equality rows and rows whose slack
//! cannot start basic; phase two optimizes with Dantzig pricing. Ratio tests
//! follow Harris. A run of degenerate pivots triggers a small perturbation of
//! the right-hand side (primal) or the reduced costs (dual); the exact values
//! are carried through the pivots and restored afterwards, and a longer run
//! falls back to Bland's rule.
//!
//! Constraints added after a successful solve are expressed in the current
//! basis and re-optimized with the dual simplex method, which is what makes
//! the cutting-plane loop cheap: a new cut only breaks primal feasibility.
//!
//! All structural variables are nonnegative. Problems are maximizations.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex iteration limit reached")]
    IterationLimit,
}

#[derive(Debug, Clone, Copy)]
pub struct LpTolerances {
    /// Smallest tableau entry accepted as a pivot.
    pub pivot: f64,
    /// Primal feasibility tolerance on basic values.
    pub feasibility: f64,
    /// Dual feasibility tolerance on reduced costs.
    pub optimality: f64,
}

impl Default for LpTolerances {
    fn default() -> Self {
        Self {
            pivot: 1e-9,
            feasibility: 1e-9,
            optimality: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

#[derive(Debug, Clone)]
struct Constraint {
    coeffs: Vec<(usize, f64)>,
    relation: Relation,
    rhs: f64,
}

/// Variable labels. The derived ordering is the Bland ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Var {
    X(usize),
    Slack(usize),
    Artificial(usize),
}

#[derive(Debug, Clone)]
struct Tableau {
    cols: usize,
    /// Row-major, `rows.len() * cols` entries.
    t: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<Var>,
    nonbasis: Vec<Var>,
    cost: Vec<f64>,
    /// Unperturbed right-hand side while `rhs` carries an anti-degeneracy
    /// perturbation; pivots update both.
    rhs_true: Option<Vec<f64>>,
    /// Unperturbed reduced costs, likewise.
    cost_true: Option<Vec<f64>>,
}

impl Tableau {
    fn row(&self, i: usize) -> &[f64] {
        &self.t[i * self.cols..(i + 1) * self.cols]
    }

    fn pivot(&mut self, r: usize, k: usize) {
        let cols = self.cols;
        let p = self.t[r * cols + k];
        {
            let row = &mut self.t[r * cols..(r + 1) * cols];
            for v in row.iter_mut() {
                *v /= p;
            }
            row[k] = 1.0 / p;
        }
        self.rhs[r] /= p;
        if let Some(rt) = &mut self.rhs_true {
            rt[r] /= p;
        }
        let pivot_row: Vec<f64> = self.row(r).to_vec();
        let pivot_rhs = self.rhs[r];
        let pivot_rhs_true = self.rhs_true.as_ref().map(|rt| rt[r]);
        for i in 0..self.rhs.len() {
            if i == r {
                continue;
            }
            let f = self.t[i * cols + k];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * cols..(i + 1) * cols];
            for (v, &pv) in row.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            row[k] = -f * pivot_row[k];
            self.rhs[i] -= f * pivot_rhs;
            if let (Some(rt), Some(pr)) = (&mut self.rhs_true, pivot_rhs_true) {
                rt[i] -= f * pr;
            }
        }
        update_cost(&mut self.cost, k, &pivot_row);
        if let Some(ct) = &mut self.cost_true {
            update_cost(ct, k, &pivot_row);
        }
        std::mem::swap(&mut self.basis[r], &mut self.nonbasis[k]);
    }

    fn rhs_ok(&self, tol: f64) -> bool {
        self.rhs.iter().all(|&b| b >= -tol)
    }

    fn cost_ok(&self, tol: f64) -> bool {
        self.cost
            .iter()
            .zip(&self.nonbasis)
            .all(|(&c, v)| c <= tol || matches!(v, Var::Artificial(_)))
    }

    fn remove_row(&mut self, r: usize) {
        let cols = self.cols;
        self.t.drain(r * cols..(r + 1) * cols);
        self.rhs.remove(r);
        self.basis.remove(r);
    }

    fn remove_columns(&mut self, drop: &[bool]) {
        let keep: Vec<usize> = (0..self.cols).filter(|&k| !drop[k]).collect();
        let mut t = Vec::with_capacity(self.rhs.len() * keep.len());
        for i in 0..self.rhs.len() {
            let row = self.row(i);
            t.extend(keep.iter().map(|&k| row[k]));
        }
        self.t = t;
        self.nonbasis = keep.iter().map(|&k| self.nonbasis[k]).collect();
        self.cost = keep.iter().map(|&k| self.cost[k]).collect();
        self.cols = keep.len();
    }
}

fn update_cost(cost: &mut [f64], k: usize, pivot_row: &[f64]) {
    let f = cost[k];
    if f != 0.0 {
        for (c, &pv) in cost.iter_mut().zip(pivot_row) {
            *c -= f * pv;
        }
        cost[k] = -f * pivot_row[k];
    }
}

/// Deterministic factor in `[1, 2)` that decorrelates perturbations.
fn jitter(i: usize) -> f64 {
    let h = (i as u64 ^ 0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    1.0 + ((h >> 11) as f64) / (1u64 << 53) as f64
}

/// A linear program `max c·x` subject to linear rows and `x >= 0`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    n: usize,
    objective: Vec<f64>,
    rows: Vec<Constraint>,
    /// Rows appended since the last successful solve.
    pending: usize,
    tableau: Option<Tableau>,
    tol: LpTolerances,
    pivots: usize,
}

/// Degenerate pivots tolerated before the problem is perturbed.
const DEGENERATE_RUN_BEFORE_PERTURBING: usize = 20;
/// Degenerate pivots tolerated after perturbing before switching to Bland's rule.
const DEGENERATE_RUN_BEFORE_BLAND: usize = 500;
/// Relative size of anti-degeneracy perturbations.
const PERTURBATION: f64 = 1e-7;
/// Rounds of primal/dual cleanup after removing a perturbation.
const CLEANUP_ROUNDS: usize = 6;

impl LinearProgram {
    pub fn new(n_vars: usize) -> Self {
        Self::with_tolerances(n_vars, LpTolerances::default())
    }

    pub fn with_tolerances(n_vars: usize, tol: LpTolerances) -> Self {
        Self {
            n: n_vars,
            objective: vec![0.0; n_vars],
            rows: Vec::new(),
            pending: 0,
            tableau: None,
            tol,
            pivots: 0,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Sets the objective coefficient of variable `j` (maximized). Resets any
    /// warm-start state.
    pub fn set_objective(&mut self, j: usize, c: f64) {
        self.objective[j] = c;
        self.tableau = None;
    }

    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        debug_assert!(coeffs.iter().all(|&(j, _)| j < self.n));
        match (relation, self.tableau.is_some()) {
            // Equalities cannot be warm-started through a slack; split them.
            (Relation::Eq, true) => {
                self.push(coeffs.clone(), Relation::Le, rhs);
                self.push(coeffs, Relation::Ge, rhs);
            }
            _ => self.push(coeffs, relation, rhs),
        }
    }

    fn push(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.rows.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
        self.pending += 1;
    }

    pub fn solve(&mut self) -> Result<LpSolution, LpError> {
        let result = if self.tableau.is_some() {
            // A warm start that cycles is retried from scratch.
            match self.resolve_with_new_rows() {
                Err(LpError::IterationLimit) => self.cold_solve(),
                r => r,
            }
        } else {
            self.cold_solve()
        };
        match result {
            Ok(()) => {
                self.pending = 0;
                Ok(self.extract())
            }
            Err(e) => {
                self.tableau = None;
                Err(e)
            }
        }
    }

    fn extract(&self) -> LpSolution {
        let tab = self.tableau.as_ref().expect("solved tableau");
        let mut x = vec![0.0; self.n];
        for (i, var) in tab.basis.iter().enumerate() {
            if let Var::X(j) = *var {
                x[j] = tab.rhs[i].max(0.0);
            }
        }
        let objective = x.iter().zip(&self.objective).map(|(a, b)| a * b).sum();
        LpSolution {
            x,
            objective,
            pivots: self.pivots,
        }
    }

    fn cold_solve(&mut self) -> Result<(), LpError> {
        let n = self.n;
        let m = self.rows.len();
        // Columns: structurals, then one surplus column per row whose slack
        // enters with coefficient -1 after normalizing the rhs to be >= 0.
        let mut nonbasis: Vec<Var> = (0..n).map(Var::X).collect();
        let mut basis = Vec::with_capacity(m);
        let mut dense_rows: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut rhs = Vec::with_capacity(m);
        let mut surplus: Vec<(usize, usize)> = Vec::new(); // (row, column)
        for (r, row) in self.rows.iter().enumerate() {
            let mut a = vec![0.0; n];
            for &(j, v) in &row.coeffs {
                a[j] += v;
            }
            let mut b = row.rhs;
            let mut slack_sign = match row.relation {
                Relation::Le => Some(1.0),
                Relation::Ge => Some(-1.0),
                Relation::Eq => None,
            };
            // `a·x >= 0` is `-a·x <= 0`, whose slack can start basic at zero.
            if b < 0.0 || (b == 0.0 && row.relation == Relation::Ge) {
                b = -b;
                a.iter_mut().for_each(|v| *v = -*v);
                slack_sign = slack_sign.map(|s: f64| -s);
            }
            match slack_sign {
                Some(s) if s > 0.0 => basis.push(Var::Slack(r)),
                Some(_) => {
                    basis.push(Var::Artificial(r));
                    surplus.push((r, nonbasis.len()));
                    nonbasis.push(Var::Slack(r));
                }
                None => basis.push(Var::Artificial(r)),
            }
            dense_rows.push(a);
            rhs.push(b);
        }
        let cols = nonbasis.len();
        let mut t = vec![0.0; m * cols];
        for (i, a) in dense_rows.iter().enumerate() {
            t[i * cols..i * cols + n].copy_from_slice(a);
        }
        for &(r, col) in &surplus {
            // A = b - a·x + s
            t[r * cols + col] = -1.0;
        }
        let mut tab = Tableau {
            cols,
            t,
            rhs,
            basis,
            nonbasis,
            cost: vec![0.0; cols],
            rhs_true: None,
            cost_true: None,
        };

        let has_artificials = tab.basis.iter().any(|v| matches!(v, Var::Artificial(_)));
        if has_artificials {
            // maximize -Σ A_i = -Σ b_i + Σ_k (Σ_i T[i][k]) N_k
            for i in 0..m {
                if matches!(tab.basis[i], Var::Artificial(_)) {
                    for k in 0..cols {
                        tab.cost[k] += tab.t[i * cols + k];
                    }
                }
            }
            self.primal_simplex(&mut tab, true)?;
            let infeasibility: f64 = tab
                .basis
                .iter()
                .zip(&tab.rhs)
                .filter(|(v, _)| matches!(v, Var::Artificial(_)))
                .map(|(_, &b)| b.max(0.0))
                .sum();
            let scale = 1.0 + self.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
            if infeasibility > 1e3 * self.tol.feasibility * scale {
                return Err(LpError::Infeasible);
            }
            self.drive_out_artificials(&mut tab);
            let drop: Vec<bool> = tab
                .nonbasis
                .iter()
                .map(|v| matches!(v, Var::Artificial(_)))
                .collect();
            tab.remove_columns(&drop);
        }
        self.install_objective(&mut tab);
        self.primal_simplex(&mut tab, false)?;
        self.tableau = Some(tab);
        Ok(())
    }

    fn drive_out_artificials(&mut self, tab: &mut Tableau) {
        let mut i = 0;
        while i < tab.basis.len() {
            if !matches!(tab.basis[i], Var::Artificial(_)) {
                i += 1;
                continue;
            }
            let row = tab.row(i);
            let best = (0..tab.cols)
                .filter(|&k| !matches!(tab.nonbasis[k], Var::Artificial(_)))
                .max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs()));
            match best {
                Some(k) if row[k].abs() > self.tol.pivot => {
                    tab.pivot(i, k);
                    self.pivots += 1;
                    i += 1;
                }
                // Redundant equality row.
                _ => tab.remove_row(i),
            }
        }
    }

    fn install_objective(&self, tab: &mut Tableau) {
        tab.cost.iter_mut().for_each(|c| *c = 0.0);
        for (k, var) in tab.nonbasis.iter().enumerate() {
            if let Var::X(j) = *var {
                tab.cost[k] = self.objective[j];
            }
        }
        for i in 0..tab.basis.len() {
            if let Var::X(j) = tab.basis[i] {
                let c = self.objective[j];
                if c != 0.0 {
                    for k in 0..tab.cols {
                        tab.cost[k] -= c * tab.t[i * tab.cols + k];
                    }
                }
            }
        }
    }

    fn iteration_limit(&self, tab: &Tableau) -> usize {
        200 * (tab.basis.len() + tab.cols) + 10_000
    }

    /// Primal simplex from a primal feasible basis, then cleanup of whatever
    /// infeasibility removing the perturbation leaves behind.
    fn primal_simplex(&mut self, tab: &mut Tableau, phase_one: bool) -> Result<(), LpError> {
        for round in 0..CLEANUP_ROUNDS {
            let perturb = round + 1 < CLEANUP_ROUNDS;
            self.primal_pass(tab, phase_one, perturb)?;
            if tab.rhs_ok(self.tol.feasibility) {
                return Ok(());
            }
            self.dual_pass(tab, perturb)?;
            if tab.cost_ok(self.tol.optimality) {
                return Ok(());
            }
        }
        Err(LpError::IterationLimit)
    }

    /// Dual simplex from a dual feasible basis, with the symmetric cleanup.
    fn dual_simplex(&mut self, tab: &mut Tableau) -> Result<(), LpError> {
        for round in 0..CLEANUP_ROUNDS {
            let perturb = round + 1 < CLEANUP_ROUNDS;
            self.dual_pass(tab, perturb)?;
            if tab.cost_ok(self.tol.optimality) {
                return Ok(());
            }
            self.primal_pass(tab, false, perturb)?;
            if tab.rhs_ok(self.tol.feasibility) {
                return Ok(());
            }
        }
        Err(LpError::IterationLimit)
    }

    fn primal_pass(&mut self, tab: &mut Tableau, phase_one: bool, allow_perturb: bool) -> Result<(), LpError> {
        let result = self.primal_iterate(tab, phase_one, allow_perturb);
        if let Some(rt) = tab.rhs_true.take() {
            tab.rhs = rt;
        }
        result
    }

    fn primal_iterate(&mut self, tab: &mut Tableau, phase_one: bool, allow_perturb: bool) -> Result<(), LpError> {
        let limit = self.iteration_limit(tab);
        let feas = self.tol.feasibility;
        let mut degenerate_run = 0;
        let mut bland = false;
        for _ in 0..limit {
            if degenerate_run > DEGENERATE_RUN_BEFORE_PERTURBING && allow_perturb && tab.rhs_true.is_none() {
                let scale = 1.0 + tab.rhs.iter().fold(0.0f64, |m, b| m.max(b.abs()));
                tab.rhs_true = Some(tab.rhs.clone());
                for (i, b) in tab.rhs.iter_mut().enumerate() {
                    if *b <= feas * scale {
                        *b = b.max(0.0) + PERTURBATION * scale * jitter(i);
                    }
                }
                degenerate_run = 0;
            }
            bland |= degenerate_run > DEGENERATE_RUN_BEFORE_BLAND;
            let enterable = |k: usize| !matches!(tab.nonbasis[k], Var::Artificial(_));
            let mut entering: Option<usize> = None;
            for k in 0..tab.cols {
                if tab.cost[k] <= self.tol.optimality || !enterable(k) {
                    continue;
                }
                entering = match entering {
                    None => Some(k),
                    Some(e) if bland => Some(if tab.nonbasis[k] < tab.nonbasis[e] { k } else { e }),
                    Some(e) => Some(if tab.cost[k] > tab.cost[e] { k } else { e }),
                };
            }
            let Some(k) = entering else {
                return Ok(());
            };
            // Harris ratio test: bound the step with relaxed rows, then take
            // the largest pivot among rows blocking within that bound.
            let col = |i: usize| tab.t[i * tab.cols + k];
            let mut bound = f64::INFINITY;
            for i in 0..tab.basis.len() {
                let a = col(i);
                if a > self.tol.pivot {
                    bound = bound.min((tab.rhs[i].max(0.0) + feas) / a);
                }
            }
            if bound == f64::INFINITY {
                if phase_one {
                    // Phase one is bounded above by zero; a missing ratio is numerical noise.
                    tab.cost[k] = 0.0;
                    continue;
                }
                return Err(LpError::Unbounded);
            }
            let mut leaving: Option<(usize, f64)> = None;
            for i in 0..tab.basis.len() {
                let a = col(i);
                if a <= self.tol.pivot {
                    continue;
                }
                let ratio = tab.rhs[i].max(0.0) / a;
                if ratio > bound {
                    continue;
                }
                let better = match leaving {
                    None => true,
                    Some((l, _)) if bland => tab.basis[i] < tab.basis[l],
                    Some((l, _)) => a > col(l),
                };
                if better {
                    leaving = Some((i, ratio));
                }
            }
            let (r, ratio) = leaving.expect("a row attains the Harris bound");
            if ratio <= feas {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            // A row the tolerance let go slightly negative would make this
            // step move backwards; pin it to zero so the objective never drops.
            if tab.rhs[r] < 0.0 {
                tab.rhs[r] = 0.0;
            }
            tab.pivot(r, k);
            self.pivots += 1;
        }
        Err(LpError::IterationLimit)
    }

    fn dual_pass(&mut self, tab: &mut Tableau, allow_perturb: bool) -> Result<(), LpError> {
        let result = self.dual_iterate(tab, allow_perturb);
        if let Some(ct) = tab.cost_true.take() {
            tab.cost = ct;
        }
        result
    }

    fn dual_iterate(&mut self, tab: &mut Tableau, allow_perturb: bool) -> Result<(), LpError> {
        let limit = self.iteration_limit(tab);
        let opt = self.tol.optimality;
        let mut stalled = 0;
        let mut bland = false;
        for _ in 0..limit {
            if stalled > DEGENERATE_RUN_BEFORE_PERTURBING && allow_perturb && tab.cost_true.is_none() {
                let scale = 1.0 + tab.cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
                tab.cost_true = Some(tab.cost.clone());
                for (k, c) in tab.cost.iter_mut().enumerate() {
                    if *c >= -opt * scale {
                        *c = c.min(0.0) - PERTURBATION * scale * jitter(k + 7919);
                    }
                }
                stalled = 0;
            }
            bland |= stalled > DEGENERATE_RUN_BEFORE_BLAND;
            let mut leaving: Option<usize> = None;
            for i in 0..tab.basis.len() {
                if tab.rhs[i] >= -self.tol.feasibility {
                    continue;
                }
                leaving = match leaving {
                    None => Some(i),
                    Some(l) if bland => Some(if tab.basis[i] < tab.basis[l] { i } else { l }),
                    Some(l) => Some(if tab.rhs[i] < tab.rhs[l] { i } else { l }),
                };
            }
            let Some(r) = leaving else {
                return Ok(());
            };
            let row = tab.row(r);
            let candidate = |k: usize| row[k] < -self.tol.pivot && !matches!(tab.nonbasis[k], Var::Artificial(_));
            let mut bound = f64::INFINITY;
            for k in (0..tab.cols).filter(|&k| candidate(k)) {
                bound = bound.min((tab.cost[k].min(0.0) - opt) / row[k]);
            }
            if bound == f64::INFINITY {
                return Err(LpError::Infeasible);
            }
            let mut entering: Option<(usize, f64)> = None;
            for k in (0..tab.cols).filter(|&k| candidate(k)) {
                let ratio = tab.cost[k].min(0.0) / row[k];
                if ratio > bound {
                    continue;
                }
                let better = match entering {
                    None => true,
                    Some((e, _)) if bland => tab.nonbasis[k] < tab.nonbasis[e],
                    Some((e, _)) => row[k] < row[e],
                };
                if better {
                    entering = Some((k, ratio));
                }
            }
            let (k, ratio) = entering.expect("a column attains the Harris bound");
            if ratio <= opt {
                stalled += 1;
            } else {
                stalled = 0;
            }
            if tab.cost[k] > 0.0 {
                tab.cost[k] = 0.0;
            }
            tab.pivot(r, k);
            self.pivots += 1;
        }
        Err(LpError::IterationLimit)
    }

    fn resolve_with_new_rows(&mut self) -> Result<(), LpError> {
        let mut tab = self.tableau.take().expect("warm tableau");
        let start = self.rows.len() - self.pending;
        let mut position = vec![None; self.n];
        for (i, var) in tab.basis.iter().enumerate() {
            if let Var::X(j) = *var {
                position[j] = Some(i);
            }
        }
        let mut column = vec![None; self.n];
        for (k, var) in tab.nonbasis.iter().enumerate() {
            if let Var::X(j) = *var {
                column[j] = Some(k);
            }
        }
        for r in start..self.rows.len() {
            let row = &self.rows[r];
            let sign = match row.relation {
                Relation::Le => 1.0,
                Relation::Ge => -1.0,
                Relation::Eq => unreachable!("equalities are split before a warm solve"),
            };
            // s = sign·b - sign·a·x, rewritten in the current nonbasic columns.
            let mut new_row = vec![0.0; tab.cols];
            let mut b = sign * row.rhs;
            for &(j, v) in &row.coeffs {
                let a = sign * v;
                if let Some(k) = column[j] {
                    new_row[k] += a;
                } else if let Some(i) = position[j] {
                    b -= a * tab.rhs[i];
                    let basic_row = &tab.t[i * tab.cols..(i + 1) * tab.cols];
                    for (nr, &bv) in new_row.iter_mut().zip(basic_row) {
                        *nr -= a * bv;
                    }
                }
            }
            tab.t.extend_from_slice(&new_row);
            tab.rhs.push(b);
            tab.basis.push(Var::Slack(r));
        }
        self.dual_simplex(&mut tab)?;
        self.tableau = Some(tab);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let mut lp = LinearProgram::new(2);
        lp.set_objective(0, 3.0);
        lp.set_objective(1, 5.0);
        lp.add_constraint(vec![(0, 1.0)], Relation::Le, 4.0);
        lp.add_constraint(vec![(1, 2.0)], Relation::Le, 12.0);
        lp.add_constraint(vec![(0, 3.0), (1, 2.0)], Relation::Le, 18.0);
        let s = lp.solve().unwrap();
        assert_abs_diff_eq!(s.objective, 36.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.x[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.x[1], 6.0, epsilon = 1e-9);
    }

    #[test]
    fn equality_and_ge_rows_use_phase_one() {
        // max -x - 2y s.t. x + y = 2, x >= 0.5, y - x >= -1
        let mut lp = LinearProgram::new(2);
        lp.set_objective(0, -1.0);
        lp.set_objective(1, -2.0);
        lp.add_constraint(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 2.0);
        lp.add_constraint(vec![(0, 1.0)], Relation::Ge, 0.5);
        lp.add_constraint(vec![(1, 1.0), (0, -1.0)], Relation::Ge, -1.0);
        let s = lp.solve().unwrap();
        // x - y <= 1 binds: x = 1.5, y = 0.5
        assert_abs_diff_eq!(s.x[0], 1.5, epsilon = 1e-9);
        assert_abs_diff_eq!(s.x[1], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(s.objective, -2.5, epsilon = 1e-9);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(1);
        lp.set_objective(0, 1.0);
        lp.add_constraint(vec![(0, 1.0)], Relation::Le, 1.0);
        lp.add_constraint(vec![(0, 1.0)], Relation::Ge, 2.0);
        assert_eq!(lp.solve().unwrap_err(), LpError::Infeasible);

        let mut lp = LinearProgram::new(2);
        lp.set_objective(0, 1.0);
        lp.add_constraint(vec![(0, 1.0), (1, -1.0)], Relation::Le, 1.0);
        assert_eq!(lp.solve().unwrap_err(), LpError::Unbounded);
    }

    #[test]
    fn redundant_equalities_are_dropped() {
        let mut lp = LinearProgram::new(2);
        lp.set_objective(0, 1.0);
        lp.add_constraint(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 1.0);
        lp.add_constraint(vec![(0, 2.0), (1, 2.0)], Relation::Eq, 2.0);
        let s = lp.solve().unwrap();
        assert_abs_diff_eq!(s.objective, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn beale_cycling_example_terminates() {
        // Beale's example cycles under Dantzig pricing with naive tie-breaking.
        // min -3/4 x4 + 20 x5 - 1/2 x6 + 6 x7
        let mut lp = LinearProgram::new(4);
        for (j, c) in [0.75, -20.0, 0.5, -6.0].into_iter().enumerate() {
            lp.set_objective(j, c);
        }
        lp.add_constraint(vec![(0, 0.25), (1, -8.0), (2, -1.0), (3, 9.0)], Relation::Le, 0.0);
        lp.add_constraint(vec![(0, 0.5), (1, -12.0), (2, -0.5), (3, 3.0)], Relation::Le, 0.0);
        lp.add_constraint(vec![(2, 1.0)], Relation::Le, 1.0);
        let s = lp.solve().unwrap();
        assert_abs_diff_eq!(s.objective, 1.25, epsilon = 1e-9);
    }

    #[test]
    fn warm_start_after_adding_cuts() {
        // max x + y in the unit box, then cut x + 2y <= 2 and 2x + y <= 2.
        let mut lp = LinearProgram::new(2);
        lp.set_objective(0, 1.0);
        lp.set_objective(1, 1.0);
        lp.add_constraint(vec![(0, 1.0)], Relation::Le, 1.0);
        lp.add_constraint(vec![(1, 1.0)], Relation::Le, 1.0);
        assert_abs_diff_eq!(lp.solve().unwrap().objective, 2.0, epsilon = 1e-12);
        lp.add_constraint(vec![(0, 1.0), (1, 2.0)], Relation::Le, 2.0);
        lp.add_constraint(vec![(0, 2.0), (1, 1.0)], Relation::Le, 2.0);
        let s = lp.solve().unwrap();
        assert_abs_diff_eq!(s.objective, 4.0 / 3.0, epsilon = 1e-12);
        lp.add_constraint(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 1.0);
        assert_abs_diff_eq!(lp.solve().unwrap().objective, 1.0, epsilon = 1e-12);
        lp.add_constraint(vec![(0, 1.0)], Relation::Ge, 2.0);
        assert_eq!(lp.solve().unwrap_err(), LpError::Infeasible);
    }

    fn reference_objective(
        n: usize,
        c: &[f64],
        rows: &[(Vec<f64>, Relation, f64)],
    ) -> Result<f64, minilp::Error> {
        let mut p = minilp::Problem::new(minilp::OptimizationDirection::Maximize);
        let vars: Vec<_> = (0..n).map(|j| p.add_var(c[j], (0.0, f64::INFINITY))).collect();
        for (a, rel, b) in rows {
            let expr: Vec<_> = vars.iter().zip(a).map(|(&v, &x)| (v, x)).collect();
            let op = match rel {
                Relation::Le => minilp::ComparisonOp::Le,
                Relation::Ge => minilp::ComparisonOp::Ge,
                Relation::Eq => minilp::ComparisonOp::Eq,
            };
            p.add_constraint(&expr[..], op, *b);
        }
        p.solve().map(|s| s.objective())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn agrees_with_reference_solver(
            n in 2usize..6,
            seed_rows in prop::collection::vec((prop::collection::vec(-3i32..4, 6), 0u8..3, -4i32..8), 1..8),
            c in prop::collection::vec(-3i32..4, 6),
        ) {
            let rows: Vec<(Vec<f64>, Relation, f64)> = seed_rows
                .iter()
                .map(|(a, rel, b)| {
                    let rel = match rel { 0 => Relation::Le, 1 => Relation::Ge, _ => Relation::Eq };
                    (a[..n].iter().map(|&v| v as f64).collect(), rel, *b as f64)
                })
                .collect();
            let c: Vec<f64> = c[..n].iter().map(|&v| v as f64).collect();
            // Keep the reference bounded.
            let mut all_rows = rows.clone();
            all_rows.push((vec![1.0; n], Relation::Le, 10.0));

            let mut lp = LinearProgram::new(n);
            for (j, &cj) in c.iter().enumerate() {
                lp.set_objective(j, cj);
            }
            for (a, rel, b) in &all_rows {
                lp.add_constraint(a.iter().copied().enumerate().collect(), *rel, *b);
            }
            let ours = lp.solve();
            let theirs = reference_objective(n, &c, &all_rows);
            match (ours, theirs) {
                (Ok(s), Ok(v)) => prop_assert!((s.objective - v).abs() < 1e-7, "{} vs {}", s.objective, v),
                (Err(LpError::Infeasible), Err(minilp::Error::Infeasible)) => {}
                (a, b) => prop_assert!(false, "mismatch: {:?} vs {:?}", a.map(|s| s.objective), b),
            }
        }

        #[test]
        fn warm_start_matches_cold_solve(
            cuts in prop::collection::vec((0.1f64..2.0, 0.1f64..2.0, 0.5f64..3.0), 1..6),
        ) {
            let mut warm = LinearProgram::new(2);
            warm.set_objective(0, 1.0);
            warm.set_objective(1, 1.5);
            warm.add_constraint(vec![(0, 1.0), (1, 1.0)], Relation::Le, 4.0);
            warm.solve().unwrap();
            let mut cold = warm.clone();
            cold.tableau = None;
            for &(a, b, r) in &cuts {
                warm.add_constraint(vec![(0, a), (1, b)], Relation::Le, r);
                cold.add_constraint(vec![(0, a), (1, b)], Relation::Le, r);
                let w = warm.solve().unwrap().objective;
                let mut fresh = cold.clone();
                fresh.tableau = None;
                let c = fresh.solve().unwrap().objective;
                prop_assert!((w - c).abs() < 1e-9);
            }
        }
    }
}
