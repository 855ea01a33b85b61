//! The finite-dimensional program over per-type atom probabilities `p`,
//! mass-weighted means `z` and deviation linearizers `y`.
//!
//! Each type's posterior-mean distribution puts mass `p_a` on a mean inside
//! the cell of action `a`. Feasibility is the mean-preserving-contraction
//! condition in quantile form: every suffix of atoms satisfies
//! `Σ z <= Φ(Σ p)`, with equality for the full sum. The concave right-hand
//! side is outer-approximated by tangent cuts that are added until the LP
//! iterate is feasible to within `cut_tol`.
//!
//! Internally `z` is shifted to `w = z - lo·p >= 0` so the embedded simplex
//! only sees nonnegative variables, and receiver utilities are shifted by a
//! per-type constant `κ >= 0` so that the deviation variables `y` are
//! nonnegative too.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::dist::StateDistribution;
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpError, LpTolerances, Relation};
use crate::model::Problem;

/// Atoms lighter than this are numerical noise and are removed.
pub const ATOM_TOL: f64 = 1e-10;
/// Atoms whose means differ by at most this much are merged.
pub const MERGE_TOL: f64 = 1e-9;
/// A stalled cut loop still counts as converged within this multiple of `cut_tol`.
const STALL_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Number of tangent intervals in the initial cut grid.
    pub grid_size: usize,
    /// Stop once every majorization constraint is violated by at most this.
    pub cut_tol: f64,
    pub max_rounds: usize,
    pub lp_feasibility: f64,
    pub lp_optimality: f64,
    /// Binding-detection tolerance; `None` means `1e-7·(1 + |mean|)`.
    pub eps_bind: Option<f64>,
    /// Drive each block to an extreme point with at most `n + 2` atoms.
    pub vertex_refinement: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grid_size: 32,
            cut_tol: 1e-10,
            max_rounds: 500,
            lp_feasibility: 1e-9,
            lp_optimality: 1e-9,
            eps_bind: None,
            vertex_refinement: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 {
            return Err(Error::InvalidConfig("grid_size must be at least 2".into()));
        }
        let positive = [
            ("cut_tol", self.cut_tol),
            ("lp_feasibility", self.lp_feasibility),
            ("lp_optimality", self.lp_optimality),
            ("eps_bind", self.eps_bind.unwrap_or(1.0)),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidConfig("max_rounds must be positive".into()));
        }
        Ok(())
    }

    pub fn eps_bind_for(&self, dist: &StateDistribution) -> f64 {
        self.eps_bind
            .unwrap_or_else(|| 1e-7 * (1.0 + dist.mean().abs()))
    }

    /// Cut rows are multiplied by this so the LP's feasibility tolerance,
    /// measured in row units, is finer than `cut_tol`.
    fn cut_scale(&self) -> f64 {
        (10.0 * self.lp_feasibility / self.cut_tol).max(1.0)
    }

    fn lp_tolerances(&self) -> LpTolerances {
        LpTolerances {
            pivot: 1e-9,
            feasibility: self.lp_feasibility,
            optimality: self.lp_optimality,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    /// Private menu with incentive compatibility.
    Private,
    /// Private menu without incentive compatibility (an upper bound).
    NoIc,
    /// One signal shown to every type.
    Public,
}

/// One posterior-mean atom: the receiver is recommended `action`, which
/// happens with probability `p`, and `z = p · mean`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub action: usize,
    pub p: f64,
    pub z: f64,
}

impl Atom {
    pub fn mean(&self) -> f64 {
        self.z / self.p
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub rounds: usize,
    pub cuts: usize,
    pub pivots: usize,
    /// Largest majorization violation found by the final sweep.
    pub max_violation: f64,
    /// Blocks split while refining to extreme points.
    pub refinement_splits: usize,
    /// Largest change applied to any `z` when making binding constraints exact.
    pub polish_shift: f64,
    /// Whether blocks were refined to extreme points.
    #[serde(default)]
    pub vertex_refined: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MenuSolution {
    pub mode: SolveMode,
    pub objective: f64,
    /// Per type, atoms in increasing order of mean.
    pub atoms: Vec<Vec<Atom>>,
    /// `deviation[θ][θ'][k]`: payoff of type `θ` from atom `k` of type `θ'`'s
    /// signal, `p·ū_θ(mean)`. Summed over `k` this is the IC matrix entry.
    pub deviation: Vec<Vec<Vec<f64>>>,
    pub eps_bind: f64,
    pub diagnostics: Diagnostics,
    pub distribution: StateDistribution,
}

impl MenuSolution {
    /// Builds a solution from explicit atoms, e.g. a hand-made menu.
    pub fn from_atoms(problem: &Problem, mode: SolveMode, atoms: Vec<Vec<Atom>>) -> Result<Self> {
        if atoms.len() != problem.num_types() {
            return Err(Error::InvalidProblem(format!(
                "expected atoms for {} types, got {}",
                problem.num_types(),
                atoms.len()
            )));
        }
        let mut atoms = atoms;
        for list in &mut atoms {
            if list.iter().any(|a| a.action >= problem.num_actions() || !(a.p > 0.0)) {
                return Err(Error::InvalidProblem("atom with bad action or mass".into()));
            }
            list.sort_by(|a, b| a.mean().total_cmp(&b.mean()));
        }
        let mut sol = MenuSolution {
            mode,
            objective: 0.0,
            atoms,
            deviation: Vec::new(),
            eps_bind: SolverConfig::default().eps_bind_for(&problem.distribution),
            diagnostics: Diagnostics::default(),
            distribution: problem.distribution.clone(),
        };
        sol.refresh(problem);
        sol.diagnostics.max_violation = (0..problem.num_types())
            .map(|t| majorization_violation(&problem.distribution, &sol.atoms[t]))
            .fold(0.0, f64::max);
        Ok(sol)
    }

    pub fn num_types(&self) -> usize {
        self.atoms.len()
    }

    /// `p_{a,θ}`, summed over atoms recommending `a`.
    pub fn p(&self, t: usize, action: usize) -> f64 {
        self.atoms[t].iter().filter(|a| a.action == action).map(|a| a.p).sum()
    }

    pub fn z(&self, t: usize, action: usize) -> f64 {
        self.atoms[t].iter().filter(|a| a.action == action).map(|a| a.z).sum()
    }

    /// Truthful expected utility of type `t`.
    pub fn truthful_value(&self, t: usize) -> f64 {
        self.deviation[t][t].iter().sum()
    }

    /// Recomputes the objective and deviation payoffs from the atoms.
    fn refresh(&mut self, problem: &Problem) {
        let n = problem.num_types();
        self.objective = (0..n)
            .map(|t| {
                problem.weight(t)
                    * self.atoms[t]
                        .iter()
                        .map(|a| {
                            problem.payoffs.v1[t][a.action] * a.z + problem.payoffs.v2[t][a.action] * a.p
                        })
                        .sum::<f64>()
            })
            .sum();
        self.deviation = (0..n)
            .map(|t| {
                let prof = problem.profile(t);
                (0..n)
                    .map(|s| {
                        self.atoms[s]
                            .iter()
                            .map(|a| a.p * prof.indirect_utility(a.mean()))
                            .collect()
                    })
                    .collect()
            })
            .collect();
    }
}

/// `(action, p, mean)` for the atoms of type `t` heavier than `eps_bind`.
pub fn posterior_atoms(solution: &MenuSolution, t: usize) -> Vec<(usize, f64, f64)> {
    solution.atoms[t]
        .iter()
        .filter(|a| a.p >= solution.eps_bind)
        .map(|a| (a.action, a.p, a.mean()))
        .collect()
}

/// A maximal run of atoms `start..end` between binding majorization
/// constraints, occupying the quantile band `[q0, q1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BindingBlock {
    pub start: usize,
    pub end: usize,
    pub q0: f64,
    pub q1: f64,
}

impl BindingBlock {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Splits the atoms of type `t` into blocks at every suffix whose
/// majorization constraint holds with equality up to `eps`.
pub fn binding_groups(solution: &MenuSolution, t: usize, eps: f64) -> Result<Vec<BindingBlock>> {
    detect_blocks(&solution.distribution, &solution.atoms[t], eps)
}

fn detect_blocks(dist: &StateDistribution, atoms: &[Atom], eps: f64) -> Result<Vec<BindingBlock>> {
    let k = atoms.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut blocks = Vec::new();
    let mut end = k;
    let mut q1 = 1.0;
    let (mut sp, mut sz) = (0.0, 0.0);
    for l in (1..k).rev() {
        sp += atoms[l].p;
        sz += atoms[l].z;
        let gap = dist.tail_integral(sp) - sz;
        if gap < -eps {
            return Err(Error::BindingPattern(format!(
                "suffix starting at atom {l} exceeds the prior by {:e}",
                -gap
            )));
        }
        if gap <= eps {
            let q0 = (1.0 - sp).clamp(0.0, 1.0);
            blocks.push(BindingBlock { start: l, end, q0, q1 });
            end = l;
            q1 = q0;
        }
    }
    blocks.push(BindingBlock { start: 0, end, q0: 0.0, q1 });
    blocks.reverse();
    Ok(blocks)
}

/// Largest `Ψ_G(q) - Φ(q)` over the kinks of the atoms' tail integral and a
/// uniform grid, where `Ψ_G` integrates the top `q` of the atom distribution.
pub fn majorization_violation(dist: &StateDistribution, atoms: &[Atom]) -> f64 {
    let mut sorted: Vec<&Atom> = atoms.iter().collect();
    sorted.sort_by(|a, b| b.mean().total_cmp(&a.mean()));
    let mut kinks = vec![(0.0, 0.0)];
    let (mut sp, mut sz) = (0.0, 0.0);
    for a in sorted {
        sp += a.p;
        sz += a.z;
        kinks.push((sp, sz));
    }
    let mut worst = kinks
        .iter()
        .map(|&(q, s)| s - dist.tail_integral(q))
        .fold(f64::NEG_INFINITY, f64::max);
    // The full-mass equality is part of feasibility.
    let (tp, tz) = *kinks.last().unwrap();
    worst = worst.max((tp - 1.0).abs()).max((tz - dist.mean()).abs());
    const GRID: usize = 1000;
    let mut seg = 0;
    for i in 0..=GRID {
        let q = i as f64 / GRID as f64 * tp;
        while seg + 2 < kinks.len() && kinks[seg + 1].0 < q {
            seg += 1;
        }
        let (q0, s0) = kinks[seg];
        let (q1, s1) = kinks[(seg + 1).min(kinks.len() - 1)];
        let s = if q1 > q0 { s0 + (s1 - s0) * (q - q0) / (q1 - q0) } else { s1 };
        worst = worst.max(s - dist.tail_integral(q));
    }
    worst.max(0.0)
}

/// Optimal private menu subject to incentive compatibility.
pub fn solve_opt(problem: &Problem, config: &SolverConfig) -> Result<MenuSolution> {
    solve(problem, config, SolveMode::Private)
}

/// Optimal private menu ignoring incentive compatibility.
pub fn solve_no_ic(problem: &Problem, config: &SolverConfig) -> Result<MenuSolution> {
    solve(problem, config, SolveMode::NoIc)
}

/// Optimal public signal, solved for a single representative type.
pub fn solve_public(problem: &Problem, config: &SolverConfig) -> Result<MenuSolution> {
    solve(problem, config, SolveMode::Public)
}

pub fn solve(problem: &Problem, config: &SolverConfig, mode: SolveMode) -> Result<MenuSolution> {
    config.validate()?;
    check_participation(problem)?;
    let layers = match mode {
        SolveMode::Public => vec![public_layer(problem)],
        _ => (0..problem.num_types()).map(|t| private_layer(problem, t)).collect(),
    };
    let mut solver = Kelley::new(problem, &layers, mode == SolveMode::Private, config);
    match solver.run() {
        Outcome::Converged(raw, diag) => finish(problem, &layers, mode, config, raw, diag, true),
        Outcome::RoundLimit(raw, diag) => {
            let (rounds, violation) = (diag.rounds, diag.max_violation);
            let incumbent = finish(problem, &layers, mode, config, raw, diag, false)?;
            Err(Error::NotConverged {
                rounds,
                violation,
                incumbent: Box::new(incumbent),
            })
        }
        Outcome::Failed(LpError::Infeasible) => Err(Error::Infeasible(
            "no menu satisfies the incentive and participation constraints".into(),
        )),
        Outcome::Failed(e) => Err(Error::Lp(e)),
    }
}

/// Rejects participation bounds above the full-disclosure value, which is
/// the most any type can get and is achievable by all types at once.
fn check_participation(problem: &Problem) -> Result<()> {
    let Some(bounds) = &problem.participation else {
        return Ok(());
    };
    let dist = &problem.distribution;
    for (t, &bound) in bounds.iter().enumerate() {
        let best: f64 = problem
            .profile(t)
            .pieces
            .iter()
            .map(|pc| {
                let (flo, fhi) = (dist.cdf(pc.lo), dist.cdf(pc.hi));
                pc.slope * dist.partial_expectation(pc.lo, pc.hi) + pc.intercept * (fhi - flo)
            })
            .sum();
        if bound > best + 1e-9 * (1.0 + best.abs()) {
            return Err(Error::InfeasibleParticipation {
                type_label: problem.types[t].label.clone(),
            });
        }
    }
    Ok(())
}

/// One cell of a layer: a posterior-mean interval with an affine designer reward.
#[derive(Debug, Clone)]
struct Cell {
    lo: f64,
    hi: f64,
    v1: f64,
    v2: f64,
    /// Recommended action for every type that sees this layer; for private
    /// layers only the owning type's entry is meaningful.
    actions: Vec<usize>,
}

/// Variables of one signal: one atom per cell. Private solves have one layer
/// per type, public solves a single layer shared by all types.
#[derive(Debug, Clone)]
struct Layer {
    /// Types that observe this layer's signal.
    audience: Vec<usize>,
    weight: f64,
    cells: Vec<Cell>,
}

fn private_layer(problem: &Problem, t: usize) -> Layer {
    let n = problem.num_types();
    let cells = problem
        .profile(t)
        .pieces
        .iter()
        .map(|pc| {
            let actions = vec![pc.action; n];
            Cell {
                lo: pc.lo,
                hi: pc.hi,
                v1: pc.v1,
                v2: pc.v2,
                actions,
            }
        })
        .collect();
    Layer {
        audience: vec![t],
        weight: problem.weight(t),
        cells,
    }
}

/// Representative type for public signals: merge every type's cutoffs and
/// aggregate the weighted rewards. Where the types' tie-broken choices at a
/// shared cutoff are worth more than either neighbouring cell, the point
/// itself becomes a degenerate cell.
fn public_layer(problem: &Problem) -> Layer {
    let n = problem.num_types();
    let (lo, hi) = problem.distribution.support();
    let mut grid: Vec<f64> = problem
        .profiles()
        .iter()
        .flat_map(|pr| {
            let b = pr.cutoffs();
            b[1..b.len() - 1].to_vec()
        })
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    grid.insert(0, lo);
    grid.push(hi);

    let aggregate = |actions: &[usize]| {
        let mut v = (0.0, 0.0);
        for (t, &a) in actions.iter().enumerate() {
            v.0 += problem.weight(t) * problem.payoffs.v1[t][a];
            v.1 += problem.weight(t) * problem.payoffs.v2[t][a];
        }
        v
    };
    let mut cells: Vec<Cell> = Vec::new();
    for (i, w) in grid.windows(2).enumerate() {
        if i > 0 {
            let x = w[0];
            let owners: Vec<usize> = (0..n).map(|t| problem.profile(t).best_action(x)).collect();
            let (pv1, pv2) = aggregate(&owners);
            let left = cells.last().map(|c| c.v1 * x + c.v2).unwrap_or(f64::NEG_INFINITY);
            let mid = 0.5 * (w[0] + w[1]);
            let right_actions: Vec<usize> = (0..n).map(|t| problem.profile(t).best_action(mid)).collect();
            let (rv1, rv2) = aggregate(&right_actions);
            let point = pv1 * x + pv2;
            if point > left.max(rv1 * x + rv2) + 1e-12 * (1.0 + point.abs()) {
                cells.push(Cell {
                    lo: x,
                    hi: x,
                    v1: pv1,
                    v2: pv2,
                    actions: owners,
                });
            }
        }
        let mid = 0.5 * (w[0] + w[1]);
        let actions: Vec<usize> = (0..n).map(|t| problem.profile(t).best_action(mid)).collect();
        let (v1, v2) = aggregate(&actions);
        cells.push(Cell {
            lo: w[0],
            hi: w[1],
            v1,
            v2,
            actions,
        });
    }
    Layer {
        audience: (0..n).collect(),
        weight: 1.0,
        cells,
    }
}

/// Internal atom: mass on a layer cell.
#[derive(Debug, Clone, Copy)]
struct CellAtom {
    cell: usize,
    p: f64,
    z: f64,
}

impl CellAtom {
    fn mean(&self) -> f64 {
        self.z / self.p
    }

    fn as_atom(&self) -> Atom {
        Atom {
            action: self.cell,
            p: self.p,
            z: self.z,
        }
    }
}

type RawLayers = Vec<Vec<CellAtom>>;

enum Outcome {
    Converged(RawLayers, Diagnostics),
    RoundLimit(RawLayers, Diagnostics),
    Failed(LpError),
}

struct Kelley<'a> {
    problem: &'a Problem,
    layers: &'a [Layer],
    config: &'a SolverConfig,
    lp: LinearProgram,
    /// Column of `p` for the first cell of each layer; `w` follows each `p`.
    offsets: Vec<usize>,
    /// `(layer, l, q)` of every cut added so far, to detect stalls.
    added: HashSet<(usize, usize, u64)>,
    diag: Diagnostics,
}

impl<'a> Kelley<'a> {
    fn new(problem: &'a Problem, layers: &'a [Layer], ic: bool, config: &'a SolverConfig) -> Self {
        let dist = &problem.distribution;
        let lo = dist.lo();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut nv = 0;
        for l in layers {
            offsets.push(nv);
            nv += 2 * l.cells.len();
        }
        // y[θ][θ'][j'] for the private IC constraints.
        let n = problem.num_types();
        let mut y_index = vec![vec![0usize; n]; n];
        if ic {
            for t in 0..n {
                for s in 0..n {
                    y_index[t][s] = nv;
                    nv += layers[s].cells.len();
                }
            }
        }
        let mut lp = LinearProgram::with_tolerances(nv, config.lp_tolerances());
        let pv = |li: usize, j: usize| offsets[li] + 2 * j;
        let wv = |li: usize, j: usize| offsets[li] + 2 * j + 1;

        for (li, layer) in layers.iter().enumerate() {
            let k = layer.cells.len();
            for (j, c) in layer.cells.iter().enumerate() {
                // objective: weight · (v1·(w + lo·p) + v2·p)
                lp.set_objective(pv(li, j), layer.weight * (c.v1 * lo + c.v2));
                lp.set_objective(wv(li, j), layer.weight * c.v1);
                // box
                if c.lo > lo {
                    lp.add_constraint(vec![(wv(li, j), 1.0), (pv(li, j), -(c.lo - lo))], Relation::Ge, 0.0);
                }
                lp.add_constraint(vec![(wv(li, j), 1.0), (pv(li, j), -(c.hi - lo))], Relation::Le, 0.0);
            }
            lp.add_constraint((0..k).map(|j| (pv(li, j), 1.0)).collect(), Relation::Eq, 1.0);
            lp.add_constraint((0..k).map(|j| (wv(li, j), 1.0)).collect(), Relation::Eq, dist.mean() - lo);
            // initial tangent grid for every proper suffix
            for l in 1..k {
                for g in 0..=config.grid_size {
                    let q0 = g as f64 / config.grid_size as f64;
                    let (row, rhs) = cut_row(dist, l, k, q0, config.cut_scale(), |j| pv(li, j), |j| wv(li, j));
                    lp.add_constraint(row, Relation::Le, rhs);
                }
            }
            // participation, per audience type
            if let Some(bounds) = &problem.participation {
                for &t in &layer.audience {
                    let mut row = Vec::with_capacity(2 * k);
                    for (j, c) in layer.cells.iter().enumerate() {
                        let a = c.actions[t];
                        let (u1, u2) = (problem.payoffs.u1[t][a], problem.payoffs.u2[t][a]);
                        row.push((pv(li, j), u1 * lo + u2));
                        row.push((wv(li, j), u1));
                    }
                    lp.add_constraint(row, Relation::Ge, bounds[t]);
                }
            }
        }

        if ic {
            for t in 0..n {
                let prof = problem.profile(t);
                let kappa = prof
                    .pieces
                    .iter()
                    .flat_map(|pc| [pc.utility(pc.lo), pc.utility(pc.hi)])
                    .fold(0.0f64, |acc, u| acc.max(-u));
                for s in 0..n {
                    // y_{j'} >= line_i(z_{j'}, p_{j'}) + κ p_{j'} for θ's pieces i
                    // overlapping the cell of atom j'; other pieces are dominated there.
                    for (jj, c) in layers[s].cells.iter().enumerate() {
                        let tol = 1e-12 * (1.0 + c.hi.abs());
                        for pc in prof.pieces.iter().filter(|pc| pc.lo <= c.hi + tol && pc.hi >= c.lo - tol) {
                            lp.add_constraint(
                                vec![
                                    (y_index[t][s] + jj, 1.0),
                                    (wv(s, jj), -pc.slope),
                                    (pv(s, jj), -(pc.slope * lo + pc.intercept + kappa)),
                                ],
                                Relation::Ge,
                                0.0,
                            );
                        }
                    }
                    // Σ_j' y <= truthful value of θ (+κ, folded into Σp = 1)
                    let mut row: Vec<(usize, f64)> =
                        (0..layers[s].cells.len()).map(|jj| (y_index[t][s] + jj, 1.0)).collect();
                    for (j, c) in layers[t].cells.iter().enumerate() {
                        let a = c.actions[t];
                        let (u1, u2) = (problem.payoffs.u1[t][a], problem.payoffs.u2[t][a]);
                        row.push((wv(t, j), -u1));
                        row.push((pv(t, j), -(u1 * lo + u2 + kappa)));
                    }
                    lp.add_constraint(row, Relation::Le, 0.0);
                }
            }
        }
        let cuts = layers
            .iter()
            .map(|l| l.cells.len().saturating_sub(1) * (config.grid_size + 1))
            .sum();
        Kelley {
            problem,
            layers,
            config,
            lp,
            offsets,
            added: HashSet::new(),
            diag: Diagnostics {
                cuts,
                ..Diagnostics::default()
            },
        }
    }

    fn extract(&self, x: &[f64]) -> RawLayers {
        let lo = self.problem.distribution.lo();
        self.layers
            .iter()
            .enumerate()
            .map(|(li, l)| {
                (0..l.cells.len())
                    .map(|j| {
                        let p = x[self.offsets[li] + 2 * j].max(0.0);
                        let w = x[self.offsets[li] + 2 * j + 1].max(0.0);
                        CellAtom { cell: j, p, z: w + lo * p }
                    })
                    .collect()
            })
            .collect()
    }

    fn run(&mut self) -> Outcome {
        let dist = &self.problem.distribution;
        let lo = dist.lo();
        loop {
            let sol = match self.lp.solve() {
                Ok(s) => s,
                Err(e) => return Outcome::Failed(e),
            };
            self.diag.pivots += sol.pivots;
            self.diag.rounds += 1;
            let raw = self.extract(&sol.x);
            let mut worst: f64 = 0.0;
            let mut new_cuts = Vec::new();
            for (li, layer) in self.layers.iter().enumerate() {
                let k = layer.cells.len();
                let (mut sp, mut sw) = (0.0, 0.0);
                for l in (1..k).rev() {
                    sp += sol.x[self.offsets[li] + 2 * l];
                    sw += sol.x[self.offsets[li] + 2 * l + 1];
                    let q = sp.clamp(0.0, 1.0);
                    let v = sw - (dist.tail_integral(q) - lo * q);
                    worst = worst.max(v);
                    if v > self.config.cut_tol {
                        // The tangent at the iterate's own mass is the deepest cut.
                        new_cuts.push((li, l, q));
                    }
                }
            }
            self.diag.max_violation = worst;
            if new_cuts.is_empty() {
                return Outcome::Converged(raw, self.diag.clone());
            }
            new_cuts.retain(|&(li, l, q)| self.added.insert((li, l, q.to_bits())));
            if new_cuts.is_empty() {
                // Only repeats of existing cuts: the LP cannot move further, so
                // accept an iterate that is within rounding of the tolerance.
                if worst <= STALL_FACTOR * self.config.cut_tol {
                    return Outcome::Converged(raw, self.diag.clone());
                }
                return Outcome::RoundLimit(raw, self.diag.clone());
            }
            if self.diag.rounds >= self.config.max_rounds {
                return Outcome::RoundLimit(raw, self.diag.clone());
            }
            for (li, l, q) in new_cuts {
                let k = self.layers[li].cells.len();
                let off = self.offsets[li];
                let (row, rhs) = cut_row(dist, l, k, q, self.config.cut_scale(), |j| off + 2 * j, |j| off + 2 * j + 1);
                self.lp.add_constraint(row, Relation::Le, rhs);
                self.diag.cuts += 1;
            }
        }
    }
}

/// Tangent cut `Σ_{j>=l} w_j <= Φ̃(q0) + Φ̃'(q0)(Σ_{j>=l} p_j - q0)` with
/// `Φ̃(q) = Φ(q) - lo·q`, multiplied through by `scale`.
fn cut_row(
    dist: &StateDistribution,
    l: usize,
    k: usize,
    q0: f64,
    scale: f64,
    pv: impl Fn(usize) -> usize,
    wv: impl Fn(usize) -> usize,
) -> (Vec<(usize, f64)>, f64) {
    let lo = dist.lo();
    let slope = dist.quantile_clamped(1.0 - q0) - lo;
    let value = dist.tail_integral(q0) - lo * q0;
    let mut row = Vec::with_capacity(2 * (k - l));
    for j in l..k {
        row.push((wv(j), scale));
        row.push((pv(j), -slope * scale));
    }
    (row, (value - slope * q0) * scale)
}

/// Post-processing: clean, split into binding blocks, make binding
/// constraints exact, refine to extreme points, and translate cells back to
/// per-type actions.
fn finish(
    problem: &Problem,
    layers: &[Layer],
    mode: SolveMode,
    config: &SolverConfig,
    raw: RawLayers,
    mut diag: Diagnostics,
    converged: bool,
) -> Result<MenuSolution> {
    let dist = &problem.distribution;
    let eps = config.eps_bind_for(dist);
    let mut cleaned: Vec<Vec<CellAtom>> = raw
        .into_iter()
        .zip(layers)
        .map(|(atoms, layer)| clean(atoms, layer))
        .collect();

    diag.vertex_refined = converged && config.vertex_refinement;
    if converged {
        for (li, atoms) in cleaned.iter_mut().enumerate() {
            let layer = &layers[li];
            let mut shift = stabilize(dist, layer, atoms, eps)?;
            // A light atom that forms a block on its own is pinned to its
            // band's mean, which LP noise can put outside its cell. Such atoms
            // carry no weight worth keeping.
            for _ in 0..4 {
                let before = atoms.len();
                atoms.retain(|a| a.p > eps || excursion(layer, a) <= MERGE_TOL * (1.0 + a.mean().abs()));
                if atoms.len() == before {
                    break;
                }
                shift = shift.max(stabilize(dist, layer, atoms, eps)?);
            }
            diag.polish_shift = diag.polish_shift.max(shift);
            if config.vertex_refinement {
                let ctx = RefineContext { problem, layer: &layers[li], mode };
                let (splits, shift) = refine(&ctx, dist, atoms, eps)?;
                diag.refinement_splits += splits;
                diag.polish_shift = diag.polish_shift.max(shift);
            }
        }
    }

    let n = problem.num_types();
    let mut atoms = vec![Vec::new(); n];
    for (layer, list) in layers.iter().zip(&cleaned) {
        for &t in &layer.audience {
            atoms[t] = list
                .iter()
                .map(|a| Atom {
                    action: layer.cells[a.cell].actions[t],
                    p: a.p,
                    z: a.z,
                })
                .collect();
        }
    }
    let mut sol = MenuSolution {
        mode,
        objective: 0.0,
        atoms,
        deviation: Vec::new(),
        eps_bind: eps,
        diagnostics: diag,
        distribution: dist.clone(),
    };
    sol.refresh(problem);
    sol.diagnostics.max_violation = cleaned
        .iter()
        .map(|l| {
            let a: Vec<Atom> = l.iter().map(CellAtom::as_atom).collect();
            majorization_violation(dist, &a)
        })
        .fold(0.0, f64::max);
    Ok(sol)
}

/// Drops numerically empty atoms and merges atoms with (nearly) equal means,
/// keeping the cell the designer prefers at the merged mean.
fn clean(atoms: Vec<CellAtom>, layer: &Layer) -> Vec<CellAtom> {
    let mut out: Vec<CellAtom> = Vec::new();
    for mut a in atoms.into_iter().filter(|a| a.p > ATOM_TOL) {
        // The LP meets the cell box only up to its tolerance in `z`, which
        // is a large error in the mean of a light atom.
        let c = &layer.cells[a.cell];
        a.z = a.z.clamp(c.lo * a.p, c.hi * a.p);
        if let Some(last) = out.last_mut() {
            if (a.mean() - last.mean()).abs() <= MERGE_TOL * (1.0 + a.mean().abs()) {
                let p = last.p + a.p;
                let z = last.z + a.z;
                let m = z / p;
                let (c0, c1) = (&layer.cells[last.cell], &layer.cells[a.cell]);
                let cell = if c1.v1 * m + c1.v2 >= c0.v1 * m + c0.v2 { a.cell } else { last.cell };
                *last = CellAtom { cell, p, z };
                continue;
            }
        }
        out.push(a);
    }
    out
}

/// Distance of an atom's mean outside its cell.
fn excursion(layer: &Layer, a: &CellAtom) -> f64 {
    let c = &layer.cells[a.cell];
    let m = a.mean();
    (c.lo - m).max(m - c.hi).max(0.0)
}

fn to_atoms(atoms: &[CellAtom]) -> Vec<Atom> {
    atoms.iter().map(CellAtom::as_atom).collect()
}

/// Rescales each block so it carries exactly its quantile band's mass and
/// integral. Returns the largest change made to any `z`.
fn polish(dist: &StateDistribution, layer: &Layer, atoms: &mut Vec<CellAtom>, blocks: &[BindingBlock]) -> f64 {
    let mut shift: f64 = 0.0;
    for b in blocks {
        let beta = b.q1 - b.q0;
        let gamma = dist.band_integral(b.q0, b.q1);
        let sp: f64 = atoms[b.start..b.end].iter().map(|a| a.p).sum();
        if beta <= 0.0 || sp <= 0.0 {
            for a in &mut atoms[b.start..b.end] {
                a.p = 0.0;
                a.z = 0.0;
            }
            continue;
        }
        let scale = beta / sp;
        let mut sz = 0.0;
        for a in &mut atoms[b.start..b.end] {
            a.p *= scale;
            a.z *= scale;
            sz += a.z;
        }
        // Fix the integral without moving any mean out of its cell: first use
        // the room atoms have inside their cells, then move mass between the
        // outermost atoms (means fixed), and only then shift every mean.
        let mut delta = gamma - sz;
        let block = &mut atoms[b.start..b.end];
        let old: Vec<f64> = block.iter().map(|a| a.z / scale).collect();
        let room: Vec<f64> = block
            .iter()
            .map(|a| {
                let c = &layer.cells[a.cell];
                if delta > 0.0 {
                    (c.hi * a.p - a.z).max(0.0)
                } else {
                    (a.z - c.lo * a.p).max(0.0)
                }
            })
            .collect();
        let total: f64 = room.iter().sum();
        if total > 0.0 {
            let used = delta.abs().min(total) * delta.signum();
            for (a, r) in block.iter_mut().zip(&room) {
                a.z += used * r / total;
            }
            delta -= used;
        }
        if delta != 0.0 && block.len() > 1 {
            let last = block.len() - 1;
            let (lo_m, hi_m) = (block[0].mean(), block[last].mean());
            let t = delta / (hi_m - lo_m);
            let (from, to) = if t > 0.0 { (0, last) } else { (last, 0) };
            if hi_m > lo_m && t.abs() < block[from].p {
                let (mf, mt) = (block[from].mean(), block[to].mean());
                block[from].p -= t.abs();
                block[from].z = block[from].p * mf;
                block[to].p += t.abs();
                block[to].z = block[to].p * mt;
                delta = 0.0;
            }
        }
        for (a, o) in block.iter_mut().zip(&old) {
            a.z += delta / beta * a.p;
            shift = shift.max((a.z - o).abs());
        }
    }
    atoms.retain(|a| a.p > 0.0);
    shift
}

/// Detects blocks and polishes until the block structure stops changing.
fn stabilize(dist: &StateDistribution, layer: &Layer, atoms: &mut Vec<CellAtom>, eps: f64) -> Result<f64> {
    let mut shift: f64 = 0.0;
    for _ in 0..8 {
        let blocks = detect_blocks(dist, &to_atoms(atoms), eps)?;
        let before = atoms.len();
        shift = shift.max(polish(dist, layer, atoms, &blocks));
        let after = detect_blocks(dist, &to_atoms(atoms), eps)?;
        let same = atoms.len() == before
            && after.len() == blocks.len()
            && after.iter().zip(&blocks).all(|(a, b)| a.start == b.start && a.end == b.end);
        if same {
            break;
        }
    }
    Ok(shift)
}

struct RefineContext<'a> {
    problem: &'a Problem,
    layer: &'a Layer,
    mode: SolveMode,
}

/// Vertex refinement: per block, keep the means and re-optimize the masses
/// subject to the block totals and to not worsening any incentive or
/// participation constraint. An extreme point of that LP has at most `n + 2`
/// atoms. If the move would break an interior majorization constraint, step
/// as far as possible, split the block where the constraint becomes tight,
/// and refine the halves.
fn refine(
    ctx: &RefineContext,
    dist: &StateDistribution,
    atoms: &mut Vec<CellAtom>,
    eps: f64,
) -> Result<(usize, f64)> {
    let mut splits = 0;
    let mut shift: f64 = 0.0;
    let mut done: Vec<(f64, f64)> = Vec::new(); // finished blocks by (q0, q1)
    for _ in 0..(4 * atoms.len() + 8) {
        let blocks = detect_blocks(dist, &to_atoms(atoms), eps)?;
        let Some(block) = blocks
            .iter()
            .find(|b| b.len() > 1 && !done.iter().any(|d| (d.0 - b.q0).abs() < 1e-15 && (d.1 - b.q1).abs() < 1e-15))
            .copied()
        else {
            break;
        };
        let target = refine_block_lp(ctx, &atoms[block.start..block.end])?;
        let slice = &atoms[block.start..block.end];
        let alpha = max_step(dist, slice, &target, block.q1);
        for (a, &pt) in atoms[block.start..block.end].iter_mut().zip(&target) {
            let m = a.mean();
            a.p += alpha * (pt - a.p);
            a.z = a.p * m;
        }
        atoms.retain(|a| a.p > ATOM_TOL);
        if alpha >= 1.0 {
            done.push((block.q0, block.q1));
        } else {
            splits += 1;
        }
        let s = stabilize(dist, ctx.layer, atoms, eps)?;
        shift = shift.max(s);
    }
    Ok((splits, shift))
}

/// Solves the per-block support-reduction LP and returns the target masses.
fn refine_block_lp(ctx: &RefineContext, block: &[CellAtom]) -> Result<Vec<f64>> {
    let problem = ctx.problem;
    let k = block.len();
    let means: Vec<f64> = block.iter().map(CellAtom::mean).collect();
    let mut lp = LinearProgram::new(k);
    for (j, a) in block.iter().enumerate() {
        let c = &ctx.layer.cells[a.cell];
        lp.set_objective(j, c.v1 * means[j] + c.v2);
    }
    let beta: f64 = block.iter().map(|a| a.p).sum();
    let gamma: f64 = block.iter().map(|a| a.z).sum();
    lp.add_constraint((0..k).map(|j| (j, 1.0)).collect(), Relation::Eq, beta);
    lp.add_constraint((0..k).map(|j| (j, means[j])).collect(), Relation::Eq, gamma);
    let mut utility_row = |t: usize, rel: Relation| {
        let prof = problem.profile(t);
        let coef: Vec<f64> = means.iter().map(|&m| prof.indirect_utility(m)).collect();
        let current: f64 = block.iter().zip(&coef).map(|(a, u)| a.p * u).sum();
        let slack = 1e-12 * (1.0 + current.abs());
        let rhs = if rel == Relation::Le { current + slack } else { current - slack };
        lp.add_constraint(coef.into_iter().enumerate().collect(), rel, rhs);
    };
    match ctx.mode {
        SolveMode::Private => {
            let own = ctx.layer.audience[0];
            for t in 0..problem.num_types() {
                if t != own {
                    utility_row(t, Relation::Le);
                }
            }
            utility_row(own, Relation::Ge);
        }
        SolveMode::NoIc | SolveMode::Public => {
            if problem.participation.is_some() {
                for &t in &ctx.layer.audience {
                    utility_row(t, Relation::Ge);
                }
            }
        }
    }
    match lp.solve() {
        Ok(sol) => Ok(sol.x),
        // The current masses are feasible, so failure is numerical: keep them.
        Err(_) => Ok(block.iter().map(|a| a.p).collect()),
    }
}

/// Largest `α ∈ [0, 1]` such that moving the block's masses towards `target`
/// keeps every interior suffix within the prior's tail integral.
fn max_step(dist: &StateDistribution, block: &[CellAtom], target: &[f64], q1: f64) -> f64 {
    let means: Vec<f64> = block.iter().map(CellAtom::mean).collect();
    let worst = |alpha: f64| {
        let mut w = f64::NEG_INFINITY;
        let (mut sp, mut sz) = (0.0, 0.0);
        for l in (1..block.len()).rev() {
            let p = block[l].p + alpha * (target[l] - block[l].p);
            sp += p;
            sz += p * means[l];
            w = w.max(sz - dist.band_integral((q1 - sp).max(0.0), q1));
        }
        w
    };
    if worst(1.0) <= 0.0 {
        return 1.0;
    }
    let (mut a, mut b) = (0.0, 1.0);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if worst(m) <= 0.0 {
            a = m;
        } else {
            b = m;
        }
        if b - a <= 1e-16 {
            break;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::model::{Payoffs, ReceiverType};
    use approx::assert_abs_diff_eq;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn threshold_pools_upper_half() {
        let p = instances::threshold();
        let s = solve_opt(&p, &cfg()).unwrap();
        assert_abs_diff_eq!(s.objective, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(s.p(0, 1), 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(s.z(0, 1), 0.375, epsilon = 1e-9);
        let atoms = posterior_atoms(&s, 0);
        assert_eq!(atoms.len(), 2);
        assert_eq!((atoms[0].0, atoms[1].0), (0, 1));
        assert_abs_diff_eq!(atoms[0].2, 0.25, epsilon = 1e-9);
        assert_abs_diff_eq!(atoms[1].2, 0.75, epsilon = 1e-9);
        let blocks = binding_groups(&s, 0, s.eps_bind).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_abs_diff_eq!(blocks[0].q1, 0.5, epsilon = 1e-9);
        assert!(s.diagnostics.max_violation <= 1e-10);
    }

    #[test]
    fn single_type_public_matches_private() {
        let p = instances::threshold();
        let a = solve_opt(&p, &cfg()).unwrap();
        let b = solve_public(&p, &cfg()).unwrap();
        assert_abs_diff_eq!(a.objective, b.objective, epsilon = 1e-9);
    }

    fn one_type(u1: Vec<f64>, u2: Vec<f64>, v1: Vec<f64>, v2: Vec<f64>) -> Problem {
        let k = u1.len();
        Problem::new(
            StateDistribution::uniform(0.0, 1.0).unwrap(),
            vec![ReceiverType { label: "t".into(), weight: 1.0 }],
            (0..k).map(|a| a.to_string()).collect(),
            Payoffs { u1: vec![u1], u2: vec![u2], v1: vec![v1], v2: vec![v2] },
        )
        .unwrap()
    }

    #[test]
    fn flat_receiver_means_no_disclosure() {
        let p = one_type(vec![1.0; 3], vec![0.0; 3], vec![0.0; 3], vec![0.2, 1.0, 0.5]);
        let s = solve_opt(&p, &cfg()).unwrap();
        assert_eq!(s.atoms[0].len(), 1);
        assert_eq!(s.atoms[0][0].action, 1);
        assert_abs_diff_eq!(s.atoms[0][0].mean(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.objective, 1.0, epsilon = 1e-12);
        assert_eq!(binding_groups(&s, 0, s.eps_bind).unwrap().len(), 1);
    }

    #[test]
    fn aligned_designer_discloses_fully() {
        // The designer shares the receiver's payoff, so full disclosure is optimal.
        let u1 = vec![0.0, 1.0, 2.0];
        let u2 = vec![0.0, -0.3, -1.0];
        let p = one_type(u1.clone(), u2.clone(), u1, u2);
        let s = solve_opt(&p, &cfg()).unwrap();
        let b = p.profile(0).cutoffs();
        assert_eq!(s.atoms[0].len(), 3);
        // The objective is flat to second order here, so the geometry is only
        // pinned down loosely while the value is tight.
        let mut full = 0.0;
        for (k, a) in s.atoms[0].iter().enumerate() {
            let m = 0.5 * (b[k] + b[k + 1]);
            assert_abs_diff_eq!(a.mean(), m, epsilon = 1e-4);
            full += (b[k + 1] - b[k]) * p.profile(0).indirect_utility(m);
        }
        assert_abs_diff_eq!(s.objective, full, epsilon = 1e-9);
        assert_eq!(binding_groups(&s, 0, s.eps_bind).unwrap().len(), 3);
    }

    #[test]
    fn buyer_sandwich_and_ic() {
        let p = instances::buyer();
        let opt = solve_opt(&p, &cfg()).unwrap();
        let free = solve_no_ic(&p, &cfg()).unwrap();
        let public = solve_public(&p, &cfg()).unwrap();
        assert!(free.objective >= opt.objective - 1e-7);
        assert!(opt.objective >= public.objective + 1e-3);
        for t in 0..3 {
            let d = opt.truthful_value(t);
            for s in 0..3 {
                let u: f64 = opt.deviation[t][s].iter().sum();
                assert!(d >= u - 1e-7, "type {t} gains by reporting {s}");
            }
        }
        assert!(opt.diagnostics.max_violation <= 1e-9);
    }

    #[test]
    fn rewards_scale_objective() {
        let p = instances::buyer();
        let mut q = p.clone();
        for row in q.payoffs.v2.iter_mut() {
            for v in row.iter_mut() {
                *v *= 2.5;
            }
        }
        let q = Problem::new(q.distribution, q.types, q.actions, q.payoffs).unwrap();
        let a = solve_opt(&p, &cfg()).unwrap();
        let b = solve_opt(&q, &cfg()).unwrap();
        assert_abs_diff_eq!(b.objective, 2.5 * a.objective, epsilon = 1e-7);
    }

    #[test]
    fn impossible_participation_names_the_type() {
        let p = instances::buyer().with_participation(vec![0.0, 0.0, 10.0]).unwrap();
        match solve_opt(&p, &cfg()) {
            Err(Error::InfeasibleParticipation { type_label }) => assert_eq!(type_label, "high"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn participation_bound_is_respected() {
        let base = solve_opt(&instances::buyer(), &cfg()).unwrap();
        let bound = base.truthful_value(0) + 0.02;
        let p = instances::buyer().with_participation(vec![bound, 0.0, 0.0]).unwrap();
        let s = solve_opt(&p, &cfg()).unwrap();
        assert!(s.truthful_value(0) >= bound - 1e-7);
        assert!(s.objective <= base.objective + 1e-7);
    }

    #[test]
    fn public_private_public_value() {
        let p = instances::public_private(3);
        let s = solve_public(&p, &cfg()).unwrap();
        assert_abs_diff_eq!(s.objective, 1.0 / 3.0, epsilon = 1e-6);
    }

    #[test]
    fn explicit_menu_round_trip() {
        let p = instances::threshold();
        let s = MenuSolution::from_atoms(
            &p,
            SolveMode::Private,
            vec![vec![
                Atom { action: 0, p: 0.5, z: 0.125 },
                Atom { action: 1, p: 0.5, z: 0.375 },
            ]],
        )
        .unwrap();
        assert_abs_diff_eq!(s.objective, 0.5, epsilon = 1e-15);
        assert!(s.diagnostics.max_violation <= 1e-15);
    }

    #[test]
    fn rejects_bad_config() {
        let c = SolverConfig { grid_size: 1, ..cfg() };
        assert!(matches!(solve_opt(&instances::threshold(), &c), Err(Error::InvalidConfig(_))));
        let c = SolverConfig { cut_tol: 0.0, ..cfg() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn round_limit_reports_incumbent() {
        let c = SolverConfig { max_rounds: 1, grid_size: 2, ..cfg() };
        match solve_opt(&instances::buyer(), &c) {
            Err(Error::NotConverged { rounds, violation, incumbent }) => {
                assert_eq!(rounds, 1);
                assert!(violation > c.cut_tol);
                assert_eq!(incumbent.atoms.len(), 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
