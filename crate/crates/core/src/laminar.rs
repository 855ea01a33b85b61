//! Laminar partitional signals realizing a solved menu.
//!
//! Within a block occupying the quantile band `[q0, q1]`, the atom with the
//! largest mean is carved out first as a quantile window of its mass whose
//! integral matches its `z`. The window is found in the prior with all
//! previously carved windows removed, so later (lower-mean) windows either
//! contain an earlier one or miss it. Removed mass is tracked as a list of
//! surviving quantile segments instead of building renormalized CDFs.

use serde::{Deserialize, Serialize};

use crate::dist::StateDistribution;
use crate::error::{Error, Result};
use crate::model::Problem;
use crate::reduced_form::{binding_groups, MenuSolution};

/// Tolerance on block totals and interior majorization when checking inputs.
pub const INPUT_TOL: f64 = 1e-9;
/// Measure below which an overlap is treated as empty.
pub const MEASURE_TOL: f64 = 1e-10;

/// Intervals of one block: `hulls[k]` is `J_k` and `pieces[k]` the state
/// intervals of `P_k`, both in the block's atom order (increasing mean).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaminarFamily {
    pub q0: f64,
    pub q1: f64,
    pub hulls: Vec<(f64, f64)>,
    pub pieces: Vec<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    /// Index of the realized atom in the solution's list for this type.
    pub atom: usize,
    pub action: usize,
    pub block: usize,
    /// Disjoint state intervals on which the message is sent.
    pub intervals: Vec<(f64, f64)>,
    /// Atom the message was built for.
    pub target_p: f64,
    pub target_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeMechanism {
    pub label: String,
    pub messages: Vec<Message>,
    pub blocks: Vec<LaminarFamily>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub types: Vec<TypeMechanism>,
    /// Whether the solution was refined to extreme points, which is when the
    /// `n + 2` message bound per block is guaranteed.
    pub refined: bool,
}

/// Quantile segments still present after earlier carvings.
#[derive(Debug, Clone)]
struct Remaining {
    segs: Vec<(f64, f64)>,
}

impl Remaining {
    fn total(&self) -> f64 {
        self.segs.iter().map(|(a, b)| b - a).sum()
    }

    /// Original-quantile segments covering compressed coordinates `[s0, s1]`.
    fn window(&self, s0: f64, s1: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut acc = 0.0;
        for &(a, b) in &self.segs {
            let len = b - a;
            let (lo, hi) = (s0.max(acc), s1.min(acc + len));
            if hi > lo {
                out.push((a + (lo - acc), (a + (hi - acc)).min(b)));
            }
            acc += len;
        }
        out
    }

    fn integral(&self, dist: &StateDistribution, s0: f64, s1: f64) -> f64 {
        self.window(s0, s1)
            .iter()
            .map(|&(a, b)| dist.band_integral(a, b))
            .sum()
    }

    fn remove(&mut self, cut: &[(f64, f64)]) {
        let mut out = Vec::with_capacity(self.segs.len() + 1);
        for &(a, b) in &self.segs {
            let mut pieces = vec![(a, b)];
            for &(c, d) in cut {
                pieces = pieces
                    .into_iter()
                    .flat_map(|(x, y)| {
                        let mut v = Vec::new();
                        if c > x {
                            v.push((x, c.min(y)));
                        }
                        if d < y {
                            v.push((d.max(x), y));
                        }
                        v
                    })
                    .filter(|(x, y)| y > x)
                    .collect();
            }
            out.extend(pieces);
        }
        self.segs = out;
    }
}

fn to_states(dist: &StateDistribution, segs: &[(f64, f64)]) -> Vec<(f64, f64)> {
    segs.iter()
        .map(|&(a, b)| (dist.quantile_clamped(a), dist.quantile_clamped(b)))
        .collect()
}

/// Builds the laminar family for one block from atoms `(p, z)` with strictly
/// increasing means that exactly fill the band `[q0, q1]`.
pub fn construct_block(
    dist: &StateDistribution,
    q0: f64,
    q1: f64,
    atoms: &[(f64, f64)],
) -> Result<LaminarFamily> {
    let k = atoms.len();
    if k == 0 {
        return Err(Error::Construction("block has no atoms".into()));
    }
    if !(0.0..=1.0).contains(&q0) || !(q0 < q1 && q1 <= 1.0) {
        return Err(Error::Construction(format!("bad quantile band [{q0}, {q1}]")));
    }
    if let Some(i) = atoms.iter().position(|&(p, _)| !(p > 0.0)) {
        return Err(Error::Construction(format!("atom {i} has non-positive mass")));
    }
    for i in 1..k {
        if atoms[i].1 / atoms[i].0 <= atoms[i - 1].1 / atoms[i - 1].0 {
            return Err(Error::Construction(format!(
                "means must increase strictly, atoms {} and {i} do not",
                i - 1
            )));
        }
    }
    let sp: f64 = atoms.iter().map(|a| a.0).sum();
    let sz: f64 = atoms.iter().map(|a| a.1).sum();
    if (sp - (q1 - q0)).abs() > INPUT_TOL {
        return Err(Error::Construction(format!(
            "atom masses sum to {sp}, block holds {}",
            q1 - q0
        )));
    }
    let band = dist.band_integral(q0, q1);
    if (sz - band).abs() > INPUT_TOL {
        return Err(Error::Construction(format!(
            "atom integrals sum to {sz}, block integral is {band}"
        )));
    }
    let (mut tp, mut tz) = (0.0, 0.0);
    for l in (1..k).rev() {
        tp += atoms[l].0;
        tz += atoms[l].1;
        let cap = dist.band_integral((q1 - tp).max(q0), q1);
        if tz > cap + INPUT_TOL {
            return Err(Error::Construction(format!(
                "suffix from atom {l} exceeds the prior by {:e}",
                tz - cap
            )));
        }
    }

    let mut rem = Remaining { segs: vec![(q0, q1)] };
    let mut hulls = vec![(0.0, 0.0); k];
    let mut pieces = vec![Vec::new(); k];
    for i in (1..k).rev() {
        let (p, z) = atoms[i];
        let total = rem.total();
        let span = (total - p).max(0.0);
        let f = |s: f64| rem.integral(dist, s, s + p);
        let (f_lo, f_hi) = (f(0.0), f(span));
        if z < f_lo - INPUT_TOL || z > f_hi + INPUT_TOL {
            return Err(Error::Construction(format!(
                "no window for atom {i}: needs {z}, feasible range [{f_lo}, {f_hi}]"
            )));
        }
        let (mut a, mut b) = (0.0, span);
        while b - a > 1e-15 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if f(m) < z {
                a = m;
            } else {
                b = m;
            }
        }
        // Pick the endpoint whose integral is closer to the target.
        let s0 = if (f(a) - z).abs() <= (f(b) - z).abs() { a } else { b };
        let segs = rem.window(s0, s0 + p);
        let first = segs.first().map(|s| s.0).unwrap_or(q0);
        let last = segs.last().map(|s| s.1).unwrap_or(q0);
        hulls[i] = (dist.quantile_clamped(first), dist.quantile_clamped(last));
        pieces[i] = to_states(dist, &segs);
        rem.remove(&segs);
    }
    hulls[0] = (dist.quantile_clamped(q0), dist.quantile_clamped(q1));
    pieces[0] = to_states(dist, &rem.segs);
    Ok(LaminarFamily { q0, q1, hulls, pieces })
}

/// Realizes every type's signal: split into binding blocks, then build each
/// block's laminar family.
pub fn construct_mechanism(problem: &Problem, solution: &MenuSolution) -> Result<Mechanism> {
    if solution.num_types() != problem.num_types() {
        return Err(Error::Mismatch(format!(
            "solution has {} types, problem has {}",
            solution.num_types(),
            problem.num_types()
        )));
    }
    let dist = &problem.distribution;
    let mut types = Vec::with_capacity(problem.num_types());
    for t in 0..problem.num_types() {
        let atoms = &solution.atoms[t];
        let blocks = binding_groups(solution, t, solution.eps_bind)?;
        let covered: usize = blocks.iter().map(|b| b.len()).sum();
        if covered != atoms.len() {
            return Err(Error::Mismatch(format!(
                "blocks of type {t} cover {covered} of {} atoms",
                atoms.len()
            )));
        }
        let mut messages = Vec::with_capacity(atoms.len());
        let mut families = Vec::with_capacity(blocks.len());
        for b in &blocks {
            if b.q1 - b.q0 <= 0.0 {
                continue;
            }
            let slice: Vec<(f64, f64)> = atoms[b.start..b.end].iter().map(|a| (a.p, a.z)).collect();
            let fam = construct_block(dist, b.q0, b.q1, &slice)?;
            for (j, pieces) in fam.pieces.iter().enumerate() {
                let a = &atoms[b.start + j];
                messages.push(Message {
                    atom: b.start + j,
                    action: a.action,
                    block: families.len(),
                    intervals: pieces.clone(),
                    target_p: a.p,
                    target_z: a.z,
                });
            }
            families.push(fam);
        }
        types.push(TypeMechanism {
            label: problem.types[t].label.clone(),
            messages,
            blocks: families,
        });
    }
    Ok(Mechanism {
        types,
        refined: solution.diagnostics.vertex_refined,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LaminarReport {
    /// Hulls of messages pairwise nested or (up to measure zero) disjoint.
    pub laminar: bool,
    /// Messages of each type tile the support.
    pub partition: bool,
    /// Every block sends at most `n + 2` messages.
    pub message_bound: bool,
    /// No message uses more intervals than its block has messages.
    pub interval_counts: bool,
    pub max_messages_per_block: usize,
    /// Whether `message_bound` counts towards `passed`.
    pub bound_enforced: bool,
    pub issues: Vec<String>,
}

impl LaminarReport {
    pub fn passed(&self) -> bool {
        self.laminar && self.partition && self.interval_counts && (self.message_bound || !self.bound_enforced)
    }
}

fn hull(iv: &[(f64, f64)]) -> Option<(f64, f64)> {
    let lo = iv.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
    let hi = iv.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    (lo <= hi).then_some((lo, hi))
}

fn measure(dist: &StateDistribution, a: f64, b: f64) -> f64 {
    if b <= a {
        0.0
    } else {
        dist.cdf(b) - dist.cdf(a)
    }
}

/// Checks the structural properties of a mechanism.
pub fn validate_laminar(problem: &Problem, mechanism: &Mechanism) -> LaminarReport {
    let dist = &problem.distribution;
    let bound = problem.num_types() + 2;
    let mut r = LaminarReport {
        laminar: true,
        partition: true,
        message_bound: true,
        interval_counts: true,
        max_messages_per_block: 0,
        bound_enforced: mechanism.refined,
        issues: Vec::new(),
    };
    for tm in &mechanism.types {
        let hulls: Vec<(usize, (f64, f64))> = tm
            .messages
            .iter()
            .enumerate()
            .filter_map(|(i, m)| hull(&m.intervals).map(|h| (i, h)))
            .collect();
        for (x, &(i, a)) in hulls.iter().enumerate() {
            for &(j, b) in &hulls[x + 1..] {
                let common = measure(dist, a.0.max(b.0), a.1.min(b.1));
                if common <= MEASURE_TOL {
                    continue;
                }
                let a_out = measure(dist, a.0, a.1.min(b.0)) + measure(dist, a.0.max(b.1), a.1);
                let b_out = measure(dist, b.0, b.1.min(a.0)) + measure(dist, b.0.max(a.1), b.1);
                if a_out > MEASURE_TOL && b_out > MEASURE_TOL {
                    r.laminar = false;
                    r.issues.push(format!(
                        "type {}: hulls of messages {i} and {j} cross: [{}, {}] vs [{}, {}]",
                        tm.label, a.0, a.1, b.0, b.1
                    ));
                }
            }
        }

        let mut all: Vec<(f64, f64)> = tm.messages.iter().flat_map(|m| m.intervals.iter().copied()).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        let covered: f64 = all.iter().map(|&(a, b)| measure(dist, a, b)).sum();
        let mut overlap = 0.0;
        for (x, a) in all.iter().enumerate() {
            for b in &all[x + 1..] {
                overlap += measure(dist, a.0.max(b.0), a.1.min(b.1));
            }
        }
        if (covered - 1.0).abs() > 1e-9 || overlap > MEASURE_TOL {
            r.partition = false;
            r.issues.push(format!(
                "type {}: messages cover mass {covered} with overlap {overlap}",
                tm.label
            ));
        }

        for (bi, fam) in tm.blocks.iter().enumerate() {
            let count = tm.messages.iter().filter(|m| m.block == bi).count();
            r.max_messages_per_block = r.max_messages_per_block.max(count);
            if count > bound {
                r.message_bound = false;
                r.issues.push(format!(
                    "type {}: block {bi} sends {count} messages, bound is {bound}",
                    tm.label
                ));
            }
            for m in tm.messages.iter().filter(|m| m.block == bi) {
                if m.intervals.len() > fam.pieces.len() {
                    r.interval_counts = false;
                    r.issues.push(format!(
                        "type {}: message {} uses {} intervals in a block of {}",
                        tm.label,
                        m.atom,
                        m.intervals.len(),
                        fam.pieces.len()
                    ));
                }
            }
        }
    }
    r
}

impl Mechanism {
    /// Rows `type,message,action,interval_lo,interval_hi` with 17 significant digits.
    pub fn to_csv(&self, problem: &Problem) -> String {
        let mut out = String::from("type,message,action,interval_lo,interval_hi\n");
        for tm in &self.types {
            for m in &tm.messages {
                for &(a, b) in &m.intervals {
                    out.push_str(&format!(
                        "{},{},{},{:.16e},{:.16e}\n",
                        tm.label, m.atom, problem.actions[m.action], a, b
                    ));
                }
            }
        }
        out
    }

    /// Message index of type `t` sent in state `x`. Intervals are read as
    /// half-open `[lo, hi)` except at the top of the support.
    pub fn route(&self, t: usize, x: f64) -> Option<usize> {
        let msgs = &self.types[t].messages;
        let inside = |strict: bool| {
            msgs.iter().position(|m| {
                m.intervals
                    .iter()
                    .any(|&(a, b)| a <= x && (x < b || (!strict && x <= b)))
            })
        };
        inside(true).or_else(|| inside(false))
    }
}
