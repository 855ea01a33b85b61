//! Persuasion problem instances and per-type step profiles.
//!
//! Utilities are quasi-linear in the state: a receiver of type `θ` taking
//! action `a` at posterior mean `m` gets `u1[θ][a]·m + u2[θ][a]`, the designer
//! gets `v1[θ][a]·m + v2[θ][a]`. A type's indirect utility is the upper
//! envelope of its affine action payoffs over the support, which splits the
//! support into ordered cells `[b_{k-1}, b_k]`, one per action that is ever
//! optimal.

use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive};
use serde::Serialize;

use crate::dist::StateDistribution;
use crate::error::{Error, Result};

/// Weight tolerance for "sums to one".
pub const WEIGHT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReceiverType {
    pub label: String,
    pub weight: f64,
}

/// Per (type, action) payoff coefficients, indexed `[type][action]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Payoffs {
    pub u1: Vec<Vec<f64>>,
    pub u2: Vec<Vec<f64>>,
    pub v1: Vec<Vec<f64>>,
    pub v2: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub distribution: StateDistribution,
    pub types: Vec<ReceiverType>,
    pub actions: Vec<String>,
    pub payoffs: Payoffs,
    /// Optional lower bound on each type's truthful expected utility.
    pub participation: Option<Vec<f64>>,
    profiles: Vec<StepProfile>,
}

impl Problem {
    pub fn new(
        distribution: StateDistribution,
        types: Vec<ReceiverType>,
        actions: Vec<String>,
        payoffs: Payoffs,
    ) -> Result<Self> {
        let n = types.len();
        let k = actions.len();
        if n == 0 {
            return Err(Error::InvalidProblem("at least one type is required".into()));
        }
        if k == 0 {
            return Err(Error::InvalidProblem("at least one action is required".into()));
        }
        for t in &types {
            if !(t.weight > 0.0) || !t.weight.is_finite() {
                return Err(Error::InvalidProblem(format!(
                    "type `{}` has non-positive weight {}",
                    t.label, t.weight
                )));
            }
        }
        let total: f64 = types.iter().map(|t| t.weight).sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidProblem(format!("type weights sum to {total}, not 1")));
        }
        for (name, table) in [
            ("u1", &payoffs.u1),
            ("u2", &payoffs.u2),
            ("v1", &payoffs.v1),
            ("v2", &payoffs.v2),
        ] {
            if table.len() != n || table.iter().any(|row| row.len() != k) {
                return Err(Error::InvalidProblem(format!(
                    "coefficient table `{name}` must be {n} x {k}"
                )));
            }
            if table.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidProblem(format!("`{name}` has non-finite entries")));
            }
        }
        let profiles = (0..n)
            .map(|t| StepProfile::derive(&distribution, &payoffs, t))
            .collect();
        Ok(Self {
            distribution,
            types,
            actions,
            payoffs,
            participation: None,
            profiles,
        })
    }

    pub fn with_participation(mut self, bounds: Vec<f64>) -> Result<Self> {
        if bounds.len() != self.types.len() {
            return Err(Error::InvalidProblem(format!(
                "participation needs {} bounds, got {}",
                self.types.len(),
                bounds.len()
            )));
        }
        self.participation = Some(bounds);
        Ok(self)
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn weight(&self, t: usize) -> f64 {
        self.types[t].weight
    }

    pub fn profile(&self, t: usize) -> &StepProfile {
        &self.profiles[t]
    }

    pub fn profiles(&self) -> &[StepProfile] {
        &self.profiles
    }

    /// Receiver payoff of raw action `a` for type `t` at mean `m`.
    pub fn receiver_payoff(&self, t: usize, a: usize, m: f64) -> f64 {
        self.payoffs.u1[t][a] * m + self.payoffs.u2[t][a]
    }

    pub fn designer_payoff(&self, t: usize, a: usize, m: f64) -> f64 {
        self.payoffs.v1[t][a] * m + self.payoffs.v2[t][a]
    }
}

/// Step profile of one type.
pub fn derive_step_profile(problem: &Problem, type_index: usize) -> StepProfile {
    StepProfile::derive(&problem.distribution, &problem.payoffs, type_index)
}

/// One cell of the upper envelope: `action` is optimal on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Piece {
    pub action: usize,
    pub lo: f64,
    pub hi: f64,
    /// `c = u1`
    pub slope: f64,
    pub intercept: f64,
    pub v1: f64,
    pub v2: f64,
}

impl Piece {
    pub fn utility(&self, m: f64) -> f64 {
        self.slope * m + self.intercept
    }

    /// Utility at the right cutoff, `h = u2 + u1·b`.
    pub fn anchor(&self) -> f64 {
        self.utility(self.hi)
    }

    pub fn designer(&self, m: f64) -> f64 {
        self.v1 * m + self.v2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepProfile {
    pub pieces: Vec<Piece>,
    /// `right_owns[k]` assigns the cutoff between pieces `k` and `k+1`.
    pub right_owns: Vec<bool>,
    /// Raw actions that are never uniquely optimal on the support.
    pub collapsed: Vec<usize>,
    lo: f64,
    hi: f64,
}

impl StepProfile {
    fn derive(dist: &StateDistribution, payoffs: &Payoffs, t: usize) -> Self {
        let (lo, hi) = dist.support();
        let k = payoffs.u1[t].len();
        let mid = 0.5 * (lo + hi);
        let designer_mid = |a: usize| payoffs.v1[t][a] * mid + payoffs.v2[t][a];

        // Drop exact duplicates of receiver payoffs, keeping the designer's favourite.
        let mut keep: Vec<usize> = Vec::with_capacity(k);
        for a in 0..k {
            let dup = keep.iter().position(|&b| {
                payoffs.u1[t][a] == payoffs.u1[t][b] && payoffs.u2[t][a] == payoffs.u2[t][b]
            });
            match dup {
                Some(pos) => {
                    if designer_mid(a) >= designer_mid(keep[pos]) {
                        keep[pos] = a;
                    }
                }
                None => keep.push(a),
            }
        }

        let rat = |x: f64| BigRational::from_float(x).expect("finite coefficient");
        let lines: Vec<(usize, BigRational, BigRational)> = keep
            .iter()
            .map(|&a| (a, rat(payoffs.u1[t][a]), rat(payoffs.u2[t][a])))
            .collect();
        let value = |i: usize, m: &BigRational| &lines[i].1 * m + &lines[i].2;

        let lo_r = rat(lo);
        let hi_r = rat(hi);
        // Best line just to the right of `lo`: max value, then max slope.
        let mut current = 0;
        for i in 1..lines.len() {
            let (vi, vc) = (value(i, &lo_r), value(current, &lo_r));
            if vi > vc || (vi == vc && lines[i].1 > lines[current].1) {
                current = i;
            }
        }
        let mut start = lo_r.clone();
        let mut cells: Vec<(usize, BigRational, BigRational)> = Vec::new();
        loop {
            let mut next: Option<(usize, BigRational)> = None;
            for i in 0..lines.len() {
                let dslope = &lines[i].1 - &lines[current].1;
                if !dslope.is_positive() {
                    continue;
                }
                let x = (&lines[current].2 - &lines[i].2) / dslope;
                if x >= hi_r || x < start {
                    continue;
                }
                next = match next {
                    None => Some((i, x)),
                    Some((j, xj)) => {
                        if x < xj || (x == xj && lines[i].1 > lines[j].1) {
                            Some((i, x))
                        } else {
                            Some((j, xj))
                        }
                    }
                };
            }
            match next {
                Some((i, x)) => {
                    if x > start {
                        cells.push((current, start.clone(), x.clone()));
                    }
                    start = x;
                    current = i;
                }
                None => {
                    cells.push((current, start.clone(), hi_r.clone()));
                    break;
                }
            }
        }

        let to_f64 = |x: &BigRational| x.to_f64().expect("cutoff within f64 range");
        let pieces: Vec<Piece> = cells
            .iter()
            .map(|(i, a, b)| {
                let action = lines[*i].0;
                Piece {
                    action,
                    lo: to_f64(a),
                    hi: to_f64(b),
                    slope: payoffs.u1[t][action],
                    intercept: payoffs.u2[t][action],
                    v1: payoffs.v1[t][action],
                    v2: payoffs.v2[t][action],
                }
            })
            .collect();
        let right_owns = pieces
            .windows(2)
            .map(|w| w[1].designer(w[0].hi) >= w[0].designer(w[0].hi))
            .collect();
        let collapsed = (0..k)
            .filter(|a| !pieces.iter().any(|p| p.action == *a))
            .collect();
        Self {
            pieces,
            right_owns,
            collapsed,
            lo,
            hi,
        }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Cutoffs `b_0 = lo <= b_1 <= ... <= b_K̃ = hi` over the active actions.
    pub fn cutoffs(&self) -> Vec<f64> {
        std::iter::once(self.lo)
            .chain(self.pieces.iter().map(|p| p.hi))
            .collect()
    }

    /// Actions relabeled so active ones come first in envelope order, followed
    /// by collapsed ones, whose cells degenerate to the top of the support.
    pub fn ordered_actions(&self) -> Vec<usize> {
        self.pieces
            .iter()
            .map(|p| p.action)
            .chain(self.collapsed.iter().copied())
            .collect()
    }

    /// Cutoffs aligned with [`ordered_actions`](Self::ordered_actions).
    pub fn full_cutoffs(&self) -> Vec<f64> {
        let mut b = self.cutoffs();
        b.extend(self.collapsed.iter().map(|_| self.hi));
        b
    }

    /// Cell `[b_{a-1}, b_a]` of a raw action, `None` if it is never optimal.
    pub fn cell(&self, action: usize) -> Option<(f64, f64)> {
        self.pieces
            .iter()
            .find(|p| p.action == action)
            .map(|p| (p.lo, p.hi))
    }

    pub fn piece_of(&self, action: usize) -> Option<&Piece> {
        self.pieces.iter().find(|p| p.action == action)
    }

    /// `ū(m) = max_a u1·m + u2`.
    pub fn indirect_utility(&self, m: f64) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.utility(m))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index into `pieces` of the receiver's choice at `m`, breaking ties at
    /// cutoffs in the designer's favour.
    pub fn best_piece(&self, m: f64) -> usize {
        let m = m.clamp(self.lo, self.hi);
        let tol = 1e-12 * (1.0 + m.abs());
        for (k, owner_right) in self.right_owns.iter().enumerate() {
            let b = self.pieces[k].hi;
            if (m - b).abs() <= tol {
                return if *owner_right { k + 1 } else { k };
            }
            if m < b {
                return k;
            }
        }
        self.pieces.len() - 1
    }

    pub fn best_action(&self, m: f64) -> usize {
        self.pieces[self.best_piece(m)].action
    }

    /// Designer's payoff `v̄(m)` given the receiver's tie-broken choice.
    pub fn designer_value(&self, m: f64) -> f64 {
        self.pieces[self.best_piece(m)].designer(m)
    }
}
