//! Atomless state distributions on a bounded interval.
//!
//! Every distribution is stored as a piecewise-linear CDF over a strictly
//! increasing knot grid, so the quantile function is piecewise linear and all
//! quantile-space integrals are exact piecewise quadratics. The uniform law is
//! the two-knot special case.
//!
//! Two integrals drive the rest of the crate:
//!
//! - the tail integral `Φ(q) = ∫_{1-q}^{1} F⁻¹(x) dx`, the right-hand side of
//!   the majorization constraints, concave in `q` with `Φ'(q) = F⁻¹(1-q)`;
//! - the conditional mean of a quantile band, `(1/(q1-q0)) ∫_{q0}^{q1} F⁻¹`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for probability comparisons.
pub const PROB_TOL: f64 = 1e-12;

/// Serialized form of a distribution, as it appears in problem files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum DistributionSpec {
    #[serde(rename = "uniform")]
    Uniform { lo: f64, hi: f64 },
    /// Knots are `[state, cumulative probability]` pairs.
    #[serde(rename = "pl_cdf")]
    PiecewiseLinear { knots: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionSpec", into = "DistributionSpec")]
pub struct StateDistribution {
    spec: DistributionSpec,
    states: Vec<f64>,
    cum: Vec<f64>,
    /// `prefix[i] = ∫_0^{cum[i]} F⁻¹(x) dx`.
    prefix: Vec<f64>,
}

impl TryFrom<DistributionSpec> for StateDistribution {
    type Error = Error;

    fn try_from(spec: DistributionSpec) -> Result<Self> {
        match spec {
            DistributionSpec::Uniform { lo, hi } => Self::uniform(lo, hi),
            DistributionSpec::PiecewiseLinear { knots } => Self::piecewise_linear(&knots),
        }
    }
}

impl From<StateDistribution> for DistributionSpec {
    fn from(d: StateDistribution) -> Self {
        d.spec
    }
}

impl StateDistribution {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidDistribution(format!(
                "uniform requires finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self::from_knots(
            DistributionSpec::Uniform { lo, hi },
            vec![lo, hi],
            vec![0.0, 1.0],
        ))
    }

    /// Builds a distribution from `(state, cumulative probability)` knots.
    ///
    /// States must be strictly increasing, cumulative values nondecreasing,
    /// starting at 0 and ending at 1. Flat stretches (zero density) are allowed.
    pub fn piecewise_linear(knots: &[[f64; 2]]) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidDistribution(
                "piecewise-linear CDF needs at least two knots".into(),
            ));
        }
        let mut states = Vec::with_capacity(knots.len());
        let mut cum = Vec::with_capacity(knots.len());
        for (i, &[t, c]) in knots.iter().enumerate() {
            if !t.is_finite() || !c.is_finite() {
                return Err(Error::InvalidDistribution(format!("knot {i} is not finite")));
            }
            if let Some(&prev) = states.last() {
                if t <= prev {
                    return Err(Error::InvalidDistribution(format!(
                        "knot states must be strictly increasing (knot {i}: {t} after {prev})"
                    )));
                }
            }
            if let Some(&prev) = cum.last() {
                if c < prev {
                    return Err(Error::InvalidDistribution(format!(
                        "cumulative probabilities must be nondecreasing (knot {i})"
                    )));
                }
            }
            states.push(t);
            cum.push(c);
        }
        let last = cum.len() - 1;
        if cum[0].abs() > PROB_TOL || (cum[last] - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidDistribution(format!(
                "cumulative probabilities must run from 0 to 1, got {} to {}",
                cum[0], cum[last]
            )));
        }
        cum[0] = 0.0;
        cum[last] = 1.0;
        Ok(Self::from_knots(
            DistributionSpec::PiecewiseLinear {
                knots: knots.to_vec(),
            },
            states,
            cum,
        ))
    }

    fn from_knots(spec: DistributionSpec, states: Vec<f64>, cum: Vec<f64>) -> Self {
        let mut prefix = Vec::with_capacity(states.len());
        prefix.push(0.0);
        for i in 1..states.len() {
            let seg = (cum[i] - cum[i - 1]) * 0.5 * (states[i - 1] + states[i]);
            prefix.push(prefix[i - 1] + seg);
        }
        Self {
            spec,
            states,
            cum,
            prefix,
        }
    }

    pub fn spec(&self) -> &DistributionSpec {
        &self.spec
    }

    pub fn support(&self) -> (f64, f64) {
        (self.states[0], *self.states.last().unwrap())
    }

    pub fn lo(&self) -> f64 {
        self.states[0]
    }

    pub fn hi(&self) -> f64 {
        *self.states.last().unwrap()
    }

    pub fn mean(&self) -> f64 {
        *self.prefix.last().unwrap()
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t <= self.lo() {
            return 0.0;
        }
        if t >= self.hi() {
            return 1.0;
        }
        // first knot strictly above t
        let i = self.states.partition_point(|&s| s <= t);
        let (t0, t1) = (self.states[i - 1], self.states[i]);
        let (c0, c1) = (self.cum[i - 1], self.cum[i]);
        c0 + (c1 - c0) * (t - t0) / (t1 - t0)
    }

    /// Generalized inverse `inf{t : F(t) >= q}`.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        Ok(self.quantile_clamped(check_prob(q)?))
    }

    /// `Φ(q) = ∫_{1-q}^{1} F⁻¹(x) dx`.
    pub fn tail_quantile_integral(&self, q: f64) -> Result<f64> {
        Ok(self.tail_integral(check_prob(q)?))
    }

    /// Mean of the state over the quantile band `[q0, q1]`.
    pub fn conditional_mean(&self, q0: f64, q1: f64) -> Result<f64> {
        let (q0, q1) = (check_prob(q0)?, check_prob(q1)?);
        if q1 - q0 <= PROB_TOL {
            return Err(Error::Domain(format!(
                "conditional mean needs q0 < q1, got ({q0}, {q1})"
            )));
        }
        Ok(self.band_integral(q0, q1) / (q1 - q0))
    }

    /// Probability and mass-weighted mean `(Σ F(b)-F(a), Σ ∫_a^b t dF)` of a
    /// union of disjoint state intervals.
    pub fn interval_stats(&self, intervals: &[(f64, f64)]) -> Result<(f64, f64)> {
        let mut sorted = intervals.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in sorted.windows(2) {
            if w[1].0 < w[0].1 - PROB_TOL {
                return Err(Error::Domain(format!(
                    "intervals [{}, {}] and [{}, {}] overlap",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        let mut prob = 0.0;
        let mut mass = 0.0;
        for &(a, b) in &sorted {
            if !(a <= b) {
                return Err(Error::Domain(format!("interval [{a}, {b}] is reversed")));
            }
            let (fa, fb) = (self.cdf(a), self.cdf(b));
            prob += fb - fa;
            mass += self.band_integral(fa, fb);
        }
        Ok((prob, mass))
    }

    /// `∫_a^b t dF(t)` for a state interval.
    pub fn partial_expectation(&self, a: f64, b: f64) -> f64 {
        self.band_integral(self.cdf(a), self.cdf(b))
    }

    pub(crate) fn quantile_clamped(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        let i = self.cum.partition_point(|&c| c < q);
        if i == 0 {
            return self.states[0];
        }
        if i >= self.cum.len() {
            return self.hi();
        }
        let (c0, c1) = (self.cum[i - 1], self.cum[i]);
        let (t0, t1) = (self.states[i - 1], self.states[i]);
        t0 + (t1 - t0) * ((q - c0) / (c1 - c0))
    }

    /// `∫_0^q F⁻¹(x) dx`.
    pub(crate) fn lower_integral(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        let i = self.cum.partition_point(|&c| c < q);
        if i == 0 {
            return 0.0;
        }
        if i >= self.cum.len() {
            return self.mean();
        }
        let x = self.quantile_clamped(q);
        self.prefix[i - 1] + (q - self.cum[i - 1]) * 0.5 * (self.states[i - 1] + x)
    }

    /// `∫_{q0}^{q1} F⁻¹(x) dx` for `q0 <= q1`.
    pub(crate) fn band_integral(&self, q0: f64, q1: f64) -> f64 {
        self.lower_integral(q1) - self.lower_integral(q0)
    }

    pub(crate) fn tail_integral(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        self.mean() - self.lower_integral(1.0 - q)
    }
}

fn check_prob(q: f64) -> Result<f64> {
    if !(-PROB_TOL..=1.0 + PROB_TOL).contains(&q) {
        return Err(Error::Domain(format!("probability {q} outside [0, 1]")));
    }
    Ok(q.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit() -> StateDistribution {
        StateDistribution::uniform(0.0, 1.0).unwrap()
    }

    #[test]
    fn uniform_quantiles() {
        let d = unit();
        assert_eq!(d.quantile(0.5).unwrap(), 0.5);
        assert_eq!(d.quantile(0.0).unwrap(), 0.0);
        assert!(d.quantile(1.5).is_err());
        assert!(d.quantile(-0.1).is_err());
    }

    #[test]
    fn piecewise_quantile_inverts_linear_piece() {
        let d = StateDistribution::piecewise_linear(&[[0.0, 0.0], [0.5, 0.8], [1.0, 1.0]]).unwrap();
        assert_abs_diff_eq!(d.quantile(0.4).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn tail_integral_examples() {
        let d = unit();
        assert_eq!(d.tail_quantile_integral(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(d.tail_quantile_integral(1.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d.tail_quantile_integral(0.5).unwrap(), 0.375, epsilon = 1e-15);
        assert!(d.tail_quantile_integral(2.0).is_err());
    }

    #[test]
    fn conditional_means() {
        let d = unit();
        assert_abs_diff_eq!(d.conditional_mean(0.0, 1.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d.conditional_mean(0.45, 0.95).unwrap(), 0.7, epsilon = 1e-14);
        assert_abs_diff_eq!(d.conditional_mean(0.0, 0.06).unwrap(), 0.03, epsilon = 1e-15);
        assert!(d.conditional_mean(0.5, 0.5).is_err());
        assert!(d.conditional_mean(0.6, 0.5).is_err());
    }

    #[test]
    fn interval_stats_examples() {
        let d = unit();
        let (p, m) = d.interval_stats(&[(0.0, 1.0)]).unwrap();
        assert_abs_diff_eq!(p, 1.0);
        assert_abs_diff_eq!(m, 0.5);

        let (p, m) = d.interval_stats(&[(0.06, 0.16), (0.94, 1.0)]).unwrap();
        assert_abs_diff_eq!(p, 0.16, epsilon = 1e-14);
        assert_abs_diff_eq!(m / p, 0.43, epsilon = 0.005);

        assert_eq!(d.interval_stats(&[]).unwrap(), (0.0, 0.0));
        assert!(d.interval_stats(&[(0.0, 0.6), (0.4, 1.0)]).is_err());
    }

    #[test]
    fn flat_segment_quantile_is_left_endpoint() {
        let d = StateDistribution::piecewise_linear(&[[0.0, 0.0], [1.0, 0.5], [2.0, 0.5], [3.0, 1.0]])
            .unwrap();
        assert_abs_diff_eq!(d.quantile(0.5).unwrap(), 1.0);
        assert_abs_diff_eq!(d.quantile(0.75).unwrap(), 2.5);
        assert_abs_diff_eq!(d.mean(), 1.5);
        let (p, _) = d.interval_stats(&[(1.0, 2.0)]).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn rejects_malformed_knots() {
        assert!(StateDistribution::piecewise_linear(&[[0.0, 0.0]]).is_err());
        assert!(StateDistribution::piecewise_linear(&[[0.0, 0.0], [0.0, 1.0]]).is_err());
        assert!(StateDistribution::piecewise_linear(&[[0.0, 0.0], [1.0, 0.9]]).is_err());
        assert!(StateDistribution::piecewise_linear(&[[0.0, 0.0], [1.0, 0.6], [2.0, 0.5]]).is_err());
        assert!(StateDistribution::uniform(1.0, 1.0).is_err());
    }

    fn arb_distribution() -> impl Strategy<Value = StateDistribution> {
        prop_oneof![
            (-5.0f64..5.0, 0.1f64..5.0)
                .prop_map(|(lo, w)| StateDistribution::uniform(lo, lo + w).unwrap()),
            (
                -2.0f64..2.0,
                prop::collection::vec((0.05f64..1.0, 0.01f64..1.0), 1..8)
            )
                .prop_map(|(lo, segs)| {
                    let total: f64 = segs.iter().map(|s| s.1).sum();
                    let mut knots = vec![[lo, 0.0]];
                    let (mut t, mut c) = (lo, 0.0);
                    for (w, m) in segs {
                        t += w;
                        c += m / total;
                        knots.push([t, c.min(1.0)]);
                    }
                    knots.last_mut().unwrap()[1] = 1.0;
                    StateDistribution::piecewise_linear(&knots).unwrap()
                }),
        ]
    }

    proptest! {
        #[test]
        fn quantile_cdf_round_trip(d in arb_distribution(), qs in prop::collection::vec(0.0f64..=1.0, 1000)) {
            for q in qs {
                let t = d.quantile(q).unwrap();
                prop_assert!((d.cdf(t) - q).abs() <= 1e-10);
            }
        }

        #[test]
        fn tail_integral_is_concave(d in arb_distribution(), a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
            let mut v = [a, b, c];
            v.sort_by(f64::total_cmp);
            let [q1, q2, q3] = v;
            prop_assume!(q3 - q1 > 1e-9);
            let phi = |q| d.tail_quantile_integral(q).unwrap();
            let chord = ((q3 - q2) * phi(q1) + (q2 - q1) * phi(q3)) / (q3 - q1);
            prop_assert!(phi(q2) >= chord - 1e-12);
        }

        #[test]
        fn tail_integral_endpoints_and_slope(d in arb_distribution(), q in 0.01f64..0.99) {
            prop_assert_eq!(d.tail_quantile_integral(0.0).unwrap(), 0.0);
            prop_assert!((d.tail_quantile_integral(1.0).unwrap() - d.mean()).abs() < 1e-12);
            let h = 1e-6;
            let fd = (d.tail_quantile_integral(q + h).unwrap() - d.tail_quantile_integral(q - h).unwrap()) / (2.0 * h);
            let lo_slope = d.quantile(1.0 - q - h).unwrap();
            let hi_slope = d.quantile(1.0 - q + h).unwrap();
            prop_assert!(fd >= lo_slope - 1e-6 && fd <= hi_slope + 1e-6);
        }

        #[test]
        fn conditional_mean_matches_tail_difference(d in arb_distribution(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (q0, q1) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(q1 - q0 > 1e-6);
            let cm = d.conditional_mean(q0, q1).unwrap();
            let phi = |q| d.tail_quantile_integral(q).unwrap();
            prop_assert!((cm * (q1 - q0) - (phi(1.0 - q0) - phi(1.0 - q1))).abs() <= 1e-10);
            prop_assert!(cm > d.quantile(q0).unwrap() && cm < d.quantile(q1).unwrap());
        }

        #[test]
        fn interval_stats_over_full_partition(d in arb_distribution(), cuts in prop::collection::vec(0.0f64..1.0, 0..6)) {
            let (lo, hi) = d.support();
            let mut pts: Vec<f64> = cuts.iter().map(|c| lo + c * (hi - lo)).collect();
            pts.push(lo);
            pts.push(hi);
            pts.sort_by(f64::total_cmp);
            let intervals: Vec<_> = pts.windows(2).map(|w| (w[0], w[1])).collect();
            let (p, m) = d.interval_stats(&intervals).unwrap();
            prop_assert!((p - 1.0).abs() < 1e-12);
            prop_assert!((m - d.mean()).abs() < 1e-12);
        }
    }
}
