//! Random instances shared by the integration tests.

use persuasion_core::dist::StateDistribution;
use persuasion_core::model::{Payoffs, Problem, ReceiverType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub struct Instance {
    pub problem: Problem,
    /// Designer payoffs are nonnegative everywhere on the support.
    pub nonnegative: bool,
}

pub fn random_distribution(rng: &mut impl Rng) -> StateDistribution {
    let lo: f64 = rng.gen_range(-1.0..1.0);
    let hi = lo + rng.gen_range(0.5..3.0);
    if rng.gen_bool(0.5) {
        return StateDistribution::uniform(lo, hi).unwrap();
    }
    let inner = rng.gen_range(1..5);
    let mut xs: Vec<f64> = (0..inner).map(|_| rng.gen_range(lo..hi)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
    let mut qs: Vec<f64> = (0..xs.len()).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = qs.iter().sum::<f64>() + rng.gen_range(0.05..1.0);
    let mut acc = 0.0;
    for q in &mut qs {
        acc += *q / total;
        *q = acc;
    }
    let mut knots = vec![[lo, 0.0]];
    knots.extend(xs.iter().zip(&qs).map(|(&x, &q)| [x, q]));
    knots.push([hi, 1.0]);
    StateDistribution::piecewise_linear(&knots).unwrap()
}

/// One instance: 2-4 types, 2-5 actions, random affine utilities.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let dist = random_distribution(&mut rng);
    let (lo, hi) = dist.support();
    let n = rng.gen_range(2..=4);
    let k = rng.gen_range(2..=5);
    let nonnegative = rng.gen_bool(0.5);
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let types = raw
        .iter()
        .enumerate()
        .map(|(i, w)| ReceiverType { label: format!("t{i}"), weight: w / total })
        .collect();
    let mut pay = Payoffs::default();
    for _ in 0..n {
        // Lines through random points at random cutoffs keep several actions
        // optimal somewhere on the support.
        let mut slopes: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        slopes.sort_by(f64::total_cmp);
        let mut cuts: Vec<f64> = (1..k).map(|_| rng.gen_range(lo..hi)).collect();
        cuts.sort_by(f64::total_cmp);
        let mut u2 = vec![rng.gen_range(-1.0..1.0)];
        for j in 1..k {
            // continuity of the envelope at cuts[j-1]
            let c = cuts[j - 1];
            u2.push(slopes[j - 1] * c + u2[j - 1] - slopes[j] * c);
        }
        pay.u1.push(slopes);
        pay.u2.push(u2);
        if nonnegative {
            pay.v1.push(vec![0.0; k]);
            pay.v2.push((0..k).map(|_| rng.gen_range(0.0..1.0)).collect());
        } else {
            pay.v1.push((0..k).map(|_| rng.gen_range(-1.0..1.0)).collect());
            pay.v2.push((0..k).map(|_| rng.gen_range(-1.0..1.0)).collect());
        }
    }
    let actions = (0..k).map(|a| format!("a{a}")).collect();
    Instance { problem: Problem::new(dist, types, actions, pay).unwrap(), nonnegative }
}
