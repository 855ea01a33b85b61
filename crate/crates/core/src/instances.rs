//! Hard-coded instances used by the demos, the examples and the tests.

use crate::dist::StateDistribution;
use crate::model::{Payoffs, Problem, ReceiverType};

/// Buyer/seller menu: a buyer of type `θ` values the `k`th unit at
/// `(θ + ω)·max(5 - k, 0)`, each unit costs `10/3`, and the seller is paid
/// per unit sold. Types low, medium and high are equally likely.
pub fn buyer() -> Problem {
    let price = 10.0 / 3.0;
    let gross = [0.0, 4.0, 7.0, 9.0, 10.0];
    let thetas = [("low", 0.3), ("medium", 0.45), ("high", 0.6)];
    let types = thetas
        .iter()
        .map(|(l, _)| ReceiverType {
            label: (*l).into(),
            weight: 1.0 / 3.0,
        })
        .collect();
    let mut pay = Payoffs::default();
    for (_, theta) in thetas {
        pay.u1.push(gross.to_vec());
        pay.u2.push(
            gross
                .iter()
                .enumerate()
                .map(|(q, g)| theta * g - price * q as f64)
                .collect(),
        );
        pay.v1.push(vec![0.0; 5]);
        pay.v2.push((0..5).map(|q| q as f64).collect());
    }
    Problem::new(
        StateDistribution::uniform(0.0, 1.0).expect("unit interval"),
        types,
        (0..5).map(|q| q.to_string()).collect(),
        pay,
    )
    .expect("buyer instance is valid")
}

/// One type, uniform state, two actions switching at `0.75`; the designer
/// wants the second.
pub fn threshold() -> Problem {
    Problem::new(
        StateDistribution::uniform(0.0, 1.0).expect("unit interval"),
        vec![ReceiverType {
            label: "receiver".into(),
            weight: 1.0,
        }],
        vec!["stay".into(), "act".into()],
        Payoffs {
            u1: vec![vec![0.0, 1.0]],
            u2: vec![vec![0.0, -0.75]],
            v1: vec![vec![0.0, 0.0]],
            v2: vec![vec![0.0, 1.0]],
        },
    )
    .expect("threshold instance is valid")
}

/// Knot `b_{L,k}` of the public/private example.
pub fn knot_left(n: usize, k: i64) -> f64 {
    0.25 + knot_offset(n, k)
}

/// Knot `b_{R,k}` of the public/private example.
pub fn knot_right(n: usize, k: i64) -> f64 {
    0.75 + knot_offset(n, k)
}

fn knot_offset(n: usize, k: i64) -> f64 {
    let s = (k.unsigned_abs() as f64 / (2.0 * n as f64)).sqrt() / 8.0;
    if k < 0 {
        -s
    } else {
        s
    }
}

/// Action index of cell `[b_{L,k-1}, b_{L,k}]`, `k` in `-2n+1..=2n`.
fn left_cell(n: usize, k: i64) -> usize {
    (k + 2 * n as i64) as usize
}

/// Action index of cell `[b_{R,k-1}, b_{R,k}]`.
fn right_cell(n: usize, k: i64) -> usize {
    4 * n + 1 + left_cell(n, k)
}

/// `n` equally likely types with a common indirect utility that equals `m²`
/// at the knots `0, b_{L,-2n..2n}, b_{R,-2n..2n}, 1` and is linear in
/// between. Each action is one chord. Type `θ` (1-based) rewards the designer
/// on the cells ending at `b_{L,2θ}`, `b_{R,2n+2-2θ}` and starting at
/// `b_{L,-2θ}`, `b_{R,2θ-2n-2}`; no posterior mean is rewarded by two types.
pub fn public_private(n: usize) -> Problem {
    assert!(n >= 1, "need at least one type");
    let ni = n as i64;
    let mut knots = vec![0.0];
    knots.extend((-2 * ni..=2 * ni).map(|k| knot_left(n, k)));
    knots.extend((-2 * ni..=2 * ni).map(|k| knot_right(n, k)));
    knots.push(1.0);
    let k_actions = knots.len() - 1;
    let mut labels = vec!["low".to_string()];
    labels.extend((-2 * ni + 1..=2 * ni).map(|k| format!("L{k}")));
    labels.push("gap".into());
    labels.extend((-2 * ni + 1..=2 * ni).map(|k| format!("R{k}")));
    labels.push("high".into());
    debug_assert_eq!(labels.len(), k_actions);

    let u1: Vec<f64> = knots.windows(2).map(|w| w[0] + w[1]).collect();
    let u2: Vec<f64> = knots.windows(2).map(|w| -w[0] * w[1]).collect();
    let mut pay = Payoffs::default();
    for theta in 1..=ni {
        let mut v2 = vec![0.0; k_actions];
        v2[left_cell(n, 2 * theta)] = 1.0;
        v2[left_cell(n, -2 * theta + 1)] = 1.0;
        v2[right_cell(n, 2 * ni + 2 - 2 * theta)] = 1.0;
        v2[right_cell(n, 2 * theta - 2 * ni - 1)] = 1.0;
        pay.u1.push(u1.clone());
        pay.u2.push(u2.clone());
        pay.v1.push(vec![0.0; k_actions]);
        pay.v2.push(v2);
    }
    let types = (1..=n)
        .map(|t| ReceiverType {
            label: format!("theta{t}"),
            weight: 1.0 / n as f64,
        })
        .collect();
    Problem::new(
        StateDistribution::uniform(0.0, 1.0).expect("unit interval"),
        types,
        labels,
        pay,
    )
    .expect("public/private instance is valid")
}

/// The explicit private menu of the public/private example: for type `θ`
/// (1-based) four equally likely posterior means
/// `b_{L,±2θ}`, `b_{R,2n+2-2θ}`, `b_{R,2θ-2n-2}`, returned as
/// `(action, probability, mean)` in increasing order of mean.
pub fn public_private_menu(n: usize, theta: usize) -> Vec<(usize, f64, f64)> {
    let (ni, t) = (n as i64, theta as i64);
    vec![
        (left_cell(n, -2 * t + 1), 0.25, knot_left(n, -2 * t)),
        (left_cell(n, 2 * t), 0.25, knot_left(n, 2 * t)),
        (
            right_cell(n, 2 * t - 2 * ni - 1),
            0.25,
            knot_right(n, 2 * t - 2 * ni - 2),
        ),
        (
            right_cell(n, 2 * ni + 2 - 2 * t),
            0.25,
            knot_right(n, 2 * ni + 2 - 2 * t),
        ),
    ]
}
