//! Shared fixtures for the integration suites.

use nalgebra::{dmatrix, DMatrix};
use rand::prelude::*;
use remote_mdp::model::{DelayPmf, MarkovControlModel};

/// The bundled case study: two-state source, two actions, binary delay
/// Pr(Y=1) = p, Pr(Y=10) = 1 - p.
pub fn case_study_model(p: f64, z_max: u32) -> MarkovControlModel {
    MarkovControlModel::new(
        vec![dmatrix![0.9, 0.1; 0.1, 0.9], dmatrix![0.6, 0.4; 0.01, 0.99]],
        dmatrix![40.0, 60.0; 0.0, 20.0],
        DelayPmf::two_point(p, 1, 10).unwrap(),
        z_max,
    )
    .unwrap()
}

/// Desk-scale oracle instance: same source and costs, delay support {1, 2}.
pub fn tiny_instance(z_max: u32) -> MarkovControlModel {
    MarkovControlModel::new(
        vec![dmatrix![0.9, 0.1; 0.1, 0.9], dmatrix![0.6, 0.4; 0.01, 0.99]],
        dmatrix![40.0, 60.0; 0.0, 20.0],
        DelayPmf::new(vec![1, 2], vec![0.5, 0.5]).unwrap(),
        z_max,
    )
    .unwrap()
}

/// Random row-stochastic matrix that is unichain by construction: one
/// designated column receives positive mass in every row.
pub fn random_unichain(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let hub = rng.random_range(0..n);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if j == hub || rng.random_bool(0.5) {
                m[(i, j)] = rng.random_range(0.05..1.0);
            }
        }
        let s: f64 = m.row(i).iter().sum();
        for j in 0..n {
            m[(i, j)] /= s;
        }
    }
    m
}

/// Random small model with unichain kernels and the given cost table
/// generator.
pub fn random_model_with_cost(
    rng: &mut impl Rng,
    cost: impl Fn(&mut dyn FnMut() -> f64, usize, usize) -> DMatrix<f64>,
) -> MarkovControlModel {
    let n_s = rng.random_range(2..4);
    let n_a = rng.random_range(1..3);
    let kernels: Vec<DMatrix<f64>> = (0..n_a).map(|_| random_unichain(rng, n_s)).collect();
    let n_y = rng.random_range(1..3);
    let mut support = Vec::new();
    let mut y = 0u32;
    for _ in 0..n_y {
        y += rng.random_range(1..4);
        support.push(y);
    }
    let mut probs: Vec<f64> = (0..n_y).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|q| *q /= total);
    let delay = DelayPmf::new(support, probs).unwrap();
    let z_max = rng.random_range(0..4);
    let mut draw = || rng.random_range(-10.0..10.0);
    let cost = cost(&mut draw, n_s, n_a);
    MarkovControlModel::new(kernels, cost, delay, z_max).unwrap()
}

pub fn random_model(rng: &mut impl Rng) -> MarkovControlModel {
    random_model_with_cost(rng, |draw, n_s, n_a| {
        DMatrix::from_fn(n_s, n_a, |_, _| draw())
    })
}

/// Prints one pass/fail line for an acceptance criterion and asserts it.
pub fn check(criterion: &str, ok: bool, detail: String) {
    println!(
        "[acceptance] {criterion}: {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "{criterion} failed: {detail}");
}
