//! Shared oracle helpers for the integration suites. Everything here is an
//! independent reference path: matrix exponentials by scaling-and-squaring
//! instead of uniformization, Kronecker sums built directly, and seeded
//! random model generators.
#![allow(dead_code)]

use ctff_core::matrix::Matrix;
use ctff_core::model::{CtbnModel, Variable};
use ctff_core::FactoredDistribution;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn mat_mul(a: &Matrix, b: &Matrix) -> Matrix {
    let (n, m, p) = (a.n_rows(), a.n_cols(), b.n_cols());
    assert_eq!(m, b.n_rows());
    let mut out = Matrix::zeros(n, p);
    for i in 0..n {
        for k in 0..m {
            let aik = a.get(i, k);
            if aik == 0.0 {
                continue;
            }
            for j in 0..p {
                out.add_to(i, j, aik * b.get(k, j));
            }
        }
    }
    out
}

/// `exp(Q t)` by scaling-and-squaring with a Taylor series — a different
/// numerical family than the uniformization used by the implementation.
pub fn matrix_exp(q: &Matrix, t: f64) -> Matrix {
    let n = q.n_rows();
    let norm = (0..n)
        .map(|i| q.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        * t.abs();
    let mut squarings = 0u32;
    while norm / (1u64 << squarings) as f64 > 0.5 {
        squarings += 1;
    }
    let mut a = q.clone();
    a.scale(t / (1u64 << squarings) as f64);
    let mut sum = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=30 {
        term = mat_mul(&term, &a);
        term.scale(1.0 / k as f64);
        let mut next = sum.clone();
        next.scaled_add(1.0, &term);
        sum = next;
    }
    for _ in 0..squarings {
        sum = mat_mul(&sum, &sum);
    }
    sum
}

/// Row vector through the exponential: `p exp(Q t)`.
pub fn propagate_exp(q: &Matrix, p: &[f64], t: f64) -> Vec<f64> {
    matrix_exp(q, t).vec_mul(p)
}

/// Kronecker sum of generators, built by direct index arithmetic: variable 0
/// least significant.
pub fn kron_sum(blocks: &[Matrix]) -> Matrix {
    let total: usize = blocks.iter().map(|b| b.n_rows()).product();
    let mut out = Matrix::zeros(total, total);
    for s in 0..total {
        let mut rem = s;
        let mut stride = 1;
        for b in blocks {
            let card = b.n_rows();
            let xi = rem % card;
            rem /= card;
            for xj in 0..card {
                let target = (s as isize + (xj as isize - xi as isize) * stride as isize) as usize;
                out.add_to(s, target, b.get(xi, xj));
            }
            stride *= card;
        }
    }
    out
}

pub fn random_cim(rng: &mut ChaCha8Rng, card: usize) -> Matrix {
    let mut m = Matrix::zeros(card, card);
    for r in 0..card {
        let mut total = 0.0;
        for c in 0..card {
            if c != r {
                let rate = rng.random_range(0.1..2.0);
                m.set(r, c, rate);
                total += rate;
            }
        }
        m.set(r, r, -total);
    }
    m
}

pub fn random_model(
    rng: &mut ChaCha8Rng,
    cards: &[usize],
    parents: Vec<Vec<usize>>,
) -> CtbnModel {
    let variables = cards
        .iter()
        .enumerate()
        .map(|(i, &c)| Variable {
            name: format!("v{i}"),
            cardinality: c,
        })
        .collect();
    let cims = cards
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let n_ctx: usize = parents[i].iter().map(|&p| cards[p]).product();
            (0..n_ctx).map(|_| random_cim(rng, c)).collect()
        })
        .collect();
    CtbnModel::new(variables, parents, cims).expect("random model is valid")
}

/// A coupled three-variable model with mixed cardinalities and a cycle in
/// the dependency graph (CTBNs permit cycles).
pub fn random_three_var_model(seed: u64) -> CtbnModel {
    let mut r = rng(seed);
    random_model(&mut r, &[2, 3, 2], vec![vec![2], vec![0], vec![0, 1]])
}

/// Independent three-variable model (no parents).
pub fn disconnected_model(seed: u64) -> CtbnModel {
    let mut r = rng(seed);
    random_model(&mut r, &[2, 3, 2], vec![vec![], vec![], vec![]])
}

pub fn random_factored(rng: &mut ChaCha8Rng, cards: &[usize]) -> FactoredDistribution {
    let marginals = cards
        .iter()
        .map(|&c| {
            let mut m: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = m.iter().sum();
            for v in &mut m {
                *v /= s;
            }
            m
        })
        .collect();
    FactoredDistribution::new(marginals).expect("random marginals are normalized")
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
