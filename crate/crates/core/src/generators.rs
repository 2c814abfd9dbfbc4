//! Model generators: the two-variable worked example and the ring / toroid
//! dynamic Ising networks used by the benchmark protocols.
//!
//! Spin convention: state 0 is spin -1, state 1 is spin +1. Two flip-rate
//! families are provided. The exponential `Tracking` form (the default)
//! couples a node's marginal dynamics to higher-order neighbor correlations,
//! so factored projection incurs real error. The logistic `Glauber` form is
//! affine in the parent-spin sum when a node has at most two binary parents,
//! which closes the marginal dynamics on themselves: factored propagation is
//! then exact on marginals, making it a useful calibration case rather than
//! a benchmark.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{CtbnModel, Variable};

/// The two-variable example model: A (no parents) drives B.
pub fn running_example() -> CtbnModel {
    let q_a = Matrix::from_rows(vec![vec![-1.0, 1.0], vec![2.0, -2.0]]).unwrap();
    let q_b_a0 = Matrix::from_rows(vec![vec![-3.0, 3.0], vec![4.0, -4.0]]).unwrap();
    let q_b_a1 = Matrix::from_rows(vec![vec![-5.0, 5.0], vec![6.0, -6.0]]).unwrap();
    CtbnModel::new(
        vec![
            Variable {
                name: "A".into(),
                cardinality: 2,
            },
            Variable {
                name: "B".into(),
                cardinality: 2,
            },
        ],
        vec![vec![], vec![0]],
        vec![vec![q_a], vec![q_b_a0, q_b_a1]],
    )
    .expect("running example is valid by construction")
}

/// Flip-rate family for the Ising generators. Both reduce to rate `tau/2`
/// everywhere at `beta = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IsingRateForm {
    /// `q(flip) = (tau/2) exp(-beta s_i sum_j s_j)`: flipping against the
    /// neighborhood field is exponentially fast, flipping with it slow.
    #[default]
    Tracking,
    /// `q(flip) = tau / (1 + exp(2 beta s_i sum_j s_j))`: logistic saturation,
    /// rates bounded by tau.
    Glauber,
}

fn spin(state: usize) -> f64 {
    2.0 * state as f64 - 1.0
}

fn flip_rate(form: IsingRateForm, tau: f64, beta: f64, s: f64, field: f64) -> f64 {
    match form {
        IsingRateForm::Tracking => 0.5 * tau * (-beta * s * field).exp(),
        IsingRateForm::Glauber => tau / (1.0 + (2.0 * beta * s * field).exp()),
    }
}

fn ising_cims(form: IsingRateForm, n_parents: usize, tau: f64, beta: f64) -> Vec<Matrix> {
    let n_ctx = 1usize << n_parents;
    (0..n_ctx)
        .map(|ctx| {
            let field: f64 = (0..n_parents).map(|k| spin((ctx >> k) & 1)).sum();
            let q0 = flip_rate(form, tau, beta, spin(0), field);
            let q1 = flip_rate(form, tau, beta, spin(1), field);
            Matrix::from_rows(vec![vec![-q0, q0], vec![q1, -q1]]).unwrap()
        })
        .collect()
}

/// Bidirectional ring of `n` binary spins: node i has parents i-1 and i+1
/// (mod n). Uses the default tracking rates.
pub fn ring_ising(n: usize, tau: f64, beta: f64) -> Result<CtbnModel> {
    ring_ising_with_form(n, tau, beta, IsingRateForm::default())
}

pub fn ring_ising_with_form(
    n: usize,
    tau: f64,
    beta: f64,
    form: IsingRateForm,
) -> Result<CtbnModel> {
    if n < 3 {
        return Err(Error::invalid("ring needs at least 3 nodes"));
    }
    check_rates(tau, beta)?;
    let variables = (0..n)
        .map(|i| Variable {
            name: format!("x{i}"),
            cardinality: 2,
        })
        .collect();
    let parents: Vec<Vec<usize>> = (0..n).map(|i| vec![(i + n - 1) % n, (i + 1) % n]).collect();
    let cims = (0..n).map(|_| ising_cims(form, 2, tau, beta)).collect();
    CtbnModel::new(variables, parents, cims)
}

/// Directed toroidal grid of binary spins: node (r, c) has parents at its
/// north and west neighbors (wrapping). Uses the default tracking rates.
pub fn toroid_ising(rows: usize, cols: usize, tau: f64, beta: f64) -> Result<CtbnModel> {
    toroid_ising_with_form(rows, cols, tau, beta, IsingRateForm::default())
}

pub fn toroid_ising_with_form(
    rows: usize,
    cols: usize,
    tau: f64,
    beta: f64,
    form: IsingRateForm,
) -> Result<CtbnModel> {
    if rows < 2 || cols < 2 {
        return Err(Error::invalid("toroid needs at least 2 rows and 2 columns"));
    }
    check_rates(tau, beta)?;
    let n = rows * cols;
    let variables = (0..n)
        .map(|i| Variable {
            name: format!("x{i}"),
            cardinality: 2,
        })
        .collect();
    let parents: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            let north = ((r + rows - 1) % rows) * cols + c;
            let west = r * cols + (c + cols - 1) % cols;
            vec![north, west]
        })
        .collect();
    let cims = (0..n).map(|_| ising_cims(form, 2, tau, beta)).collect();
    CtbnModel::new(variables, parents, cims)
}

fn check_rates(tau: f64, beta: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::invalid(format!("beta must be nonnegative, got {beta}")));
    }
    Ok(())
}
