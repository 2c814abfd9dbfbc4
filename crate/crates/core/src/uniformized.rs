//! Uniformization of a CTBN: per-variable rates `alpha_i`, the global rate
//! `alpha = sum_i alpha_i`, and per-context stochastic matrices
//! `M_{X_i|u_i} = Q_{X_i|u_i}/alpha_i + I`. Together these represent the
//! joint stochastic matrix M of `Q = alpha (M - I)` as a mixture in which
//! variable i transitions with probability `alpha_i / alpha`.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{CtbnModel, ROW_SUM_TOL};

#[derive(Debug, Clone)]
pub struct UniformizedModel {
    alpha_i: Vec<f64>,
    alpha: f64,
    m_cims: Vec<Vec<Matrix>>,
    substochastic: bool,
    source: CtbnModel,
}

/// Uniformizes a model. `alpha_i` is the maximally negative diagonal element
/// of variable i's CIMs over all parent assignments; a frozen variable
/// (`alpha_i = 0`) gets the identity matrix so the mixture stays total.
pub fn uniformize(model: &CtbnModel) -> UniformizedModel {
    let n = model.n_vars();
    let mut alpha_i = vec![0.0; n];
    for i in 0..n {
        let mut max_rate: f64 = 0.0;
        for cim in model.cims(i) {
            for s in 0..model.cardinality(i) {
                max_rate = max_rate.max(-cim.get(s, s));
            }
        }
        alpha_i[i] = max_rate;
    }
    let alpha = alpha_i.iter().sum();
    let mut substochastic = false;
    let m_cims = (0..n)
        .map(|i| {
            model
                .cims(i)
                .iter()
                .map(|cim| {
                    let card = model.cardinality(i);
                    if alpha_i[i] == 0.0 {
                        return Matrix::identity(card);
                    }
                    let mut m = Matrix::identity(card);
                    m.scaled_add(1.0 / alpha_i[i], cim);
                    for s in 0..card {
                        let sum: f64 = m.row(s).iter().sum();
                        if sum < 1.0 - ROW_SUM_TOL {
                            substochastic = true;
                        }
                    }
                    m
                })
                .collect()
        })
        .collect();
    UniformizedModel {
        alpha_i,
        alpha,
        m_cims,
        substochastic,
        source: model.clone(),
    }
}

impl UniformizedModel {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn alpha_i(&self, i: usize) -> f64 {
        self.alpha_i[i]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha_i
    }

    pub fn m_cim(&self, i: usize, ctx: usize) -> &Matrix {
        &self.m_cims[i][ctx]
    }

    pub fn m_cims(&self, i: usize) -> &[Matrix] {
        &self.m_cims[i]
    }

    pub fn source(&self) -> &CtbnModel {
        &self.source
    }

    /// True when the source model was evidence-restricted, so rows of M may
    /// sum below 1 and propagation loses mass to the evidence.
    pub fn is_substochastic(&self) -> bool {
        self.substochastic
    }

    /// The mixture-component transition matrix for variable i in context
    /// `ctx`: with probability `alpha_i/alpha` the variable follows
    /// `M_{X_i|u_i}`, otherwise it stays put.
    pub fn tilde_matrix(&self, i: usize, ctx: usize) -> Result<Matrix> {
        if self.alpha == 0.0 {
            return Err(Error::FrozenProcess);
        }
        let w = self.alpha_i[i] / self.alpha;
        let mut m = Matrix::identity(self.source.cardinality(i));
        m.scale(1.0 - w);
        m.scaled_add(w, &self.m_cims[i][ctx]);
        Ok(m)
    }
}
