//! Mixing rates and the KL-divergence contraction bounds for factored
//! uniformization, so experiments can overlay measured error against the
//! theoretical envelope. All divergences are in nats.

use crate::error::{Error, Result};
use crate::factored::FactoredDistribution;
use crate::matrix::Matrix;
use crate::model::ROW_SUM_TOL;
use crate::poisson::poisson_weights;
use crate::uniformized::UniformizedModel;

/// Mixing rate of a row-stochastic matrix: the minimum over row pairs of the
/// summed elementwise row minima. 1 means every row is identical (one-step
/// mixing); 0 means some pair of rows has disjoint support.
pub fn mixing_rate(m: &Matrix) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::invalid("mixing rate requires a square matrix"));
    }
    let n = m.n_rows();
    for r in 0..n {
        let sum: f64 = m.row(r).iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL || m.row(r).iter().any(|&v| v < 0.0) {
            return Err(Error::invalid(format!(
                "row {r} is not stochastic (sum {sum})"
            )));
        }
    }
    if n == 1 {
        return Ok(1.0);
    }
    let mut gamma = f64::INFINITY;
    for r1 in 0..n {
        for r2 in (r1 + 1)..n {
            let overlap: f64 = m
                .row(r1)
                .iter()
                .zip(m.row(r2))
                .map(|(&a, &b)| a.min(b))
                .sum();
            gamma = gamma.min(overlap);
        }
    }
    Ok(gamma.clamp(0.0, 1.0))
}

/// `gamma_i`: the minimum mixing rate of variable i's stochastic matrices
/// over its parent assignments.
pub fn variable_gamma(umodel: &UniformizedModel, i: usize) -> Result<f64> {
    let mut gamma = f64::INFINITY;
    for ctx in 0..umodel.source().context_count(i) {
        gamma = gamma.min(mixing_rate(umodel.m_cim(i, ctx))?);
    }
    Ok(gamma)
}

/// Global contraction rate `gamma = min_i alpha_i gamma_i / alpha`.
pub fn global_gamma(umodel: &UniformizedModel) -> Result<f64> {
    Ok(gamma_prime(umodel)? / umodel.alpha())
}

/// `gamma' = min_i alpha_i gamma_i`, the rate-scaled contraction that is
/// independent of the variable count.
pub fn gamma_prime(umodel: &UniformizedModel) -> Result<f64> {
    if umodel.alpha() == 0.0 {
        return Err(Error::FrozenProcess);
    }
    let mut g = f64::INFINITY;
    for i in 0..umodel.source().n_vars() {
        g = g.min(umodel.alpha_i(i) * variable_gamma(umodel, i)?);
    }
    Ok(g)
}

/// Crude per-projection KL increase bound `-(n-1) ln eta`, where `eta` is
/// the smallest marginal probability. Infinite when eta is 0.
pub fn epsilon_crude(n_vars: usize, eta: f64) -> f64 {
    if n_vars <= 1 {
        return 0.0;
    }
    if eta <= 0.0 {
        return f64::INFINITY;
    }
    -((n_vars - 1) as f64) * eta.min(1.0).ln()
}

/// One multiply-and-project step: `(1 - gamma) d + epsilon`.
pub fn single_step_bound(d: f64, gamma: f64, epsilon: f64) -> f64 {
    (1.0 - gamma) * d + epsilon
}

/// Closed form of k iterated single steps:
/// `(1-gamma)^k d + epsilon (1 - (1-gamma)^k) / gamma`.
pub fn iterated_step_bound(d: f64, gamma: f64, epsilon: f64, k: usize) -> f64 {
    if gamma == 0.0 {
        return d + epsilon * k as f64;
    }
    let contraction = (1.0 - gamma).powi(k as i32);
    contraction * d + epsilon * (1.0 - contraction) / gamma
}

/// Inputs for the truncated-expansion divergence bound.
#[derive(Debug, Clone, Copy)]
pub struct BoundInputs {
    /// Initial KL divergence (nats).
    pub d0: f64,
    /// Global uniformization rate.
    pub alpha: f64,
    /// Global contraction per multiply.
    pub gamma: f64,
    /// `min_i alpha_i gamma_i`.
    pub gamma_prime: f64,
    /// Per-projection KL increase bound (nats).
    pub epsilon: f64,
    /// Horizon.
    pub t: f64,
    /// Truncation length.
    pub l: usize,
    /// Max negative log probability of the final approximation.
    pub delta: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let ok = self.d0 >= 0.0
            && self.alpha >= 0.0
            && (0.0..=1.0).contains(&self.gamma)
            && self.gamma_prime >= 0.0
            && self.epsilon >= 0.0
            && self.t >= 0.0
            && self.delta >= 0.0;
        if !ok {
            return Err(Error::invalid(format!("invalid bound inputs: {self:?}")));
        }
        Ok(())
    }
}

/// KL bound on the truncated, renormalized, per-term-projected expansion:
/// `e^{-gamma alpha t} d0 + (eps/gamma)(1 - e^{-gamma alpha t}) + R_l (delta + eps/gamma)`.
///
/// When `gamma = 0` the contraction degenerates and the un-contracted
/// iterated form `d0 + l eps + R_l delta` is returned instead.
pub fn theorem4_bound(b: &BoundInputs) -> Result<f64> {
    b.validate()?;
    let (_, tail) = poisson_weights(b.alpha * b.t, b.l)?;
    if b.gamma == 0.0 {
        return Ok(b.d0 + b.l as f64 * b.epsilon + tail * b.delta);
    }
    let decay = (-b.gamma * b.alpha * b.t).exp();
    Ok(decay * b.d0 + (b.epsilon / b.gamma) * (1.0 - decay) + tail * (b.delta + b.epsilon / b.gamma))
}

/// Large-l limit of the bound in rate-scaled form:
/// `e^{-gamma' t} d0 + (alpha eps / gamma')(1 - e^{-gamma' t})`.
pub fn eq5_large_l_bound(b: &BoundInputs) -> Result<f64> {
    b.validate()?;
    if b.gamma_prime == 0.0 {
        return Err(Error::invalid("gamma_prime must be positive for the large-l form"));
    }
    let decay = (-b.gamma_prime * b.t).exp();
    Ok(decay * b.d0 + (b.alpha * b.epsilon / b.gamma_prime) * (1.0 - decay))
}

/// Max negative log joint probability of a factored distribution: the least
/// likely joint state of a product distribution takes each variable's least
/// likely value, so this is exact, not a bound.
pub fn delta_max_neg_log(fd: &FactoredDistribution) -> f64 {
    let mut total = 0.0;
    for m in fd.marginals() {
        let min = m.iter().copied().fold(f64::INFINITY, f64::min);
        if min <= 0.0 {
            return f64::INFINITY;
        }
        total -= min.ln();
    }
    total
}

/// Applies the truncated-expansion bound recursively over `m` equal
/// sub-intervals of a horizon, using each sub-interval's own final
/// approximation for its `delta` term. `deltas` must hold one value per
/// sub-interval; when it is empty the propagation's overall worst
/// (`delta_fallback`) is used throughout.
pub fn subdivided_theorem4_bound(
    d0: f64,
    alpha: f64,
    gamma: f64,
    epsilon: f64,
    t: f64,
    l: usize,
    deltas: &[f64],
    m: usize,
    delta_fallback: f64,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::invalid("need at least one sub-interval"));
    }
    let t_sub = t / m as f64;
    let mut d = d0;
    for k in 0..m {
        let delta = deltas.get(k).copied().unwrap_or(delta_fallback);
        d = theorem4_bound(&BoundInputs {
            d0: d,
            alpha,
            gamma,
            gamma_prime: gamma * alpha,
            epsilon,
            t: t_sub,
            l,
            delta,
        })?;
    }
    Ok(d)
}
