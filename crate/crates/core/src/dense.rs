//! Exact propagation of full joint distributions through the amalgamated
//! generator. Ground truth for all approximation-error measurements.

use crate::error::{Error, Result};
use crate::factored::FactoredDistribution;
use crate::matrix::Matrix;
use crate::model::DEFAULT_STATE_CAP;
use crate::poisson::{choose_truncation, poisson_weights};

/// Default Poisson tail tolerance for the oracle; far below every
/// acceptance tolerance in the test suites.
pub const DENSE_TAIL_TOL: f64 = 1e-12;

/// A full joint probability vector. `mass` is the total, which stays below 1
/// while propagating through an evidence-restricted generator.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDistribution {
    probs: Vec<f64>,
    mass: f64,
}

impl DenseDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty distribution"));
        }
        let mut mass = 0.0;
        for &p in &probs {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::invalid(format!("invalid probability {p}")));
            }
            mass += p;
        }
        Ok(DenseDistribution { probs, mass })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        (self.mass - 1.0).abs() <= 1e-9
    }

    /// Expands a factored distribution into the joint product vector.
    pub fn from_factored(fd: &FactoredDistribution) -> Result<Self> {
        Self::from_factored_with_cap(fd, DEFAULT_STATE_CAP)
    }

    pub fn from_factored_with_cap(fd: &FactoredDistribution, cap: usize) -> Result<Self> {
        let cards = fd.cardinalities();
        let n_states = cards
            .iter()
            .try_fold(1usize, |a, &c| a.checked_mul(c))
            .filter(|&n| n <= cap)
            .ok_or(Error::StateSpaceCap {
                states: cards.iter().fold(1u128, |a, &c| a.saturating_mul(c as u128)),
                cap,
            })?;
        let mut probs = vec![1.0; n_states];
        let mut stride = 1;
        for (i, &card) in cards.iter().enumerate() {
            let marg = fd.marginal(i);
            for (s, p) in probs.iter_mut().enumerate() {
                *p *= marg[(s / stride) % card];
            }
            stride *= card;
        }
        DenseDistribution::new(probs)
    }

    /// Sums probabilities over all joint states sharing each value of
    /// variable `var`. The output sums to the distribution's mass.
    pub fn marginalize(&self, cards: &[usize], var: usize) -> Vec<f64> {
        let stride: usize = cards[..var].iter().product();
        let card = cards[var];
        let mut out = vec![0.0; card];
        for (s, &p) in self.probs.iter().enumerate() {
            out[(s / stride) % card] += p;
        }
        out
    }

    /// Scales to total mass 1, returning the log of the removed mass for
    /// likelihood accounting.
    pub fn normalize(&self) -> Result<(DenseDistribution, f64)> {
        if self.mass <= 0.0 {
            return Err(Error::ZeroMass);
        }
        let probs = self.probs.iter().map(|p| p / self.mass).collect();
        Ok((
            DenseDistribution {
                probs,
                mass: 1.0,
            },
            self.mass.ln(),
        ))
    }

    /// Conditions on `var = value`, zeroing inconsistent states. Returns the
    /// normalized distribution and the log evidence mass.
    pub fn condition(
        &self,
        cards: &[usize],
        var: usize,
        value: usize,
    ) -> Result<(DenseDistribution, f64)> {
        let stride: usize = cards[..var].iter().product();
        let card = cards[var];
        let mut probs = self.probs.clone();
        for (s, p) in probs.iter_mut().enumerate() {
            if (s / stride) % card != value {
                *p = 0.0;
            }
        }
        let d = DenseDistribution::new(probs)?;
        let (normalized, log_mass) = d.normalize().map_err(|_| Error::ZeroProbabilityEvidence {
            var: format!("#{var}"),
            value,
        })?;
        Ok((normalized, log_mass))
    }
}

/// Computes `p * exp(Q t)` by uniformizing the dense generator at
/// `alpha = max_i -Q_ii` and summing Poisson-weighted powers until the tail
/// falls below `tail_tol`.
pub fn propagate_dense(
    q: &Matrix,
    p: &DenseDistribution,
    t: f64,
    tail_tol: f64,
) -> Result<DenseDistribution> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::invalid(format!("time must be finite and >= 0, got {t}")));
    }
    if !q.is_square() || q.n_rows() != p.len() {
        return Err(Error::invalid("generator and distribution dimensions differ"));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("generator has non-finite entries"));
    }
    let n = p.len();
    let alpha = (0..n).fold(0.0f64, |a, i| a.max(-q.get(i, i)));
    let rate = alpha * t;
    if rate == 0.0 {
        return Ok(p.clone());
    }
    // M = Q/alpha + I, kept implicit: v M = v + (v Q)/alpha.
    let l = choose_truncation(rate, tail_tol)?;
    let (weights, tail) = poisson_weights(rate, l)?;
    let mut v = p.probs().to_vec();
    let mut acc: Vec<f64> = v.iter().map(|x| x * weights[0]).collect();
    for &w in &weights[1..] {
        let vq = q.vec_mul(&v);
        for (vi, qi) in v.iter_mut().zip(&vq) {
            *vi += qi / alpha;
        }
        for (a, &vi) in acc.iter_mut().zip(&v) {
            *a += w * vi;
        }
    }
    // The truncated series underestimates mass by at most `tail`; rescale so
    // an unrestricted propagation conserves mass exactly.
    let scale = 1.0 / (1.0 - tail);
    for a in &mut acc {
        *a = (*a * scale).max(0.0);
    }
    DenseDistribution::new(acc)
}

/// `sum_x p(x) ln(p(x)/q(x))` in nats, with `0 ln(0/q) = 0` and `+inf` when
/// p has support where q does not.
pub fn kl_divergence(p: &DenseDistribution, q: &DenseDistribution) -> Result<f64> {
    if !p.is_normalized() || !q.is_normalized() {
        return Err(Error::invalid(
            "KL divergence requires normalized distributions",
        ));
    }
    if p.len() != q.len() {
        return Err(Error::invalid("distribution lengths differ"));
    }
    Ok(kl_divergence_slices(p.probs(), q.probs()))
}

/// KL divergence of two probability vectors assumed normalized.
pub fn kl_divergence_slices(p: &[f64], q: &[f64]) -> f64 {
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return f64::INFINITY;
            }
            kl += pi * (pi / qi).ln();
        }
    }
    kl.max(0.0)
}
