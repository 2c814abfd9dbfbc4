//! Factored belief states and their propagation by projected uniformization:
//! the Poisson-weighted power series of the uniformized chain, with every
//! multiplication by M immediately projected back onto the product-of-
//! marginals family. The projected multiply is exact per marginal — it equals
//! the true marginal of `v M` whenever `v` is factored — so the only error
//! source is the re-projection of the mixture across series terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CtbnModel;
use crate::poisson::{choose_truncation, poisson_weights};
use crate::uniformized::UniformizedModel;

/// One normalized marginal per variable, plus the accumulated log evidence
/// mass (`0` when no evidence has been processed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactoredDistribution {
    marginals: Vec<Vec<f64>>,
    log_weight: f64,
}

impl FactoredDistribution {
    pub fn new(marginals: Vec<Vec<f64>>) -> Result<Self> {
        let fd = FactoredDistribution {
            marginals,
            log_weight: 0.0,
        };
        fd.validate()?;
        Ok(fd)
    }

    pub fn validate(&self) -> Result<()> {
        if self.marginals.is_empty() {
            return Err(Error::invalid("factored distribution has no marginals"));
        }
        for (i, m) in self.marginals.iter().enumerate() {
            if m.is_empty() {
                return Err(Error::invalid(format!("marginal {i} is empty")));
            }
            let mut sum = 0.0;
            for &p in m {
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::invalid(format!(
                        "marginal {i} has invalid probability {p}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "marginal {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn uniform(cards: &[usize]) -> Self {
        FactoredDistribution {
            marginals: cards
                .iter()
                .map(|&c| vec![1.0 / c as f64; c])
                .collect(),
            log_weight: 0.0,
        }
    }

    pub fn deterministic(cards: &[usize], states: &[usize]) -> Result<Self> {
        Self::with_eta_floor(cards, states, 0.0)
    }

    /// Deterministic start softened so every marginal entry is at least
    /// `eta`; the designated state receives the remaining mass.
    pub fn with_eta_floor(cards: &[usize], states: &[usize], eta: f64) -> Result<Self> {
        if cards.len() != states.len() {
            return Err(Error::invalid("one state per variable required"));
        }
        let marginals = cards
            .iter()
            .zip(states)
            .map(|(&c, &s)| {
                if s >= c {
                    return Err(Error::invalid(format!("state {s} out of range for cardinality {c}")));
                }
                let rest = eta * (c as f64 - 1.0);
                if !(0.0..1.0).contains(&rest) {
                    return Err(Error::invalid(format!("eta floor {eta} too large for cardinality {c}")));
                }
                let mut m = vec![eta; c];
                m[s] = 1.0 - rest;
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FactoredDistribution {
            marginals,
            log_weight: 0.0,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginal(&self, i: usize) -> &[f64] {
        &self.marginals[i]
    }

    pub fn marginals(&self) -> &[Vec<f64>] {
        &self.marginals
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.marginals.iter().map(|m| m.len()).collect()
    }

    pub fn log_weight(&self) -> f64 {
        self.log_weight
    }

    pub(crate) fn from_parts(marginals: Vec<Vec<f64>>, log_weight: f64) -> Self {
        FactoredDistribution {
            marginals,
            log_weight,
        }
    }
}

/// How many series terms a uniformized propagation keeps per sub-interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    /// Smallest l whose Poisson tail falls below the configured tolerance.
    Auto,
    Fixed(usize),
}

impl Serialize for Truncation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Truncation::Auto => s.serialize_str("auto"),
            Truncation::Fixed(l) => s.serialize_u64(*l as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Truncation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Count(usize),
        }
        match Raw::deserialize(d)? {
            Raw::Text(s) if s == "auto" => Ok(Truncation::Auto),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "expected \"auto\" or an integer, got \"{s}\""
            ))),
            Raw::Count(l) => Ok(Truncation::Fixed(l)),
        }
    }
}

/// Knobs shared by the propagation engines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    /// Poisson-rate budget per sub-interval; a horizon t is split into
    /// `ceil(alpha t / theta)` equal pieces.
    pub theta: f64,
    pub truncation: Truncation,
    pub tail_tol: f64,
    pub rkf_tol: f64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            theta: 2.0,
            truncation: Truncation::Auto,
            tail_tol: 1e-10,
            rkf_tol: 1e-6,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::invalid(format!("theta must be positive, got {}", self.theta)));
        }
        if let Truncation::Fixed(l) = self.truncation {
            if l < 1 {
                return Err(Error::invalid("truncation length must be at least 1"));
            }
        }
        for (name, v) in [("tail_tol", self.tail_tol), ("rkf_tol", self.rkf_tol)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        Ok(())
    }

    pub fn sub_intervals(&self, alpha: f64, t: f64) -> usize {
        ((alpha * t / self.theta).ceil() as usize).max(1)
    }
}

/// Probability of the parent assignment `u` (aligned with `parents`) under
/// the factored belief: the product of the parent marginals.
pub fn parent_marginal(fd: &FactoredDistribution, parents: &[usize], u: &[usize]) -> f64 {
    parents
        .iter()
        .zip(u)
        .map(|(&p, &v)| fd.marginal(p)[v])
        .product()
}

/// One projected multiplication by M: every variable's new marginal is its
/// old marginal times the expectation of its mixture-component matrix over
/// the parents' current (old) marginals. All variables update synchronously
/// from the same input distribution.
///
/// For substochastic (evidence-restricted) models each marginal is
/// renormalized and the log of its mass is folded into `log_weight`.
pub fn projected_multiply_m(
    fd: &FactoredDistribution,
    umodel: &UniformizedModel,
) -> Result<FactoredDistribution> {
    let model = umodel.source();
    let alpha = umodel.alpha();
    if alpha == 0.0 {
        return Ok(fd.clone());
    }
    let mut log_weight = fd.log_weight();
    let mut marginals = Vec::with_capacity(fd.n_vars());
    for j in 0..fd.n_vars() {
        let card = model.cardinality(j);
        let w_j = umodel.alpha_i(j) / alpha;
        if w_j == 0.0 {
            marginals.push(fd.marginal(j).to_vec());
            continue;
        }
        // Expectation of M_{X_j|u_j} over the parents' joint marginal.
        let mut expected = vec![0.0; card * card];
        for ctx in 0..model.context_count(j) {
            let u = model.decode_context(j, ctx);
            let w = parent_marginal(fd, model.parents(j), &u);
            if w == 0.0 {
                continue;
            }
            let m = umodel.m_cim(j, ctx);
            for r in 0..card {
                let row = m.row(r);
                for c in 0..card {
                    expected[r * card + c] += w * row[c];
                }
            }
        }
        let old = fd.marginal(j);
        let mut new = vec![0.0; card];
        for (r, &vr) in old.iter().enumerate() {
            if vr == 0.0 {
                continue;
            }
            for c in 0..card {
                new[c] += vr * expected[r * card + c];
            }
        }
        // Blend with the stay-put branch of the mixture.
        for (n, &o) in new.iter_mut().zip(old) {
            *n = w_j * *n + (1.0 - w_j) * o;
        }
        if umodel.is_substochastic() {
            let mass: f64 = new.iter().sum();
            if mass <= 0.0 {
                return Err(Error::ZeroProbabilityEvidence {
                    var: model.variable(j).name.clone(),
                    value: usize::MAX,
                });
            }
            for n in &mut new {
                *n /= mass;
            }
            log_weight += mass.ln();
        }
        marginals.push(new);
    }
    Ok(FactoredDistribution::from_parts(marginals, log_weight))
}

/// The Q-matrix analogue of the projected multiply: per-variable derivative
/// vectors `d_j = fd_j * E_{u_j}[Q_{X_j|u_j}]`. Rows of an unrestricted CIM
/// sum to zero, so each `d_j` sums to zero.
pub fn projected_rate_apply(fd: &FactoredDistribution, model: &CtbnModel) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(fd.n_vars());
    for j in 0..fd.n_vars() {
        let card = model.cardinality(j);
        let mut expected = vec![0.0; card * card];
        for ctx in 0..model.context_count(j) {
            let u = model.decode_context(j, ctx);
            let w = parent_marginal(fd, model.parents(j), &u);
            if w == 0.0 {
                continue;
            }
            let q = model.cim(j, ctx);
            for r in 0..card {
                let row = q.row(r);
                for c in 0..card {
                    expected[r * card + c] += w * row[c];
                }
            }
        }
        let old = fd.marginal(j);
        let mut d = vec![0.0; card];
        for (r, &vr) in old.iter().enumerate() {
            if vr == 0.0 {
                continue;
            }
            for c in 0..card {
                d[c] += vr * expected[r * card + c];
            }
        }
        out.push(d);
    }
    out
}

/// Conditions on point evidence `var = value`: the marginal becomes the
/// one-hot indicator and the observed probability's log joins `log_weight`.
/// Conditioning a factored distribution is exact within the family.
pub fn condition_point(
    fd: &FactoredDistribution,
    var: usize,
    value: usize,
) -> Result<FactoredDistribution> {
    let m = fd.marginal(var);
    if value >= m.len() {
        return Err(Error::invalid(format!(
            "value {value} out of range for variable {var}"
        )));
    }
    let mass = m[value];
    if mass <= 0.0 {
        return Err(Error::ZeroProbabilityEvidence {
            var: format!("#{var}"),
            value,
        });
    }
    let mut marginals = fd.marginals().to_vec();
    let mut hot = vec![0.0; m.len()];
    hot[value] = 1.0;
    marginals[var] = hot;
    Ok(FactoredDistribution::from_parts(
        marginals,
        fd.log_weight() + mass.ln(),
    ))
}

/// One truncated, renormalized Poisson mixture over `l` projected
/// multiplications covering a sub-interval of width `t_sub`.
///
/// The mixture of factored distributions is re-projected onto the factored
/// family by accumulating each variable's marginal across terms: a mixture's
/// marginal is the mixture of marginals, which is the moment-matching
/// KL-projection.
pub fn factored_unif_step(
    fd: &FactoredDistribution,
    umodel: &UniformizedModel,
    t_sub: f64,
    l: usize,
) -> Result<FactoredDistribution> {
    if !t_sub.is_finite() || t_sub < 0.0 {
        return Err(Error::invalid(format!(
            "time must be finite and >= 0, got {t_sub}"
        )));
    }
    let rate = umodel.alpha() * t_sub;
    if rate == 0.0 {
        return Ok(fd.clone());
    }
    let (weights, tail) = poisson_weights(rate, l)?;
    let base_lw = fd.log_weight();
    let mut acc: Vec<Vec<f64>> = fd
        .marginals()
        .iter()
        .map(|m| m.iter().map(|p| p * weights[0]).collect())
        .collect();
    let mut total = weights[0];
    let mut cur = fd.clone();
    for &beta in &weights[1..] {
        cur = projected_multiply_m(&cur, umodel)?;
        // Relative mass of this term under interval evidence; identically 1
        // for stochastic models.
        let rel = if umodel.is_substochastic() {
            (cur.log_weight() - base_lw).exp()
        } else {
            1.0
        };
        let w = beta * rel;
        for (a, m) in acc.iter_mut().zip(cur.marginals()) {
            for (ai, &mi) in a.iter_mut().zip(m) {
                *ai += w * mi;
            }
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::ZeroMass);
    }
    for a in &mut acc {
        let sum: f64 = a.iter().sum();
        for ai in a.iter_mut() {
            *ai /= sum;
        }
    }
    let log_weight = if umodel.is_substochastic() {
        // Truncation removes 1 - sum(beta) of the mixture; dividing by it
        // keeps the surviving-mass estimate consistent with the series.
        base_lw + (total / (1.0 - tail)).ln()
    } else {
        base_lw
    };
    Ok(FactoredDistribution::from_parts(acc, log_weight))
}

/// Full factored-uniformization propagation over horizon `t`: the horizon is
/// split into `max(1, ceil(alpha t / theta))` equal sub-intervals, each
/// propagated by [`factored_unif_step`].
pub fn factored_unif_propagate(
    fd: &FactoredDistribution,
    umodel: &UniformizedModel,
    t: f64,
    cfg: &PropagationConfig,
) -> Result<FactoredDistribution> {
    let (out, _) = propagate_with_trace(fd, umodel, t, cfg, false)?;
    Ok(out)
}

/// As [`factored_unif_propagate`], also returning the belief state after each
/// sub-interval (the final entry equals the returned distribution). Used to
/// evaluate per-projection error-bound terms.
pub fn factored_unif_propagate_with_trace(
    fd: &FactoredDistribution,
    umodel: &UniformizedModel,
    t: f64,
    cfg: &PropagationConfig,
) -> Result<(FactoredDistribution, Vec<FactoredDistribution>)> {
    propagate_with_trace(fd, umodel, t, cfg, true)
}

fn propagate_with_trace(
    fd: &FactoredDistribution,
    umodel: &UniformizedModel,
    t: f64,
    cfg: &PropagationConfig,
    keep_trace: bool,
) -> Result<(FactoredDistribution, Vec<FactoredDistribution>)> {
    cfg.validate()?;
    if !t.is_finite() || t < 0.0 {
        return Err(Error::invalid(format!("time must be finite and >= 0, got {t}")));
    }
    if t == 0.0 || umodel.alpha() == 0.0 {
        return Ok((fd.clone(), Vec::new()));
    }
    let m = cfg.sub_intervals(umodel.alpha(), t);
    let t_sub = t / m as f64;
    let l = match cfg.truncation {
        Truncation::Fixed(l) => l,
        Truncation::Auto => choose_truncation(umodel.alpha() * t_sub, cfg.tail_tol)?,
    };
    let mut cur = fd.clone();
    let mut trace = Vec::new();
    for _ in 0..m {
        cur = factored_unif_step(&cur, umodel, t_sub, l)?;
        if keep_trace {
            trace.push(cur.clone());
        }
    }
    Ok((cur, trace))
}
