//! Sparse uniformization: the joint distribution as a thresholded map from
//! joint states to probabilities, propagated through the implicitly
//! represented stochastic matrix M of the uniformized model. Rows of M are
//! generated on demand from the factored form, so nothing joint-space-sized
//! is ever materialized.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factored::{FactoredDistribution, PropagationConfig, Truncation};
use crate::model::JointStateIndex;
use crate::poisson::{choose_truncation, poisson_weights};
use crate::uniformized::UniformizedModel;

/// Sparse joint belief state. `dropped_mass` accumulates the probability
/// removed by thresholding as an error diagnostic; after a renormalization
/// it is expressed in the local normalized scale current when dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDistribution {
    entries: BTreeMap<JointStateIndex, f64>,
    dropped_mass: f64,
}

impl SparseDistribution {
    pub fn empty() -> Self {
        SparseDistribution {
            entries: BTreeMap::new(),
            dropped_mass: 0.0,
        }
    }

    pub fn one_hot(state: JointStateIndex) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(state, 1.0);
        SparseDistribution {
            entries,
            dropped_mass: 0.0,
        }
    }

    pub fn from_entries(pairs: impl IntoIterator<Item = (JointStateIndex, f64)>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (s, p) in pairs {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::invalid(format!("invalid probability {p} for state {s}")));
            }
            if p > 0.0 {
                *entries.entry(s).or_insert(0.0) += p;
            }
        }
        Ok(SparseDistribution {
            entries,
            dropped_mass: 0.0,
        })
    }

    /// Enumerates the support of a factored distribution (the product of the
    /// per-variable supports), capped to guard against blowup.
    pub fn from_factored(fd: &FactoredDistribution, cap: usize) -> Result<Self> {
        let cards = fd.cardinalities();
        let support: Vec<Vec<usize>> = (0..fd.n_vars())
            .map(|i| {
                fd.marginal(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(s, _)| s)
                    .collect()
            })
            .collect();
        let size = support
            .iter()
            .try_fold(1usize, |a, s| a.checked_mul(s.len()))
            .filter(|&n| n <= cap)
            .ok_or(Error::StateSpaceCap {
                states: support
                    .iter()
                    .fold(1u128, |a, s| a.saturating_mul(s.len() as u128)),
                cap,
            })?;
        let mut entries = BTreeMap::new();
        let mut idx = vec![0usize; fd.n_vars()];
        for _ in 0..size {
            let mut state = 0usize;
            let mut stride = 1usize;
            let mut prob = 1.0;
            for (i, &card) in cards.iter().enumerate() {
                let v = support[i][idx[i]];
                state += v * stride;
                stride *= card;
                prob *= fd.marginal(i)[v];
            }
            if prob > 0.0 {
                entries.insert(state, prob);
            }
            // Advance the mixed-radix support counter.
            for (pos, sup) in idx.iter_mut().zip(&support) {
                *pos += 1;
                if *pos < sup.len() {
                    break;
                }
                *pos = 0;
            }
        }
        Ok(SparseDistribution {
            entries,
            dropped_mass: 0.0,
        })
    }

    pub fn entries(&self) -> impl Iterator<Item = (JointStateIndex, f64)> + '_ {
        self.entries.iter().map(|(&s, &p)| (s, p))
    }

    pub fn get(&self, state: JointStateIndex) -> f64 {
        self.entries.get(&state).copied().unwrap_or(0.0)
    }

    pub fn support_size(&self) -> usize {
        self.entries.len()
    }

    pub fn mass(&self) -> f64 {
        self.entries.values().sum()
    }

    pub fn dropped_mass(&self) -> f64 {
        self.dropped_mass
    }

    /// Expands to a dense probability vector of length `n_states`.
    pub fn densify(&self, n_states: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_states];
        for (&s, &p) in &self.entries {
            out[s] += p;
        }
        out
    }

    /// Per-variable marginal of the sparse joint state.
    pub fn marginalize(&self, cards: &[usize], var: usize) -> Vec<f64> {
        let stride: usize = cards[..var].iter().product();
        let card = cards[var];
        let mut out = vec![0.0; card];
        for (&s, &p) in &self.entries {
            out[(s / stride) % card] += p;
        }
        out
    }
}

impl Serialize for SparseDistribution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            entries: Vec<(JointStateIndex, f64)>,
            dropped_mass: &'a f64,
        }
        Repr {
            entries: self.entries().collect(),
            dropped_mass: &self.dropped_mass,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SparseDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            entries: Vec<(JointStateIndex, f64)>,
            dropped_mass: f64,
        }
        let raw = Repr::deserialize(d)?;
        let mut out = SparseDistribution::from_entries(raw.entries)
            .map_err(serde::de::Error::custom)?;
        out.dropped_mass = raw.dropped_mass;
        Ok(out)
    }
}

/// Row `x` of the joint stochastic matrix M, generated from the factored
/// form: the self-transition collects `alpha_k/alpha * M_k(x_k, x_k)` over
/// all variables, and each single-variable move `x_j -> x'_j` carries
/// `alpha_j/alpha * M_j(x_j, x'_j)`.
pub fn row_successors(
    umodel: &UniformizedModel,
    x: JointStateIndex,
) -> Vec<(JointStateIndex, f64)> {
    let model = umodel.source();
    let alpha = umodel.alpha();
    if alpha == 0.0 {
        return vec![(x, 1.0)];
    }
    let assignment = model.decode(x);
    let mut out = Vec::new();
    let mut self_prob = 0.0;
    let mut stride = 1usize;
    for i in 0..model.n_vars() {
        // Frozen variables carry zero mixture weight and contribute nothing.
        let w = umodel.alpha_i(i) / alpha;
        let card = model.cardinality(i);
        if w > 0.0 {
            let ctx = model.context_index(i, &assignment);
            let m = umodel.m_cim(i, ctx);
            let xi = assignment[i];
            self_prob += w * m.get(xi, xi);
            for xj in 0..card {
                if xj != xi {
                    let p = w * m.get(xi, xj);
                    if p > 0.0 {
                        let target =
                            (x as isize + (xj as isize - xi as isize) * stride as isize) as usize;
                        out.push((target, p));
                    }
                }
            }
        }
        stride *= card;
    }
    // A fully absorbed row of a restricted model may legitimately be empty.
    if self_prob > 0.0 {
        out.push((x, self_prob));
    }
    out.sort_unstable_by_key(|&(s, _)| s);
    out
}

/// One multiplication of a sparse distribution by M: scatter-accumulate over
/// the successor rows of every tracked state. Iteration order is sorted by
/// state index so floating-point accumulation is reproducible.
pub fn sparse_multiply(v: &SparseDistribution, umodel: &UniformizedModel) -> SparseDistribution {
    let mut entries: BTreeMap<JointStateIndex, f64> = BTreeMap::new();
    for (s, p) in v.entries() {
        for (target, m) in row_successors(umodel, s) {
            if m > 0.0 {
                *entries.entry(target).or_insert(0.0) += p * m;
            }
        }
    }
    SparseDistribution {
        entries,
        dropped_mass: v.dropped_mass,
    }
}

/// Removes entries below `kappa`, adding their total to `dropped_mass`.
pub fn drop_threshold(v: &SparseDistribution, kappa: f64) -> SparseDistribution {
    if kappa <= 0.0 {
        return v.clone();
    }
    let mut entries = BTreeMap::new();
    let mut dropped = v.dropped_mass;
    for (s, p) in v.entries() {
        if p < kappa {
            dropped += p;
        } else {
            entries.insert(s, p);
        }
    }
    SparseDistribution {
        entries,
        dropped_mass: dropped,
    }
}

/// Sparse uniformized propagation over horizon `t` with thresholding after
/// each multiply. Within each of the `ceil(alpha t / theta)` sub-intervals
/// the Poisson-weighted terms are accumulated, and the accumulated
/// distribution is renormalized at the sub-interval boundary; the log of the
/// surviving mass is returned for the caller's likelihood accounting.
pub fn sparse_unif_propagate(
    v: &SparseDistribution,
    umodel: &UniformizedModel,
    t: f64,
    cfg: &PropagationConfig,
    kappa: f64,
) -> Result<(SparseDistribution, f64)> {
    cfg.validate()?;
    if !t.is_finite() || t < 0.0 {
        return Err(Error::invalid(format!("time must be finite and >= 0, got {t}")));
    }
    if kappa < 0.0 {
        return Err(Error::invalid(format!("kappa must be >= 0, got {kappa}")));
    }
    if t == 0.0 || umodel.alpha() == 0.0 || v.support_size() == 0 {
        return Ok((v.clone(), 0.0));
    }
    let m = cfg.sub_intervals(umodel.alpha(), t);
    let t_sub = t / m as f64;
    let rate = umodel.alpha() * t_sub;
    let l = match cfg.truncation {
        Truncation::Fixed(l) => l,
        Truncation::Auto => choose_truncation(rate, cfg.tail_tol)?,
    };
    let (weights, tail) = poisson_weights(rate, l)?;
    let mut cur = v.clone();
    let mut log_mass = 0.0;
    for _ in 0..m {
        let mut acc: BTreeMap<JointStateIndex, f64> = BTreeMap::new();
        let mut work = cur.clone();
        for (s, p) in work.entries() {
            *acc.entry(s).or_insert(0.0) += weights[0] * p;
        }
        for &beta in &weights[1..] {
            work = drop_threshold(&sparse_multiply(&work, umodel), kappa);
            for (s, p) in work.entries() {
                *acc.entry(s).or_insert(0.0) += beta * p;
            }
        }
        let total: f64 = acc.values().sum();
        if total <= 0.0 {
            return Err(Error::ZeroMass);
        }
        for p in acc.values_mut() {
            *p /= total;
        }
        // In the truncation-renormalized convention a lossless sub-interval
        // has total = 1 - tail exactly.
        log_mass += (total / (1.0 - tail)).ln();
        cur = SparseDistribution {
            entries: acc,
            dropped_mass: work.dropped_mass,
        };
    }
    if !umodel.is_substochastic() && kappa == 0.0 {
        // Pure truncation noise; keep the likelihood exactly clean.
        log_mass = 0.0;
    }
    Ok((cur, log_mass))
}

/// Conditions on `var = value` by discarding inconsistent states. Errors when
/// nothing consistent remains — the failure mode thresholding can cause.
pub fn condition_sparse(
    v: &SparseDistribution,
    cards: &[usize],
    var: usize,
    value: usize,
) -> Result<(SparseDistribution, f64)> {
    let stride: usize = cards[..var].iter().product();
    let card = cards[var];
    let mut entries = BTreeMap::new();
    for (s, p) in v.entries() {
        if (s / stride) % card == value {
            entries.insert(s, p);
        }
    }
    let mass: f64 = entries.values().sum();
    if entries.is_empty() || mass <= 0.0 {
        return Err(Error::SparseInconsistency {
            var: format!("#{var}"),
            value,
        });
    }
    for p in entries.values_mut() {
        *p /= mass;
    }
    Ok((
        SparseDistribution {
            entries,
            dropped_mass: v.dropped_mass,
        },
        mass.ln(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::running_example;
    use crate::model::{CtbnModel, Variable};
    use crate::matrix::Matrix;
    use crate::uniformized::uniformize;

    #[test]
    fn successor_row_matches_printed_m() {
        let u = uniformize(&running_example());
        let row = row_successors(&u, 0);
        // State a0b0: self 0.5, a1b0 0.125, a0b1 0.375.
        assert_eq!(row, vec![(0, 0.5), (1, 0.125), (2, 0.375)]);
    }

    #[test]
    fn frozen_model_row_is_identity() {
        let m = CtbnModel::new(
            vec![Variable {
                name: "X".into(),
                cardinality: 2,
            }],
            vec![vec![]],
            vec![vec![Matrix::zeros(2, 2)]],
        )
        .unwrap();
        let u = uniformize(&m);
        assert_eq!(row_successors(&u, 1), vec![(1, 1.0)]);
    }

    #[test]
    fn rows_sum_to_one() {
        let u = uniformize(&running_example());
        for s in 0..4 {
            let total: f64 = row_successors(&u, s).iter().map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-9, "state {s}: {total}");
        }
    }

    #[test]
    fn multiply_of_one_hot_is_the_row() {
        let u = uniformize(&running_example());
        let v = SparseDistribution::one_hot(0);
        let out = sparse_multiply(&v, &u);
        assert_eq!(out.get(0), 0.5);
        assert_eq!(out.get(1), 0.125);
        assert_eq!(out.get(2), 0.375);
        assert_eq!(out.get(3), 0.0);
    }

    #[test]
    fn multiply_of_empty_is_empty() {
        let u = uniformize(&running_example());
        let out = sparse_multiply(&SparseDistribution::empty(), &u);
        assert_eq!(out.support_size(), 0);
    }

    #[test]
    fn multiply_conserves_mass_plus_dropped() {
        let u = uniformize(&running_example());
        let mut v = SparseDistribution::from_entries(vec![(0, 0.4), (1, 0.1), (2, 0.2), (3, 0.3)])
            .unwrap();
        for _ in 0..5 {
            v = drop_threshold(&sparse_multiply(&v, &u), 0.05);
            let accounted = v.mass() + v.dropped_mass();
            assert!((accounted - 1.0).abs() < 1e-12, "accounted {accounted}");
        }
    }

    #[test]
    fn drop_threshold_examples() {
        let v = SparseDistribution::from_entries(vec![(0, 0.6), (1, 0.3), (2, 0.1)]).unwrap();
        let unchanged = drop_threshold(&v, 0.0);
        assert_eq!(unchanged, v);
        let out = drop_threshold(&v, 0.2);
        assert_eq!(out.support_size(), 2);
        assert_eq!(out.get(0), 0.6);
        assert_eq!(out.get(1), 0.3);
        assert!((out.dropped_mass() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_time_is_identity() {
        let u = uniformize(&running_example());
        let v = SparseDistribution::one_hot(2);
        let (out, lm) = sparse_unif_propagate(&v, &u, 0.0, &PropagationConfig::default(), 0.0)
            .unwrap();
        assert_eq!(out, v);
        assert_eq!(lm, 0.0);
    }

    #[test]
    fn conditioning_keeps_consistent_states() {
        let v = SparseDistribution::from_entries(vec![(0, 0.25), (1, 0.25), (2, 0.25), (3, 0.25)])
            .unwrap();
        // Variable B (index 1) of the 2x2 space: states 0,1 have b=0.
        let (out, lm) = condition_sparse(&v, &[2, 2], 1, 0).unwrap();
        assert_eq!(out.support_size(), 2);
        assert!((out.get(0) - 0.5).abs() < 1e-12);
        assert!((lm - 0.5f64.ln()).abs() < 1e-12);

        // All states already consistent: unchanged, log mass 0.
        let consistent =
            SparseDistribution::from_entries(vec![(0, 0.6), (1, 0.4)]).unwrap();
        let (same, lm) = condition_sparse(&consistent, &[2, 2], 1, 0).unwrap();
        assert_eq!(same.support_size(), 2);
        assert!(lm.abs() < 1e-12);
    }

    #[test]
    fn conditioning_with_no_consistent_states_fails() {
        let v = SparseDistribution::from_entries(vec![(0, 1.0)]).unwrap();
        let err = condition_sparse(&v, &[2, 2], 1, 1);
        assert!(matches!(err, Err(Error::SparseInconsistency { .. })));
    }

    #[test]
    fn support_growth_is_bounded_by_out_degree() {
        let u = uniformize(&running_example());
        let mut v = SparseDistribution::one_hot(0);
        let fanout = 1 + 2; // 1 + sum_i (|X_i| - 1)
        for k in 1..=4 {
            v = sparse_multiply(&v, &u);
            let bound = (fanout as usize).pow(k).min(4);
            assert!(v.support_size() <= bound, "k={k}: {}", v.support_size());
        }
    }

    #[test]
    fn serde_round_trip() {
        let mut v =
            SparseDistribution::from_entries(vec![(3, 0.7), (1, 0.2)]).unwrap();
        v.dropped_mass = 0.1;
        let s = serde_json::to_string(&v).unwrap();
        let back: SparseDistribution = serde_json::from_str(&s).unwrap();
        assert_eq!(v, back);
    }
}
