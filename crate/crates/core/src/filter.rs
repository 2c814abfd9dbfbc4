//! End-to-end filtering: segments the time axis at evidence and query
//! boundaries, propagates the belief state with the selected engine,
//! conditions on point evidence, switches to a restricted generator during
//! interval evidence, and accumulates the log evidence mass.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dense::{propagate_dense, DenseDistribution, DENSE_TAIL_TOL};
use crate::error::{Error, Result};
use crate::factored::{
    condition_point, factored_unif_propagate, FactoredDistribution, PropagationConfig,
};
use crate::model::{restrict_for_interval_evidence, CtbnModel, DEFAULT_STATE_CAP};
use crate::matrix::Matrix;
use crate::rkf::factored_rkf_propagate;
use crate::sparse::{condition_sparse, sparse_unif_propagate, SparseDistribution};
use crate::uniformized::{uniformize, UniformizedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Dense,
    FactoredUnif,
    FactoredRkf,
    SparseUnif,
}

impl Engine {
    pub const ALL: [Engine; 4] = [
        Engine::Dense,
        Engine::FactoredUnif,
        Engine::FactoredRkf,
        Engine::SparseUnif,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Engine::Dense => "dense",
            Engine::FactoredUnif => "factored_unif",
            Engine::FactoredRkf => "factored_rkf",
            Engine::SparseUnif => "sparse_unif",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Engine::Dense),
            "factored_unif" => Ok(Engine::FactoredUnif),
            "factored_rkf" => Ok(Engine::FactoredRkf),
            "sparse_unif" => Ok(Engine::SparseUnif),
            other => Err(Error::invalid(format!(
                "unknown engine '{other}' (expected dense|factored_unif|factored_rkf|sparse_unif)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvidenceEvent {
    Point {
        t: f64,
        var: usize,
        value: usize,
    },
    /// The variable holds `value` on `[t1, t2)`.
    Interval {
        t1: f64,
        t2: f64,
        var: usize,
        value: usize,
    },
}

impl EvidenceEvent {
    fn start(&self) -> f64 {
        match self {
            EvidenceEvent::Point { t, .. } => *t,
            EvidenceEvent::Interval { t1, .. } => *t1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query {
    pub t: f64,
    pub var: usize,
}

/// Time-ordered evidence events and marginal queries.
#[derive(Debug, Clone, Default)]
pub struct EvidenceTimeline {
    events: Vec<EvidenceEvent>,
    queries: Vec<Query>,
}

impl EvidenceTimeline {
    pub fn new(mut events: Vec<EvidenceEvent>, mut queries: Vec<Query>) -> Result<Self> {
        for e in &events {
            let (t_first, t_ok) = match e {
                EvidenceEvent::Point { t, .. } => (*t, true),
                EvidenceEvent::Interval { t1, t2, .. } => (*t1, t1 < t2),
            };
            if !t_first.is_finite() || t_first < 0.0 {
                return Err(Error::invalid("event times must be finite and nonnegative"));
            }
            if !t_ok {
                return Err(Error::invalid("interval evidence requires t1 < t2"));
            }
        }
        for q in &queries {
            if !q.t.is_finite() || q.t < 0.0 {
                return Err(Error::invalid("query times must be finite and nonnegative"));
            }
        }
        events.sort_by(|a, b| a.start().total_cmp(&b.start()));
        queries.sort_by(|a, b| a.t.total_cmp(&b.t));
        // Intervals on the same variable must not overlap.
        for (i, a) in events.iter().enumerate() {
            if let EvidenceEvent::Interval { t1: a1, t2: a2, var: va, .. } = a {
                for b in &events[i + 1..] {
                    if let EvidenceEvent::Interval { t1: b1, t2: b2, var: vb, .. } = b {
                        if va == vb && a1 < b2 && b1 < a2 {
                            return Err(Error::invalid(format!(
                                "overlapping interval evidence on variable {va}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(EvidenceTimeline { events, queries })
    }

    pub fn empty() -> Self {
        EvidenceTimeline::default()
    }

    pub fn events(&self) -> &[EvidenceEvent] {
        &self.events
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn horizon(&self) -> f64 {
        let e = self.events.iter().map(|e| match e {
            EvidenceEvent::Point { t, .. } => *t,
            EvidenceEvent::Interval { t2, .. } => *t2,
        });
        let q = self.queries.iter().map(|q| q.t);
        e.chain(q).fold(0.0, f64::max)
    }
}

// --- timeline file schema -------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct TimelineFile {
    #[serde(default)]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub queries: Vec<QuerySpec>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EventSpec {
    Point { t: f64, var: String, value: usize },
    Interval { t: f64, t2: f64, var: String, value: usize },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QuerySpec {
    pub t: f64,
    pub var: String,
}

impl TimelineFile {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn resolve(&self, model: &CtbnModel) -> Result<EvidenceTimeline> {
        let var_of = |name: &str| {
            model
                .var_index(name)
                .ok_or_else(|| Error::invalid(format!("unknown variable '{name}' in timeline")))
        };
        let events = self
            .events
            .iter()
            .map(|e| match e {
                EventSpec::Point { t, var, value } => Ok(EvidenceEvent::Point {
                    t: *t,
                    var: var_of(var)?,
                    value: *value,
                }),
                EventSpec::Interval { t, t2, var, value } => Ok(EvidenceEvent::Interval {
                    t1: *t,
                    t2: *t2,
                    var: var_of(var)?,
                    value: *value,
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        let queries = self
            .queries
            .iter()
            .map(|q| {
                Ok(Query {
                    t: q.t,
                    var: var_of(&q.var)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        EvidenceTimeline::new(events, queries)
    }
}

// --- results ----------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct QueryAnswer {
    pub t: f64,
    pub var: usize,
    pub marginal: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentTiming {
    pub t_start: f64,
    pub t_end: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FilterResult {
    pub queries: Vec<QueryAnswer>,
    pub log_likelihood: f64,
    pub timings: Vec<SegmentTiming>,
}

// --- driver -----------------------------------------------------------------

enum Belief {
    Dense(DenseDistribution),
    Factored(FactoredDistribution),
    Sparse(SparseDistribution),
}

struct ActiveModel {
    base: CtbnModel,
    restrictions: Vec<(usize, usize)>,
    current: CtbnModel,
    umodel: Option<UniformizedModel>,
    dense_q: Option<Matrix>,
}

impl ActiveModel {
    fn new(base: &CtbnModel) -> Self {
        ActiveModel {
            base: base.clone(),
            restrictions: Vec::new(),
            current: base.clone(),
            umodel: None,
            dense_q: None,
        }
    }

    fn add_restriction(&mut self, var: usize, value: usize) -> Result<()> {
        self.restrictions.push((var, value));
        self.rebuild()
    }

    fn remove_restriction(&mut self, var: usize, value: usize) -> Result<()> {
        if let Some(pos) = self
            .restrictions
            .iter()
            .position(|&(v, s)| (v, s) == (var, value))
        {
            self.restrictions.remove(pos);
        }
        self.rebuild()
    }

    fn rebuild(&mut self) -> Result<()> {
        let mut m = self.base.clone();
        for &(v, s) in &self.restrictions {
            m = restrict_for_interval_evidence(&m, v, s)?.into_model();
        }
        self.current = m;
        self.umodel = None;
        self.dense_q = None;
        Ok(())
    }

    fn umodel(&mut self) -> &UniformizedModel {
        if self.umodel.is_none() {
            self.umodel = Some(uniformize(&self.current));
        }
        self.umodel.as_ref().unwrap()
    }

    fn dense_q(&mut self) -> Result<&Matrix> {
        if self.dense_q.is_none() {
            self.dense_q = Some(crate::model::amalgamate(&self.current)?);
        }
        Ok(self.dense_q.as_ref().unwrap())
    }
}

/// Runs the full filter: propagate to each boundary, apply the evidence
/// there, answer any queries, continue. Point evidence conditions the state;
/// interval evidence conditions at its start and swaps in the restricted
/// generator until its end. The log evidence mass accumulates across
/// conditioning and restricted propagation.
pub fn filter_run(
    model: &CtbnModel,
    engine: Engine,
    initial: &FactoredDistribution,
    timeline: &EvidenceTimeline,
    cfg: &PropagationConfig,
    kappa: f64,
) -> Result<FilterResult> {
    cfg.validate()?;
    initial.validate()?;
    if initial.cardinalities() != model.cardinalities() {
        return Err(Error::invalid(
            "initial distribution does not match the model's variables",
        ));
    }
    if kappa < 0.0 {
        return Err(Error::invalid(format!("kappa must be >= 0, got {kappa}")));
    }

    let cards = model.cardinalities();
    let mut active = ActiveModel::new(model);
    let mut belief = match engine {
        Engine::Dense => Belief::Dense(DenseDistribution::from_factored(initial)?),
        Engine::FactoredUnif | Engine::FactoredRkf => Belief::Factored(initial.clone()),
        Engine::SparseUnif => {
            Belief::Sparse(SparseDistribution::from_factored(initial, DEFAULT_STATE_CAP)?)
        }
    };
    let initial_log_weight = initial.log_weight();
    let mut log_likelihood = 0.0;
    let mut answers = Vec::new();
    let mut timings = Vec::new();

    // Boundary times: every event edge and every query instant.
    let mut times: Vec<f64> = Vec::new();
    for e in timeline.events() {
        match e {
            EvidenceEvent::Point { t, .. } => times.push(*t),
            EvidenceEvent::Interval { t1, t2, .. } => {
                times.push(*t1);
                times.push(*t2);
            }
        }
    }
    times.extend(timeline.queries().iter().map(|q| q.t));
    times.sort_by(f64::total_cmp);
    times.dedup();

    let mut t_now = 0.0;
    for &tau in &times {
        if tau > t_now {
            let dt = tau - t_now;
            let started = Instant::now();
            propagate_belief(&mut belief, engine, &mut active, dt, cfg, kappa, &mut log_likelihood)?;
            timings.push(SegmentTiming {
                t_start: t_now,
                t_end: tau,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            });
            t_now = tau;
        }

        // Interval ends release their restriction before anything else at
        // this instant; [t1, t2) excludes the right endpoint.
        for e in timeline.events() {
            if let EvidenceEvent::Interval { t2, var, value, .. } = e {
                if *t2 == tau {
                    active.remove_restriction(*var, *value)?;
                }
            }
        }
        for e in timeline.events() {
            match e {
                EvidenceEvent::Point { t, var, value } if *t == tau => {
                    condition_belief(&mut belief, model, &cards, *var, *value, &mut log_likelihood)?;
                }
                EvidenceEvent::Interval { t1, var, value, .. } if *t1 == tau => {
                    condition_belief(&mut belief, model, &cards, *var, *value, &mut log_likelihood)?;
                    active.add_restriction(*var, *value)?;
                }
                _ => {}
            }
        }
        for q in timeline.queries() {
            if q.t == tau {
                answers.push(QueryAnswer {
                    t: q.t,
                    var: q.var,
                    marginal: belief_marginal(&belief, &cards, q.var),
                });
            }
        }
    }

    if let Belief::Factored(fd) = &belief {
        log_likelihood += fd.log_weight() - initial_log_weight;
    }
    Ok(FilterResult {
        queries: answers,
        log_likelihood,
        timings,
    })
}

fn propagate_belief(
    belief: &mut Belief,
    engine: Engine,
    active: &mut ActiveModel,
    dt: f64,
    cfg: &PropagationConfig,
    kappa: f64,
    log_likelihood: &mut f64,
) -> Result<()> {
    match belief {
        Belief::Dense(d) => {
            let q = active.dense_q()?;
            let moved = propagate_dense(q, d, dt, DENSE_TAIL_TOL)?;
            let (normalized, log_mass) = moved.normalize().map_err(|_| zero_evidence(active))?;
            *log_likelihood += log_mass;
            *d = normalized;
        }
        Belief::Factored(fd) => {
            let out = if engine == Engine::FactoredRkf {
                factored_rkf_propagate(fd, &active.current, dt, cfg)?
            } else {
                factored_unif_propagate(fd, active.umodel(), dt, cfg)?
            };
            *fd = out;
        }
        Belief::Sparse(v) => {
            let (out, log_mass) = sparse_unif_propagate(v, active.umodel(), dt, cfg, kappa)?;
            *log_likelihood += log_mass;
            *v = out;
        }
    }
    Ok(())
}

fn condition_belief(
    belief: &mut Belief,
    model: &CtbnModel,
    cards: &[usize],
    var: usize,
    value: usize,
    log_likelihood: &mut f64,
) -> Result<()> {
    let name = || model.variable(var).name.clone();
    match belief {
        Belief::Dense(d) => {
            let (out, log_mass) = d.condition(cards, var, value).map_err(|e| match e {
                Error::ZeroProbabilityEvidence { .. } => Error::ZeroProbabilityEvidence {
                    var: name(),
                    value,
                },
                other => other,
            })?;
            *log_likelihood += log_mass;
            *d = out;
        }
        Belief::Factored(fd) => {
            let out = condition_point(fd, var, value).map_err(|e| match e {
                Error::ZeroProbabilityEvidence { .. } => Error::ZeroProbabilityEvidence {
                    var: name(),
                    value,
                },
                other => other,
            })?;
            *fd = out;
        }
        Belief::Sparse(v) => {
            let (out, log_mass) = condition_sparse(v, cards, var, value).map_err(|e| match e {
                Error::SparseInconsistency { .. } => Error::SparseInconsistency {
                    var: name(),
                    value,
                },
                other => other,
            })?;
            *log_likelihood += log_mass;
            *v = out;
        }
    }
    Ok(())
}

fn belief_marginal(belief: &Belief, cards: &[usize], var: usize) -> Vec<f64> {
    match belief {
        Belief::Dense(d) => {
            let m = d.marginalize(cards, var);
            normalize_vec(m)
        }
        Belief::Factored(fd) => fd.marginal(var).to_vec(),
        Belief::Sparse(v) => normalize_vec(v.marginalize(cards, var)),
    }
}

fn normalize_vec(mut v: Vec<f64>) -> Vec<f64> {
    let mass: f64 = v.iter().sum();
    if mass > 0.0 {
        for x in &mut v {
            *x /= mass;
        }
    }
    v
}

fn zero_evidence(active: &ActiveModel) -> Error {
    match active.restrictions.first() {
        Some(&(var, value)) => Error::ZeroProbabilityEvidence {
            var: active.base.variable(var).name.clone(),
            value,
        },
        None => Error::ZeroMass,
    }
}
