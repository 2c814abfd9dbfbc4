//! Benchmark harness: sweeps engines over their accuracy knobs on one model
//! and timeline, measures wall time and per-query KL against the dense
//! reference, and emits CSV rows, optionally overlaid with the theoretical
//! divergence bound.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bounds::{delta_max_neg_log, epsilon_crude, global_gamma, subdivided_theorem4_bound};
use crate::dense::kl_divergence_slices;
use crate::error::{Error, Result};
use crate::factored::{
    factored_unif_propagate_with_trace, FactoredDistribution, PropagationConfig, Truncation,
};
use crate::filter::{filter_run, Engine, EvidenceTimeline, TimelineFile};
use crate::generators::{ring_ising, running_example, toroid_ising};
use crate::model::CtbnModel;
use crate::poisson::choose_truncation;
use crate::uniformized::uniformize;

#[derive(Debug, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub model: ModelRef,
    pub engines: Vec<Engine>,
    #[serde(default = "default_theta_grid")]
    pub theta_grid: Vec<f64>,
    #[serde(default = "default_kappa_grid")]
    pub kappa_grid: Vec<f64>,
    #[serde(default = "default_rkf_tol_grid")]
    pub rkf_tol_grid: Vec<f64>,
    #[serde(default = "default_truncation")]
    pub truncation: Truncation,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
    pub timeline: TimelineFile,
    pub initial: InitialSpec,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub bound_overlay: bool,
}

fn default_theta_grid() -> Vec<f64> {
    vec![0.5, 1.0, 2.0, 4.0]
}

fn default_kappa_grid() -> Vec<f64> {
    vec![1e-2, 1e-4, 1e-6]
}

fn default_rkf_tol_grid() -> Vec<f64> {
    vec![1e-4, 1e-6, 1e-8]
}

fn default_truncation() -> Truncation {
    Truncation::Auto
}

fn default_tail_tol() -> f64 {
    1e-10
}

fn default_repetitions() -> usize {
    5
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Path { path: String },
    Gen { gen: GenSpec },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GenSpec {
    RunningExample,
    Ring {
        n: usize,
        #[serde(default = "default_tau")]
        tau: f64,
        #[serde(default = "default_beta")]
        beta: f64,
    },
    Toroid {
        rows: usize,
        cols: usize,
        #[serde(default = "default_tau")]
        tau: f64,
        #[serde(default = "default_beta")]
        beta: f64,
    },
}

pub fn default_tau() -> f64 {
    4.0
}

pub fn default_beta() -> f64 {
    1.0
}

impl GenSpec {
    pub fn build(&self) -> Result<CtbnModel> {
        match self {
            GenSpec::RunningExample => Ok(running_example()),
            GenSpec::Ring { n, tau, beta } => ring_ising(*n, *tau, *beta),
            GenSpec::Toroid {
                rows,
                cols,
                tau,
                beta,
            } => toroid_ising(*rows, *cols, *tau, *beta),
        }
    }
}

/// A deterministic per-variable start, optionally eta-floored so bound
/// overlays stay finite.
#[derive(Debug, Serialize, Deserialize)]
pub struct InitialSpec {
    pub states: Vec<usize>,
    #[serde(default)]
    pub eta: f64,
}

impl InitialSpec {
    pub fn build(&self, model: &CtbnModel) -> Result<FactoredDistribution> {
        FactoredDistribution::with_eta_floor(&model.cardinalities(), &self.states, self.eta)
    }
}

#[derive(Debug, Clone)]
pub struct CsvRow {
    pub method: String,
    pub param: String,
    pub wall_ms: f64,
    pub query_var: String,
    pub kl: f64,
    pub theorem4_bound: Option<f64>,
}

pub fn load_experiment(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn resolve_model(spec: &ExperimentSpec, base_dir: &Path) -> Result<CtbnModel> {
    match &spec.model {
        ModelRef::Path { path } => {
            let full = base_dir.join(path);
            let text = std::fs::read_to_string(&full)?;
            CtbnModel::from_json_str(&text)
        }
        ModelRef::Gen { gen } => gen.build(),
    }
}

/// Runs the sweep. Every (engine, parameter) cell is filtered
/// `repetitions + 1` times (first run discarded as warm-up), the median wall
/// time is reported, and each query contributes one row with its marginal KL
/// from the dense reference.
pub fn run_experiment(spec: &ExperimentSpec, base_dir: &Path) -> Result<Vec<CsvRow>> {
    if spec.repetitions == 0 {
        return Err(Error::invalid("repetitions must be at least 1"));
    }
    let model = resolve_model(spec, base_dir)?;
    let timeline = spec.timeline.resolve(&model)?;
    let initial = spec.initial.build(&model)?;

    let base_cfg = PropagationConfig {
        truncation: spec.truncation,
        tail_tol: spec.tail_tol,
        ..Default::default()
    };
    let exact = filter_run(&model, Engine::Dense, &initial, &timeline, &base_cfg, 0.0)?;

    let mut rows = Vec::new();
    for &engine in &spec.engines {
        match engine {
            Engine::Dense => {
                let cell = run_cell(&model, engine, &initial, &timeline, &base_cfg, 0.0, spec)?;
                push_rows(&mut rows, &model, &exact, cell, engine.name(), String::new(), None);
            }
            Engine::FactoredUnif => {
                for &theta in &spec.theta_grid {
                    let cfg = PropagationConfig {
                        theta,
                        ..base_cfg
                    };
                    let cell = run_cell(&model, engine, &initial, &timeline, &cfg, 0.0, spec)?;
                    let bound = if spec.bound_overlay {
                        bound_overlay(&model, &initial, &timeline, &cfg, spec.initial.eta)?
                    } else {
                        None
                    };
                    push_rows(
                        &mut rows,
                        &model,
                        &exact,
                        cell,
                        engine.name(),
                        format!("theta={theta}"),
                        bound,
                    );
                }
            }
            Engine::FactoredRkf => {
                for &tol in &spec.rkf_tol_grid {
                    let cfg = PropagationConfig {
                        rkf_tol: tol,
                        ..base_cfg
                    };
                    let cell = run_cell(&model, engine, &initial, &timeline, &cfg, 0.0, spec)?;
                    push_rows(
                        &mut rows,
                        &model,
                        &exact,
                        cell,
                        engine.name(),
                        format!("rkf_tol={tol}"),
                        None,
                    );
                }
            }
            Engine::SparseUnif => {
                for &theta in &spec.theta_grid {
                    for &kappa in &spec.kappa_grid {
                        let cfg = PropagationConfig {
                            theta,
                            ..base_cfg
                        };
                        let cell =
                            match run_cell(&model, engine, &initial, &timeline, &cfg, kappa, spec)
                            {
                                Ok(cell) => cell,
                                // The documented sparse failure mode: evidence
                                // inconsistent with every retained state. Emit
                                // infinite-KL rows rather than aborting the sweep.
                                Err(Error::SparseInconsistency { .. }) => {
                                    for q in timeline.queries() {
                                        rows.push(CsvRow {
                                            method: engine.name().into(),
                                            param: format!("theta={theta};kappa={kappa}"),
                                            wall_ms: f64::NAN,
                                            query_var: model.variable(q.var).name.clone(),
                                            kl: f64::INFINITY,
                                            theorem4_bound: None,
                                        });
                                    }
                                    continue;
                                }
                                Err(e) => return Err(e),
                            };
                        push_rows(
                            &mut rows,
                            &model,
                            &exact,
                            cell,
                            engine.name(),
                            format!("theta={theta};kappa={kappa}"),
                            None,
                        );
                    }
                }
            }
        }
    }
    Ok(rows)
}

struct CellResult {
    result: crate::filter::FilterResult,
    wall_ms: f64,
}

fn run_cell(
    model: &CtbnModel,
    engine: Engine,
    initial: &FactoredDistribution,
    timeline: &EvidenceTimeline,
    cfg: &PropagationConfig,
    kappa: f64,
    spec: &ExperimentSpec,
) -> Result<CellResult> {
    let mut walls = Vec::with_capacity(spec.repetitions);
    let mut result = None;
    for rep in 0..=spec.repetitions {
        let started = std::time::Instant::now();
        let r = filter_run(model, engine, initial, timeline, cfg, kappa)?;
        let wall = started.elapsed().as_secs_f64() * 1e3;
        if rep > 0 {
            walls.push(wall);
        }
        result = Some(r);
    }
    Ok(CellResult {
        result: result.expect("at least one repetition"),
        wall_ms: median(&mut walls),
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn push_rows(
    rows: &mut Vec<CsvRow>,
    model: &CtbnModel,
    exact: &crate::filter::FilterResult,
    cell: CellResult,
    method: &str,
    param: String,
    bound: Option<f64>,
) {
    for (exact_q, approx_q) in exact.queries.iter().zip(&cell.result.queries) {
        debug_assert_eq!(exact_q.var, approx_q.var);
        rows.push(CsvRow {
            method: method.into(),
            param: param.clone(),
            wall_ms: cell.wall_ms,
            query_var: model.variable(exact_q.var).name.clone(),
            kl: kl_divergence_slices(&exact_q.marginal, &approx_q.marginal),
            theorem4_bound: bound,
        });
    }
}

/// Evaluates the subdivided divergence bound for a factored-uniformization
/// run to the last query time. Only evidence-free timelines are covered by
/// the theory; with events present no bound is emitted.
fn bound_overlay(
    model: &CtbnModel,
    initial: &FactoredDistribution,
    timeline: &EvidenceTimeline,
    cfg: &PropagationConfig,
    eta: f64,
) -> Result<Option<f64>> {
    if !timeline.events().is_empty() || timeline.queries().is_empty() {
        return Ok(None);
    }
    let t = timeline.horizon();
    if t <= 0.0 {
        return Ok(None);
    }
    let umodel = uniformize(model);
    if umodel.alpha() == 0.0 {
        return Ok(None);
    }
    let gamma = global_gamma(&umodel)?;
    let epsilon = epsilon_crude(model.n_vars(), eta);
    let m = cfg.sub_intervals(umodel.alpha(), t);
    let l = match cfg.truncation {
        Truncation::Fixed(l) => l,
        Truncation::Auto => choose_truncation(umodel.alpha() * t / m as f64, cfg.tail_tol)?,
    };
    let (_, trace) = factored_unif_propagate_with_trace(initial, &umodel, t, cfg)?;
    let deltas: Vec<f64> = trace.iter().map(delta_max_neg_log).collect();
    let fallback = deltas.iter().copied().fold(0.0, f64::max);
    let bound = subdivided_theorem4_bound(
        0.0,
        umodel.alpha(),
        gamma,
        epsilon,
        t,
        l,
        &deltas,
        m,
        fallback,
    )?;
    Ok(Some(bound))
}

/// Writes rows in the fixed schema
/// `method,param,wall_ms,query_var,kl,theorem4_bound`. Infinite divergences
/// are written as `inf`; a missing bound leaves the field empty.
pub fn write_csv<W: Write>(rows: &[CsvRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "method,param,wall_ms,query_var,kl,theorem4_bound")?;
    for r in rows {
        let kl = format_value(r.kl);
        let bound = r.theorem4_bound.map(format_value).unwrap_or_default();
        let wall = if r.wall_ms.is_nan() {
            String::new()
        } else {
            format!("{:.3}", r.wall_ms)
        };
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.method, r.param, wall, r.query_var, kl, bound
        )?;
    }
    Ok(())
}

fn format_value(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.9e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_spec_parses_with_defaults() {
        let text = r#"{
            "model": {"gen": {"kind": "running-example"}},
            "engines": ["factored_unif", "sparse_unif"],
            "timeline": {"queries": [{"t": 0.5, "var": "A"}]},
            "initial": {"states": [0, 0], "eta": 0.05}
        }"#;
        let spec: ExperimentSpec = serde_json::from_str(text).unwrap();
        assert_eq!(spec.theta_grid, vec![0.5, 1.0, 2.0, 4.0]);
        assert_eq!(spec.repetitions, 5);
        assert_eq!(spec.truncation, Truncation::Auto);
        assert!(!spec.bound_overlay);
        let model = resolve_model(&spec, Path::new(".")).unwrap();
        assert_eq!(model.n_vars(), 2);
    }

    #[test]
    fn csv_formats_infinities_and_missing_bounds() {
        let rows = vec![CsvRow {
            method: "sparse_unif".into(),
            param: "theta=2;kappa=0.01".into(),
            wall_ms: 1.5,
            query_var: "x0".into(),
            kl: f64::INFINITY,
            theorem4_bound: None,
        }];
        let mut out = Vec::new();
        write_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("method,param,wall_ms,query_var,kl,theorem4_bound\n"));
        assert!(text.contains(",inf,"), "{text}");
    }
}
