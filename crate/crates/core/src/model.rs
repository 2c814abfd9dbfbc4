//! CTBN model: per-variable conditional intensity matrices indexed by parent
//! assignments, joint-state encoding, amalgamation to the full generator, and
//! evidence restriction.
//!
//! Joint-state encoding convention: variable 0 is least significant (varies
//! fastest), `index = sum_i x_i * prod_{j<i} |X_j|`. For the two-variable
//! example model this orders the joint states a0b0, a1b0, a0b1, a1b1.
//! Parent-assignment (context) indices use the same convention over the
//! parent list order: the first listed parent varies fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Absolute tolerance on CIM row sums and stochastic-matrix row sums.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Default cap on the joint state space for dense expansions.
pub const DEFAULT_STATE_CAP: usize = 1 << 22;

pub type JointStateIndex = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub cardinality: usize,
}

/// A continuous-time Bayesian network: the compact representation of the
/// joint rate matrix Q.
#[derive(Debug, Clone, PartialEq)]
pub struct CtbnModel {
    variables: Vec<Variable>,
    parents: Vec<Vec<usize>>,
    cims: Vec<Vec<Matrix>>,
}

impl CtbnModel {
    /// Builds and validates a model. `cims[i]` holds one intensity matrix per
    /// assignment of variable i's parents, ordered by the mixed-radix context
    /// index (first parent varies fastest).
    pub fn new(
        variables: Vec<Variable>,
        parents: Vec<Vec<usize>>,
        cims: Vec<Vec<Matrix>>,
    ) -> Result<Self> {
        let model = CtbnModel {
            variables,
            parents,
            cims,
        };
        model.validate()?;
        Ok(model)
    }

    /// Construction without row-sum validation, for evidence-restricted
    /// models whose CIMs are deliberately substochastic.
    fn new_unvalidated(
        variables: Vec<Variable>,
        parents: Vec<Vec<usize>>,
        cims: Vec<Vec<Matrix>>,
    ) -> Self {
        CtbnModel {
            variables,
            parents,
            cims,
        }
    }

    /// Checks every model invariant, reporting the first violation with its
    /// variable index, parent-assignment index, and row.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        for i in 0..self.n_vars() {
            let card = self.variables[i].cardinality;
            for (ctx, cim) in self.cims[i].iter().enumerate() {
                for r in 0..card {
                    let mut sum = 0.0;
                    for c in 0..card {
                        let v = cim.get(r, c);
                        if !v.is_finite() {
                            return Err(Error::validation(format!(
                                "variable {i}, context {ctx}, row {r}: non-finite entry"
                            )));
                        }
                        if r != c && v < 0.0 {
                            return Err(Error::validation(format!(
                                "variable {i}, context {ctx}, row {r}: negative off-diagonal rate {v}"
                            )));
                        }
                        sum += v;
                    }
                    if sum.abs() > ROW_SUM_TOL {
                        return Err(Error::validation(format!(
                            "variable {i}, context {ctx}, row {r}: row sum nonzero ({sum:e})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Structural checks shared with restricted models: parent indices,
    /// self-parents, CIM counts and shapes. Row sums are not checked here.
    fn validate_structure(&self) -> Result<()> {
        let n = self.variables.len();
        if n == 0 {
            return Err(Error::validation("model has no variables"));
        }
        if self.parents.len() != n || self.cims.len() != n {
            return Err(Error::validation(
                "parents and cims must have one entry per variable",
            ));
        }
        for (i, var) in self.variables.iter().enumerate() {
            if var.cardinality == 0 {
                return Err(Error::validation(format!(
                    "variable {i} ({}): cardinality must be at least 1",
                    var.name
                )));
            }
            let mut seen = vec![false; n];
            for &p in &self.parents[i] {
                if p >= n {
                    return Err(Error::validation(format!(
                        "variable {i}: parent index {p} out of range"
                    )));
                }
                if p == i {
                    return Err(Error::validation(format!(
                        "variable {i} ({}): self-parent",
                        var.name
                    )));
                }
                if seen[p] {
                    return Err(Error::validation(format!(
                        "variable {i}: duplicate parent {p}"
                    )));
                }
                seen[p] = true;
            }
            let expected = self.context_count(i);
            if self.cims[i].len() != expected {
                return Err(Error::validation(format!(
                    "variable {i}: {} CIMs provided, expected {expected} (product of parent cardinalities)",
                    self.cims[i].len()
                )));
            }
            for (ctx, cim) in self.cims[i].iter().enumerate() {
                if cim.n_rows() != var.cardinality || cim.n_cols() != var.cardinality {
                    return Err(Error::validation(format!(
                        "variable {i}, context {ctx}: CIM is {}x{}, expected {}x{}",
                        cim.n_rows(),
                        cim.n_cols(),
                        var.cardinality,
                        var.cardinality
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, i: usize) -> &Variable {
        &self.variables[i]
    }

    pub fn cardinality(&self, i: usize) -> usize {
        self.variables[i].cardinality
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.variables.iter().map(|v| v.cardinality).collect()
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn cim(&self, i: usize, ctx: usize) -> &Matrix {
        &self.cims[i][ctx]
    }

    pub fn cims(&self, i: usize) -> &[Matrix] {
        &self.cims[i]
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Number of parent assignments for variable i.
    pub fn context_count(&self, i: usize) -> usize {
        self.parents[i]
            .iter()
            .map(|&p| self.variables[p].cardinality)
            .product()
    }

    /// Context index of variable i under the joint assignment `joint`.
    pub fn context_index(&self, i: usize, joint: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for &p in &self.parents[i] {
            idx += joint[p] * stride;
            stride *= self.variables[p].cardinality;
        }
        idx
    }

    /// Decodes a context index of variable i into per-parent values, aligned
    /// with `parents(i)`.
    pub fn decode_context(&self, i: usize, ctx: usize) -> Vec<usize> {
        let mut rem = ctx;
        self.parents[i]
            .iter()
            .map(|&p| {
                let card = self.variables[p].cardinality;
                let v = rem % card;
                rem /= card;
                v
            })
            .collect()
    }

    /// Joint state count, or None on overflow.
    pub fn n_joint_states(&self) -> Option<usize> {
        self.variables
            .iter()
            .try_fold(1usize, |acc, v| acc.checked_mul(v.cardinality))
    }

    pub fn encode(&self, assignment: &[usize]) -> JointStateIndex {
        debug_assert_eq!(assignment.len(), self.n_vars());
        let mut idx = 0;
        let mut stride = 1;
        for (x, v) in assignment.iter().zip(&self.variables) {
            debug_assert!(*x < v.cardinality);
            idx += x * stride;
            stride *= v.cardinality;
        }
        idx
    }

    pub fn decode(&self, index: JointStateIndex) -> Vec<usize> {
        let mut out = vec![0; self.n_vars()];
        self.decode_into(index, &mut out);
        out
    }

    pub fn decode_into(&self, index: JointStateIndex, out: &mut [usize]) {
        let mut rem = index;
        for (o, v) in out.iter_mut().zip(&self.variables) {
            *o = rem % v.cardinality;
            rem /= v.cardinality;
        }
    }

    /// True when any CIM row sums below zero, i.e. the model has been
    /// restricted for interval evidence and leaks probability mass.
    pub fn is_substochastic(&self) -> bool {
        self.cims.iter().flatten().any(|cim| {
            cim.row_sums().iter().any(|&s| s < -ROW_SUM_TOL)
        })
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file: ModelFile = self.into();
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        file.into_model()
    }
}

/// Validates a model, returning it on success. Convenience wrapper around
/// [`CtbnModel::validate`].
pub fn validate_model(model: CtbnModel) -> Result<CtbnModel> {
    model.validate()?;
    Ok(model)
}

/// Expands the factored representation into the full joint-space generator.
///
/// `Q(x,x')` sums the per-variable diagonal rates when `x = x'`, equals the
/// single changed variable's transition rate when exactly one variable
/// differs, and is zero otherwise.
pub fn amalgamate(model: &CtbnModel) -> Result<Matrix> {
    amalgamate_with_cap(model, DEFAULT_STATE_CAP)
}

pub fn amalgamate_with_cap(model: &CtbnModel, cap: usize) -> Result<Matrix> {
    let n_states = checked_state_count(model, cap)?;
    let n = model.n_vars();
    let mut q = Matrix::zeros(n_states, n_states);
    let mut x = vec![0usize; n];
    for s in 0..n_states {
        model.decode_into(s, &mut x);
        let mut diag = 0.0;
        let mut stride = 1usize;
        for i in 0..n {
            let ctx = model.context_index(i, &x);
            let cim = model.cim(i, ctx);
            let xi = x[i];
            diag += cim.get(xi, xi);
            for xj in 0..model.cardinality(i) {
                if xj != xi {
                    // Changing only variable i shifts the index by (xj - xi) strides.
                    let target =
                        (s as isize + (xj as isize - xi as isize) * stride as isize) as usize;
                    q.set(s, target, cim.get(xi, xj));
                }
            }
            stride *= model.cardinality(i);
        }
        q.set(s, s, diag);
    }
    Ok(q)
}

pub(crate) fn checked_state_count(model: &CtbnModel, cap: usize) -> Result<usize> {
    match model.n_joint_states() {
        Some(n) if n <= cap => Ok(n),
        Some(n) => Err(Error::StateSpaceCap {
            states: n as u128,
            cap,
        }),
        None => Err(Error::StateSpaceCap {
            states: model
                .variables()
                .iter()
                .fold(1u128, |a, v| a.saturating_mul(v.cardinality as u128)),
            cap,
        }),
    }
}

/// A model modified for interval evidence, tagged with the observation that
/// produced it. Rows of the evidence variable's CIMs no longer sum to zero.
#[derive(Debug, Clone)]
pub struct RestrictedModel {
    model: CtbnModel,
    var: usize,
    value: usize,
}

impl RestrictedModel {
    pub fn model(&self) -> &CtbnModel {
        &self.model
    }

    pub fn into_model(self) -> CtbnModel {
        self.model
    }

    pub fn evidence(&self) -> (usize, usize) {
        (self.var, self.value)
    }
}

/// Builds the generator used while a variable is observed over an interval:
/// in every CIM of the evidence variable the observed-value row keeps its
/// diagonal with zeroed off-diagonals, and every other row becomes all-zero.
/// All other variables' CIMs are unchanged.
pub fn restrict_for_interval_evidence(
    model: &CtbnModel,
    var: usize,
    value: usize,
) -> Result<RestrictedModel> {
    if var >= model.n_vars() {
        return Err(Error::invalid(format!("variable index {var} out of range")));
    }
    let card = model.cardinality(var);
    if value >= card {
        return Err(Error::invalid(format!(
            "value {value} out of range for variable {} (cardinality {card})",
            model.variable(var).name
        )));
    }
    let mut cims = model.cims.clone();
    for cim in &mut cims[var] {
        let mut restricted = Matrix::zeros(card, card);
        restricted.set(value, value, cim.get(value, value));
        *cim = restricted;
    }
    Ok(RestrictedModel {
        model: CtbnModel::new_unvalidated(model.variables.clone(), model.parents.clone(), cims),
        var,
        value,
    })
}

// --- JSON model file schema ---------------------------------------------

/// On-disk model format: `variables`, `parents` (lists of variable names),
/// and per-variable CIMs ordered by the mixed-radix parent-assignment index.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub variables: Vec<Variable>,
    pub parents: Vec<Vec<String>>,
    pub cims: Vec<Vec<Vec<Vec<f64>>>>,
}

impl ModelFile {
    pub fn into_model(self) -> Result<CtbnModel> {
        let name_index = |name: &str| {
            self.variables
                .iter()
                .position(|v| v.name == name)
                .ok_or_else(|| Error::validation(format!("unknown parent variable '{name}'")))
        };
        if self.parents.len() != self.variables.len() {
            return Err(Error::validation(
                "parents must have one entry per variable",
            ));
        }
        let parents = self
            .parents
            .iter()
            .map(|ps| ps.iter().map(|p| name_index(p)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let cims = self
            .cims
            .into_iter()
            .map(|per_var| {
                per_var
                    .into_iter()
                    .map(Matrix::from_rows)
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        CtbnModel::new(self.variables, parents, cims)
    }
}

impl From<&CtbnModel> for ModelFile {
    fn from(m: &CtbnModel) -> Self {
        ModelFile {
            variables: m.variables.clone(),
            parents: m
                .parents
                .iter()
                .map(|ps| ps.iter().map(|&p| m.variables[p].name.clone()).collect())
                .collect(),
            cims: m
                .cims
                .iter()
                .map(|per_var| per_var.iter().map(|c| c.to_nested()).collect())
                .collect(),
        }
    }
}
