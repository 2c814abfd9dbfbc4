//! Factored RKF: adaptive Runge-Kutta-Fehlberg 4(5) integration of the
//! projected master equation `d v_j/dt = v_j * E_{u_j}[Q_{X_j|u_j}]` over the
//! stacked per-variable marginals.

use crate::error::{Error, Result};
use crate::factored::{projected_rate_apply, FactoredDistribution, PropagationConfig};
use crate::model::CtbnModel;

// Classic Fehlberg 4(5) tableau.
const A: [[f64; 5]; 5] = [
    [1.0 / 4.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
];
const B5: [f64; 6] = [
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
];
const B4: [f64; 6] = [
    25.0 / 216.0,
    0.0,
    1408.0 / 2565.0,
    2197.0 / 4104.0,
    -1.0 / 5.0,
    0.0,
];

const MIN_STEP_FRACTION: f64 = 1e-12;
const MAX_STEPS: usize = 10_000_000;

struct Layout {
    offsets: Vec<usize>,
    cards: Vec<usize>,
    total: usize,
}

impl Layout {
    fn of(fd: &FactoredDistribution) -> Self {
        let cards = fd.cardinalities();
        let mut offsets = Vec::with_capacity(cards.len());
        let mut total = 0;
        for &c in &cards {
            offsets.push(total);
            total += c;
        }
        Layout {
            offsets,
            cards,
            total,
        }
    }

    fn pack(&self, fd: &FactoredDistribution) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.total);
        for m in fd.marginals() {
            y.extend_from_slice(m);
        }
        y
    }

    fn unpack(&self, y: &[f64], log_weight: f64) -> FactoredDistribution {
        let marginals = self
            .offsets
            .iter()
            .zip(&self.cards)
            .map(|(&o, &c)| y[o..o + c].to_vec())
            .collect();
        FactoredDistribution::from_parts(marginals, log_weight)
    }
}

fn derivative(layout: &Layout, y: &[f64], model: &CtbnModel) -> Vec<f64> {
    let fd = layout.unpack(y, 0.0);
    let d = projected_rate_apply(&fd, model);
    let mut out = Vec::with_capacity(layout.total);
    for dj in d {
        out.extend_from_slice(&dj);
    }
    out
}

/// Integrates the factored marginals from 0 to `t` under the projected rate
/// dynamics of `model`, adapting the step to keep the embedded 4th/5th-order
/// max-norm discrepancy below `cfg.rkf_tol`.
///
/// After each accepted step the marginals are clamped at zero and
/// renormalized; for substochastic (evidence-restricted) models the log of
/// the surviving mass is folded into `log_weight`.
pub fn factored_rkf_propagate(
    fd: &FactoredDistribution,
    model: &CtbnModel,
    t: f64,
    cfg: &PropagationConfig,
) -> Result<FactoredDistribution> {
    cfg.validate()?;
    if !t.is_finite() || t < 0.0 {
        return Err(Error::invalid(format!("time must be finite and >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(fd.clone());
    }
    let substochastic = model.is_substochastic();
    let layout = Layout::of(fd);
    let n = layout.total;
    let mut y = layout.pack(fd);
    let mut log_weight = fd.log_weight();
    let mut time = 0.0;
    let mut h = t;
    let h_min = MIN_STEP_FRACTION * t;
    let mut k = vec![vec![0.0; n]; 6];
    let mut stage = vec![0.0; n];

    for _ in 0..MAX_STEPS {
        if time >= t {
            return Ok(layout.unpack(&y, log_weight));
        }
        h = h.min(t - time);
        if h < h_min {
            return Err(Error::StepSizeUnderflow { t: time, h });
        }
        k[0] = derivative(&layout, &y, model);
        for s in 1..6 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    let a = A[s - 1][j];
                    if a != 0.0 {
                        acc += a * kj[i];
                    }
                }
                stage[i] = y[i] + h * acc;
            }
            k[s] = derivative(&layout, &stage, model);
        }
        let mut err: f64 = 0.0;
        let mut y5 = vec![0.0; n];
        for i in 0..n {
            let mut hi = 0.0;
            let mut lo = 0.0;
            for (j, kj) in k.iter().enumerate() {
                hi += B5[j] * kj[i];
                lo += B4[j] * kj[i];
            }
            y5[i] = y[i] + h * hi;
            err = err.max((h * (hi - lo)).abs());
        }
        if err <= cfg.rkf_tol {
            time += h;
            y = y5;
            // Clamp and renormalize: the projected dynamics preserve
            // normalization analytically, but drift accumulates over many
            // steps; restricted models lose real mass here instead.
            for (&o, &c) in layout.offsets.iter().zip(&layout.cards) {
                let m = &mut y[o..o + c];
                let mut mass = 0.0;
                for v in m.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                    mass += *v;
                }
                if mass <= 0.0 {
                    return Err(Error::ZeroMass);
                }
                for v in m.iter_mut() {
                    *v /= mass;
                }
                if substochastic {
                    log_weight += mass.ln();
                }
            }
        }
        let factor = if err == 0.0 {
            4.0
        } else {
            (0.9 * (cfg.rkf_tol / err).powf(0.2)).clamp(0.2, 4.0)
        };
        h *= factor;
    }
    Err(Error::StepSizeUnderflow { t: time, h })
}
