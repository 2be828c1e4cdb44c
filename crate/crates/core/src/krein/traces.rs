use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturbation::Perturbation;

/// Number of trapezoidal samples on the circle used for Laurent coefficients.
pub const LAURENT_SAMPLES: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceMethod {
    /// `tr(H^j − H_q^j)` from finite sections.
    Direct,
    /// `j ∫ λ^{j−1} ξ(λ) dλ`.
    Moment,
    /// Recursion from the Laurent coefficients of `α` at infinity.
    Recursion,
}

/// `τ_1..τ_J` computed by one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub method: TraceMethod,
    pub taus: Vec<f64>,
}

impl TraceReport {
    pub fn order(&self) -> usize {
        self.taus.len()
    }
}

/// `τ_j = tr(H^j − H_q^j)`, exact up to rounding.
///
/// `(H^j)(n, n)` only sees coefficients within distance `j/2` of `n`, so the
/// diagonal differences vanish outside `[n− − j, n+ + 1 + j]` and sections
/// on `[n− − 2j, n+ + 1 + 2j]` reproduce them exactly.
pub fn trace_direct(p: &Perturbation, j: usize) -> f64 {
    let Some(win) = p.window() else {
        return 0.0;
    };
    if j == 0 {
        return 0.0;
    }
    let reach = j as i64;
    let lo = win.lo - 2 * reach;
    let hi = win.hi + 1 + 2 * reach;
    let m = (hi - lo + 1) as usize;
    let bg = p.background();
    let section = |a: &dyn Fn(i64) -> f64, b: &dyn Fn(i64) -> f64| {
        let mut h = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            let n = lo + i as i64;
            h[(i, i)] = b(n);
            if i + 1 < m {
                h[(i, i + 1)] = a(n);
                h[(i + 1, i)] = a(n);
            }
        }
        h
    };
    let h = section(&|n| p.a(n), &|n| p.b(n));
    let hq = section(&|n| bg.a(n), &|n| bg.b(n));
    let (hj, hqj) = (power(&h, j), power(&hq, j));
    let inner = (reach as usize)..(m - reach as usize);
    inner.map(|i| hj[(i, i)] - hqj[(i, i)]).sum()
}

fn power(h: &DMatrix<f64>, j: usize) -> DMatrix<f64> {
    let mut out = h.clone();
    for _ in 1..j {
        out = &out * h;
    }
    out
}

/// Radius used for the Laurent coefficients: twice the Gershgorin bound.
pub fn default_radius(p: &Perturbation) -> f64 {
    2.0 * p.gershgorin_bound()
}

/// Laurent coefficients `α_1..α_J` of `A·α(z) = Σ α_j z^{−j}` at infinity.
///
/// Trapezoidal rule on the circle `|z| = radius` with
/// [`LAURENT_SAMPLES`] points; spectrally accurate because `A·α` is
/// holomorphic outside the spectrum.
pub fn alpha_expansion(p: &Perturbation, order: usize, radius: Option<f64>) -> Result<Vec<f64>> {
    let required = default_radius(p);
    let radius = radius.unwrap_or(required);
    if radius < required {
        return Err(Error::RadiusTooSmall { radius, required });
    }
    if p.window().is_none() {
        return Ok(vec![0.0; order]);
    }
    let a_total = p.alpha_asymptotics().a_total();
    let m = LAURENT_SAMPLES;
    let samples: Vec<(Complex64, Complex64)> = (0..m)
        .map(|k| {
            let unit = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / m as f64);
            p.alpha(unit * radius).map(|a| (unit, a * a_total))
        })
        .collect::<Result<_>>()?;
    Ok((1..=order)
        .map(|j| {
            let mean: Complex64 = samples
                .iter()
                .map(|(unit, v)| v * unit.powi(j as i32))
                .sum::<Complex64>()
                / m as f64;
            mean.re * radius.powi(j as i32)
        })
        .collect())
}

/// `τ_1 = −α_1`, `τ_j = −j α_j − Σ_{k<j} α_{j−k} τ_k`.
pub fn tau_from_recursion(alphas: &[f64]) -> Vec<f64> {
    let mut taus: Vec<f64> = Vec::with_capacity(alphas.len());
    for j in 1..=alphas.len() {
        let tail: f64 = (1..j).map(|k| alphas[j - k - 1] * taus[k - 1]).sum();
        taus.push(-(j as f64) * alphas[j - 1] - tail);
    }
    taus
}

/// Direct or recursion report of order `order`.
///
/// The moment report needs a shift profile; see
/// [`trace_via_shift`](super::trace_via_shift).
pub fn trace_report(p: &Perturbation, method: TraceMethod, order: usize) -> Result<TraceReport> {
    let taus = match method {
        TraceMethod::Direct => (1..=order).map(|j| trace_direct(p, j)).collect(),
        TraceMethod::Recursion => tau_from_recursion(&alpha_expansion(p, order, None)?),
        TraceMethod::Moment => {
            return Err(Error::InvalidInput(
                "moment traces are computed from a shift profile".into(),
            ))
        }
    };
    Ok(TraceReport { method, taus })
}
