//! The lowest Toda flow in Flaschka variables,
//!
//! ```text
//! ȧ(n) = a(n) (b(n+1) − b(n)),    ḃ(n) = 2 (a(n)² − a(n−1)²),
//! ```
//!
//! applied simultaneously to the perturbed coefficients and to the periodic
//! background. The flow does not preserve compact support, so the window
//! grows whenever the deviation near its boundary exceeds
//! [`TodaConfig::boundary_tol`].

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::background::{BackgroundOperator, Window};
use crate::error::{Error, Result};
use crate::io::fmt_real;
use crate::krein::trace_direct;
use crate::perturbation::Perturbation;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TodaConfig {
    /// Largest tolerated `|a − a_q| + |b − b_q|` on the guard sites.
    pub boundary_tol: f64,
    /// Number of outermost window sites inspected each step.
    pub guard: usize,
    /// Sites added on a side when its guard deviation is too large.
    pub growth: usize,
    /// Window length beyond which evolution fails.
    pub max_window: usize,
}

impl Default for TodaConfig {
    fn default() -> Self {
        TodaConfig {
            boundary_tol: 1e-14,
            guard: 4,
            growth: 8,
            max_window: 4096,
        }
    }
}

/// `(a(t), b(t))` together with its background `(a_q(t), b_q(t))`.
#[derive(Clone, Debug, PartialEq)]
pub struct TodaState {
    pub time: f64,
    pub perturbation: Perturbation,
}

/// JSON checkpoint `{t, window, a, b, a_q, b_q}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TodaCheckpoint {
    pub t: f64,
    pub window: Option<[i64; 2]>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub a_q: Vec<f64>,
    pub b_q: Vec<f64>,
}

/// Time derivatives on the window and on one background period.
#[derive(Clone, Debug, PartialEq)]
pub struct TodaDerivative {
    pub window: Option<Window>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub a_q: Vec<f64>,
    pub b_q: Vec<f64>,
}

impl TodaState {
    pub fn new(perturbation: Perturbation) -> Self {
        TodaState {
            time: 0.0,
            perturbation,
        }
    }

    pub fn background(&self) -> &BackgroundOperator {
        self.perturbation.background()
    }

    pub fn to_checkpoint(&self) -> TodaCheckpoint {
        let p = &self.perturbation;
        TodaCheckpoint {
            t: self.time,
            window: p.window().map(|w| [w.lo, w.hi]),
            a: p.window_a().to_vec(),
            b: p.window_b().to_vec(),
            a_q: p.background().a_period().to_vec(),
            b_q: p.background().b_period().to_vec(),
        }
    }

    pub fn from_checkpoint(c: &TodaCheckpoint) -> Result<Self> {
        let bg = BackgroundOperator::new(c.a_q.clone(), c.b_q.clone())?;
        let perturbation = match c.window {
            None if c.a.is_empty() && c.b.is_empty() => Perturbation::zero(bg),
            None => {
                return Err(Error::InvalidInput(
                    "checkpoint coefficients given without a window".into(),
                ))
            }
            Some([lo, hi]) if lo > hi => {
                return Err(Error::InvalidInput(format!("window [{lo}, {hi}] is reversed")))
            }
            Some([lo, hi]) => Perturbation::new(bg, Window::new(lo, hi), c.a.clone(), c.b.clone())?,
        };
        Ok(TodaState {
            time: c.t,
            perturbation,
        })
    }
}

/// Flat state `[a_win, b_win, a_q, b_q]` used by the integrator.
#[derive(Clone, Debug)]
struct Flat {
    lo: i64,
    len: usize,
    period: usize,
    y: Vec<f64>,
}

impl Flat {
    fn from_state(s: &TodaState) -> Self {
        let p = &s.perturbation;
        let bg = p.background();
        let (lo, len) = p.window().map_or((0, 0), |w| (w.lo, w.len()));
        let mut y = Vec::with_capacity(2 * len + 2 * bg.period());
        y.extend_from_slice(p.window_a());
        y.extend_from_slice(p.window_b());
        y.extend_from_slice(bg.a_period());
        y.extend_from_slice(bg.b_period());
        Flat {
            lo,
            len,
            period: bg.period(),
            y,
        }
    }

    fn to_state(&self, time: f64, had_window: bool) -> Result<TodaState> {
        let (l, n) = (self.len, self.period);
        let bg = BackgroundOperator::new(
            self.y[2 * l..2 * l + n].to_vec(),
            self.y[2 * l + n..].to_vec(),
        )?;
        let perturbation = if had_window {
            Perturbation::new(
                bg,
                Window::new(self.lo, self.lo + l as i64 - 1),
                self.y[..l].to_vec(),
                self.y[l..2 * l].to_vec(),
            )?
        } else {
            Perturbation::zero(bg)
        };
        Ok(TodaState { time, perturbation })
    }

    fn field(&self, y: &[f64]) -> Vec<f64> {
        let (l, np) = (self.len, self.period);
        let n = np as i64;
        let aq = |k: i64| y[2 * l + k.rem_euclid(n) as usize];
        let bq = |k: i64| y[2 * l + np + k.rem_euclid(n) as usize];
        let idx = |site: i64| {
            let i = site - self.lo;
            (0..l as i64).contains(&i).then_some(i as usize)
        };
        let a = |site: i64| idx(site).map_or_else(|| aq(site), |i| y[i]);
        let b = |site: i64| idx(site).map_or_else(|| bq(site), |i| y[l + i]);
        let mut out = vec![0.0; y.len()];
        for i in 0..l {
            let site = self.lo + i as i64;
            out[i] = a(site) * (b(site + 1) - b(site));
            out[l + i] = 2.0 * (a(site).powi(2) - a(site - 1).powi(2));
        }
        for k in 0..n {
            out[2 * l + k as usize] = aq(k) * (bq(k + 1) - bq(k));
            out[2 * l + np + k as usize] = 2.0 * (aq(k).powi(2) - aq(k - 1).powi(2));
        }
        out
    }

    fn rk4_step(&mut self, h: f64) {
        let axpy = |y: &[f64], k: &[f64], c: f64| -> Vec<f64> {
            y.iter().zip(k).map(|(a, b)| a + c * b).collect()
        };
        let k1 = self.field(&self.y);
        let k2 = self.field(&axpy(&self.y, &k1, 0.5 * h));
        let k3 = self.field(&axpy(&self.y, &k2, 0.5 * h));
        let k4 = self.field(&axpy(&self.y, &k3, h));
        for (i, y) in self.y.iter_mut().enumerate() {
            *y += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }

    fn deviation(&self, i: usize) -> f64 {
        let (l, np) = (self.len, self.period as i64);
        let k = (self.lo + i as i64).rem_euclid(np) as usize;
        let n = self.period;
        (self.y[i] - self.y[2 * l + k]).abs() + (self.y[l + i] - self.y[2 * l + n + k]).abs()
    }

    /// Grows the window on each side whose guard sites deviate too much.
    fn adapt(&mut self, config: &TodaConfig) -> Result<()> {
        let guard = config.guard.min(self.len);
        let left = (0..guard).map(|i| self.deviation(i)).fold(0.0, f64::max);
        let right = (self.len - guard..self.len)
            .map(|i| self.deviation(i))
            .fold(0.0, f64::max);
        let grow_left = if left > config.boundary_tol { config.growth } else { 0 };
        let grow_right = if right > config.boundary_tol { config.growth } else { 0 };
        if grow_left + grow_right == 0 {
            return Ok(());
        }
        let new_len = self.len + grow_left + grow_right;
        if new_len > config.max_window {
            return Err(Error::WindowOverflow {
                len: new_len,
                max: config.max_window,
            });
        }
        let (l, np) = (self.len, self.period);
        let new_lo = self.lo - grow_left as i64;
        let bgv = |off: usize, site: i64| self.y[2 * l + off + site.rem_euclid(np as i64) as usize];
        let mut y = Vec::with_capacity(2 * new_len + 2 * np);
        for (part, off) in [(0, 0), (l, np)] {
            y.extend((0..grow_left as i64).map(|i| bgv(off, new_lo + i)));
            y.extend_from_slice(&self.y[part..part + l]);
            let hi = self.lo + l as i64;
            y.extend((0..grow_right as i64).map(|i| bgv(off, hi + i)));
        }
        y.extend_from_slice(&self.y[2 * l..]);
        *self = Flat {
            lo: new_lo,
            len: new_len,
            period: np,
            y,
        };
        Ok(())
    }

    /// First site (window site or background index) with `a ≤ 0` or a non-finite value.
    fn positivity_violation(&self) -> Option<i64> {
        let (l, np) = (self.len, self.period);
        if let Some(i) = (0..l).find(|&i| !(self.y[i] > 0.0 && self.y[l + i].is_finite())) {
            return Some(self.lo + i as i64);
        }
        (0..np)
            .find(|&k| !(self.y[2 * l + k] > 0.0 && self.y[2 * l + np + k].is_finite()))
            .map(|k| k as i64)
    }
}

/// Time derivatives of `(a, b)` on the window and of `(a_q, b_q)` on one period.
pub fn toda_vector_field(state: &TodaState) -> TodaDerivative {
    let flat = Flat::from_state(state);
    let d = flat.field(&flat.y);
    let (l, n) = (flat.len, flat.period);
    TodaDerivative {
        window: state.perturbation.window(),
        a: d[..l].to_vec(),
        b: d[l..2 * l].to_vec(),
        a_q: d[2 * l..2 * l + n].to_vec(),
        b_q: d[2 * l + n..].to_vec(),
    }
}

/// Classical RK4 from `state.time` to `t_final`.
///
/// The interval is split into `⌈(t_final − t)/dt⌉` equal steps, so the
/// step actually used is at most `dt`. A zero perturbation stays zero and
/// only the background moves.
pub fn evolve(state: &TodaState, t_final: f64, dt: f64, config: &TodaConfig) -> Result<TodaState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if !t_final.is_finite() || t_final < state.time {
        return Err(Error::InvalidInput(format!(
            "t_final = {t_final} precedes the state time {}",
            state.time
        )));
    }
    let span = t_final - state.time;
    let steps = ((span / dt) * (1.0 - 1e-12)).ceil() as usize;
    if steps == 0 {
        return Ok(state.clone());
    }
    let h = span / steps as f64;
    let had_window = state.perturbation.window().is_some();
    let mut flat = Flat::from_state(state);
    for step in 1..=steps {
        if had_window {
            flat.adapt(config)?;
        }
        flat.rk4_step(h);
        if let Some(site) = flat.positivity_violation() {
            return Err(Error::PositivityLoss {
                step,
                time: state.time + step as f64 * h,
                dt: h,
                site,
            });
        }
    }
    flat.to_state(t_final, had_window)
}

/// `A` and `τ_1..τ_J` at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConservedRow {
    pub t: f64,
    pub a_total: f64,
    pub taus: Vec<f64>,
    pub window_len: usize,
}

impl ConservedRow {
    fn of(state: &TodaState, order: usize) -> Self {
        let p = &state.perturbation;
        ConservedRow {
            t: state.time,
            a_total: p.alpha_asymptotics().a_total(),
            taus: (1..=order).map(|j| trace_direct(p, j)).collect(),
            window_len: p.window().map_or(0, |w| w.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConservedReport {
    pub rows: Vec<ConservedRow>,
    /// `max_t |A(t) − A(0)|`.
    pub a_drift: f64,
    /// `max_t |τ_j(t) − τ_j(0)|` for each `j`.
    pub tau_drift: Vec<f64>,
    /// The evolved state at the last time.
    #[serde(skip)]
    pub final_state: Option<TodaState>,
}

impl ConservedReport {
    /// Drifts divided by `max(1, |X(0)|)`, `A` first.
    pub fn relative_drift(&self) -> Vec<f64> {
        let first = &self.rows[0];
        std::iter::once(self.a_drift / first.a_total.abs().max(1.0))
            .chain(
                self.tau_drift
                    .iter()
                    .zip(&first.taus)
                    .map(|(d, t)| d / t.abs().max(1.0)),
            )
            .collect()
    }

    /// CSV with columns `t, A, tau_1..tau_J, window_len`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let order = self.tau_drift.len();
        let taus: String = (1..=order).map(|j| format!(",tau_{j}")).collect();
        writeln!(out, "t,A{taus},window_len")?;
        for row in &self.rows {
            let taus: String = row.taus.iter().map(|x| format!(",{}", fmt_real(*x))).collect();
            writeln!(
                out,
                "{},{}{taus},{}",
                fmt_real(row.t),
                fmt_real(row.a_total),
                row.window_len
            )?;
        }
        Ok(())
    }
}

/// Evolves `state0` through `times` and records `A` and `τ_1..τ_order`.
///
/// `times` must be non-decreasing and start at or after `state0.time`.
pub fn conserved_report(
    state0: &TodaState,
    times: &[f64],
    order: usize,
    dt: f64,
    config: &TodaConfig,
) -> Result<ConservedReport> {
    if order > 8 {
        return Err(Error::InvalidInput(format!("order {order} exceeds 8")));
    }
    if times.is_empty() {
        return Err(Error::InvalidInput("times must not be empty".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times[0] < state0.time {
        return Err(Error::InvalidInput("times must be increasing".into()));
    }
    let mut state = state0.clone();
    let mut rows = Vec::with_capacity(times.len());
    for &t in times {
        state = evolve(&state, t, dt, config)?;
        rows.push(ConservedRow::of(&state, order));
    }
    let a_drift = rows
        .iter()
        .map(|r| (r.a_total - rows[0].a_total).abs())
        .fold(0.0, f64::max);
    let tau_drift = (0..order)
        .map(|j| {
            rows.iter()
                .map(|r| (r.taus[j] - rows[0].taus[j]).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(ConservedReport {
        rows,
        a_drift,
        tau_drift,
        final_state: Some(state),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn free() -> BackgroundOperator {
        BackgroundOperator::free()
    }

    #[test]
    fn constant_background_is_stationary() {
        let d = toda_vector_field(&TodaState::new(Perturbation::zero(free())));
        assert!(d.a_q.iter().chain(&d.b_q).all(|&x| x == 0.0));
        assert!(d.a.is_empty() && d.window.is_none());
    }

    #[test]
    fn single_site_initial_derivative() {
        let c = 0.5;
        let p = Perturbation::single_site(free(), 0, 0.0, c).unwrap();
        let padded = Perturbation::from_fn(free(), Window::new(-2, 2), |n| {
            (p.a(n), p.b(n))
        })
        .unwrap();
        let d = toda_vector_field(&TodaState::new(padded));
        assert_eq!(d.a, vec![0.0, 0.5 * c, -0.5 * c, 0.0, 0.0]);
        assert!(d.b.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_perturbation_is_a_fixed_point() {
        let bg = BackgroundOperator::new(vec![0.5, 0.7], vec![0.1, -0.1]).unwrap();
        let s = evolve(&TodaState::new(Perturbation::zero(bg)), 0.3, 1e-2, &TodaConfig::default())
            .unwrap();
        assert!(s.perturbation.window().is_none());
        assert_relative_eq!(s.time, 0.3);
    }

    #[test]
    fn window_grows_and_traces_stay() {
        let p = Perturbation::single_site(free(), 0, 0.0, 0.5).unwrap();
        let r = conserved_report(&TodaState::new(p), &[0.0, 1.0], 2, 1e-3, &TodaConfig::default())
            .unwrap();
        assert!(r.rows[1].window_len > 1);
        assert_relative_eq!(r.rows[1].taus[0], 0.5, epsilon = 1e-8);
        assert!(r.tau_drift[1] < 1e-7);
    }

    #[test]
    fn large_step_loses_positivity() {
        let p = Perturbation::single_site(free(), 0, 0.0, 0.5).unwrap();
        let err = evolve(&TodaState::new(p), 50.0, 5.0, &TodaConfig::default()).unwrap_err();
        assert!(matches!(err, Error::PositivityLoss { .. }), "{err}");
    }

    #[test]
    fn tight_window_budget_overflows() {
        let p = Perturbation::single_site(free(), 0, 0.0, 0.5).unwrap();
        let config = TodaConfig {
            max_window: 16,
            ..TodaConfig::default()
        };
        let err = evolve(&TodaState::new(p), 2.0, 1e-2, &config).unwrap_err();
        assert!(matches!(err, Error::WindowOverflow { .. }));
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = Perturbation::single_site(free(), 3, 0.1, 0.2).unwrap();
        let s = TodaState {
            time: 0.25,
            perturbation: p,
        };
        let json = serde_json::to_string(&s.to_checkpoint()).unwrap();
        let back = TodaState::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
