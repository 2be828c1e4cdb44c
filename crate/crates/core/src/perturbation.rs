//! Compactly supported perturbations `H` of a periodic background and their
//! scattering data.
//!
//! With the perturbation confined to a window `[n−, n+]` the Jost solutions
//! coincide with the Floquet solutions beyond the window and are continued
//! through it by the three-term recurrence of `H`. The transmission function
//! is the Wronskian ratio
//!
//! ```text
//! α(z) = W(ψ_−, ψ_+) / W_q(ψ_{q,−}, ψ_{q,+}) = 1/T(z),
//! ```
//!
//! holomorphic off the background spectrum with simple zeros at the discrete
//! eigenvalues of `H`.

use std::io::{self, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::background::{
    BackgroundOperator, Floquet, Normalization, Side, SpectralData, Window, EDGE_EXCLUSION,
};
use crate::error::{Error, Result};
use crate::io::fmt_real;

/// `|α(z)|` below this marks `z` as a discrete eigenvalue.
pub const EIGENVALUE_HIT_TOL: f64 = 1e-12;

/// Grid resolution used to bracket sign changes of `α` on the real axis.
pub const EIGENVALUE_GRID_STEP: f64 = 1e-3;

/// `H` with coefficients `(a, b)` on a finite window and `(a_q, b_q)` outside.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    background: BackgroundOperator,
    window: Option<Window>,
    a: Vec<f64>,
    b: Vec<f64>,
}

/// JSON form: `{"window": [n−, n+], "a": [..], "b": [..]}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationDoc {
    #[serde(default)]
    pub window: Option<[i64; 2]>,
    #[serde(default)]
    pub a: Vec<f64>,
    #[serde(default)]
    pub b: Vec<f64>,
}

impl Perturbation {
    pub fn new(
        background: BackgroundOperator,
        window: Window,
        a: Vec<f64>,
        b: Vec<f64>,
    ) -> Result<Self> {
        if a.len() != window.len() || b.len() != window.len() {
            return Err(Error::InvalidInput(format!(
                "window [{}, {}] has {} sites but a has {} and b has {} entries",
                window.lo,
                window.hi,
                window.len(),
                a.len(),
                b.len()
            )));
        }
        if let Some(bad) = a.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "off-diagonal a must be positive, found {bad}"
            )));
        }
        if let Some(bad) = b.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "diagonal b must be finite, found {bad}"
            )));
        }
        Ok(Perturbation {
            background,
            window: Some(window),
            a,
            b,
        })
    }

    /// `H = H_q`.
    pub fn zero(background: BackgroundOperator) -> Self {
        Perturbation {
            background,
            window: None,
            a: Vec::new(),
            b: Vec::new(),
        }
    }

    /// Builds the window coefficients from a closure `n ↦ (a(n), b(n))`.
    pub fn from_fn(
        background: BackgroundOperator,
        window: Window,
        f: impl Fn(i64) -> (f64, f64),
    ) -> Result<Self> {
        let (a, b) = window.sites().map(f).unzip();
        Perturbation::new(background, window, a, b)
    }

    /// Background with `b(site)` shifted by `db` and `a(site)` scaled by `1 + s`.
    pub fn single_site(background: BackgroundOperator, site: i64, s: f64, db: f64) -> Result<Self> {
        let a = background.a(site) * (1.0 + s);
        let b = background.b(site) + db;
        Perturbation::new(background, Window::new(site, site), vec![a], vec![b])
    }

    pub fn from_doc(background: BackgroundOperator, doc: &PerturbationDoc) -> Result<Self> {
        match doc.window {
            None if doc.a.is_empty() && doc.b.is_empty() => Ok(Perturbation::zero(background)),
            None => Err(Error::InvalidInput(
                "perturbation coefficients given without a window".into(),
            )),
            Some([lo, hi]) if lo > hi => Err(Error::InvalidInput(format!(
                "window [{lo}, {hi}] is reversed"
            ))),
            Some([lo, hi]) => {
                Perturbation::new(background, Window::new(lo, hi), doc.a.clone(), doc.b.clone())
            }
        }
    }

    pub fn to_doc(&self) -> PerturbationDoc {
        PerturbationDoc {
            window: self.window.map(|w| [w.lo, w.hi]),
            a: self.a.clone(),
            b: self.b.clone(),
        }
    }

    pub fn background(&self) -> &BackgroundOperator {
        &self.background
    }

    pub fn window(&self) -> Option<Window> {
        self.window
    }

    pub fn window_a(&self) -> &[f64] {
        &self.a
    }

    pub fn window_b(&self) -> &[f64] {
        &self.b
    }

    pub fn a(&self, n: i64) -> f64 {
        match self.window {
            Some(w) if w.contains(n) => self.a[(n - w.lo) as usize],
            _ => self.background.a(n),
        }
    }

    pub fn b(&self, n: i64) -> f64 {
        match self.window {
            Some(w) if w.contains(n) => self.b[(n - w.lo) as usize],
            _ => self.background.b(n),
        }
    }

    /// Largest deviation `|a − a_q| + |b − b_q|` at any site.
    pub fn max_deviation(&self) -> f64 {
        self.window.map_or(0.0, |w| {
            w.sites()
                .map(|n| self.deviation_at(n))
                .fold(0.0, f64::max)
        })
    }

    fn deviation_at(&self, n: i64) -> f64 {
        (self.a(n) - self.background.a(n)).abs() + (self.b(n) - self.background.b(n)).abs()
    }

    /// Shrinks the window past end sites whose deviation is at most `tol`.
    ///
    /// Dropped sites revert to the background coefficients.
    pub fn trimmed(&self, tol: f64) -> Self {
        let Some(w) = self.window else {
            return self.clone();
        };
        let keep: Vec<i64> = w.sites().filter(|&n| self.deviation_at(n) > tol).collect();
        match (keep.first(), keep.last()) {
            (Some(&lo), Some(&hi)) => {
                let window = Window::new(lo, hi);
                Perturbation {
                    background: self.background.clone(),
                    window: Some(window),
                    a: window.sites().map(|n| self.a(n)).collect(),
                    b: window.sites().map(|n| self.b(n)).collect(),
                }
            }
            _ => Perturbation::zero(self.background.clone()),
        }
    }

    /// Lower and upper Gershgorin bounds for the spectrum of `H`.
    pub fn gershgorin_interval(&self) -> (f64, f64) {
        let period = self.background.period() as i64;
        let (lo, hi) = self
            .window
            .map_or((0, period), |w| (w.lo - 1 - period, w.hi + 1 + period));
        (lo..=hi).fold((f64::INFINITY, f64::NEG_INFINITY), |(mn, mx), n| {
            let r = self.a(n) + self.a(n - 1);
            (mn.min(self.b(n) - r), mx.max(self.b(n) + r))
        })
    }

    /// Largest `|b(n)| + a(n) + a(n−1)` over `H` and `H_q`.
    pub fn gershgorin_bound(&self) -> f64 {
        let (lo, hi) = self.gershgorin_interval();
        lo.abs().max(hi.abs()).max(self.background.gershgorin_bound())
    }

    /// Site used to evaluate Wronskians.
    fn anchor(&self) -> i64 {
        self.window.map_or(0, |w| w.hi)
    }

    /// Jost solution `ψ_±(z, ·)` on `window`, normalized through the
    /// background by `ψ_{q,±}(z, 0) = 1`.
    pub fn jost(&self, z: Complex64, side: Side, window: Window) -> Result<JostSolution> {
        let fl = Floquet::new(&self.background, z, Normalization::Origin, false)?;
        let (values, _) = side_values(self, &fl, side, window.lo, window.hi, false);
        Ok(JostSolution {
            z,
            side,
            window,
            values,
        })
    }

    /// `∂ψ_±(z, n)/∂z` on `window`, returned in the `values` field.
    pub fn jost_z_derivative(
        &self,
        z: Complex64,
        side: Side,
        window: Window,
    ) -> Result<JostSolution> {
        let fl = Floquet::new(&self.background, z, Normalization::Origin, true)?;
        let (_, values) = side_values(self, &fl, side, window.lo, window.hi, true);
        Ok(JostSolution {
            z,
            side,
            window,
            values,
        })
    }

    /// `W(ψ_−, ψ_+)` in the `ψ_{q,±}(z, 0) = 1` normalization.
    pub fn wronskian(&self, z: Complex64) -> Result<Complex64> {
        self.wronskian_at(z, self.anchor())
    }

    pub fn wronskian_at(&self, z: Complex64, n: i64) -> Result<Complex64> {
        let fl = Floquet::new(&self.background, z, Normalization::Origin, false)?;
        Ok(JostPair::new(self, &fl, n, n + 1, false).wronskian(self, n))
    }

    /// `α(z) = W(ψ_−, ψ_+)/W_q(ψ_{q,−}, ψ_{q,+})`.
    ///
    /// On band interiors (real `z`) this is the boundary value from the upper
    /// half-plane.
    pub fn alpha(&self, z: Complex64) -> Result<Complex64> {
        let fl = Floquet::new(&self.background, z, Normalization::Unit, false)?;
        let s = self.anchor();
        let w = JostPair::new(self, &fl, s, s + 1, false).wronskian(self, s);
        Ok(w / fl.wronskian(&self.background, 0))
    }

    /// `α(z)` and `α'(z)` from the differentiated Wronskians.
    pub fn alpha_with_derivative(&self, z: Complex64) -> Result<(Complex64, Complex64)> {
        let fl = Floquet::new(&self.background, z, Normalization::Unit, true)?;
        let s = self.anchor();
        let pair = JostPair::new(self, &fl, s, s + 1, true);
        let (w, dw) = (pair.wronskian(self, s), pair.wronskian_derivative(self, s));
        let (wq, dwq) = (
            fl.wronskian(&self.background, 0),
            fl.wronskian_derivative(&self.background, 0),
        );
        Ok((w / wq, (dw * wq - w * dwq) / (wq * wq)))
    }

    /// `α(z) = ∏(z − μ_j) W(ψ_−, ψ_+) / R^{1/2}(z)`, the band-edge route.
    pub fn alpha_via_dirichlet(&self, spectral: &SpectralData, z: Complex64) -> Result<Complex64> {
        Ok(spectral.dirichlet_product(z) * self.wronskian(z)? / spectral.sqrt_r(z))
    }

    /// Green's function `ψ_−(z, min)ψ_+(z, max)/W(z)` of `H`.
    pub fn green(&self, z: Complex64, m: i64, n: i64) -> Result<Complex64> {
        let fl = Floquet::new(&self.background, z, Normalization::Unit, false)?;
        let (lo, hi) = (m.min(n), m.max(n));
        let pair = JostPair::new(self, &fl, lo, hi + 1, false);
        let w = pair.wronskian(self, lo);
        let modulus = (w / fl.wronskian(&self.background, 0)).norm();
        if modulus < EIGENVALUE_HIT_TOL {
            return Err(Error::EigenvalueHit { z, modulus });
        }
        Ok(pair.value(Side::Minus, lo) * pair.value(Side::Plus, hi) / w)
    }

    /// Coefficients of the large-`z` expansion of the Jost solutions and of `α`.
    pub fn alpha_asymptotics(&self) -> JostAsymptotics {
        let (lo, ratio, db) = match self.window {
            None => (0, Vec::new(), Vec::new()),
            Some(w) => (
                w.lo,
                w.sites()
                    .map(|n| self.a(n) / self.background.a(n))
                    .collect(),
                w.sites()
                    .map(|n| self.background.b(n) - self.b(n))
                    .collect(),
            ),
        };
        JostAsymptotics { lo, ratio, db }
    }

    /// Discrete eigenvalues of `H`: the real zeros of `α` off the bands.
    ///
    /// Zeros within [`EDGE_EXCLUSION`] of a band edge are not searched for.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let spectral = self.background.band_edges()?;
        self.eigenvalues_with(&spectral)
    }

    pub fn eigenvalues_with(&self, spectral: &SpectralData) -> Result<Vec<f64>> {
        if self.window.is_none() {
            return Ok(Vec::new());
        }
        let (g_lo, g_hi) = self.gershgorin_interval();
        let mut intervals = vec![(g_lo.min(spectral.lowest()) - 1.0, spectral.lowest() - EDGE_EXCLUSION)];
        intervals.extend(
            spectral
                .gaps()
                .into_iter()
                .map(|(l, r)| (l + EDGE_EXCLUSION, r - EDGE_EXCLUSION)),
        );
        intervals.push((
            spectral.highest() + EDGE_EXCLUSION,
            g_hi.max(spectral.highest()) + 1.0,
        ));

        let f = |x: f64| -> Result<f64> { Ok(self.alpha(Complex64::from(x))?.re) };
        let mut roots = Vec::new();
        for (lo, hi) in intervals {
            if hi <= lo {
                continue;
            }
            let grid = clustered_grid(lo, hi, EIGENVALUE_GRID_STEP);
            let mut prev = (grid[0], f(grid[0])?);
            for &x in &grid[1..] {
                let cur = (x, f(x)?);
                if prev.1 == 0.0 {
                    roots.push(prev.0);
                } else if prev.1.signum() != cur.1.signum() && cur.1 != 0.0 {
                    roots.push(bisect(&f, prev, cur)?);
                }
                prev = cur;
            }
            if prev.1 == 0.0 {
                roots.push(prev.0);
            }
        }
        Ok(roots)
    }

    /// Bundles `α` with its derived data.
    pub fn scattering(&self) -> Result<ScatteringFunction> {
        let spectral = self.background.band_edges()?;
        let eigenvalues = self.eigenvalues_with(&spectral)?;
        Ok(ScatteringFunction {
            asymptotics: self.alpha_asymptotics(),
            perturbation: self.clone(),
            spectral,
            eigenvalues,
        })
    }
}

/// Chebyshev-clustered points on `[lo, hi]` with interior spacing at most `step`.
fn clustered_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((std::f64::consts::FRAC_PI_2 * (hi - lo) / step).ceil() as usize).max(32);
    (0..=n)
        .map(|k| {
            let t = std::f64::consts::PI * k as f64 / n as f64;
            lo + 0.5 * (hi - lo) * (1.0 - t.cos())
        })
        .collect()
}

fn bisect(
    f: &impl Fn(f64) -> Result<f64>,
    (mut a, fa): (f64, f64),
    (mut b, _): (f64, f64),
) -> Result<f64> {
    let (lo, hi) = (a, b);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            return Ok(m);
        }
        let fm = f(m)?;
        if !fm.is_finite() {
            return Err(Error::ConvergenceFailure { lo, hi });
        }
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
        } else {
            b = m;
        }
    }
    Err(Error::ConvergenceFailure { lo, hi })
}

/// Both Jost solutions (and optionally their z-derivatives) on `[lo, hi]`.
pub(crate) struct JostPair {
    lo: i64,
    minus: Vec<Complex64>,
    plus: Vec<Complex64>,
    dminus: Vec<Complex64>,
    dplus: Vec<Complex64>,
}

impl JostPair {
    pub fn new(p: &Perturbation, fl: &Floquet, lo: i64, hi: i64, with_derivative: bool) -> Self {
        let (minus, dminus) = side_values(p, fl, Side::Minus, lo, hi, with_derivative);
        let (plus, dplus) = side_values(p, fl, Side::Plus, lo, hi, with_derivative);
        JostPair {
            lo,
            minus,
            plus,
            dminus,
            dplus,
        }
    }

    pub fn value(&self, side: Side, n: i64) -> Complex64 {
        let i = (n - self.lo) as usize;
        match side {
            Side::Minus => self.minus[i],
            Side::Plus => self.plus[i],
        }
    }

    pub fn derivative(&self, side: Side, n: i64) -> Complex64 {
        let i = (n - self.lo) as usize;
        match side {
            Side::Minus => self.dminus[i],
            Side::Plus => self.dplus[i],
        }
    }

    pub fn wronskian(&self, p: &Perturbation, n: i64) -> Complex64 {
        p.a(n)
            * (self.value(Side::Minus, n) * self.value(Side::Plus, n + 1)
                - self.value(Side::Minus, n + 1) * self.value(Side::Plus, n))
    }

    pub fn wronskian_derivative(&self, p: &Perturbation, n: i64) -> Complex64 {
        let v = |s, k| self.value(s, k);
        let d = |s, k| self.derivative(s, k);
        p.a(n)
            * (d(Side::Minus, n) * v(Side::Plus, n + 1) + v(Side::Minus, n) * d(Side::Plus, n + 1)
                - d(Side::Minus, n + 1) * v(Side::Plus, n)
                - v(Side::Minus, n + 1) * d(Side::Plus, n))
    }
}

/// One Jost solution on `[lo, hi]`.
///
/// `ψ_+` equals the Floquet solution for `n > n+` and is continued downward;
/// `ψ_−` equals it for `n ≤ n−` and is continued upward. Both directions are
/// the stable ones for the respective solution.
fn side_values(
    p: &Perturbation,
    fl: &Floquet,
    side: Side,
    lo: i64,
    hi: i64,
    with_derivative: bool,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let z = fl.z;
    let floquet = |n: i64| {
        (
            fl.value(side, n),
            if with_derivative {
                fl.derivative(side, n)
            } else {
                Complex64::from(0.0)
            },
        )
    };
    let Some(win) = p.window else {
        let (v, d): (Vec<_>, Vec<_>) = (lo..=hi).map(floquet).unzip();
        return (v, if with_derivative { d } else { Vec::new() });
    };
    let zero = Complex64::from(0.0);
    let (bottom, top) = match side {
        Side::Plus => (lo, hi.max(win.hi + 2)),
        Side::Minus => (lo.min(win.lo - 1), hi),
    };
    let len = (top - bottom + 1) as usize;
    let mut v = vec![zero; len];
    let mut d = vec![zero; len];
    match side {
        Side::Plus => {
            for n in (bottom..=top).rev() {
                let i = (n - bottom) as usize;
                if n > win.hi {
                    (v[i], d[i]) = floquet(n);
                } else {
                    let (a0, a1, b1) = (p.a(n), p.a(n + 1), p.b(n + 1));
                    v[i] = ((z - b1) * v[i + 1] - a1 * v[i + 2]) / a0;
                    d[i] = ((z - b1) * d[i + 1] + v[i + 1] - a1 * d[i + 2]) / a0;
                }
            }
        }
        Side::Minus => {
            for n in bottom..=top {
                let i = (n - bottom) as usize;
                if n <= win.lo {
                    (v[i], d[i]) = floquet(n);
                } else {
                    let (a1, a2, b1) = (p.a(n - 1), p.a(n - 2), p.b(n - 1));
                    v[i] = ((z - b1) * v[i - 1] - a2 * v[i - 2]) / a1;
                    d[i] = ((z - b1) * d[i - 1] + v[i - 1] - a2 * d[i - 2]) / a1;
                }
            }
        }
    }
    let range = (lo - bottom) as usize..=(hi - bottom) as usize;
    let values = v[range.clone()].to_vec();
    let derivs = if with_derivative {
        d[range].to_vec()
    } else {
        Vec::new()
    };
    (values, derivs)
}

/// A Jost solution (or its z-derivative) sampled on a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JostSolution {
    pub z: Complex64,
    pub side: Side,
    pub window: Window,
    pub values: Vec<Complex64>,
}

impl JostSolution {
    pub fn value(&self, n: i64) -> Option<Complex64> {
        self.window
            .contains(n)
            .then(|| self.values[(n - self.window.lo) as usize])
    }

    /// CSV with columns `n, re, im`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "n,re,im")?;
        for (n, v) in self.window.sites().zip(&self.values) {
            writeln!(out, "{},{},{}", n, fmt_real(v.re), fmt_real(v.im))?;
        }
        Ok(())
    }
}

/// The products `A_±(n)` and sums `B_±(n)` governing the large-`z`
/// behaviour of the Jost solutions, and `α(z) = (1 + B/z + O(z⁻²))/A`.
#[derive(Clone, Debug, PartialEq)]
pub struct JostAsymptotics {
    lo: i64,
    /// `a(n)/a_q(n)` over the window.
    ratio: Vec<f64>,
    /// `b_q(n) − b(n)` over the window.
    db: Vec<f64>,
}

impl JostAsymptotics {
    fn sites(&self) -> impl Iterator<Item = (i64, f64, f64)> + '_ {
        self.ratio
            .iter()
            .zip(&self.db)
            .enumerate()
            .map(|(i, (&r, &d))| (self.lo + i as i64, r, d))
    }

    /// `A_+(n) = ∏_{j ≥ n} a(j)/a_q(j)`.
    pub fn a_plus(&self, n: i64) -> f64 {
        self.sites().filter(|s| s.0 >= n).map(|s| s.1).product()
    }

    /// `A_−(n) = ∏_{j ≤ n−1} a(j)/a_q(j)`.
    pub fn a_minus(&self, n: i64) -> f64 {
        self.sites().filter(|s| s.0 < n).map(|s| s.1).product()
    }

    /// `B_+(n) = Σ_{m ≥ n+1} (b_q(m) − b(m))`.
    pub fn b_plus(&self, n: i64) -> f64 {
        self.sites().filter(|s| s.0 > n).map(|s| s.2).sum()
    }

    /// `B_−(n) = Σ_{m ≤ n−1} (b_q(m) − b(m))`.
    pub fn b_minus(&self, n: i64) -> f64 {
        self.sites().filter(|s| s.0 < n).map(|s| s.2).sum()
    }

    /// `A = A_−(0) A_+(0) = ∏ a(j)/a_q(j)`.
    pub fn a_total(&self) -> f64 {
        self.a_minus(0) * self.a_plus(0)
    }

    /// `B = B_−(1) + B_+(0) = Σ (b_q − b)`.
    pub fn b_total(&self) -> f64 {
        self.b_minus(1) + self.b_plus(0)
    }
}

/// `α` together with its derived scattering data.
#[derive(Clone, Debug)]
pub struct ScatteringFunction {
    pub perturbation: Perturbation,
    pub spectral: SpectralData,
    pub asymptotics: JostAsymptotics,
    /// Discrete eigenvalues `ρ_k` (zeros of `α` off the bands).
    pub eigenvalues: Vec<f64>,
}

impl ScatteringFunction {
    pub fn alpha(&self, z: Complex64) -> Result<Complex64> {
        self.perturbation.alpha(z)
    }

    pub fn a_total(&self) -> f64 {
        self.asymptotics.a_total()
    }

    pub fn b_total(&self) -> f64 {
        self.asymptotics.b_total()
    }
}
