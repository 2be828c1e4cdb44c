//! Period-N Jacobi operators and their Floquet theory.
//!
//! The background operator acts on two-sided sequences by
//!
//! ```text
//! (H_q f)(n) = a_q(n) f(n+1) + a_q(n-1) f(n-1) + b_q(n) f(n)
//! ```
//!
//! with N-periodic coefficients. Its spectrum is a finite union of bands
//! `[E_{2j}, E_{2j+1}]`, the set where the discriminant `Δ(z) = tr M(z)` of
//! the one-period monodromy matrix satisfies `|Δ| ≤ 2`.
//!
//! Throughout the crate the Floquet multiplier `w(z)` is the eigenvalue of the
//! monodromy matrix with `|w| < 1` off the spectrum, so the Floquet
//! (Baker-Akhiezer) solutions obey `ψ_{q,±}(z, n+N) = w(z)^{±1} ψ_{q,±}(z, n)`.
//! On band interiors `w` is the boundary value from the upper half-plane.

use nalgebra::{DMatrix, Matrix2, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `|Δ(z)² − 4|` below this is treated as a band edge.
pub const BAND_EDGE_TOL: f64 = 1e-12;

/// Adjacent edges closer than this form a closed gap and are dropped.
pub const CLOSED_GAP_TOL: f64 = 1e-9;

/// Radius of the exclusion zone around each band edge used by grid generators.
pub const EDGE_EXCLUSION: f64 = 1e-6;

/// Which Floquet (or Jost) solution: decaying at `+∞` or at `−∞`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

/// Inclusive range of lattice sites `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub lo: i64,
    pub hi: i64,
}

impl Window {
    pub fn new(lo: i64, hi: i64) -> Self {
        assert!(lo <= hi, "empty window [{lo}, {hi}]");
        Window { lo, hi }
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, n: i64) -> bool {
        self.lo <= n && n <= self.hi
    }

    pub fn sites(&self) -> impl Iterator<Item = i64> {
        self.lo..=self.hi
    }
}

/// The unperturbed period-N Jacobi operator `H_q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BackgroundDoc", into = "BackgroundDoc")]
pub struct BackgroundOperator {
    a: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackgroundDoc {
    period: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl TryFrom<BackgroundDoc> for BackgroundOperator {
    type Error = Error;

    fn try_from(doc: BackgroundDoc) -> Result<Self> {
        if doc.a.len() != doc.period || doc.b.len() != doc.period {
            return Err(Error::InvalidInput(format!(
                "period {} does not match coefficient lengths (a: {}, b: {})",
                doc.period,
                doc.a.len(),
                doc.b.len()
            )));
        }
        BackgroundOperator::new(doc.a, doc.b)
    }
}

impl From<BackgroundOperator> for BackgroundDoc {
    fn from(bg: BackgroundOperator) -> Self {
        BackgroundDoc {
            period: bg.period(),
            a: bg.a,
            b: bg.b,
        }
    }
}

impl BackgroundOperator {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::InvalidInput(format!(
                "background needs equal, non-zero lengths (a: {}, b: {})",
                a.len(),
                b.len()
            )));
        }
        if let Some(bad) = a.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "background off-diagonal must be positive, found {bad}"
            )));
        }
        if let Some(bad) = b.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "background diagonal must be finite, found {bad}"
            )));
        }
        Ok(BackgroundOperator { a, b })
    }

    /// The free operator `a ≡ 1/2`, `b ≡ 0` with spectrum `[−1, 1]`.
    pub fn free() -> Self {
        BackgroundOperator {
            a: vec![0.5],
            b: vec![0.0],
        }
    }

    pub fn period(&self) -> usize {
        self.a.len()
    }

    fn slot(&self, n: i64) -> usize {
        n.rem_euclid(self.a.len() as i64) as usize
    }

    pub fn a(&self, n: i64) -> f64 {
        self.a[self.slot(n)]
    }

    pub fn b(&self, n: i64) -> f64 {
        self.b[self.slot(n)]
    }

    pub fn a_period(&self) -> &[f64] {
        &self.a
    }

    pub fn b_period(&self) -> &[f64] {
        &self.b
    }

    /// The background `H_q + c`.
    pub fn shifted(&self, c: f64) -> Self {
        BackgroundOperator {
            a: self.a.clone(),
            b: self.b.iter().map(|x| x + c).collect(),
        }
    }

    /// Largest `|b(n)| + a(n) + a(n−1)` over one period.
    pub fn gershgorin_bound(&self) -> f64 {
        (0..self.period() as i64)
            .map(|n| self.b(n).abs() + self.a(n) + self.a(n - 1))
            .fold(0.0, f64::max)
    }

    /// Step matrix mapping `(ψ(n), ψ(n−1))` to `(ψ(n+1), ψ(n))`.
    ///
    /// Its determinant is `a_q(n−1)/a_q(n)`, so the product over a period is
    /// unimodular.
    pub fn transfer_matrix(&self, z: Complex64, n: i64) -> Matrix2<Complex64> {
        let a = self.a(n);
        let a_prev = self.a(n - 1);
        Matrix2::new(
            (z - self.b(n)) / a,
            Complex64::from(-a_prev / a),
            Complex64::from(1.0),
            Complex64::from(0.0),
        )
    }

    /// Product `T(N−1) ⋯ T(0)`: maps `(ψ(0), ψ(−1))` to `(ψ(N), ψ(N−1))`.
    pub fn monodromy(&self, z: Complex64) -> Matrix2<Complex64> {
        (0..self.period() as i64).fold(Matrix2::identity(), |acc, n| {
            self.transfer_matrix(z, n) * acc
        })
    }

    /// Monodromy matrix together with its z-derivative.
    pub fn monodromy_with_derivative(
        &self,
        z: Complex64,
    ) -> (Matrix2<Complex64>, Matrix2<Complex64>) {
        let mut m = Matrix2::identity();
        let mut dm = Matrix2::zeros();
        for n in 0..self.period() as i64 {
            let t = self.transfer_matrix(z, n);
            let mut dt = Matrix2::zeros();
            dt[(0, 0)] = Complex64::from(1.0 / self.a(n));
            dm = dt * m + t * dm;
            m = t * m;
        }
        (m, dm)
    }

    /// `Δ(z) = tr M(z)`, a degree-N polynomial with leading coefficient `1/∏a_q`.
    pub fn discriminant(&self, z: Complex64) -> Complex64 {
        self.monodromy(z).trace()
    }

    pub fn discriminant_derivative(&self, z: Complex64) -> Complex64 {
        self.monodromy_with_derivative(z).1.trace()
    }

    /// Symmetric N×N Bloch matrix with quasi-periodic phase `±1` across the cell.
    fn bloch_matrix(&self, phase: f64) -> DMatrix<f64> {
        let n = self.period();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] += self.b[i];
            let (j, p) = if i + 1 == n { (0, phase) } else { (i + 1, 1.0) };
            m[(i, j)] += self.a[i] * p;
            m[(j, i)] += self.a[i] * p;
        }
        m
    }

    fn polish_edge(&self, mut x: f64, target: f64) -> f64 {
        let scale = 1.0 + x.abs();
        for _ in 0..8 {
            let z = Complex64::from(x);
            let f = self.discriminant(z).re - target;
            let df = self.discriminant_derivative(z).re;
            // Newton stalls at double roots (closed gaps); the eigenvalue is already accurate there.
            if df.abs() < 1e-6 {
                break;
            }
            let step = f / df;
            if !step.is_finite() || step.abs() > 1e-6 * scale {
                break;
            }
            x -= step;
            if step.abs() <= 4.0 * f64::EPSILON * scale {
                break;
            }
        }
        x
    }

    /// Band edges, genus and Dirichlet eigenvalues of the background.
    ///
    /// The roots of `Δ ∓ 2` are the eigenvalues of the periodic and
    /// antiperiodic Bloch matrices; they are Newton-polished on `Δ` itself.
    /// Closed gaps are removed.
    pub fn band_edges(&self) -> Result<SpectralData> {
        let mut all = Vec::with_capacity(2 * self.period());
        for (phase, target) in [(1.0, 2.0), (-1.0, -2.0)] {
            let eig = SymmetricEigen::try_new(self.bloch_matrix(phase), f64::EPSILON, 10_000)
                .ok_or_else(|| {
                    Error::RootFindingFailure("Bloch eigenvalue iteration did not converge".into())
                })?;
            all.extend(eig.eigenvalues.iter().map(|&e| self.polish_edge(e, target)));
        }
        all.sort_by(f64::total_cmp);

        let mut edges = vec![all[0]];
        for j in 1..self.period() {
            let (lo, hi) = (all[2 * j - 1], all[2 * j]);
            if hi - lo >= CLOSED_GAP_TOL {
                edges.push(lo);
                edges.push(hi);
            }
        }
        edges.push(*all.last().unwrap());

        let genus = edges.len() / 2 - 1;
        let mut dirichlet = Vec::with_capacity(genus);
        for j in 1..=genus {
            dirichlet.push(self.dirichlet_in_gap(edges[2 * j - 1], edges[2 * j])?);
        }
        Ok(SpectralData {
            edges,
            genus,
            dirichlet,
        })
    }

    /// The zero of the off-corner monodromy entry inside `[lo, hi]`.
    fn dirichlet_in_gap(&self, lo: f64, hi: f64) -> Result<f64> {
        let f = |x: f64| self.monodromy(Complex64::from(x))[(0, 1)].re;
        let (f_lo, f_hi) = (f(lo), f(hi));
        let scale = f(0.5 * (lo + hi)).abs().max(f_lo.abs()).max(f_hi.abs());
        let tol = 1e-10 * scale;
        if f_lo.abs() <= tol || f_hi.abs() <= tol {
            return Ok(if f_lo.abs() <= f_hi.abs() { lo } else { hi });
        }
        if f_lo.signum() == f_hi.signum() {
            return Err(Error::RootFindingFailure(format!(
                "no Dirichlet eigenvalue bracketed in gap [{lo}, {hi}]"
            )));
        }
        let (mut a, mut b, mut fa) = (lo, hi, f_lo);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            let fm = f(m);
            if fm == 0.0 {
                return Ok(m);
            }
            if fm.signum() == fa.signum() {
                a = m;
                fa = fm;
            } else {
                b = m;
            }
        }
        Ok(0.5 * (a + b))
    }

    /// The Floquet multiplier `w(z)` with `|w| < 1` off the spectrum.
    pub fn floquet_multiplier(&self, z: Complex64) -> Result<Complex64> {
        let (m, dm) = self.monodromy_with_derivative(z);
        select_multiplier(z, m.trace(), dm.trace())
    }

    /// Floquet solution normalized by `ψ(0) = 1`, sampled on `window`.
    pub fn baker_akhiezer(
        &self,
        z: Complex64,
        side: Side,
        window: Window,
    ) -> Result<FloquetSolution> {
        let fl = Floquet::new(self, z, Normalization::Origin, false)?;
        Ok(FloquetSolution {
            z,
            multiplier: fl.w,
            side,
            window,
            values: window.sites().map(|n| fl.value(side, n)).collect(),
        })
    }

    /// `W_q = a_q(0)(ψ_{q,−}(0)ψ_{q,+}(1) − ψ_{q,−}(1)ψ_{q,+}(0))` in the
    /// `ψ(0) = 1` normalization.
    pub fn wronskian_background(&self, z: Complex64) -> Result<Complex64> {
        self.wronskian_background_at(z, 0)
    }

    /// Same Wronskian evaluated at site `n`; independent of `n`.
    pub fn wronskian_background_at(&self, z: Complex64, n: i64) -> Result<Complex64> {
        Floquet::new(self, z, Normalization::Origin, false).map(|fl| fl.wronskian(self, n))
    }

    /// Green's function `ψ_{q,−}(min)ψ_{q,+}(max)/W_q` of `H_q`.
    pub fn green_background(&self, z: Complex64, m: i64, n: i64) -> Result<Complex64> {
        let fl = Floquet::new(self, z, Normalization::Unit, false)?;
        Ok(fl.green(self, m, n))
    }
}

/// Chooses the eigenvalue of the monodromy with `|w| < 1`, or the
/// upper-half-plane boundary value on band interiors.
pub(crate) fn select_multiplier(
    z: Complex64,
    delta: Complex64,
    ddelta: Complex64,
) -> Result<Complex64> {
    let disc = delta * delta - 4.0;
    if disc.norm() < BAND_EDGE_TOL {
        return Err(Error::BandEdge {
            z,
            distance: disc.norm(),
        });
    }
    if z.im == 0.0 && delta.im == 0.0 && delta.re.abs() < 2.0 {
        // Im w(λ + iε) must decrease |w| as ε grows, which fixes the sign by Δ'.
        let s = (4.0 - delta.re * delta.re).sqrt();
        let sign = if ddelta.re >= 0.0 { 1.0 } else { -1.0 };
        return Ok(Complex64::new(0.5 * delta.re, -0.5 * sign * s));
    }
    let root = disc.sqrt();
    let big = if (delta.conj() * root).re >= 0.0 {
        0.5 * (delta + root)
    } else {
        0.5 * (delta - root)
    };
    Ok(big.inv())
}

/// Band structure of a background operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralData {
    /// `E_0 < E_1 < … < E_{2g+1}`.
    pub edges: Vec<f64>,
    pub genus: usize,
    /// Dirichlet eigenvalues `μ_1..μ_g` for the cut at `n = 0`.
    pub dirichlet: Vec<f64>,
}

impl SpectralData {
    pub fn bands(&self) -> Vec<(f64, f64)> {
        self.edges.chunks(2).map(|p| (p[0], p[1])).collect()
    }

    /// Open gaps `(E_{2j−1}, E_{2j})`, `j = 1..g`.
    pub fn gaps(&self) -> Vec<(f64, f64)> {
        (1..=self.genus)
            .map(|j| (self.edges[2 * j - 1], self.edges[2 * j]))
            .collect()
    }

    pub fn lowest(&self) -> f64 {
        self.edges[0]
    }

    pub fn highest(&self) -> f64 {
        *self.edges.last().unwrap()
    }

    /// Whether `λ` lies in a closed band.
    pub fn in_spectrum(&self, lambda: f64) -> bool {
        self.bands()
            .iter()
            .any(|&(lo, hi)| lo <= lambda && lambda <= hi)
    }

    /// Distance from `z` to the nearest band edge.
    pub fn edge_distance(&self, z: Complex64) -> f64 {
        self.edges
            .iter()
            .map(|&e| (z - e).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// `∏ (z − μ_j)`.
    pub fn dirichlet_product(&self, z: Complex64) -> Complex64 {
        self.dirichlet
            .iter()
            .fold(Complex64::from(1.0), |acc, &mu| acc * (z - mu))
    }

    /// `R^{1/2}_{2g+2}(z) = −∏ √(z − E_j)` with principal square roots.
    ///
    /// This branch is holomorphic off the bands, behaves like `−z^{g+1}` at
    /// infinity, and coincides with `W_q(z) ∏(z − μ_j)` for the `ψ(0) = 1`
    /// normalization of the Floquet solutions.
    pub fn sqrt_r(&self, z: Complex64) -> Complex64 {
        -self
            .edges
            .iter()
            .fold(Complex64::from(1.0), |acc, &e| acc * (z - e).sqrt())
    }

    /// `R_{2g+2}(z) = ∏ (z − E_j)`.
    pub fn r_polynomial(&self, z: Complex64) -> Complex64 {
        self.edges
            .iter()
            .fold(Complex64::from(1.0), |acc, &e| acc * (z - e))
    }
}

/// A Floquet solution sampled on a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloquetSolution {
    pub z: Complex64,
    /// The multiplier `w(z)` of `ψ_{q,+}` (`|w| < 1` off the spectrum).
    pub multiplier: Complex64,
    pub side: Side,
    pub window: Window,
    pub values: Vec<Complex64>,
}

impl FloquetSolution {
    pub fn value(&self, n: i64) -> Option<Complex64> {
        self.window
            .contains(n)
            .then(|| self.values[(n - self.window.lo) as usize])
    }

    /// The factor `w^{±1}` relating `ψ(n + N)` to `ψ(n)`.
    pub fn period_factor(&self) -> Complex64 {
        match self.side {
            Side::Plus => self.multiplier,
            Side::Minus => self.multiplier.inv(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Normalization {
    /// `ψ(0) = 1`.
    Origin,
    /// Unit Euclidean norm of `(ψ(0), ψ(−1))`, frozen at the evaluation point.
    /// Normalization-invariant quantities (α, Green's functions) use this so
    /// they stay finite at the Dirichlet poles.
    Unit,
}

/// Both Floquet solutions at one spectral point, stored over one period.
#[derive(Clone, Debug)]
pub(crate) struct Floquet {
    pub z: Complex64,
    pub w: Complex64,
    pub dw: Complex64,
    period: usize,
    plus: Vec<Complex64>,
    minus: Vec<Complex64>,
    dplus: Vec<Complex64>,
    dminus: Vec<Complex64>,
}

impl Floquet {
    pub fn new(
        bg: &BackgroundOperator,
        z: Complex64,
        norm: Normalization,
        with_derivative: bool,
    ) -> Result<Self> {
        let (m, dm) = bg.monodromy_with_derivative(z);
        let delta = m.trace();
        let ddelta = dm.trace();
        let w = select_multiplier(z, delta, ddelta)?;
        let dw = ddelta * w / (2.0 * w - delta);
        let (plus, dplus) = period_values(bg, z, &m, &dm, w, dw, norm, with_derivative)?;
        let winv = w.inv();
        let dwinv = -dw * winv * winv;
        let (minus, dminus) = period_values(bg, z, &m, &dm, winv, dwinv, norm, with_derivative)?;
        Ok(Floquet {
            z,
            w,
            dw,
            period: bg.period(),
            plus,
            minus,
            dplus,
            dminus,
        })
    }

    fn factor(&self, side: Side) -> (Complex64, Complex64) {
        match side {
            Side::Plus => (self.w, self.dw),
            Side::Minus => {
                let inv = self.w.inv();
                (inv, -self.dw * inv * inv)
            }
        }
    }

    pub fn value(&self, side: Side, n: i64) -> Complex64 {
        let k = n.div_euclid(self.period as i64);
        let r = n.rem_euclid(self.period as i64) as usize;
        let (mult, _) = self.factor(side);
        let base = match side {
            Side::Plus => self.plus[r],
            Side::Minus => self.minus[r],
        };
        mult.powi(k as i32) * base
    }

    /// `∂ψ/∂z`; only meaningful when built with derivatives.
    pub fn derivative(&self, side: Side, n: i64) -> Complex64 {
        let k = n.div_euclid(self.period as i64);
        let r = n.rem_euclid(self.period as i64) as usize;
        let (mult, dmult) = self.factor(side);
        let (base, dbase) = match side {
            Side::Plus => (self.plus[r], self.dplus[r]),
            Side::Minus => (self.minus[r], self.dminus[r]),
        };
        let pk = mult.powi(k as i32);
        let dpk = if k == 0 {
            Complex64::from(0.0)
        } else {
            (k as f64) * mult.powi(k as i32 - 1) * dmult
        };
        dpk * base + pk * dbase
    }

    pub fn wronskian(&self, bg: &BackgroundOperator, n: i64) -> Complex64 {
        bg.a(n)
            * (self.value(Side::Minus, n) * self.value(Side::Plus, n + 1)
                - self.value(Side::Minus, n + 1) * self.value(Side::Plus, n))
    }

    pub fn wronskian_derivative(&self, bg: &BackgroundOperator, n: i64) -> Complex64 {
        let (m0, m1) = (self.value(Side::Minus, n), self.value(Side::Minus, n + 1));
        let (p0, p1) = (self.value(Side::Plus, n), self.value(Side::Plus, n + 1));
        let (dm0, dm1) = (
            self.derivative(Side::Minus, n),
            self.derivative(Side::Minus, n + 1),
        );
        let (dp0, dp1) = (
            self.derivative(Side::Plus, n),
            self.derivative(Side::Plus, n + 1),
        );
        bg.a(n) * (dm0 * p1 + m0 * dp1 - dm1 * p0 - m1 * dp0)
    }

    pub fn green(&self, bg: &BackgroundOperator, m: i64, n: i64) -> Complex64 {
        let (lo, hi) = if m <= n { (m, n) } else { (n, m) };
        self.value(Side::Minus, lo) * self.value(Side::Plus, hi) / self.wronskian(bg, 0)
    }
}

/// Values `ψ(0..N)` (and derivatives) of the Floquet solution with period
/// factor `mult`.
///
/// The decaying solution is propagated backward from site N and the growing
/// one forward from site 0, each in its numerically stable direction.
#[allow(clippy::too_many_arguments)]
fn period_values(
    bg: &BackgroundOperator,
    z: Complex64,
    m: &Matrix2<Complex64>,
    dm: &Matrix2<Complex64>,
    mult: Complex64,
    dmult: Complex64,
    norm: Normalization,
    with_derivative: bool,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    // Two analytic eigenvector candidates from the rows of M − mult·I.
    let c1 = (m[(0, 1)], mult - m[(0, 0)]);
    let d1 = (dm[(0, 1)], dmult - dm[(0, 0)]);
    let c2 = (mult - m[(1, 1)], m[(1, 0)]);
    let d2 = (dmult - dm[(1, 1)], dm[(1, 0)]);
    let n1 = c1.0.norm_sqr() + c1.1.norm_sqr();
    let n2 = c2.0.norm_sqr() + c2.1.norm_sqr();
    let ((mut x, mut y), (mut dx, mut dy), nrm) = if n1 >= n2 {
        (c1, d1, n1)
    } else {
        (c2, d2, n2)
    };
    let scale = 1.0 + m.iter().map(|e| e.norm()).fold(0.0, f64::max);
    if nrm.sqrt() < 1e-13 * scale {
        return Err(Error::DegenerateEigenvector { z });
    }
    match norm {
        Normalization::Unit => {
            let c = nrm.sqrt().recip();
            x *= c;
            y *= c;
            dx *= c;
            dy *= c;
        }
        Normalization::Origin => {
            if x.norm() < 1e-14 * nrm.sqrt() {
                return Err(Error::NormalizationPole { z });
            }
            let ratio = y / x;
            dy = (dy - ratio * dx) / x;
            y = ratio;
            x = Complex64::from(1.0);
            dx = Complex64::from(0.0);
        }
    }

    let n = bg.period();
    let zero = Complex64::from(0.0);
    let mut psi = vec![zero; n + 1];
    let mut dpsi = vec![zero; n + 1];
    psi[0] = x;
    dpsi[0] = dx;
    if n == 1 {
        psi.truncate(1);
        dpsi.truncate(1);
        return Ok((psi, if with_derivative { dpsi } else { Vec::new() }));
    }
    if mult.norm() < 1.0 {
        // psi[N] = mult·x, psi[N−1] = mult·y; recur downward to site 1.
        psi[n] = mult * x;
        dpsi[n] = dmult * x + mult * dx;
        psi[n - 1] = mult * y;
        dpsi[n - 1] = dmult * y + mult * dy;
        for r in (2..n).rev() {
            let ri = r as i64;
            let (ar, ar1, br) = (bg.a(ri), bg.a(ri - 1), bg.b(ri));
            psi[r - 1] = ((z - br) * psi[r] - ar * psi[r + 1]) / ar1;
            dpsi[r - 1] = ((z - br) * dpsi[r] + psi[r] - ar * dpsi[r + 1]) / ar1;
        }
    } else {
        let (mut prev, mut dprev) = (y, dy);
        for r in 0..n - 1 {
            let ri = r as i64;
            let (ar, ar1, br) = (bg.a(ri), bg.a(ri - 1), bg.b(ri));
            psi[r + 1] = ((z - br) * psi[r] - ar1 * prev) / ar;
            dpsi[r + 1] = ((z - br) * dpsi[r] + psi[r] - ar1 * dprev) / ar;
            prev = psi[r];
            dprev = dpsi[r];
        }
    }
    psi.truncate(n);
    dpsi.truncate(n);
    Ok((psi, if with_derivative { dpsi } else { Vec::new() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn dimer(beta: f64) -> BackgroundOperator {
        BackgroundOperator::new(vec![0.5, 0.5], vec![beta, -beta]).unwrap()
    }

    #[test]
    fn free_transfer_matrix_has_trace_2z_and_unit_determinant() {
        let bg = BackgroundOperator::free();
        let z = c(0.3, -1.7);
        let t = bg.transfer_matrix(z, 4);
        assert_relative_eq!((t.trace() - 2.0 * z).norm(), 0.0, epsilon = 1e-15);
        assert_relative_eq!((t.determinant() - 1.0).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn transfer_determinant_is_ratio_of_neighbouring_a() {
        let bg = BackgroundOperator::new(vec![0.3, 0.9, 0.6], vec![0.1, -0.2, 0.4]).unwrap();
        let z = c(0.7, 0.2);
        for n in -3..3 {
            let det = bg.transfer_matrix(z, n).determinant();
            assert_relative_eq!(det.re, bg.a(n - 1) / bg.a(n), epsilon = 1e-14);
            assert_relative_eq!(det.im, 0.0, epsilon = 1e-14);
        }
        assert_relative_eq!((bg.monodromy(z).determinant() - 1.0).norm(), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn free_monodromy_and_discriminant() {
        let bg = BackgroundOperator::free();
        let z = c(1.25, 0.5);
        let m = bg.monodromy(z);
        assert_eq!(m, Matrix2::new(2.0 * z, c(-1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)));
        assert_eq!(bg.discriminant(z), 2.0 * z);
    }

    #[test]
    fn discriminant_is_real_on_real_axis_with_leading_coefficient() {
        let bg = BackgroundOperator::new(vec![0.4, 0.7, 0.5], vec![0.2, -0.1, 0.3]).unwrap();
        for x in [-2.0, -0.3, 0.0, 1.1] {
            assert_eq!(bg.discriminant(c(x, 0.0)).im, 0.0);
        }
        let big = 1e5;
        let lead = bg.discriminant(c(big, 0.0)).re / big.powi(3);
        assert_relative_eq!(lead, 1.0 / (0.4 * 0.7 * 0.5), max_relative = 1e-4);
    }

    #[test]
    fn free_band_edges() {
        let sd = BackgroundOperator::free().band_edges().unwrap();
        assert_eq!(sd.genus, 0);
        assert_relative_eq!(sd.edges[0], -1.0, epsilon = 1e-15);
        assert_relative_eq!(sd.edges[1], 1.0, epsilon = 1e-15);
        assert!(sd.dirichlet.is_empty());
    }

    #[test]
    fn dimer_band_edges_closed_form() {
        // Δ(z) = 4z² − 4β² − 2, so the edges are ±β and ±√(β² + 1).
        let beta = 0.5;
        let sd = dimer(beta).band_edges().unwrap();
        assert_eq!(sd.genus, 1);
        let outer = (beta * beta + 1.0_f64).sqrt();
        for (got, want) in sd.edges.iter().zip([-outer, -beta, beta, outer]) {
            assert_relative_eq!(*got, want, epsilon = 1e-14);
        }
        // Dirichlet problem on the single site 1 gives μ = b(1) = −β, the gap's lower edge.
        assert_relative_eq!(sd.dirichlet[0], -beta, epsilon = 1e-12);
    }

    #[test]
    fn constant_shift_moves_edges() {
        let bg = BackgroundOperator::new(vec![0.4, 0.6, 0.5], vec![0.3, 0.0, -0.2]).unwrap();
        let e0 = bg.band_edges().unwrap();
        let e1 = bg.shifted(0.37).band_edges().unwrap();
        for (a, b) in e0.edges.iter().zip(&e1.edges) {
            assert_relative_eq!(b - a, 0.37, epsilon = 1e-12);
        }
    }

    #[test]
    fn period_two_with_equal_entries_closes_the_gap() {
        let bg = BackgroundOperator::new(vec![0.5, 0.5], vec![0.0, 0.0]).unwrap();
        let sd = bg.band_edges().unwrap();
        assert_eq!(sd.genus, 0);
        assert_eq!(sd.edges.len(), 2);
        assert!(sd.dirichlet.is_empty());
    }

    #[test]
    fn free_multiplier_at_two() {
        let w = BackgroundOperator::free().floquet_multiplier(c(2.0, 0.0)).unwrap();
        assert_relative_eq!(w.re, 2.0 - 3.0_f64.sqrt(), epsilon = 1e-15);
        assert_eq!(w.im, 0.0);
    }

    #[test]
    fn band_multiplier_is_upper_boundary_value() {
        let bg = BackgroundOperator::free();
        let on_band = bg.floquet_multiplier(c(0.3, 0.0)).unwrap();
        let above = bg.floquet_multiplier(c(0.3, 1e-9)).unwrap();
        assert_relative_eq!(on_band.norm(), 1.0, epsilon = 1e-15);
        assert!((on_band - above).norm() < 1e-8);
        let bg = dimer(0.5);
        for x in [-1.0, 0.7] {
            let on_band = bg.floquet_multiplier(c(x, 0.0)).unwrap();
            let above = bg.floquet_multiplier(c(x, 1e-9)).unwrap();
            assert!((on_band - above).norm() < 1e-7, "{on_band} vs {above}");
        }
    }

    #[test]
    fn band_edge_is_rejected() {
        let err = BackgroundOperator::free().floquet_multiplier(c(1.0, 0.0));
        assert!(matches!(err, Err(Error::BandEdge { .. })));
        assert!(BackgroundOperator::free()
            .wronskian_background(c(-1.0, 0.0))
            .is_err());
    }

    #[test]
    fn free_floquet_solutions_are_pure_powers() {
        let bg = BackgroundOperator::free();
        let z = c(0.4, 0.9);
        let w = bg.floquet_multiplier(z).unwrap();
        let window = Window::new(-6, 6);
        let plus = bg.baker_akhiezer(z, Side::Plus, window).unwrap();
        let minus = bg.baker_akhiezer(z, Side::Minus, window).unwrap();
        for n in window.sites() {
            let p = w.powi(n as i32);
            assert!((plus.value(n).unwrap() - p).norm() < 1e-13 * p.norm().max(1.0));
            let m = w.powi(-n as i32);
            assert!((minus.value(n).unwrap() - m).norm() < 1e-13 * m.norm().max(1.0));
        }
    }

    #[test]
    fn free_wronskian_and_green_at_two() {
        let bg = BackgroundOperator::free();
        let z = c(2.0, 0.0);
        let s3 = 3.0_f64.sqrt();
        assert_relative_eq!(bg.wronskian_background(z).unwrap().re, -s3, epsilon = 1e-14);
        assert_relative_eq!(bg.green_background(z, 0, 0).unwrap().re, -1.0 / s3, epsilon = 1e-14);
    }

    #[test]
    fn green_background_is_symmetric_and_inverts() {
        let bg = BackgroundOperator::new(vec![0.6, 0.4, 0.5], vec![0.1, -0.3, 0.2]).unwrap();
        let z = c(0.2, 0.6);
        let col = 2;
        for m in -8..8 {
            let g = |k: i64| bg.green_background(z, k, col).unwrap();
            let lhs = bg.a(m) * g(m + 1) + bg.a(m - 1) * g(m - 1) + (bg.b(m) - z) * g(m);
            let want = if m == col { 1.0 } else { 0.0 };
            assert!((lhs - want).norm() < 1e-12, "m = {m}: {lhs}");
            let swapped = bg.green_background(z, col, m).unwrap();
            assert!((g(m) - swapped).norm() < 1e-15);
        }
    }

    #[test]
    fn sqrt_r_matches_wronskian_branch() {
        let bg = BackgroundOperator::new(vec![0.6, 0.4, 0.5], vec![0.1, -0.3, 0.2]).unwrap();
        let sd = bg.band_edges().unwrap();
        for z in [c(0.2, 0.6), c(-1.3, -0.2), c(3.0, 0.0), c(-3.0, 0.0), c(0.0, -4.0)] {
            let lhs = bg.wronskian_background(z).unwrap() * sd.dirichlet_product(z);
            let rhs = sd.sqrt_r(z);
            assert!((lhs - rhs).norm() < 1e-11 * rhs.norm(), "{z}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let bg = BackgroundOperator::new(vec![0.5, 0.25], vec![0.1, -0.1]).unwrap();
        let text = serde_json::to_string(&bg).unwrap();
        assert_eq!(text, r#"{"period":2,"a":[0.5,0.25],"b":[0.1,-0.1]}"#);
        assert_eq!(serde_json::from_str::<BackgroundOperator>(&text).unwrap(), bg);
        assert!(serde_json::from_str::<BackgroundOperator>(r#"{"period":2,"a":[0.5],"b":[0,0]}"#).is_err());
        assert!(serde_json::from_str::<BackgroundOperator>(r#"{"period":1,"a":[-0.5],"b":[0]}"#).is_err());
    }
}
