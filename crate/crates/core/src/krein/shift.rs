use std::f64::consts::{FRAC_PI_4, PI};
use std::io::{self, Write};

use gauss_quad::GaussLegendre;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::background::SpectralData;
use crate::error::{Error, Result};
use crate::io::fmt_real;
use crate::perturbation::Perturbation;

/// Edges of a profile and of the background must agree to this tolerance.
const EDGE_MATCH_TOL: f64 = 1e-9;

/// An extrapolated phase must lie this close to a branch to select it.
const BRANCH_MARGIN: f64 = 0.25;

/// Smallest factor applied to the requested ε list before giving up.
const MIN_EPSILON_SCALE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftOptions {
    /// Decreasing imaginary offsets used for the `ε ↓ 0` extrapolation.
    pub epsilons: Vec<f64>,
    /// Gauss-Legendre nodes per band.
    pub nodes_per_band: usize,
}

impl Default for ShiftOptions {
    fn default() -> Self {
        ShiftOptions {
            epsilons: vec![1e-2, 5e-3, 2.5e-3],
            nodes_per_band: 64,
        }
    }
}

/// `ξ` sampled at the quadrature nodes of one band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandSamples {
    pub lo: f64,
    pub hi: f64,
    pub nodes: Vec<f64>,
    /// Quadrature weights for `∫ · dλ` over the band.
    pub weights: Vec<f64>,
    pub xi: Vec<f64>,
    /// The ε-extrapolated values the branch was selected from.
    pub xi_extrapolated: Vec<f64>,
}

/// Interval off the bands on which `ξ` is the integer `value`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub lo: f64,
    pub hi: f64,
    pub value: i64,
    pub xi_extrapolated: f64,
}

/// Jump of `ξ` across a discrete eigenvalue, measured left to right.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenvalueStep {
    pub position: f64,
    pub jump: i64,
}

/// The spectral shift function `ξ(λ) = π⁻¹ arg α(λ + i0)`.
///
/// Smooth on band interiors, where it is sampled at quadrature nodes; integer
/// and piecewise constant off the bands, where it is stored as plateaus that
/// jump at the eigenvalues of `H`. `ξ = 0` outside `[lower, upper]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftProfile {
    pub epsilons: Vec<f64>,
    /// Smallest ε the tracking had to go down to.
    pub smallest_epsilon: f64,
    /// `A = ∏ a(n)/a_q(n)`.
    pub a_total: f64,
    pub lower: f64,
    pub upper: f64,
    pub bands: Vec<BandSamples>,
    pub plateaus: Vec<Plateau>,
    pub eigenvalue_steps: Vec<EigenvalueStep>,
    /// Largest `|ξ − ξ_extrapolated|` over band nodes.
    pub max_band_extrapolation_error: f64,
    /// Largest distance of an extrapolated plateau value from its integer.
    pub max_plateau_extrapolation_error: f64,
}

#[derive(Clone, Copy, Debug)]
enum PointKind {
    Anchor,
    Plateau(usize),
    Band(usize, usize),
    End,
}

/// Computes `ξ` for `p`.
///
/// `arg α(λ + iε)` is tracked continuously along a path from `lower` (below
/// all spectrum, where `α > 0`) to `upper`, refining adaptively until
/// neighbouring phases differ by less than `π/4`. The tracked phases are
/// extrapolated to `ε = 0` (Neville, polynomial in `ε`), which selects the
/// branch of the exact boundary value `arg α(λ + i0)`.
pub fn spectral_shift(p: &Perturbation, options: &ShiftOptions) -> Result<ShiftProfile> {
    validate_options(options)?;
    let spectral = p.background().band_edges()?;
    let eigenvalues = p.eigenvalues_with(&spectral)?;
    let (g_lo, g_hi) = p.gershgorin_interval();
    let lower = g_lo.min(spectral.lowest()) - 1.0;
    let upper = g_hi.max(spectral.highest()) + 1.0;
    if let Some(&rho) = eigenvalues.iter().find(|&&r| r <= lower || r >= upper) {
        return Err(Error::InvalidInput(format!(
            "eigenvalue {rho} outside the Gershgorin interval [{lower}, {upper}]"
        )));
    }

    let rule = GaussLegendre::new(options.nodes_per_band)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut bands: Vec<BandSamples> = spectral
        .bands()
        .into_iter()
        .map(|(lo, hi)| band_nodes(&rule, lo, hi))
        .collect();

    // Off-band intervals in increasing order, each split at the eigenvalues it contains.
    let mut regions = vec![(lower, spectral.lowest())];
    regions.extend(spectral.gaps());
    regions.push((spectral.highest(), upper));
    let mut plateaus = Vec::new();
    let mut steps_at = Vec::new();
    let mut region_plateaus: Vec<Vec<usize>> = Vec::new();
    for &(lo, hi) in &regions {
        let mut cuts = vec![lo];
        for &rho in eigenvalues.iter().filter(|&&r| lo < r && r < hi) {
            cuts.push(rho);
            steps_at.push(rho);
        }
        cuts.push(hi);
        let mut ids = Vec::new();
        for w in cuts.windows(2) {
            ids.push(plateaus.len());
            plateaus.push(Plateau {
                lo: w[0],
                hi: w[1],
                value: 0,
                xi_extrapolated: 0.0,
            });
        }
        region_plateaus.push(ids);
    }

    let mut path = vec![(lower, PointKind::Anchor)];
    for (r, ids) in region_plateaus.iter().enumerate() {
        for &i in ids {
            let pl = plateaus[i];
            path.push((0.5 * (pl.lo + pl.hi), PointKind::Plateau(i)));
        }
        if let Some(band) = bands.get(r) {
            path.extend(
                band.nodes
                    .iter()
                    .enumerate()
                    .map(|(k, &x)| (x, PointKind::Band(r, k))),
            );
        }
    }
    path.push((upper, PointKind::End));
    let xs: Vec<f64> = path.iter().map(|(x, _)| *x).collect();

    // Branch selection for every path point; points whose extrapolation
    // does not single out a branch are retried with all ε scaled down.
    let principals: Vec<f64> = path
        .iter()
        .map(|&(x, kind)| {
            let boundary = p.alpha(Complex64::from(x))?;
            Ok(match kind {
                PointKind::Band(..) => boundary.arg(),
                _ if boundary.re > 0.0 => 0.0,
                _ => PI,
            } / PI)
        })
        .collect::<Result<_>>()?;
    let mut resolved: Vec<Option<(f64, f64)>> = vec![None; path.len()];
    let mut scale = 1.0;
    let smallest_epsilon = loop {
        let epsilons: Vec<f64> = options.epsilons.iter().map(|e| e * scale).collect();
        let phases: Vec<Vec<f64>> = epsilons
            .iter()
            .map(|&eps| track_phase(p, &xs, eps))
            .collect::<Result<_>>()?;
        for (idx, slot) in resolved.iter_mut().enumerate().filter(|(_, s)| s.is_none()) {
            let series: Vec<f64> = phases.iter().map(|ph| ph[idx]).collect();
            let extrapolated = neville_at_zero(&epsilons, &series) / PI;
            let principal = principals[idx];
            let xi = principal + 2.0 * ((extrapolated - principal) / 2.0).round();
            if (xi - extrapolated).abs() < BRANCH_MARGIN {
                *slot = Some((xi, extrapolated));
            }
        }
        let smallest = *epsilons.last().unwrap();
        if let Some(idx) = resolved.iter().position(Option::is_none) {
            scale *= 0.1;
            if scale < MIN_EPSILON_SCALE {
                return Err(Error::BranchTrackingFailure {
                    lambda: xs[idx],
                    epsilon: smallest,
                });
            }
        } else {
            break smallest;
        }
    };

    let mut band_err: f64 = 0.0;
    let mut plateau_err: f64 = 0.0;
    for (&(x, kind), slot) in path.iter().zip(&resolved) {
        let (xi, extrapolated) = slot.unwrap();
        match kind {
            PointKind::Band(b, k) => {
                bands[b].xi[k] = xi;
                bands[b].xi_extrapolated[k] = extrapolated;
                band_err = band_err.max((xi - extrapolated).abs());
            }
            PointKind::Plateau(i) => {
                plateaus[i].value = xi.round() as i64;
                plateaus[i].xi_extrapolated = extrapolated;
                plateau_err = plateau_err.max((xi - extrapolated).abs());
            }
            PointKind::Anchor | PointKind::End => {
                if xi.round() != 0.0 {
                    return Err(Error::BranchTrackingFailure {
                        lambda: x,
                        epsilon: smallest_epsilon,
                    });
                }
            }
        }
    }

    let eigenvalue_steps = steps_at
        .iter()
        .map(|&rho| {
            let left = plateaus.iter().find(|pl| pl.hi == rho).unwrap();
            let right = plateaus.iter().find(|pl| pl.lo == rho).unwrap();
            EigenvalueStep {
                position: rho,
                jump: right.value - left.value,
            }
        })
        .collect();

    Ok(ShiftProfile {
        epsilons: options.epsilons.clone(),
        smallest_epsilon,
        a_total: p.alpha_asymptotics().a_total(),
        lower,
        upper,
        bands,
        plateaus,
        eigenvalue_steps,
        max_band_extrapolation_error: band_err,
        max_plateau_extrapolation_error: plateau_err,
    })
}

fn validate_options(options: &ShiftOptions) -> Result<()> {
    let eps = &options.epsilons;
    if eps.is_empty() || eps.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
        return Err(Error::InvalidInput(
            "epsilons must be a non-empty list of positive numbers".into(),
        ));
    }
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("epsilons must be strictly decreasing".into()));
    }
    if options.nodes_per_band < 2 {
        return Err(Error::InvalidInput("nodes_per_band must be at least 2".into()));
    }
    Ok(())
}

/// Gauss-Legendre nodes in `θ ∈ (0, π)` mapped by `λ = lo + (hi − lo)(1 − cos θ)/2`.
///
/// `ξ` behaves like a smooth function of `√(λ − E)` at a band edge, which
/// is smooth in `θ`; the map keeps the quadrature spectrally accurate.
fn band_nodes(rule: &GaussLegendre, lo: f64, hi: f64) -> BandSamples {
    let half = 0.5 * (hi - lo);
    let (nodes, weights): (Vec<f64>, Vec<f64>) = rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(t, w)| {
            let theta = 0.5 * PI * (t + 1.0);
            (
                lo + half * (1.0 - theta.cos()),
                w * 0.5 * PI * half * theta.sin(),
            )
        })
        .unzip();
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|&i, &j| nodes[i].total_cmp(&nodes[j]));
    let n = nodes.len();
    BandSamples {
        lo,
        hi,
        nodes: order.iter().map(|&i| nodes[i]).collect(),
        weights: order.iter().map(|&i| weights[i]).collect(),
        xi: vec![0.0; n],
        xi_extrapolated: vec![0.0; n],
    }
}

/// Continuous branch of `arg α(x + iε)` at the points `xs` (increasing),
/// starting from the principal value at `xs[0]`.
fn track_phase(p: &Perturbation, xs: &[f64], eps: f64) -> Result<Vec<f64>> {
    let f = |x: f64| p.alpha(Complex64::new(x, eps));
    let mut prev = (xs[0], f(xs[0])?);
    let mut phase = prev.1.arg();
    let mut out = Vec::with_capacity(xs.len());
    out.push(phase);
    for &x in &xs[1..] {
        let cur = (x, f(x)?);
        phase += phase_increment(&f, prev, cur, eps, 0)?;
        out.push(phase);
        prev = cur;
    }
    Ok(out)
}

fn phase_increment(
    f: &impl Fn(f64) -> Result<Complex64>,
    (x0, v0): (f64, Complex64),
    (x1, v1): (f64, Complex64),
    eps: f64,
    depth: usize,
) -> Result<f64> {
    let ratio = v1 / v0;
    let step = ratio.arg();
    if step.abs() <= FRAC_PI_4 && ratio.norm().ln().abs() <= 0.5 {
        return Ok(step);
    }
    if depth >= 60 || x1 - x0 <= 1e-14 * (1.0 + x0.abs()) {
        return Err(Error::BranchTrackingFailure {
            lambda: x0,
            epsilon: eps,
        });
    }
    let xm = 0.5 * (x0 + x1);
    let mid = (xm, f(xm)?);
    Ok(phase_increment(f, (x0, v0), mid, eps, depth + 1)?
        + phase_increment(f, mid, (x1, v1), eps, depth + 1)?)
}

/// Value at 0 of the interpolating polynomial through `(xs, ys)`.
fn neville_at_zero(xs: &[f64], ys: &[f64]) -> f64 {
    let mut p = ys.to_vec();
    for k in 1..xs.len() {
        for i in 0..xs.len() - k {
            p[i] = (xs[i] * p[i + 1] - xs[i + k] * p[i]) / (xs[i] - xs[i + k]);
        }
    }
    p[0]
}

impl ShiftProfile {
    /// Checks that bands and plateaus tile `[lower, upper]` and that the
    /// bands match `spectral` when given.
    pub fn check_complete(&self, spectral: Option<&SpectralData>) -> Result<()> {
        let mut segments: Vec<(f64, f64)> = self
            .bands
            .iter()
            .map(|b| (b.lo, b.hi))
            .chain(self.plateaus.iter().map(|p| (p.lo, p.hi)))
            .collect();
        segments.sort_by(|a, b| a.0.total_cmp(&b.0));
        let Some(first) = segments.first() else {
            return Err(Error::ProfileIncomplete("no segments".into()));
        };
        if first.0 != self.lower || segments.last().unwrap().1 != self.upper {
            return Err(Error::ProfileIncomplete(format!(
                "segments do not span [{}, {}]",
                self.lower, self.upper
            )));
        }
        if let Some(w) = segments.windows(2).find(|w| w[0].1 != w[1].0) {
            return Err(Error::ProfileIncomplete(format!(
                "hole or overlap between {} and {}",
                w[0].1, w[1].0
            )));
        }
        if let Some(sd) = spectral {
            let bands = sd.bands();
            let matches = bands.len() == self.bands.len()
                && bands.iter().zip(&self.bands).all(|(&(lo, hi), b)| {
                    (lo - b.lo).abs() <= EDGE_MATCH_TOL && (hi - b.hi).abs() <= EDGE_MATCH_TOL
                });
            if !matches {
                return Err(Error::ProfileIncomplete(
                    "bands differ from the background spectrum".into(),
                ));
            }
        }
        Ok(())
    }

    /// CSV with columns `kind, lambda, lambda_hi, weight, xi, xi_extrapolated`.
    ///
    /// Band rows carry a node and its weight; plateau rows carry an interval.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "kind,lambda,lambda_hi,weight,xi,xi_extrapolated")?;
        let mut rows: Vec<(f64, String)> = Vec::new();
        for pl in &self.plateaus {
            rows.push((
                pl.lo,
                format!(
                    "plateau,{},{},,{},{}",
                    fmt_real(pl.lo),
                    fmt_real(pl.hi),
                    pl.value,
                    fmt_real(pl.xi_extrapolated)
                ),
            ));
        }
        for band in &self.bands {
            for k in 0..band.nodes.len() {
                rows.push((
                    band.nodes[k],
                    format!(
                        "band,{},,{},{},{}",
                        fmt_real(band.nodes[k]),
                        fmt_real(band.weights[k]),
                        fmt_real(band.xi[k]),
                        fmt_real(band.xi_extrapolated[k])
                    ),
                ));
            }
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (_, row) in rows {
            writeln!(out, "{row}")?;
        }
        Ok(())
    }
}

/// `τ_j = j ∫ λ^{j−1} ξ(λ) dλ`: Gauss quadrature on the bands plus exact
/// monomial integrals over the plateaus.
pub fn trace_via_shift(profile: &ShiftProfile, j: usize) -> Result<f64> {
    profile.check_complete(None)?;
    if j == 0 {
        return Ok(0.0);
    }
    let jf = j as f64;
    let bands: f64 = profile
        .bands
        .iter()
        .flat_map(|b| b.nodes.iter().zip(&b.weights).zip(&b.xi))
        .map(|((&x, &w), &xi)| w * x.powi(j as i32 - 1) * xi)
        .sum();
    let plateaus: f64 = profile
        .plateaus
        .iter()
        .filter(|pl| pl.value != 0)
        .map(|pl| pl.value as f64 * (pl.hi.powi(j as i32) - pl.lo.powi(j as i32)))
        .sum();
    Ok(jf * bands + plateaus)
}

/// Reconstructs `α(z) = A⁻¹ exp ∫ ξ(λ)/(λ − z) dλ` from a profile.
///
/// `z` must lie off the bands; on a plateau the boundary value from above
/// is returned, which is real.
pub fn alpha_from_shift(p: &Perturbation, profile: &ShiftProfile, z: Complex64) -> Result<Complex64> {
    let spectral = p.background().band_edges()?;
    profile.check_complete(Some(&spectral))?;
    if z.im == 0.0 && spectral.in_spectrum(z.re) {
        return Err(Error::InvalidInput(format!(
            "z = {z} lies on the background spectrum"
        )));
    }
    let bands: Complex64 = profile
        .bands
        .iter()
        .flat_map(|b| b.nodes.iter().zip(&b.weights).zip(&b.xi))
        .map(|((&x, &w), &xi)| w * xi / (x - z))
        .sum();
    let plateaus: Complex64 = profile
        .plateaus
        .iter()
        .filter(|pl| pl.value != 0)
        .map(|pl| {
            let v = pl.value as f64;
            if z.im == 0.0 && pl.lo < z.re && z.re < pl.hi {
                let pv = (pl.hi - z.re).ln() - (z.re - pl.lo).ln();
                Complex64::new(v * pv, v * PI)
            } else {
                v * ((pl.hi - z).ln() - (pl.lo - z).ln())
            }
        })
        .sum();
    Ok((bands + plateaus).exp() / profile.a_total)
}
