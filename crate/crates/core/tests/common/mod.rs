//! Oracles shared by the integration tests. Nothing here calls into the
//! library's spectral code: truncated matrices are built from the raw
//! coefficients and solved by Sturm bisection.

#![allow(dead_code)]

use jacobi_krein::{BackgroundOperator, Complex64, Perturbation, Window};
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn dimer(beta: f64) -> BackgroundOperator {
    BackgroundOperator::new(vec![0.5, 0.5], vec![beta, -beta]).unwrap()
}

/// Random window of length `1..=max_len` inside `[-4, 4]`, with
/// `a = a_q (1 + δ)` and `b = b_q + δ'`, `|δ|, |δ'| ≤ dev`.
pub fn random_perturbation(
    rng: &mut StdRng,
    bg: &BackgroundOperator,
    max_len: usize,
    dev: f64,
) -> Perturbation {
    let len = rng.random_range(1..=max_len) as i64;
    let lo = rng.random_range(-4..=(4 - len + 1));
    let window = Window::new(lo, lo + len - 1);
    let (a, b) = window
        .sites()
        .map(|n| {
            (
                bg.a(n) * (1.0 + rng.random_range(-dev..=dev)),
                bg.b(n) + rng.random_range(-dev..=dev),
            )
        })
        .unzip();
    Perturbation::new(bg.clone(), window, a, b).unwrap()
}

/// Diagonal and off-diagonal of `H` restricted to `[lo, hi]`.
pub fn truncation(p: &Perturbation, lo: i64, hi: i64) -> (Vec<f64>, Vec<f64>) {
    let d = (lo..=hi).map(|n| p.b(n)).collect();
    let e = (lo..hi).map(|n| p.a(n)).collect();
    (d, e)
}

/// Number of eigenvalues below `x` of the symmetric tridiagonal `(d, e)`.
pub fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..d.len() {
        let off = if i == 0 { 0.0 } else { e[i - 1] * e[i - 1] / q };
        q = d[i] - x - off;
        if q == 0.0 {
            q = -1e-300;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// All eigenvalues in `(lo, hi)`, each bisected to `tol`.
pub fn eigenvalues_in(d: &[f64], e: &[f64], lo: f64, hi: f64, tol: f64) -> Vec<f64> {
    let (c_lo, c_hi) = (sturm_count(d, e, lo), sturm_count(d, e, hi));
    (c_lo..c_hi)
        .map(|k| {
            // k-th eigenvalue (0-based): smallest x with count(x) > k.
            let (mut a, mut b) = (lo, hi);
            while b - a > tol {
                let m = 0.5 * (a + b);
                if sturm_count(d, e, m) > k {
                    b = m;
                } else {
                    a = m;
                }
            }
            0.5 * (a + b)
        })
        .collect()
}

/// Eigenvalues of the truncation to `[lo, hi]` lying off the bands, with
/// states bound to the truncation boundary removed: a value is kept only if
/// it survives moving either end of the truncation by one site.
pub fn discrete_spectrum(p: &Perturbation, lo: i64, hi: i64) -> Vec<f64> {
    let spectral = p.background().band_edges().unwrap();
    let (g_lo, g_hi) = p.gershgorin_interval();
    let mut regions = vec![(g_lo - 1.0, spectral.lowest() - 1e-9)];
    regions.extend(spectral.gaps().into_iter().map(|(a, b)| (a + 1e-9, b - 1e-9)));
    regions.push((spectral.highest() + 1e-9, g_hi + 1.0));
    let solve = |lo: i64, hi: i64| {
        let (d, e) = truncation(p, lo, hi);
        regions
            .iter()
            .flat_map(|&(a, b)| eigenvalues_in(&d, &e, a, b, 1e-13))
            .collect::<Vec<_>>()
    };
    let base = solve(lo, hi);
    let left = solve(lo - 1, hi);
    let right = solve(lo, hi + 1);
    let near = |set: &[f64], x: f64| set.iter().any(|y| (x - y).abs() < 1e-9);
    base.into_iter()
        .filter(|&x| near(&left, x) && near(&right, x))
        .collect()
}

/// Dense `H` on `[lo, hi]` as a row-major matrix.
pub fn dense(p: &Perturbation, lo: i64, hi: i64) -> Vec<Vec<f64>> {
    let m = (hi - lo + 1) as usize;
    let mut h = vec![vec![0.0; m]; m];
    for i in 0..m {
        let n = lo + i as i64;
        h[i][i] = p.b(n);
        if i + 1 < m {
            h[i][i + 1] = p.a(n);
            h[i + 1][i] = p.a(n);
        }
    }
    h
}

/// `Hf − zf` at site `n` for a sequence given by `f`, relative to the size of its terms.
pub fn recurrence_residual(
    a: impl Fn(i64) -> f64,
    b: impl Fn(i64) -> f64,
    f: impl Fn(i64) -> Complex64,
    z: Complex64,
    n: i64,
) -> f64 {
    let terms = [a(n) * f(n + 1), a(n - 1) * f(n - 1), b(n) * f(n), -z * f(n)];
    let sum: Complex64 = terms.iter().sum();
    let scale: f64 = terms.iter().map(|t| t.norm()).sum();
    sum.norm() / scale
}

/// `ln(1 + Σ α_j x^j)` as a power series up to `x^order`, by the recurrence
/// for the logarithm of a series with unit constant term.
pub fn log_series(alphas: &[f64]) -> Vec<f64> {
    let n = alphas.len();
    let coef = |k: usize| if k == 0 { 1.0 } else { alphas[k - 1] };
    let mut l = vec![0.0; n + 1];
    for k in 1..=n {
        let conv: f64 = (1..k).map(|i| i as f64 * l[i] * coef(k - i)).sum();
        l[k] = (k as f64 * coef(k) - conv) / k as f64;
    }
    l[1..].to_vec()
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(1.0))
        .fold(0.0, f64::max)
}
