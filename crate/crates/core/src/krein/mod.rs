//! Krein's perturbation determinant, the spectral shift function and the
//! trace formulas.
//!
//! `A·α(z)` is the perturbation determinant `det(1 + V(H_q − z)⁻¹)` with
//! `V = H − H_q` and `A = ∏ a(n)/a_q(n)`. Since `V` has finite rank the
//! determinant reduces exactly to a small matrix on the support of `V`.

mod shift;
mod traces;

pub use shift::{
    alpha_from_shift, spectral_shift, trace_via_shift, BandSamples, EigenvalueStep, Plateau,
    ShiftOptions, ShiftProfile,
};
pub use traces::{
    alpha_expansion, default_radius, tau_from_recursion, trace_direct, trace_report, TraceMethod,
    TraceReport, LAURENT_SAMPLES,
};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::background::{Floquet, Normalization, Side};
use crate::error::{Error, Result};
use crate::perturbation::{JostPair, Perturbation, EIGENVALUE_HIT_TOL};

/// `det(1 + V (H_q − z)⁻¹)` restricted to the sites `[n− − 1, n+ + 1]`.
pub fn perturbation_determinant(p: &Perturbation, z: Complex64) -> Result<Complex64> {
    let Some(win) = p.window() else {
        return Ok(Complex64::from(1.0));
    };
    let bg = p.background();
    let fl = Floquet::new(bg, z, Normalization::Unit, false)?;
    let wq = fl.wronskian(bg, 0);
    let sites: Vec<i64> = (win.lo - 1..=win.hi + 1).collect();
    let m = sites.len();

    let green = |i: usize, j: usize| {
        let (lo, hi) = (sites[i].min(sites[j]), sites[i].max(sites[j]));
        fl.value(Side::Minus, lo) * fl.value(Side::Plus, hi) / wq
    };
    let mut v = DMatrix::<f64>::zeros(m, m);
    for (i, &n) in sites.iter().enumerate() {
        v[(i, i)] = p.b(n) - bg.b(n);
        if i + 1 < m {
            let da = p.a(n) - bg.a(n);
            v[(i, i + 1)] = da;
            v[(i + 1, i)] = da;
        }
    }
    let g = DMatrix::from_fn(m, m, green);
    let k = DMatrix::<Complex64>::identity(m, m) + v.map(Complex64::from) * g;
    Ok(log_determinant(k).exp())
}

/// `ln det K` accumulated from the LU pivots.
fn log_determinant(k: DMatrix<Complex64>) -> Complex64 {
    let lu = k.lu();
    let sign: Complex64 = lu.p().determinant();
    lu.u()
        .diagonal()
        .iter()
        .fold(sign.ln(), |acc, u| acc + u.ln())
}

/// Relative residual of `α'(z) = −α(z) Σ_{|n| ≤ n_max} (G(z,n,n) − G_q(z,n,n))`.
///
/// `α'` comes from the differentiated Wronskians. The truncated sum
/// converges geometrically in `n_max`, so a small value certifies the
/// identity at `z`.
pub fn alpha_log_derivative_residual(p: &Perturbation, z: Complex64, n_max: i64) -> Result<f64> {
    if let Some(win) = p.window() {
        if win.lo < -n_max || win.hi > n_max {
            return Err(Error::InvalidInput(format!(
                "n_max = {n_max} does not cover the window [{}, {}]",
                win.lo, win.hi
            )));
        }
    }
    let (alpha, dalpha) = p.alpha_with_derivative(z)?;
    if alpha.norm() < EIGENVALUE_HIT_TOL {
        return Err(Error::EigenvalueHit {
            z,
            modulus: alpha.norm(),
        });
    }
    let bg = p.background();
    let fl = Floquet::new(bg, z, Normalization::Unit, false)?;
    let wq = fl.wronskian(bg, 0);
    let pair = JostPair::new(p, &fl, -n_max, n_max + 1, false);
    let w = pair.wronskian(p, 0);
    let sum: Complex64 = (-n_max..=n_max)
        .map(|n| {
            pair.value(Side::Minus, n) * pair.value(Side::Plus, n) / w
                - fl.value(Side::Minus, n) * fl.value(Side::Plus, n) / wq
        })
        .sum();
    let numerator = (dalpha + alpha * sum).norm();
    Ok(if dalpha.norm() == 0.0 {
        numerator
    } else {
        numerator / dalpha.norm()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::{BackgroundOperator, Window};
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn zero_perturbation_determinant_is_one() {
        let p = Perturbation::zero(BackgroundOperator::free());
        assert_eq!(perturbation_determinant(&p, c(0.2, 0.3)).unwrap(), c(1.0, 0.0));
    }

    #[test]
    fn single_site_determinant_matches_closed_form() {
        let p = Perturbation::single_site(BackgroundOperator::free(), 0, 0.0, 0.5).unwrap();
        let det = perturbation_determinant(&p, c(2.0, 0.0)).unwrap();
        assert_relative_eq!(det.re, 0.711_324_865_405_187, epsilon = 1e-12);
        assert!(det.im.abs() < 1e-15);
    }

    #[test]
    fn determinant_equals_scaled_alpha_off_diagonal_too() {
        let bg = BackgroundOperator::new(vec![0.5, 0.6], vec![0.2, -0.2]).unwrap();
        let p = Perturbation::new(bg, Window::new(-1, 1), vec![0.7, 0.45, 0.5], vec![0.1, 0.2, -0.3])
            .unwrap();
        let a_total = p.alpha_asymptotics().a_total();
        for z in [c(0.1, 0.5), c(-2.0, 0.0), c(1.9, -0.3)] {
            let det = perturbation_determinant(&p, z).unwrap();
            let alpha = p.alpha(z).unwrap();
            assert!((a_total * alpha - det).norm() < 1e-12 * det.norm(), "{z}");
        }
    }

    #[test]
    fn log_derivative_residual_vanishes_for_zero_perturbation() {
        let p = Perturbation::zero(BackgroundOperator::free());
        assert_eq!(alpha_log_derivative_residual(&p, c(0.3, 0.4), 50).unwrap(), 0.0);
    }

    #[test]
    fn single_site_derivative_closed_form() {
        let cval = 0.5;
        let p = Perturbation::single_site(BackgroundOperator::free(), 0, 0.0, cval).unwrap();
        let z = c(2.0, 0.0);
        let (_, d) = p.alpha_with_derivative(z).unwrap();
        assert_relative_eq!(d.re, cval * 2.0 / 3.0_f64.powf(1.5), epsilon = 1e-13);
        assert!(alpha_log_derivative_residual(&p, z, 60).unwrap() < 1e-8);
    }

    #[test]
    fn residual_rejects_short_truncation() {
        let p = Perturbation::single_site(BackgroundOperator::free(), 5, 0.0, 0.5).unwrap();
        assert!(alpha_log_derivative_residual(&p, c(0.0, 1.0), 3).is_err());
    }
}
