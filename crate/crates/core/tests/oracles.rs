//! Library routes checked against independent oracles built in test code.

mod common;

use common::*;
use jacobi_krein::krein::{tau_from_recursion, trace_direct};
use jacobi_krein::{BackgroundOperator, Complex64, Perturbation, Side, Window};

/// Solves `(T − z) x = rhs` for the tridiagonal `T` (diagonal `d`,
/// off-diagonal `e`) by Gaussian elimination without pivoting, which is
/// stable here because `Im z ≠ 0` keeps the pivots away from zero.
fn tridiagonal_solve(d: &[f64], e: &[f64], z: Complex64, rhs: &[Complex64]) -> Vec<Complex64> {
    let n = d.len();
    let mut diag: Vec<Complex64> = d.iter().map(|&x| x - z).collect();
    let mut r = rhs.to_vec();
    for i in 1..n {
        let m = e[i - 1] / diag[i - 1];
        diag[i] -= m * e[i - 1];
        r[i] = r[i] - m * r[i - 1];
    }
    let mut x = vec![Complex64::from(0.0); n];
    x[n - 1] = r[n - 1] / diag[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = (r[i] - e[i] * x[i + 1]) / diag[i];
    }
    x
}

#[test]
fn green_function_matches_truncated_resolvent() {
    let mut r = rng(11);
    for bg in [BackgroundOperator::free(), dimer(0.25)] {
        let p = random_perturbation(&mut r, &bg, 6, 0.3);
        let (lo, hi) = (-400, 400);
        let (d, e) = truncation(&p, lo, hi);
        for z in [c(0.4, 0.5), c(-1.7, 0.3), c(2.0, -0.2)] {
            for col in [-3, 0, 2] {
                let mut rhs = vec![Complex64::from(0.0); d.len()];
                rhs[(col - lo) as usize] = Complex64::from(1.0);
                let x = tridiagonal_solve(&d, &e, z, &rhs);
                for row in [-5, -1, 0, 3, 6] {
                    let g = p.green(z, row, col).unwrap();
                    let oracle = x[(row - lo) as usize];
                    assert!((g - oracle).norm() < 1e-12 * oracle.norm().max(1e-3), "{z} {row} {col}");
                }
            }
        }
    }
}

#[test]
fn jost_solutions_solve_the_recurrence_and_match_the_background() {
    let mut r = rng(12);
    let bg = dimer(0.3);
    let p = random_perturbation(&mut r, &bg, 7, 0.3);
    let win = p.window().unwrap();
    let z = c(2.0, 1.0);
    let view = Window::new(win.lo - 6, win.hi + 6);
    for side in [Side::Plus, Side::Minus] {
        let jost = p.jost(z, side, view).unwrap();
        let floquet = bg.baker_akhiezer(z, side, view).unwrap();
        for n in view.lo + 1..view.hi {
            let res = recurrence_residual(|m| p.a(m), |m| p.b(m), |m| jost.value(m).unwrap(), z, n);
            assert!(res < 1e-12, "{side:?} n = {n}: {res:e}");
        }
        let outside: Vec<i64> = match side {
            Side::Plus => (win.hi + 1..=view.hi).collect(),
            Side::Minus => (view.lo..=win.lo).collect(),
        };
        for n in outside {
            let (u, v) = (jost.value(n).unwrap(), floquet.value(n).unwrap());
            assert!((u - v).norm() <= 1e-14 * v.norm(), "{side:?} n = {n}");
        }
    }
    let w0 = p.wronskian_at(z, 0).unwrap();
    for n in view.lo..view.hi {
        let wn = p.wronskian_at(z, n).unwrap();
        assert!((wn - w0).norm() < 1e-13 * w0.norm());
    }
}

#[test]
fn alpha_derivative_matches_central_differences() {
    let mut r = rng(13);
    for bg in [BackgroundOperator::free(), dimer(0.3)] {
        let p = random_perturbation(&mut r, &bg, 5, 0.3);
        for z in [c(0.3, 0.7), c(-2.1, 0.0), c(1.5, -0.4)] {
            let (_, d) = p.alpha_with_derivative(z).unwrap();
            let h = 1e-5;
            let fd = (p.alpha(z + h).unwrap() - p.alpha(z - h).unwrap()) / (2.0 * h);
            assert!((d - fd).norm() < 1e-8 * d.norm().max(1.0), "{z}: {d} vs {fd}");
        }
    }
}

#[test]
fn dirichlet_data_are_eigenvalues_of_the_cut_problem() {
    let backgrounds = [
        dimer(0.3),
        BackgroundOperator::new(vec![0.5, 0.7, 0.4], vec![0.1, -0.2, 0.3]).unwrap(),
        BackgroundOperator::new(vec![0.3, 0.6, 0.5, 0.8], vec![0.0, 0.4, -0.3, 0.1]).unwrap(),
    ];
    for bg in backgrounds {
        let sd = bg.band_edges().unwrap();
        let period = bg.period() as i64;
        let p = Perturbation::zero(bg.clone());
        // Sites 1..=N−1 form the Dirichlet problem cut at 0 and N.
        let (d, e) = truncation(&p, 1, period - 1);
        let mut cut = eigenvalues_in(&d, &e, -10.0, 10.0, 1e-14);
        // Dirichlet values inside closed gaps are dropped by the library.
        cut.retain(|&x| sd.gaps().iter().any(|&(lo, hi)| lo - 1e-9 <= x && x <= hi + 1e-9));
        assert_eq!(cut.len(), sd.dirichlet.len());
        for (mu, x) in sd.dirichlet.iter().zip(&cut) {
            assert!((mu - x).abs() < 1e-10, "{mu} vs {x}");
        }
    }
}

#[test]
fn recursion_satisfies_the_generating_identity() {
    use rand::RngExt;
    let mut r = rng(14);
    for _ in 0..20 {
        let alphas: Vec<f64> = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
        let taus = tau_from_recursion(&alphas);
        let log = log_series(&alphas);
        for (j, (t, l)) in taus.iter().zip(&log).enumerate() {
            let expected = -t / (j + 1) as f64;
            assert!((l - expected).abs() < 1e-10 * expected.abs().max(1.0));
        }
    }
}

#[test]
fn direct_traces_match_dense_matrix_powers() {
    let mut r = rng(15);
    let bg = dimer(0.2);
    let p = random_perturbation(&mut r, &bg, 6, 0.3);
    let q = Perturbation::zero(bg);
    let (lo, hi) = (-40, 40);
    let (h, hq) = (dense(&p, lo, hi), dense(&q, lo, hi));
    let mul = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let m = a.len();
        (0..m)
            .map(|i| (0..m).map(|j| (0..m).map(|k| a[i][k] * b[k][j]).sum()).collect())
            .collect()
    };
    let (mut pk, mut qk) = (h.clone(), hq.clone());
    for j in 1..=5 {
        let oracle: f64 = (0..h.len()).map(|i| pk[i][i] - qk[i][i]).sum();
        let direct = trace_direct(&p, j);
        assert!((direct - oracle).abs() < 1e-12 * oracle.abs().max(1.0), "j = {j}");
        pk = mul(&pk, &h);
        qk = mul(&qk, &hq);
    }
}

#[test]
fn alpha_via_dirichlet_agrees_with_the_wronskian_ratio() {
    let mut r = rng(16);
    let bg = BackgroundOperator::new(vec![0.5, 0.7, 0.4], vec![0.1, -0.2, 0.3]).unwrap();
    let sd = bg.band_edges().unwrap();
    let p = random_perturbation(&mut r, &bg, 5, 0.3);
    for z in [c(0.2, 0.9), c(-2.5, 0.0), c(1.1, -0.6)] {
        let (x, y) = (p.alpha(z).unwrap(), p.alpha_via_dirichlet(&sd, z).unwrap());
        assert!((x - y).norm() < 1e-11 * x.norm());
    }
}
