//! Scattering data for finitely supported perturbations of periodic Jacobi
//! operators.
//!
//! A [`BackgroundOperator`] holds one period of coefficients and exposes its
//! band structure and Floquet solutions. A [`Perturbation`] changes the
//! coefficients on a finite window; from it come the Jost solutions, the
//! function `α = W/W_q`, the discrete eigenvalues and the Green's function.
//! [`krein`] covers the perturbation determinant, the spectral shift
//! function and trace invariants, and [`toda`] evolves a perturbation under
//! the Toda lattice.
//!
//! ```
//! use jacobi_krein::{BackgroundOperator, Complex64, Perturbation};
//!
//! let p = Perturbation::single_site(BackgroundOperator::free(), 0, 0.0, 0.75)?;
//! let z = Complex64::new(0.0, 1.0);
//! let det = jacobi_krein::krein::perturbation_determinant(&p, z)?;
//! assert!((det - p.alpha(z)?).norm() < 1e-14);
//! # Ok::<(), jacobi_krein::Error>(())
//! ```

pub mod background;
pub mod error;
pub mod io;
pub mod krein;
pub mod perturbation;
pub mod toda;

pub use background::{BackgroundOperator, FloquetSolution, Side, SpectralData, Window};
pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use perturbation::{JostAsymptotics, JostSolution, Perturbation, PerturbationDoc, ScatteringFunction};

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
pub struct ReadmeDoctests;

#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/background.md")]
    pub mod background {}
    #[doc = include_str!("../../../book/src/scattering.md")]
    pub mod scattering {}
    #[doc = include_str!("../../../book/src/determinant.md")]
    pub mod determinant {}
    #[doc = include_str!("../../../book/src/shift.md")]
    pub mod shift {}
    #[doc = include_str!("../../../book/src/toda.md")]
    pub mod toda {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
