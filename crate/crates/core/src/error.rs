use num_complex::Complex64;
use thiserror::Error;

/// Failures raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("z = {z} is within tolerance of a band edge (|Δ(z)² − 4| = {distance:.3e})")]
    BandEdge { z: Complex64, distance: f64 },

    #[error("monodromy matrix is not diagonalizable within tolerance at z = {z}")]
    DegenerateEigenvector { z: Complex64 },

    #[error("Floquet solution vanishes at the normalization site at z = {z} (Dirichlet pole)")]
    NormalizationPole { z: Complex64 },

    #[error("root finding failed: {0}")]
    RootFindingFailure(String),

    #[error("root refinement did not converge in [{lo}, {hi}]")]
    ConvergenceFailure { lo: f64, hi: f64 },

    #[error("z = {z} is (numerically) a discrete eigenvalue: |α(z)| = {modulus:.3e}")]
    EigenvalueHit { z: Complex64, modulus: f64 },

    #[error("phase tracking failed near λ = {lambda} (ε = {epsilon})")]
    BranchTrackingFailure { lambda: f64, epsilon: f64 },

    #[error("shift profile does not cover the spectrum: {0}")]
    ProfileIncomplete(String),

    #[error("circle radius {radius} does not enclose the padded spectral interval (needs ≥ {required})")]
    RadiusTooSmall { radius: f64, required: f64 },

    #[error("positivity lost at step {step} (t = {time}, dt = {dt}, site {site})")]
    PositivityLoss {
        step: usize,
        time: f64,
        dt: f64,
        site: i64,
    },

    #[error("window length {len} exceeds the configured maximum {max}")]
    WindowOverflow { len: usize, max: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Variant name, stable for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::BandEdge { .. } => "BandEdge",
            Error::DegenerateEigenvector { .. } => "DegenerateEigenvector",
            Error::NormalizationPole { .. } => "NormalizationPole",
            Error::RootFindingFailure(_) => "RootFindingFailure",
            Error::ConvergenceFailure { .. } => "ConvergenceFailure",
            Error::EigenvalueHit { .. } => "EigenvalueHit",
            Error::BranchTrackingFailure { .. } => "BranchTrackingFailure",
            Error::ProfileIncomplete(_) => "ProfileIncomplete",
            Error::RadiusTooSmall { .. } => "RadiusTooSmall",
            Error::PositivityLoss { .. } => "PositivityLoss",
            Error::WindowOverflow { .. } => "WindowOverflow",
        }
    }
}
