use std::path::Path;

use jacobi_krein::krein::ShiftOptions;
use jacobi_krein::toda::TodaConfig;
use jacobi_krein::{BackgroundOperator, Complex64, Error, Perturbation, PerturbationDoc};
use serde::Deserialize;

/// A scenario file. Only `background` is required.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub background: BackgroundOperator,
    #[serde(default)]
    pub perturbation: PerturbationDoc,
    /// Window sites deviating by at most this much are trimmed away.
    #[serde(default)]
    pub truncation_tolerance: Option<f64>,
    /// Explicit evaluation points `[re, im]`.
    #[serde(default)]
    pub z_points: Vec<[f64; 2]>,
    #[serde(default)]
    pub z_grid: Option<ZGrid>,
    #[serde(default)]
    pub shift: ShiftOptions,
    #[serde(default)]
    pub traces: TraceTask,
    #[serde(default)]
    pub toda: TodaTask,
}

/// Tensor grid `re × im`, real part varying fastest.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZGrid {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceTask {
    pub order: usize,
    /// Circle radius for the Laurent coefficients; defaults to twice the Gershgorin bound.
    pub radius: Option<f64>,
}

impl Default for TraceTask {
    fn default() -> Self {
        TraceTask {
            order: 4,
            radius: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TodaTask {
    pub times: Vec<f64>,
    pub dt: f64,
    pub order: usize,
    pub config: TodaConfig,
}

impl Default for TodaTask {
    fn default() -> Self {
        TodaTask {
            times: vec![0.0, 1.0],
            dt: 1e-3,
            order: 3,
            config: TodaConfig::default(),
        }
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        let scenario: Scenario = jacobi_krein::io::from_json(&text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    fn validate(&self) -> Result<(), Error> {
        if let Some(tol) = self.truncation_tolerance {
            if !(tol.is_finite() && tol >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "truncation_tolerance must be non-negative, got {tol}"
                )));
            }
        }
        if self.z().iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidInput("z values must be finite".into()));
        }
        if self.traces.order > 12 {
            return Err(Error::InvalidInput(format!(
                "traces.order {} exceeds 12",
                self.traces.order
            )));
        }
        Ok(())
    }

    pub fn perturbation(&self) -> Result<Perturbation, Error> {
        let p = Perturbation::from_doc(self.background.clone(), &self.perturbation)?;
        Ok(match self.truncation_tolerance {
            Some(tol) => p.trimmed(tol),
            None => p,
        })
    }

    /// `z_points` followed by the grid.
    pub fn z(&self) -> Vec<Complex64> {
        let mut out: Vec<Complex64> = self
            .z_points
            .iter()
            .map(|&[re, im]| Complex64::new(re, im))
            .collect();
        if let Some(grid) = &self.z_grid {
            for &im in &grid.im {
                out.extend(grid.re.iter().map(|&re| Complex64::new(re, im)));
            }
        }
        out
    }
}
