//! Goodness-of-fit statistics comparing observed and replicated data.

mod concordance;
mod ecdf;
mod km;
mod longitudinal;
pub mod loess;
mod report;
mod survival;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use concordance::{concordance_index, concordance_over_time, ConcordanceOptions};
pub use ecdf::{ecdf, Ecdf};
pub use km::{kaplan_meier, KaplanMeier, Z_95};
pub use longitudinal::{
    ecdf_longitudinal_check, mean_function_check, semivariogram_check, semivariogram_pairs,
    variance_function_check, Scope,
};
pub use loess::{loess_fit, LoessConfig, LoessFit};
pub use report::{run_check, CheckOptions, CheckReport, Statistic};
pub use survival::{pit_check, pit_values, survival_ecdf_check, MIN_PIT_REPLICATES};

/// Number of trapezoid sub-intervals used for curves and MISE.
pub const GRID_INTERVALS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Ecdf,
    LoessMean,
    LoessVariance,
    Semivariogram,
    Km,
    Concordance,
}

/// A function tabulated on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub kind: CurveKind,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl Curve {
    pub fn new(kind: CurveKind, grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let c = Curve { kind, grid, values };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.len() != self.values.len() || self.grid.is_empty() {
            return Err(Error::Data(format!(
                "curve has {} grid points and {} values",
                self.grid.len(),
                self.values.len()
            )));
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data("curve grid is not strictly increasing".into()));
        }
        if matches!(self.kind, CurveKind::Ecdf | CurveKind::Km) {
            if self.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Data("probability curve leaves [0, 1]".into()));
            }
            if self.values.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::Data("cumulative distribution curve decreases".into()));
            }
        }
        Ok(())
    }

    /// Linear interpolation, constant beyond the ends.
    pub fn eval(&self, x: f64) -> f64 {
        let g = &self.grid;
        let n = g.len();
        if x <= g[0] {
            return self.values[0];
        }
        if x >= g[n - 1] {
            return self.values[n - 1];
        }
        let k = g.partition_point(|&p| p <= x) - 1;
        let t = (x - g[k]) / (g[k + 1] - g[k]);
        self.values[k] + t * (self.values[k + 1] - self.values[k])
    }
}

/// `GRID_INTERVALS + 1` equally spaced points from `a` to `b`.
pub fn uniform_grid(a: f64, b: f64) -> Result<Vec<f64>> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::Domain(format!("grid range [{a}, {b}] is empty")));
    }
    let n = GRID_INTERVALS;
    Ok((0..=n)
        .map(|k| if k == n { b } else { a + (b - a) * k as f64 / n as f64 })
        .collect())
}

/// Mean over replicates of the trapezoid integral of (replicate − observed)²
/// over `range`, using [`GRID_INTERVALS`] sub-intervals.
pub fn mise(observed: &Curve, replicates: &[Curve], range: (f64, f64)) -> Result<f64> {
    let grid = uniform_grid(range.0, range.1)?;
    if replicates.is_empty() {
        return Err(Error::Data("MISE needs at least one replicate curve".into()));
    }
    let obs: Vec<f64> = grid.iter().map(|&x| observed.eval(x)).collect();
    let total: f64 = replicates
        .iter()
        .map(|c| {
            let sq: Vec<f64> = grid.iter().zip(&obs).map(|(&x, o)| (c.eval(x) - o).powi(2)).collect();
            grid.windows(2)
                .zip(sq.windows(2))
                .map(|(g, s)| 0.5 * (g[1] - g[0]) * (s[0] + s[1]))
                .sum::<f64>()
        })
        .sum();
    Ok(total / replicates.len() as f64)
}

/// Range of finite values, as an error when empty or degenerate.
pub(crate) fn value_range(values: &[f64], what: &str) -> Result<(f64, f64)> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo < hi) {
        return Err(Error::Data(format!("{what}: observed values do not span a range")));
    }
    Ok((lo, hi))
}
