use crate::error::{Error, Result};

use super::{Curve, CurveKind};

/// Right-continuous empirical distribution function.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

pub fn ecdf(values: &[f64]) -> Result<Ecdf> {
    if values.is_empty() {
        return Err(Error::Data("eCDF of an empty sample".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Data("eCDF input contains NaN".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Ecdf { sorted })
}

impl Ecdf {
    /// Fraction of the sample ≤ x.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn curve(&self, grid: &[f64]) -> Result<Curve> {
        Curve::new(CurveKind::Ecdf, grid.to_vec(), grid.iter().map(|&x| self.eval(x)).collect())
    }
}
