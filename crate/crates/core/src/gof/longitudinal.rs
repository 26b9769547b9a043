//! Checks on the longitudinal outcome: marginal eCDF, mean, variance and
//! semivariogram. Replicates go through exactly the observed-data pipeline.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::replicate::OutcomeSet;

use super::report::{CheckReport, Statistic};
use super::{ecdf, loess_fit, mise, uniform_grid, value_range, Curve, CurveKind, LoessConfig};

/// Which subjects a longitudinal check pools.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scope {
    Pooled,
    Subject(String),
}

/// Replicate curves computed in parallel; failures become skipped indices.
fn replicate_curves<F>(replicates: &[&OutcomeSet], f: F) -> Result<(Vec<Curve>, Vec<usize>)>
where
    F: Fn(&OutcomeSet) -> Result<Curve> + Sync,
{
    let results: Vec<Result<Curve>> = replicates.par_iter().map(|r| f(r)).collect();
    let mut curves = Vec::new();
    let mut skipped = Vec::new();
    for (m, r) in results.into_iter().enumerate() {
        match r {
            Ok(c) => curves.push(c),
            Err(_) => skipped.push(m),
        }
    }
    if curves.is_empty() {
        return Err(Error::Data("no replicate produced a curve".into()));
    }
    Ok((curves, skipped))
}

fn assemble(
    statistic: Statistic,
    observed: Curve,
    (replicates, skipped): (Vec<Curve>, Vec<usize>),
    range: (f64, f64),
) -> Result<CheckReport> {
    let mise = mise(&observed, &replicates, range)?;
    let mut report = CheckReport::new(statistic, observed, replicates, mise, range);
    report.skipped_replicates = skipped;
    Ok(report)
}

pub fn ecdf_longitudinal_check(observed: &OutcomeSet, replicates: &[&OutcomeSet]) -> Result<CheckReport> {
    let (_, y) = observed.pooled();
    let range = value_range(&y, "longitudinal eCDF")?;
    let grid = uniform_grid(range.0, range.1)?;
    let obs = ecdf(&y)?.curve(&grid)?;
    let reps = replicate_curves(replicates, |r| ecdf(&r.pooled().1)?.curve(&grid))?;
    assemble(Statistic::EcdfLongitudinal, obs, reps, range)
}

fn scoped(set: &OutcomeSet, scope: &Scope) -> Result<(Vec<f64>, Vec<f64>)> {
    match scope {
        Scope::Pooled => Ok(set.pooled()),
        Scope::Subject(id) => set
            .subjects
            .iter()
            .find(|s| &s.id == id)
            .map(|s| (s.times.clone(), s.values.clone()))
            .ok_or_else(|| Error::Data(format!("subject '{id}' is not in the data"))),
    }
}

fn loess_curve(x: &[f64], y: &[f64], cfg: &LoessConfig, grid: &[f64], kind: CurveKind) -> Result<Curve> {
    let fit = loess_fit(x, y, cfg)?;
    Curve::new(kind, grid.to_vec(), fit.predict(grid))
}

pub fn mean_function_check(
    observed: &OutcomeSet,
    replicates: &[&OutcomeSet],
    cfg: &LoessConfig,
    scope: &Scope,
) -> Result<CheckReport> {
    let (t, y) = scoped(observed, scope)?;
    if let Scope::Subject(id) = scope {
        if t.len() < cfg.degree + 2 {
            return Err(Error::Data(format!(
                "subject '{id}' has {} measurements; a degree-{} mean check needs at least {}",
                t.len(),
                cfg.degree,
                cfg.degree + 2
            )));
        }
    }
    let range = value_range(&t, "mean function")?;
    let grid = uniform_grid(range.0, range.1)?;
    let obs = loess_curve(&t, &y, cfg, &grid, CurveKind::LoessMean)?;
    let reps = replicate_curves(replicates, |r| {
        let (t, y) = scoped(r, scope)?;
        loess_curve(&t, &y, cfg, &grid, CurveKind::LoessMean)
    })?;
    let mut report = assemble(Statistic::Mean, obs, reps, range)?;
    if let Scope::Subject(id) = scope {
        report.scope = Some(id.clone());
    }
    Ok(report)
}

/// Pooled residuals from the mean loess, split back per subject, and the
/// loess degrees of freedom.
fn detrend(set: &OutcomeSet, cfg: &LoessConfig) -> Result<(Vec<Vec<f64>>, f64)> {
    let (t, y) = set.pooled();
    let fit = loess_fit(&t, &y, cfg)?;
    let r = fit.residuals();
    let mut out = Vec::with_capacity(set.subjects.len());
    let mut k = 0;
    for s in &set.subjects {
        out.push(r[k..k + s.times.len()].to_vec());
        k += s.times.len();
    }
    Ok((out, fit.df()))
}

/// Times and sqrt(|standardized residual|) for the variance function.
fn variance_points(set: &OutcomeSet, cfg: &LoessConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let (resid, df) = detrend(set, cfg)?;
    let n = set.n_measurements() as f64;
    if n <= df {
        return Err(Error::Data(format!(
            "variance function: {n} measurements do not exceed the loess degrees of freedom {df:.3}"
        )));
    }
    let ss: f64 = resid.iter().flatten().map(|r| r * r).sum();
    let sigma = (ss / (n - df)).sqrt();
    if !(sigma > 0.0) {
        return Err(Error::Data("variance function: residual scale is zero".into()));
    }
    let t = set.subjects.iter().flat_map(|s| s.times.iter().copied()).collect();
    let v = resid.iter().flatten().map(|r| (r / sigma).abs().sqrt()).collect();
    Ok((t, v))
}

pub fn variance_function_check(
    observed: &OutcomeSet,
    replicates: &[&OutcomeSet],
    cfg: &LoessConfig,
) -> Result<CheckReport> {
    let (t, v) = variance_points(observed, cfg)?;
    let range = value_range(&t, "variance function")?;
    let grid = uniform_grid(range.0, range.1)?;
    let obs = loess_curve(&t, &v, cfg, &grid, CurveKind::LoessVariance)?;
    let reps = replicate_curves(replicates, |r| {
        let (t, v) = variance_points(r, cfg)?;
        loess_curve(&t, &v, cfg, &grid, CurveKind::LoessVariance)
    })?;
    assemble(Statistic::Variance, obs, reps, range)
}

/// All within-subject pairs (|t_j − t_k|, ½(r_j − r_k)²), j < k.
pub fn semivariogram_pairs(times: &[f64], residuals: &[f64]) -> Vec<(f64, f64)> {
    let n = times.len().min(residuals.len());
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for j in 0..n {
        for k in j + 1..n {
            out.push(((times[j] - times[k]).abs(), 0.5 * (residuals[j] - residuals[k]).powi(2)));
        }
    }
    out
}

fn variogram_points(set: &OutcomeSet, cfg: &LoessConfig, max_lag: Option<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    if set.subjects.iter().all(|s| s.times.len() < 2) {
        return Err(Error::Data("semivariogram: no subject has two or more measurements".into()));
    }
    let (resid, _) = detrend(set, cfg)?;
    let (u, d) = set
        .subjects
        .iter()
        .zip(&resid)
        .flat_map(|(s, r)| semivariogram_pairs(&s.times, r))
        .filter(|(u, _)| max_lag.is_none_or(|m| *u <= m))
        .unzip();
    Ok((u, d))
}

pub fn semivariogram_check(
    observed: &OutcomeSet,
    replicates: &[&OutcomeSet],
    cfg: &LoessConfig,
    max_lag: Option<f64>,
) -> Result<CheckReport> {
    let (u, d) = variogram_points(observed, cfg, max_lag)?;
    let range = value_range(&u, "semivariogram")?;
    let grid = uniform_grid(range.0, range.1)?;
    let obs = loess_curve(&u, &d, cfg, &grid, CurveKind::Semivariogram)?;
    let reps = replicate_curves(replicates, |r| {
        let (u, d) = variogram_points(r, cfg, max_lag)?;
        loess_curve(&u, &d, cfg, &grid, CurveKind::Semivariogram)
    })?;
    assemble(Statistic::Semivariogram, obs, reps, range)
}
