//! Checks on the event-time outcome: eCDF against Kaplan-Meier and the
//! probability integral transform.

use crate::error::{Error, Result};
use crate::replicate::OutcomeSet;

use super::report::{Band, CheckReport, Statistic};
use super::{ecdf, kaplan_meier, mise, uniform_grid, Curve, CurveKind, KaplanMeier};

pub const MIN_PIT_REPLICATES: usize = 20;

/// Tolerance for band membership of probability curves.
const BAND_TOL: f64 = 1e-12;

/// Observed KM-based CDF and its 95% band on `grid`.
fn km_cdf(km: &KaplanMeier, grid: &[f64]) -> Result<(Curve, Band)> {
    let values = grid.iter().map(|&t| 1.0 - km.survival_at(t)).collect();
    let (lower, upper) = grid
        .iter()
        .map(|&t| {
            let (lo, hi) = km.band_at(t);
            (1.0 - hi, 1.0 - lo)
        })
        .unzip();
    Ok((Curve::new(CurveKind::Km, grid.to_vec(), values)?, Band { lower, upper }))
}

/// Fraction of replicate values inside the band, over the grid points where
/// the band has positive width. Before the first observed event (and after the
/// estimate reaches zero) the Greenwood band collapses to a point and carries
/// no information about sampling variability.
fn coverage(band: &Band, curves: &[Curve]) -> Option<f64> {
    let open: Vec<usize> = (0..band.lower.len())
        .filter(|&k| band.upper[k] - band.lower[k] > BAND_TOL)
        .collect();
    if open.is_empty() || curves.is_empty() {
        return None;
    }
    let inside: usize = curves
        .iter()
        .map(|c| {
            open.iter()
                .filter(|&&k| c.values[k] >= band.lower[k] - BAND_TOL && c.values[k] <= band.upper[k] + BAND_TOL)
                .count()
        })
        .sum();
    Some(inside as f64 / (curves.len() * open.len()) as f64)
}

/// Kaplan-Meier CDF of the observed times against plain eCDFs of the
/// (uncensored) replicated times on [start, max observed time]. Replicated
/// times cut at the horizon count in the denominator only.
pub fn survival_ecdf_check(observed: &OutcomeSet, replicates: &[&OutcomeSet], start: f64) -> Result<CheckReport> {
    let (t, d) = observed.event_times();
    let km = kaplan_meier(&t, &d)?;
    let end = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = (start, end);
    let grid = uniform_grid(start, end)?;
    let (obs, band) = km_cdf(&km, &grid)?;
    if replicates.is_empty() {
        return Err(Error::Data("survival eCDF check needs replicates".into()));
    }
    let mut beyond = 0.0;
    let curves = replicates
        .iter()
        .map(|r| {
            let n = r.subjects.len();
            if n == 0 {
                return Err(Error::Data("replicate without subjects".into()));
            }
            // Horizon-censored times are never ≤ a grid point below the horizon.
            let times: Vec<f64> = r
                .subjects
                .iter()
                .map(|s| if s.event { s.event_time } else { f64::INFINITY })
                .collect();
            beyond += times.iter().filter(|t| t.is_infinite()).count() as f64 / n as f64;
            ecdf(&times)?.curve(&grid)
        })
        .collect::<Result<Vec<_>>>()?;
    let mise = mise(&obs, &curves, range)?;
    let mut report = CheckReport::new(Statistic::EcdfSurvival, obs, curves, mise, range);
    report.band_coverage = coverage(&band, &report.replicates);
    report.observed_band = Some(band);
    report.beyond_horizon = Some(beyond / replicates.len() as f64);
    Ok(report)
}

/// u_i = (1/M) Σ_m I(T*_im ≤ T_i) for every subject.
pub fn pit_values(observed: &OutcomeSet, replicates: &[&OutcomeSet]) -> Result<Vec<f64>> {
    let m = replicates.len();
    if m < MIN_PIT_REPLICATES {
        return Err(Error::Config(format!(
            "PIT needs at least {MIN_PIT_REPLICATES} replicates per subject, got {m}"
        )));
    }
    for r in replicates {
        if r.subjects.len() != observed.subjects.len()
            || r.subjects.iter().zip(&observed.subjects).any(|(a, b)| a.id != b.id)
        {
            return Err(Error::Data("PIT: replicate subjects do not match the observed subjects".into()));
        }
    }
    Ok(observed
        .subjects
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let hits = replicates
                .iter()
                .filter(|r| {
                    let rep = &r.subjects[i];
                    rep.event && rep.event_time <= s.event_time
                })
                .count();
            hits as f64 / m as f64
        })
        .collect())
}

/// Kaplan-Meier CDF of the pairs (u_i, δ_i) against the uniform CDF.
pub fn pit_check(observed: &OutcomeSet, replicates: &[&OutcomeSet]) -> Result<CheckReport> {
    let u = pit_values(observed, replicates)?;
    let (_, d) = observed.event_times();
    let km = kaplan_meier(&u, &d)?;
    let range = (0.0, 1.0);
    let grid = uniform_grid(0.0, 1.0)?;
    let (obs, band) = km_cdf(&km, &grid)?;
    let identity = Curve::new(CurveKind::Ecdf, grid.clone(), grid.clone())?;
    let mise = mise(&obs, std::slice::from_ref(&identity), range)?;
    let mut report = CheckReport::new(Statistic::Pit, obs, vec![identity], mise, range);
    report.band_coverage = coverage(&band, &report.replicates);
    report.observed_band = Some(band);
    Ok(report)
}
