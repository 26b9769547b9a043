//! Time-dependent concordance between the last marker value and event times.
//!
//! Orientation: a comparable pair (T_i < T_j, δ_i = 1, T_i < τ) is concordant
//! when the subject failing earlier has the higher marker; marker ties count ½.
//! Values below ½ mean a protective marker and are reported as such.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replicate::OutcomeSet;
use crate::spline::quantile_sorted;

use super::report::{CheckReport, Statistic};
use super::{kaplan_meier, loess_fit, mise, uniform_grid, Curve, CurveKind, KaplanMeier, LoessConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConcordanceOptions {
    /// Markers older than this before t_k are dropped.
    pub kappa: Option<f64>,
    /// Quantile of the observed times used as the horizon τ.
    pub tau_quantile: f64,
}

impl Default for ConcordanceOptions {
    fn default() -> Self {
        ConcordanceOptions {
            kappa: None,
            tau_quantile: 0.9,
        }
    }
}

struct Fenwick(Vec<f64>);

impl Fenwick {
    fn add(&mut self, mut i: usize, v: f64) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += v;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over ranks < i.
    fn prefix(&self, mut i: usize) -> f64 {
        let mut s = 0.0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Concordance among the given subjects, IPCW-weighted when the censoring
/// distribution is supplied (Uno's estimator), plain otherwise.
///
/// Returns `None` when there is no comparable pair or all markers are tied.
pub fn concordance_index(
    times: &[f64],
    events: &[bool],
    markers: &[f64],
    censoring: Option<&KaplanMeier>,
    tau: f64,
) -> Option<f64> {
    let n = times.len();
    if n < 2 || markers.iter().all(|&m| m == markers[0]) {
        return None;
    }
    let mut levels = markers.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let rank = |m: f64| levels.partition_point(|&l| l < m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut tree = Fenwick(vec![0.0; levels.len() + 1]);
    let mut inserted = 0.0;
    let (mut num, mut den) = (0.0, 0.0);
    let mut k = 0;
    while k < n {
        let t = times[order[k]];
        let mut j = k;
        while j < n && times[order[j]] == t {
            j += 1;
        }
        for &i in &order[k..j] {
            if !events[i] || times[i] >= tau || inserted == 0.0 {
                continue;
            }
            let w = match censoring {
                Some(g) => {
                    let gi = g.survival_before(times[i]);
                    if gi <= 0.0 {
                        continue;
                    }
                    1.0 / (gi * gi)
                }
                None => 1.0,
            };
            let r = rank(markers[i]);
            let less = tree.prefix(r);
            let equal = tree.prefix(r + 1) - less;
            num += w * (less + 0.5 * equal);
            den += w * inserted;
        }
        for &i in &order[k..j] {
            tree.add(rank(markers[i]), 1.0);
            inserted += 1.0;
        }
        k = j;
    }
    (den > 0.0).then(|| num / den)
}

/// Last measurement strictly before `t` (within `kappa` when set).
fn last_before(times: &[f64], values: &[f64], t: f64, kappa: Option<f64>) -> Option<f64> {
    let k = times.partition_point(|&s| s < t).checked_sub(1)?;
    match kappa {
        Some(w) if t - times[k] > w => None,
        _ => Some(values[k]),
    }
}

/// C(t_k) at each evaluation time; unevaluable points are returned separately.
fn concordance_points(
    set: &OutcomeSet,
    eval_times: &[f64],
    censoring: Option<&KaplanMeier>,
    tau: f64,
    kappa: Option<f64>,
) -> (Vec<(f64, f64)>, Vec<f64>) {
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    let (mut t, mut d, mut m) = (Vec::new(), Vec::new(), Vec::new());
    for &tk in eval_times {
        t.clear();
        d.clear();
        m.clear();
        for s in set.subjects.iter().filter(|s| s.event_time >= tk) {
            if let Some(v) = last_before(&s.times, &s.values, tk, kappa) {
                t.push(s.event_time);
                d.push(s.event);
                m.push(v);
            }
        }
        match concordance_index(&t, &d, &m, censoring, tau) {
            Some(c) => points.push((tk, c)),
            None => skipped.push(tk),
        }
    }
    (points, skipped)
}

fn curve_from_points(points: &[(f64, f64)], cfg: &LoessConfig, grid: &[f64]) -> Result<Curve> {
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    let fit = loess_fit(&x, &y, cfg)?;
    Curve::new(CurveKind::Concordance, grid.to_vec(), fit.predict(grid))
}

/// Observed C(t_k) by Uno's IPCW estimator, replicated C(t_k) unweighted
/// (replicates are free of censoring), both at the distinct observed event
/// times and smoothed by loess.
pub fn concordance_over_time(
    observed: &OutcomeSet,
    replicates: &[&OutcomeSet],
    cfg: &LoessConfig,
    options: &ConcordanceOptions,
) -> Result<CheckReport> {
    let (times, events) = observed.event_times();
    let mut event_times: Vec<f64> = times.iter().zip(&events).filter(|(_, e)| **e).map(|(t, _)| *t).collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    if event_times.is_empty() {
        return Err(Error::Data("concordance: no observed events".into()));
    }
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let tau = quantile_sorted(&sorted, options.tau_quantile);
    let censored: Vec<bool> = events.iter().map(|e| !e).collect();
    let g = kaplan_meier(&times, &censored)?;
    let (points, skipped) = concordance_points(observed, &event_times, Some(&g), tau, options.kappa);
    if points.len() < cfg.degree + 2 {
        return Err(Error::Data(format!(
            "concordance: only {} evaluable event times (risk sets too small or markers tied)",
            points.len()
        )));
    }
    let range = (points[0].0, points[points.len() - 1].0);
    let grid = uniform_grid(range.0, range.1)?;
    let obs = curve_from_points(&points, cfg, &grid)?;
    let results: Vec<Result<Curve>> = replicates
        .par_iter()
        .map(|r| {
            let (pts, _) = concordance_points(r, &event_times, None, tau, options.kappa);
            curve_from_points(&pts, cfg, &grid)
        })
        .collect();
    let mut curves = Vec::new();
    let mut skipped_reps = Vec::new();
    for (m, r) in results.into_iter().enumerate() {
        match r {
            Ok(c) => curves.push(c),
            Err(_) => skipped_reps.push(m),
        }
    }
    if curves.is_empty() {
        return Err(Error::Data("concordance: no replicate produced a curve".into()));
    }
    let mise = mise(&obs, &curves, range)?;
    let mut report = CheckReport::new(Statistic::Concordance, obs, curves, mise, range);
    report.skipped_points = skipped;
    report.skipped_replicates = skipped_reps;
    report.tau = Some(tau);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_reversed() {
        let t = [1.0, 2.0, 3.0];
        let e = [true; 3];
        assert_eq!(concordance_index(&t, &e, &[3.0, 2.0, 1.0], None, f64::INFINITY), Some(1.0));
        assert_eq!(concordance_index(&t, &e, &[1.0, 2.0, 3.0], None, f64::INFINITY), Some(0.0));
        assert_eq!(concordance_index(&t, &e, &[2.0, 2.0, 2.0], None, f64::INFINITY), None);
    }

    #[test]
    fn ties_count_half() {
        let t = [1.0, 2.0, 3.0];
        let e = [true; 3];
        // Pairs (1,2) tied, (1,3) concordant, (2,3) concordant.
        let c = concordance_index(&t, &e, &[2.0, 2.0, 1.0], None, f64::INFINITY).unwrap();
        assert!((c - 2.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kappa_drops_stale_markers() {
        assert_eq!(last_before(&[0.0, 1.0], &[5.0, 6.0], 3.0, Some(1.5)), None);
        assert_eq!(last_before(&[0.0, 1.0], &[5.0, 6.0], 3.0, Some(2.5)), Some(6.0));
        assert_eq!(last_before(&[0.0, 1.0], &[5.0, 6.0], 1.0, None), Some(5.0));
    }
}
