use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Product-limit estimate with Greenwood variance and log-scale 95% limits.
///
/// Once the estimate reaches zero the limits collapse to zero; with no events
/// the estimate stays at one with degenerate limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaplanMeier {
    /// Distinct event times.
    pub times: Vec<f64>,
    pub n_risk: Vec<usize>,
    pub n_event: Vec<usize>,
    pub survival: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<KaplanMeier> {
    if times.len() != events.len() {
        return Err(Error::Data(format!("{} times but {} event indicators", times.len(), events.len())));
    }
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::Data("Kaplan-Meier times must be finite and nonnegative".into()));
    }
    let mut idx: Vec<usize> = (0..times.len()).collect();
    idx.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut km = KaplanMeier {
        times: Vec::new(),
        n_risk: Vec::new(),
        n_event: Vec::new(),
        survival: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
    };
    let mut at_risk = times.len();
    let (mut s, mut greenwood) = (1.0f64, 0.0f64);
    let mut k = 0;
    while k < idx.len() {
        let t = times[idx[k]];
        let mut j = k;
        let mut d = 0;
        while j < idx.len() && times[idx[j]] == t {
            d += usize::from(events[idx[j]]);
            j += 1;
        }
        if d > 0 {
            s *= 1.0 - d as f64 / at_risk as f64;
            greenwood += if d < at_risk {
                d as f64 / (at_risk as f64 * (at_risk - d) as f64)
            } else {
                f64::INFINITY
            };
            let (lo, hi) = if s > 0.0 {
                let half = Z_95 * greenwood.sqrt();
                ((s * (-half).exp()).clamp(0.0, 1.0), (s * half.exp()).min(1.0))
            } else {
                (0.0, 0.0)
            };
            km.times.push(t);
            km.n_risk.push(at_risk);
            km.n_event.push(d);
            km.survival.push(s);
            km.lower.push(lo);
            km.upper.push(hi);
        }
        at_risk -= j - k;
        k = j;
    }
    Ok(km)
}

impl KaplanMeier {
    fn step(&self, t: f64) -> Option<usize> {
        self.times.partition_point(|&e| e <= t).checked_sub(1)
    }

    pub fn survival_at(&self, t: f64) -> f64 {
        self.step(t).map_or(1.0, |k| self.survival[k])
    }

    /// (lower, upper) 95% limits for S(t).
    pub fn band_at(&self, t: f64) -> (f64, f64) {
        self.step(t).map_or((1.0, 1.0), |k| (self.lower[k], self.upper[k]))
    }

    /// Left limit S(t−).
    pub fn survival_before(&self, t: f64) -> f64 {
        self.times
            .partition_point(|&e| e < t)
            .checked_sub(1)
            .map_or(1.0, |k| self.survival[k])
    }
}
