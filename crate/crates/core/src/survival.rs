//! Linear predictor, hazard, cumulative hazard and event-time simulation for one subject.

use rand::Rng;
use rand_distr::Exp1;

use crate::draws::ParameterDraw;
use crate::error::{Error, Result};
use crate::model::{FunctionalForm, Model};
use crate::quadrature::{split_points, GaussLegendre};
use crate::spline::with_scratch;

/// Tolerance on simulated event times.
pub const EVENT_TIME_TOL: f64 = 1e-9;

/// Everything needed to evaluate one subject's hazard under one parameter draw.
#[derive(Debug, Clone, Copy)]
pub struct SubjectState<'a> {
    model: &'a Model,
    draw: &'a ParameterDraw,
    covariates: &'a [f64],
    b: &'a [f64],
    id: &'a str,
    /// γ·w_i
    covariate_effect: f64,
}

/// Outcome of inverse-transform sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventDraw {
    Event(f64),
    /// The cumulative hazard did not reach the drawn target before the horizon.
    CensoredAtHorizon(f64),
}

impl EventDraw {
    pub fn time(self) -> f64 {
        match self {
            EventDraw::Event(t) | EventDraw::CensoredAtHorizon(t) => t,
        }
    }

    pub fn is_event(self) -> bool {
        matches!(self, EventDraw::Event(_))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<'a> SubjectState<'a> {
    pub fn new(
        model: &'a Model,
        draw: &'a ParameterDraw,
        covariates: &'a [f64],
        b: &'a [f64],
        id: &'a str,
    ) -> Result<Self> {
        let dims = model.dims();
        if b.len() != dims.n_random {
            return Err(Error::Data(format!(
                "subject '{id}': random effects have dimension {}, model expects {}",
                b.len(),
                dims.n_random
            )));
        }
        let w = model.survival_covariates(covariates);
        Ok(SubjectState {
            model,
            draw,
            covariates,
            b,
            id,
            covariate_effect: dot(&w, &draw.gamma),
        })
    }

    pub fn id(&self) -> &str {
        self.id
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    /// η(t), η'(t) or η''(t).
    pub fn linear_predictor(&self, t: f64, derivative: usize) -> f64 {
        let dims = self.model.dims();
        with_scratch(dims.n_beta + dims.n_random, |buf| {
            let (x, z) = buf.split_at_mut(dims.n_beta);
            self.model.fill_design(self.covariates, t, derivative, x, z);
            dot(x, &self.draw.beta) + dot(z, self.b)
        })
    }

    /// Value of an arbitrary functional form at `t`, without the association coefficient.
    pub fn functional_form_value(&self, t: f64, form: FunctionalForm) -> f64 {
        let dims = self.model.dims();
        with_scratch(dims.n_beta + dims.n_random, |buf| {
            let (x, z) = buf.split_at_mut(dims.n_beta);
            self.model.fill_form_design_with(form, self.covariates, t, x, z);
            dot(x, &self.draw.beta) + dot(z, self.b)
        })
    }

    pub fn log_hazard(&self, t: f64) -> Result<f64> {
        let f = self.functional_form_value(t, self.model.functional_form());
        let lh0 = self.model.log_baseline_hazard(&self.draw.gamma_h0, t)?;
        let v = lh0 + self.covariate_effect + self.draw.alpha[0] * f;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numerical(format!(
                "subject '{}': non-finite log hazard at t = {t} (functional form {f})",
                self.id
            )))
        }
    }

    pub fn hazard(&self, t: f64) -> Result<f64> {
        self.log_hazard(t).map(f64::exp)
    }

    fn integrate_hazard(&self, a: f64, b: f64, rule: &GaussLegendre) -> Result<f64> {
        let mut total = 0.0;
        for w in split_points(a, b, self.model.hazard_breakpoints()).windows(2) {
            for (s, wt) in rule.mapped(w[0], w[1]) {
                total += wt * self.hazard(s)?;
            }
        }
        Ok(total)
    }

    /// ∫_{t0}^{t1} h(s) ds.
    pub fn cumulative_hazard(&self, t0: f64, t1: f64) -> Result<f64> {
        self.cumulative_hazard_with(t0, t1, GaussLegendre::standard())
    }

    /// Cumulative hazard using a caller-supplied quadrature rule.
    pub fn cumulative_hazard_with(&self, t0: f64, t1: f64, rule: &GaussLegendre) -> Result<f64> {
        if !(t0 >= 0.0 && t1 >= t0) {
            return Err(Error::Domain(format!(
                "cumulative hazard needs 0 <= t0 <= t1, got ({t0}, {t1})"
            )));
        }
        if t1 == t0 {
            return Ok(0.0);
        }
        self.integrate_hazard(t0, t1, rule)
    }

    /// P(T <= t | T > t_L).
    pub fn conditional_event_cdf(&self, t_l: f64, t: f64) -> Result<f64> {
        if t < t_l {
            return Err(Error::Domain(format!("conditional CDF needs t >= t_L, got {t} < {t_l}")));
        }
        Ok(-(-self.cumulative_hazard(t_l, t)?).exp_m1())
    }

    /// Solves H(t_L, T) = target for T, or reports censoring at `horizon`.
    pub fn event_time_for_target(&self, t_l: f64, horizon: f64, target: f64) -> Result<EventDraw> {
        if !(horizon > t_l) {
            return Err(Error::Domain(format!("horizon {horizon} must exceed t_L = {t_l}")));
        }
        let rule = GaussLegendre::standard();
        let mut acc = 0.0;
        for w in split_points(t_l, horizon, self.model.hazard_breakpoints()).windows(2) {
            let (a, b) = (w[0], w[1]);
            let piece = self.integrate_hazard(a, b, rule)?;
            if acc + piece >= target {
                return self.solve_in(a, b, target - acc, piece).map(EventDraw::Event);
            }
            acc += piece;
        }
        Ok(EventDraw::CensoredAtHorizon(horizon))
    }

    /// Root of H(a, t) = need on [a, b] with H(a, b) = total >= need.
    fn solve_in(&self, a: f64, b: f64, need: f64, total: f64) -> Result<f64> {
        let rule = GaussLegendre::standard();
        let (mut lo, mut hi) = (a, b);
        let mut t = if total > 0.0 { a + (b - a) * (need / total) } else { 0.5 * (a + b) };
        // H(a, t) - need, updated by integrating only between successive iterates.
        let mut g = self.integrate_hazard(a, t, rule)? - need;
        for _ in 0..200 {
            if g > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let h = self.hazard(t)?;
            let mut next = t - g / h;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            let step = (next - t).abs();
            g += if next > t {
                self.integrate_hazard(t, next, rule)?
            } else {
                -self.integrate_hazard(next, t, rule)?
            };
            t = next;
            if step < 0.1 * EVENT_TIME_TOL || hi - lo < EVENT_TIME_TOL {
                return Ok(t);
            }
        }
        Err(Error::Numerical(format!(
            "subject '{}': event-time root finding did not converge on [{a}, {b}]",
            self.id
        )))
    }

    /// Inverse-transform draw of an event time after `t_l`.
    pub fn simulate_event_time<R: Rng + ?Sized>(
        &self,
        t_l: f64,
        horizon: f64,
        rng: &mut R,
    ) -> Result<EventDraw> {
        let e: f64 = rng.sample(Exp1);
        self.event_time_for_target(t_l, horizon, e)
    }
}
