//! Model specification and compiled design evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::spline::{with_scratch, BSplineBasis, NaturalSplineBasis, LOG_TIME_FLOOR};

/// Time structure shared by the fixed and random parts of the longitudinal design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeBasis {
    None,
    Linear,
    NaturalCubic { basis: NaturalSplineBasis },
}

impl TimeBasis {
    pub fn n_columns(&self) -> usize {
        match self {
            TimeBasis::None => 0,
            TimeBasis::Linear => 1,
            TimeBasis::NaturalCubic { basis } => basis.n_basis(),
        }
    }

    fn fill(&self, t: f64, derivative: usize, out: &mut [f64]) {
        match self {
            TimeBasis::None => {}
            TimeBasis::Linear => {
                out[0] = match derivative {
                    0 => t,
                    1 => 1.0,
                    _ => 0.0,
                }
            }
            TimeBasis::NaturalCubic { basis } => basis.eval_into(t, derivative, out),
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            TimeBasis::NaturalCubic { basis } => basis.breakpoints(),
            _ => Vec::new(),
        }
    }
}

/// Fixed effects: optional intercept, the time basis, then baseline covariates.
/// Random effects: optional intercept and optionally the same time basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalDesign {
    pub intercept: bool,
    pub time: TimeBasis,
    #[serde(default)]
    pub covariates: Vec<String>,
    pub random_intercept: bool,
    pub random_time: bool,
}

/// Feature of the longitudinal trajectory entering the hazard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionalForm {
    Value,
    Slope,
    Acceleration,
    WindowedAverage { window: f64 },
    WindowedCurvature { window: f64 },
    IntegralAverage,
}

impl FunctionalForm {
    fn validate(&self) -> Result<()> {
        match *self {
            FunctionalForm::WindowedAverage { window }
            | FunctionalForm::WindowedCurvature { window }
                if !(window.is_finite() && window > 0.0) =>
            {
                Err(Error::Config(format!("functional form window must be positive, got {window}")))
            }
            _ => Ok(()),
        }
    }
}

/// Log baseline hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineHazardSpec {
    /// `gamma_h0 = (log λ, log φ)`: h0(t) = λ φ t^(φ-1).
    Weibull,
    /// `log h0(t) = Σ_p gamma_h0[p] B_p(r(t))`.
    Spline { basis: BSplineBasis },
}

impl BaselineHazardSpec {
    pub fn n_coefficients(&self) -> usize {
        match self {
            BaselineHazardSpec::Weibull => 2,
            BaselineHazardSpec::Spline { basis } => basis.n_basis(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeTransform {
    #[default]
    Identity,
    Exp,
}

impl OutcomeTransform {
    pub fn apply(self, y: f64) -> f64 {
        match self {
            OutcomeTransform::Identity => y,
            OutcomeTransform::Exp => y.exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub longitudinal: LongitudinalDesign,
    pub functional_form: FunctionalForm,
    pub baseline_hazard: BaselineHazardSpec,
    #[serde(default)]
    pub survival_covariates: Vec<String>,
    /// Applied to the observed outcome before the model sees it.
    #[serde(default)]
    pub outcome_transform: OutcomeTransform,
}

/// Dimensions of the parameter blocks implied by a [`ModelSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dimensions {
    pub n_beta: usize,
    pub n_random: usize,
    pub n_gamma: usize,
    pub n_alpha: usize,
    pub n_gamma_h0: usize,
}

/// A [`ModelSpec`] bound to a dataset's covariate columns.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    long_cov_index: Vec<usize>,
    surv_cov_index: Vec<usize>,
    dims: Dimensions,
    time_breaks: Vec<f64>,
    hazard_breaks: Vec<f64>,
}

fn resolve(names: &[String], available: &[String], what: &str) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            available.iter().position(|a| a == n).ok_or_else(|| {
                Error::Config(format!("{what} covariate '{n}' not present in the data"))
            })
        })
        .collect()
}

impl Model {
    pub fn new(spec: ModelSpec, covariate_names: &[String]) -> Result<Self> {
        spec.functional_form.validate()?;
        let design = &spec.longitudinal;
        let n_time = design.time.n_columns();
        let n_beta = usize::from(design.intercept) + n_time + design.covariates.len();
        let n_random =
            usize::from(design.random_intercept) + if design.random_time { n_time } else { 0 };
        if n_beta == 0 {
            return Err(Error::Config("longitudinal design has no fixed-effect columns".into()));
        }
        if n_random == 0 {
            return Err(Error::Config("longitudinal design has no random effects".into()));
        }
        if design.random_intercept && !design.intercept {
            return Err(Error::Config(
                "a random intercept requires a fixed intercept in the design".into(),
            ));
        }
        let long_cov_index = resolve(&design.covariates, covariate_names, "longitudinal")?;
        let surv_cov_index = resolve(&spec.survival_covariates, covariate_names, "survival")?;
        let dims = Dimensions {
            n_beta,
            n_random,
            n_gamma: spec.survival_covariates.len(),
            n_alpha: 1,
            n_gamma_h0: spec.baseline_hazard.n_coefficients(),
        };
        let time_breaks = design.time.breakpoints();
        let mut hazard_breaks = time_breaks.clone();
        if let BaselineHazardSpec::Spline { basis } = &spec.baseline_hazard {
            hazard_breaks.extend(basis.breakpoints_time());
        }
        if let FunctionalForm::WindowedAverage { window }
        | FunctionalForm::WindowedCurvature { window } = spec.functional_form
        {
            // The window start crosses a knot at knot + window.
            hazard_breaks.extend(time_breaks.iter().map(|k| k + window));
            hazard_breaks.push(window);
        }
        hazard_breaks.sort_by(f64::total_cmp);
        hazard_breaks.dedup();
        Ok(Model {
            spec,
            long_cov_index,
            surv_cov_index,
            dims,
            time_breaks,
            hazard_breaks,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    pub fn functional_form(&self) -> FunctionalForm {
        self.spec.functional_form
    }

    /// Breakpoints of the longitudinal time basis.
    pub fn time_breakpoints(&self) -> &[f64] {
        &self.time_breaks
    }

    /// Points where the hazard may change smoothness; cumulative hazards are split here.
    pub fn hazard_breakpoints(&self) -> &[f64] {
        &self.hazard_breaks
    }

    /// Fixed-effect column carrying the same design column as each random effect.
    pub fn random_to_fixed(&self) -> Vec<usize> {
        let d = &self.spec.longitudinal;
        let first_time = usize::from(d.intercept);
        let mut map = Vec::with_capacity(self.dims.n_random);
        if d.random_intercept {
            map.push(0);
        }
        if d.random_time {
            map.extend(first_time..first_time + d.time.n_columns());
        }
        map
    }

    /// Survival covariate values `w_i` picked out of a subject's covariates.
    pub fn survival_covariates(&self, covariates: &[f64]) -> Vec<f64> {
        self.surv_cov_index.iter().map(|&j| covariates[j]).collect()
    }

    /// Writes `x(t)` and `z(t)` (or their derivatives) into the output slices.
    pub fn fill_design(&self, covariates: &[f64], t: f64, derivative: usize, x: &mut [f64], z: &mut [f64]) {
        let d = &self.spec.longitudinal;
        let n_time = d.time.n_columns();
        let mut k = 0;
        if d.intercept {
            x[0] = if derivative == 0 { 1.0 } else { 0.0 };
            k = 1;
        }
        d.time.fill(t, derivative, &mut x[k..k + n_time]);
        for (slot, &j) in x[k + n_time..].iter_mut().zip(&self.long_cov_index) {
            *slot = if derivative == 0 { covariates[j] } else { 0.0 };
        }
        let mut r = 0;
        if d.random_intercept {
            z[0] = x[0];
            r = 1;
        }
        if d.random_time {
            z[r..r + n_time].copy_from_slice(&x[k..k + n_time]);
        }
    }

    /// `(x(t), z(t))` for derivative order `derivative`.
    pub fn design(&self, covariates: &[f64], t: f64, derivative: usize) -> (Vec<f64>, Vec<f64>) {
        let mut x = vec![0.0; self.dims.n_beta];
        let mut z = vec![0.0; self.dims.n_random];
        self.fill_design(covariates, t, derivative, &mut x, &mut z);
        (x, z)
    }

    /// Rows `(x_f, z_f)` such that the functional form equals `x_f·β + z_f·b`.
    pub fn fill_form_design(&self, covariates: &[f64], t: f64, x: &mut [f64], z: &mut [f64]) {
        self.fill_form_design_with(self.spec.functional_form, covariates, t, x, z)
    }

    /// Like [`Self::fill_form_design`] for an arbitrary functional form.
    pub fn fill_form_design_with(
        &self,
        form: FunctionalForm,
        covariates: &[f64],
        t: f64,
        x: &mut [f64],
        z: &mut [f64],
    ) {
        match form {
            FunctionalForm::Value => self.fill_design(covariates, t, 0, x, z),
            FunctionalForm::Slope => self.fill_design(covariates, t, 1, x, z),
            FunctionalForm::Acceleration => self.fill_design(covariates, t, 2, x, z),
            FunctionalForm::WindowedAverage { window } => {
                self.window_average(covariates, (t - window).max(0.0), t, x, z)
            }
            FunctionalForm::IntegralAverage => self.window_average(covariates, 0.0, t, x, z),
            FunctionalForm::WindowedCurvature { window } => {
                let a = (t - window).max(0.0);
                if t - a <= 0.0 {
                    self.fill_design(covariates, t, 2, x, z);
                    return;
                }
                let (xa, za) = self.design(covariates, a, 1);
                self.fill_design(covariates, t, 1, x, z);
                let len = t - a;
                for (v, w) in x.iter_mut().zip(&xa) {
                    *v = (*v - w) / len;
                }
                for (v, w) in z.iter_mut().zip(&za) {
                    *v = (*v - w) / len;
                }
            }
        }
    }

    fn window_average(&self, covariates: &[f64], a: f64, t: f64, x: &mut [f64], z: &mut [f64]) {
        if t - a <= 0.0 {
            self.fill_design(covariates, t, 0, x, z);
            return;
        }
        x.iter_mut().for_each(|v| *v = 0.0);
        z.iter_mut().for_each(|v| *v = 0.0);
        let rule = GaussLegendre::standard();
        let len = t - a;
        with_scratch(x.len() + z.len(), |buf| {
            let (xs, zs) = buf.split_at_mut(x.len());
            for w in crate::quadrature::split_points(a, t, &self.time_breaks).windows(2) {
                for (s, wt) in rule.mapped(w[0], w[1]) {
                    self.fill_design(covariates, s, 0, xs, zs);
                    for (v, e) in x.iter_mut().zip(xs.iter()) {
                        *v += wt * e / len;
                    }
                    for (v, e) in z.iter_mut().zip(zs.iter()) {
                        *v += wt * e / len;
                    }
                }
            }
        })
    }

    /// Log baseline hazard at time `t`.
    pub fn log_baseline_hazard(&self, gamma_h0: &[f64], t: f64) -> Result<f64> {
        match &self.spec.baseline_hazard {
            BaselineHazardSpec::Weibull => {
                let (log_scale, log_shape) = (gamma_h0[0], gamma_h0[1]);
                Ok(log_scale + log_shape + (log_shape.exp() - 1.0) * t.max(LOG_TIME_FLOOR).ln())
            }
            BaselineHazardSpec::Spline { basis } => {
                with_scratch(basis.n_basis(), |b| {
                    basis.eval_into(t, 0, b)?;
                    Ok(b.iter().zip(gamma_h0).map(|(u, g)| u * g).sum())
                })
            }
        }
    }

    /// Baseline-hazard feature row at `t`: log h0(t) = row·gamma_h0 for splines.
    pub fn baseline_row(&self, t: f64, out: &mut [f64]) -> Result<()> {
        match &self.spec.baseline_hazard {
            BaselineHazardSpec::Spline { basis } => basis.eval_into(t, 0, out),
            BaselineHazardSpec::Weibull => Err(Error::Config(
                "the Weibull baseline has no linear spline representation".into(),
            )),
        }
    }
}
