//! Simulation scenario: a natural-spline mixed model for the marker with a
//! Weibull relative-risk model for the event, and the four analysis models
//! fitted to it.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{JointDataset, SubjectRecord};
use crate::draws::ParameterDraw;
use crate::error::{Error, Result};
use crate::model::{
    BaselineHazardSpec, FunctionalForm, LongitudinalDesign, Model, ModelSpec, OutcomeTransform,
    TimeBasis,
};
use crate::ranef::PriorSampler;
use crate::rng::stream_rng;
use crate::spline::{BSplineBasis, NaturalSplineBasis, TimeTransform};
use crate::survival::{EventDraw, SubjectState};

pub const SCHEMA_VERSION: u32 = 1;

/// Name of the treatment covariate in generated data.
pub const TREATMENT: &str = "treat";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub n_subjects: usize,
    pub beta: Vec<f64>,
    pub sigma: f64,
    /// Random-effects covariance, one inner vector per row.
    pub d: Vec<Vec<f64>>,
    pub internal_knots: Vec<f64>,
    pub boundary_knots: (f64, f64),
    /// Visits after the baseline visit at time 0, uniform on (0, visit_window).
    pub n_random_visits: usize,
    pub visit_window: f64,
    pub weibull_shape: f64,
    pub gamma0: f64,
    pub gamma_treat: f64,
    pub alpha: f64,
    pub treat_probability: f64,
    pub censoring_time: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            n_subjects: 300,
            beta: vec![1.75, 0.033, -5.84, -0.182],
            sigma: 0.126,
            d: vec![
                vec![1.3343607, 0.17546590, 0.27199009, 0.28257378],
                vec![0.1754659, 0.09889257, 0.05086370, -0.01836841],
                vec![0.2719901, 0.05086370, 1.56264217, 0.05125092],
                vec![0.2825738, -0.01836841, 0.05125092, 0.10579131],
            ],
            internal_knots: vec![5.0, 10.0],
            boundary_knots: (0.0, 25.0),
            n_random_visits: 14,
            visit_window: 25.0,
            weibull_shape: 6.325,
            gamma0: -20.0,
            gamma_treat: -0.85,
            alpha: 0.145,
            treat_probability: 0.5,
            censoring_time: 25.0,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("scenario field '{field}': {why}")));
        if self.schema_version != SCHEMA_VERSION {
            return bad("schema_version", &format!("expected {SCHEMA_VERSION}, got {}", self.schema_version));
        }
        if self.n_subjects == 0 {
            return bad("n_subjects", "must be positive");
        }
        let q = self.internal_knots.len() + 2;
        if self.beta.len() != q {
            return bad("beta", &format!("needs {q} entries (intercept plus spline columns)"));
        }
        if self.d.len() != q || self.d.iter().any(|r| r.len() != q) {
            return bad("d", &format!("must be a {q} x {q} matrix"));
        }
        for i in 0..q {
            for j in 0..i {
                let (a, b) = (self.d[i][j], self.d[j][i]);
                if (a - b).abs() > 1e-6 * (1.0 + a.abs()) {
                    return bad("d", "must be symmetric");
                }
            }
        }
        if !(self.sigma > 0.0) {
            return bad("sigma", "must be positive");
        }
        if !(self.visit_window > 0.0 && self.visit_window <= self.censoring_time) {
            return bad("visit_window", "must lie in (0, censoring_time]");
        }
        if !(self.weibull_shape > 0.0) {
            return bad("weibull_shape", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.treat_probability) {
            return bad("treat_probability", "must lie in [0, 1]");
        }
        if !(self.censoring_time > 0.0) {
            return bad("censoring_time", "must be positive");
        }
        NaturalSplineBasis::new(self.internal_knots.clone(), self.boundary_knots)
            .map_err(|e| Error::Config(format!("scenario field 'internal_knots': {e}")))?;
        self.true_draw().d_cholesky(0).map_err(|_| {
            Error::Config("scenario field 'd': not positive definite".into())
        })?;
        Ok(())
    }

    fn natural_spline(&self) -> NaturalSplineBasis {
        NaturalSplineBasis::new(self.internal_knots.clone(), self.boundary_knots)
            .expect("validated knots")
    }

    /// The data-generating model.
    pub fn generating_spec(&self) -> ModelSpec {
        ModelSpec {
            longitudinal: LongitudinalDesign {
                intercept: true,
                time: TimeBasis::NaturalCubic {
                    basis: self.natural_spline(),
                },
                covariates: vec![],
                random_intercept: true,
                random_time: true,
            },
            functional_form: FunctionalForm::Value,
            baseline_hazard: BaselineHazardSpec::Weibull,
            survival_covariates: vec![TREATMENT.into()],
            outcome_transform: OutcomeTransform::Identity,
        }
    }

    /// True parameters in the layout of [`Self::generating_spec`]. The covariance
    /// is symmetrized from its upper triangle.
    pub fn true_draw(&self) -> ParameterDraw {
        let q = self.d.len();
        let d = (0..q * q)
            .map(|k| {
                let (i, j) = (k / q, k % q);
                if i <= j { self.d[i][j] } else { self.d[j][i] }
            })
            .collect();
        ParameterDraw {
            beta: self.beta.clone(),
            sigma: self.sigma,
            gamma: vec![self.gamma_treat],
            alpha: vec![self.alpha],
            gamma_h0: vec![self.gamma0, self.weibull_shape.ln()],
            d,
            tau: None,
        }
    }
}

/// Simulates one dataset; subjects draw from independent seeded streams.
pub fn generate_scenario_dataset(config: &ScenarioConfig, seed: u64) -> Result<JointDataset> {
    config.validate()?;
    let names = vec![TREATMENT.to_string()];
    let model = Model::new(config.generating_spec(), &names)?;
    let truth = config.true_draw();
    let prior = PriorSampler::new(&truth, 0)?;
    let noise = Normal::new(0.0, config.sigma).map_err(|e| Error::Config(e.to_string()))?;
    let subjects = (0..config.n_subjects)
        .map(|i| {
            let mut rng = stream_rng(seed, &[i as u64]);
            let b = prior.sample(&mut rng);
            let treat = f64::from(u8::from(rng.random::<f64>() < config.treat_probability));
            let mut times: Vec<f64> = std::iter::once(0.0)
                .chain((0..config.n_random_visits).map(|_| rng.random::<f64>() * config.visit_window))
                .collect();
            times.sort_by(f64::total_cmp);
            let covariates = vec![treat];
            let id = format!("{}", i + 1);
            let state = SubjectState::new(&model, &truth, &covariates, &b, &id)?;
            let (event_time, event) = match state.simulate_event_time(0.0, config.censoring_time, &mut rng)? {
                EventDraw::Event(t) => (t, true),
                EventDraw::CensoredAtHorizon(t) => (t, false),
            };
            let mut values = Vec::with_capacity(times.len());
            for &t in &times {
                values.push(state.linear_predictor(t, 0) + noise.sample(&mut rng));
            }
            let keep = times.iter().take_while(|&&t| t < event_time).count();
            times.truncate(keep);
            values.truncate(keep);
            Ok(SubjectRecord {
                id,
                times,
                values,
                event_time,
                event,
                covariates,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    JointDataset::new(names, subjects)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisModelKind {
    TrueModel,
    LinearTrend,
    ExpOutcome,
    SlopeForm,
}

impl AnalysisModelKind {
    pub const ALL: [AnalysisModelKind; 4] = [
        AnalysisModelKind::TrueModel,
        AnalysisModelKind::LinearTrend,
        AnalysisModelKind::ExpOutcome,
        AnalysisModelKind::SlopeForm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnalysisModelKind::TrueModel => "true_model",
            AnalysisModelKind::LinearTrend => "linear_trend",
            AnalysisModelKind::ExpOutcome => "exp_outcome",
            AnalysisModelKind::SlopeForm => "slope_form",
        }
    }
}

impl fmt::Display for AnalysisModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnalysisModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AnalysisModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown analysis model '{s}'")))
    }
}

/// Number of baseline-hazard basis functions used by the analysis models.
pub const BASELINE_BASIS_SIZE: usize = 9;

pub use crate::replicate::HORIZON_FACTOR;

/// Cubic B-spline baseline with interior knots at quantiles of the observed
/// event times and support from 0 to the simulation horizon.
pub fn default_baseline(data: &JointDataset) -> Result<BaselineHazardSpec> {
    let events: Vec<f64> = data
        .subjects()
        .iter()
        .filter(|s| s.event)
        .map(|s| s.event_time)
        .collect();
    let horizon = HORIZON_FACTOR * data.max_time();
    let basis = BSplineBasis::from_quantiles(
        &events,
        BASELINE_BASIS_SIZE,
        3,
        (0.0, horizon),
        TimeTransform::Identity,
    )?;
    Ok(BaselineHazardSpec::Spline { basis })
}

/// Specification of one of the four analysis models for `data`.
pub fn analysis_model_spec(
    kind: AnalysisModelKind,
    config: &ScenarioConfig,
    data: &JointDataset,
) -> Result<ModelSpec> {
    let mut spec = config.generating_spec();
    spec.baseline_hazard = default_baseline(data)?;
    match kind {
        AnalysisModelKind::TrueModel => {}
        AnalysisModelKind::LinearTrend => spec.longitudinal.time = TimeBasis::Linear,
        AnalysisModelKind::ExpOutcome => spec.outcome_transform = OutcomeTransform::Exp,
        AnalysisModelKind::SlopeForm => spec.functional_form = FunctionalForm::Slope,
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ScenarioConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_field_is_named() {
        let err = ScenarioConfig::from_json(r#"{"schema_version":1,"n_subject":3}"#).unwrap_err();
        assert!(err.to_string().contains("n_subject"), "{err}");
        let err = ScenarioConfig::from_json(r#"{"schema_version":2}"#).unwrap_err();
        assert!(err.to_string().contains("schema_version"), "{err}");
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = ScenarioConfig {
            n_subjects: 20,
            ..ScenarioConfig::default()
        };
        let a = generate_scenario_dataset(&cfg, 11).unwrap();
        let b = generate_scenario_dataset(&cfg, 11).unwrap();
        assert_eq!(a.subjects(), b.subjects());
        let c = generate_scenario_dataset(&cfg, 12).unwrap();
        assert_ne!(a.subjects(), c.subjects());
    }

    #[test]
    fn vanishing_hazard_censors_everyone() {
        let cfg = ScenarioConfig {
            n_subjects: 25,
            gamma0: -1e3,
            ..ScenarioConfig::default()
        };
        let data = generate_scenario_dataset(&cfg, 3).unwrap();
        for s in data.subjects() {
            assert!(!s.event);
            assert_eq!(s.event_time, 25.0);
            assert_eq!(s.n_measurements(), 15);
        }
    }

    #[test]
    fn analysis_specs() {
        let cfg = ScenarioConfig {
            n_subjects: 60,
            ..ScenarioConfig::default()
        };
        let data = generate_scenario_dataset(&cfg, 5).unwrap();
        let names = data.covariate_names();
        let lin = analysis_model_spec(AnalysisModelKind::LinearTrend, &cfg, &data).unwrap();
        assert_eq!(Model::new(lin, names).unwrap().dims().n_random, 2);
        let tru = analysis_model_spec(AnalysisModelKind::TrueModel, &cfg, &data).unwrap();
        let m = Model::new(tru, names).unwrap();
        assert_eq!(m.dims().n_random, 4);
        assert_eq!(m.dims().n_gamma_h0, BASELINE_BASIS_SIZE);
        let exp = analysis_model_spec(AnalysisModelKind::ExpOutcome, &cfg, &data).unwrap();
        assert_eq!(exp.outcome_transform, OutcomeTransform::Exp);
        let slope = analysis_model_spec(AnalysisModelKind::SlopeForm, &cfg, &data).unwrap();
        assert_eq!(slope.functional_form, FunctionalForm::Slope);
        assert_eq!("slope_form".parse::<AnalysisModelKind>().unwrap(), AnalysisModelKind::SlopeForm);
    }
}
