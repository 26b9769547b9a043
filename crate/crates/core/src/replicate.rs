//! Replicated datasets under the four checking regimes.
//!
//! Every replicate/subject pair draws from its own random stream, so results
//! do not depend on the number of worker threads. Replicates are generated on
//! the model scale (after the outcome transform), and each [`ReplicatedData`]
//! carries the observed data restricted to the same subjects and time window
//! so that statistics compare like with like.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{write_file, FoldAssignment, JointDataset, SubjectRecord};
use crate::draws::PosteriorDraws;
use crate::error::{Error, Result};
use crate::fitter::{fit_joint_model, model_scale_data, McmcConfig, PriorConfig};
use crate::format::g17;
use crate::model::{BaselineHazardSpec, Model, ModelSpec};
use crate::ranef::{mh_sample_conditional, ConditionalTarget, MhConfig, PriorSampler};
use crate::rng::{derive_seed, stream_rng, SimRng};
use crate::survival::{EventDraw, SubjectState};

/// Replicated event times are simulated up to this multiple of the largest
/// observed time; later events are recorded as censored at the horizon.
pub const HORIZON_FACTOR: f64 = 1.5;

pub const DEFAULT_REPLICATES: usize = 50;

/// How the random effects of held-out subjects are drawn in cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvRegime {
    PosteriorPrior,
    /// Conditional on all of the subject's data, with the landmark at its
    /// observed time and its observed event indicator.
    DynamicAtObserved,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    PosteriorPosterior,
    PosteriorPrior,
    Dynamic { landmark: f64 },
    CrossValidated { inner: CvRegime, folds: usize },
}

impl Regime {
    pub fn landmark(&self) -> Option<f64> {
        match self {
            Regime::Dynamic { landmark } => Some(*landmark),
            _ => None,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::PosteriorPosterior => write!(f, "pp"),
            Regime::PosteriorPrior => write!(f, "prior"),
            Regime::Dynamic { landmark } => write!(f, "dynamic:{landmark}"),
            Regime::CrossValidated { inner: CvRegime::PosteriorPrior, folds } => write!(f, "cv:{folds}"),
            Regime::CrossValidated { inner: CvRegime::DynamicAtObserved, folds } => {
                write!(f, "cv:{folds}:dynamic")
            }
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    /// Accepts `pp`, `prior`, `dynamic:<t_L>`, `cv:<V>` and `cv:<V>:dynamic`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown regime '{s}' (expected pp, prior, dynamic:<t>, cv:<V>[:dynamic])"));
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["pp"] => Ok(Regime::PosteriorPosterior),
            ["prior"] => Ok(Regime::PosteriorPrior),
            ["dynamic", t] => {
                let landmark: f64 = t.parse().map_err(|_| bad())?;
                if !(landmark.is_finite() && landmark >= 0.0) {
                    return Err(Error::Config(format!("landmark must be nonnegative, got {t}")));
                }
                Ok(Regime::Dynamic { landmark })
            }
            ["cv", v] | ["cv", v, "prior"] => Ok(Regime::CrossValidated {
                inner: CvRegime::PosteriorPrior,
                folds: v.parse().map_err(|_| bad())?,
            }),
            ["cv", v, "dynamic"] => Ok(Regime::CrossValidated {
                inner: CvRegime::DynamicAtObserved,
                folds: v.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Longitudinal rows and (possibly censored) event time of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectOutcome {
    pub id: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub event_time: f64,
    /// False for observed censoring and for replicated times cut at the horizon.
    pub event: bool,
}

/// The outcome data of one (observed or replicated) dataset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutcomeSet {
    pub subjects: Vec<SubjectOutcome>,
}

impl OutcomeSet {
    pub fn from_dataset(data: &JointDataset) -> Self {
        OutcomeSet {
            subjects: data.subjects().iter().map(outcome_of).collect(),
        }
    }

    pub fn n_measurements(&self) -> usize {
        self.subjects.iter().map(|s| s.times.len()).sum()
    }

    /// All (time, value) pairs pooled over subjects.
    pub fn pooled(&self) -> (Vec<f64>, Vec<f64>) {
        let t = self.subjects.iter().flat_map(|s| s.times.iter().copied()).collect();
        let y = self.subjects.iter().flat_map(|s| s.values.iter().copied()).collect();
        (t, y)
    }

    pub fn event_times(&self) -> (Vec<f64>, Vec<bool>) {
        self.subjects.iter().map(|s| (s.event_time, s.event)).unzip()
    }
}

fn outcome_of(s: &SubjectRecord) -> SubjectOutcome {
    SubjectOutcome {
        id: s.id.clone(),
        times: s.times.clone(),
        values: s.values.clone(),
        event_time: s.event_time,
        event: s.event,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    /// 0-based replicate number.
    pub index: usize,
    /// Seed of the replicate's random streams.
    pub seed: u64,
    /// Parameter draw used (within each fold's sample under cross-validation).
    pub draw_index: usize,
    pub data: OutcomeSet,
}

/// Cross-validation bookkeeping: fold of each subject and each fold's training ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvProvenance {
    pub subject_folds: Vec<usize>,
    pub training_ids: Vec<Vec<String>>,
    /// Landmark of each subject (its observed time) in the dynamic variant.
    #[serde(default)]
    pub subject_landmarks: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicatedData {
    pub regime: Regime,
    pub seed: u64,
    pub horizon: f64,
    /// Observed counterpart on the model scale, same subjects and window.
    pub observed: OutcomeSet,
    pub replicates: Vec<Replicate>,
    #[serde(default)]
    pub cv: Option<CvProvenance>,
}

impl ReplicatedData {
    pub fn n_replicates(&self) -> usize {
        self.replicates.len()
    }
}

/// Default Metropolis-Hastings settings for drawing one random-effects value
/// per replicate: a short adapted chain whose final state is kept.
pub fn replication_mh_config() -> MhConfig {
    MhConfig {
        n_iterations: 300,
        burn_in: 200,
        thinning: 100,
        ..MhConfig::default()
    }
}

/// Shared setup: model, data on the model scale, validated draws and horizon.
struct Setup {
    model: Model,
    scaled: JointDataset,
    horizon: f64,
}

impl Setup {
    fn new(data: &JointDataset, spec: &ModelSpec) -> Result<Self> {
        let scaled = model_scale_data(data, spec)?;
        let model = Model::new(spec.clone(), scaled.covariate_names())?;
        let mut horizon = HORIZON_FACTOR * scaled.max_time();
        if let BaselineHazardSpec::Spline { basis } = &spec.baseline_hazard {
            let upper = *basis.breakpoints_time().last().expect("basis has a boundary");
            horizon = horizon.min(upper);
        }
        if !(horizon > 0.0) {
            return Err(Error::Data("simulation horizon must be positive (all times are zero)".into()));
        }
        Ok(Setup { model, scaled, horizon })
    }
}

fn check_count(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::Config("number of replicates must be at least 1".into()));
    }
    Ok(())
}

fn check_draws(draws: &PosteriorDraws, model: &Model) -> Result<()> {
    draws.validate(&model.dims())
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// y at `times` from N(η, σ²) for one subject.
fn simulate_values(state: &SubjectState<'_>, sigma: f64, times: &[f64], rng: &mut SimRng) -> Vec<f64> {
    times
        .iter()
        .map(|&t| state.linear_predictor(t, 0) + sigma * gaussian(rng))
        .collect()
}

fn outcome_from(id: &str, times: Vec<f64>, values: Vec<f64>, event: EventDraw) -> SubjectOutcome {
    SubjectOutcome {
        id: id.to_string(),
        times,
        values,
        event_time: event.time(),
        event: event.is_event(),
    }
}

fn replicate_seed(seed: u64, m: usize) -> u64 {
    derive_seed(seed, &[0x5EED, m as u64])
}

/// Runs `per_subject` for every replicate and subject position in parallel.
fn generate<F>(seed: u64, m: usize, n_draws: usize, positions: &[usize], per_subject: F) -> Result<Vec<Replicate>>
where
    F: Fn(usize, usize, &mut SimRng) -> Result<SubjectOutcome> + Sync,
{
    (0..m)
        .into_par_iter()
        .map(|r| {
            let rseed = replicate_seed(seed, r);
            let draw_index = r % n_draws;
            let subjects = positions
                .iter()
                .map(|&i| per_subject(draw_index, i, &mut stream_rng(rseed, &[i as u64])))
                .collect::<Result<Vec<_>>>()?;
            Ok(Replicate {
                index: r,
                seed: rseed,
                draw_index,
                data: OutcomeSet { subjects },
            })
        })
        .collect()
}

/// Replicates for the fitted subjects using their posterior random effects.
///
/// Draw `m mod S` (S thinned draws) supplies both θ and b_i for replicate m.
/// y_rep is simulated at the observed visit times and T*_rep independently of it.
pub fn replicate_posterior_posterior(
    data: &JointDataset,
    spec: &ModelSpec,
    draws: &PosteriorDraws,
    m: usize,
    seed: u64,
) -> Result<ReplicatedData> {
    check_count(m)?;
    let setup = Setup::new(data, spec)?;
    check_draws(draws, &setup.model)?;
    let ranef = draws.random_effects.as_ref().ok_or_else(|| {
        Error::Config(
            "posterior-posterior replication needs random-effects draws; use the prior or dynamic regime".into(),
        )
    })?;
    let subjects = setup.scaled.subjects();
    let ranef_pos = subjects
        .iter()
        .map(|s| {
            ranef.subject_position(&s.id).ok_or_else(|| {
                Error::Data(format!("subject '{}' has no random-effects draws", s.id))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let positions: Vec<usize> = (0..subjects.len()).collect();
    let replicates = generate(seed, m, draws.n_draws(), &positions, |d, i, rng| {
        let s = &subjects[i];
        let draw = &draws.draws[d];
        let b = &ranef.values[d][ranef_pos[i]];
        let state = SubjectState::new(&setup.model, draw, &s.covariates, b, &s.id)?;
        let values = simulate_values(&state, draw.sigma, &s.times, rng);
        let event = state.simulate_event_time(0.0, setup.horizon, rng)?;
        Ok(outcome_from(&s.id, s.times.clone(), values, event))
    })?;
    Ok(ReplicatedData {
        regime: Regime::PosteriorPosterior,
        seed,
        horizon: setup.horizon,
        observed: OutcomeSet::from_dataset(&setup.scaled),
        replicates,
        cv: None,
    })
}

/// New-subject replication: b_i from N(0, D); longitudinal rows after the
/// replicated event time are dropped (informative dropout).
fn prior_subject(
    model: &Model,
    draws: &PosteriorDraws,
    d: usize,
    s: &SubjectRecord,
    horizon: f64,
    rng: &mut SimRng,
) -> Result<SubjectOutcome> {
    let draw = &draws.draws[d];
    let b = PriorSampler::new(draw, d)?.sample(rng);
    let state = SubjectState::new(model, draw, &s.covariates, &b, &s.id)?;
    let event = state.simulate_event_time(0.0, horizon, rng)?;
    let keep = if event.is_event() {
        s.times.partition_point(|&t| t < event.time())
    } else {
        s.times.len()
    };
    let times = s.times[..keep].to_vec();
    let values = simulate_values(&state, draw.sigma, &times, rng);
    Ok(outcome_from(&s.id, times, values, event))
}

pub fn replicate_posterior_prior(
    data: &JointDataset,
    spec: &ModelSpec,
    draws: &PosteriorDraws,
    m: usize,
    seed: u64,
) -> Result<ReplicatedData> {
    check_count(m)?;
    let setup = Setup::new(data, spec)?;
    check_draws(draws, &setup.model)?;
    let subjects = setup.scaled.subjects();
    let positions: Vec<usize> = (0..subjects.len()).collect();
    let replicates = generate(seed, m, draws.n_draws(), &positions, |d, i, rng| {
        prior_subject(&setup.model, draws, d, &subjects[i], setup.horizon, rng)
    })?;
    Ok(ReplicatedData {
        regime: Regime::PosteriorPrior,
        seed,
        horizon: setup.horizon,
        observed: OutcomeSet::from_dataset(&setup.scaled),
        replicates,
        cv: None,
    })
}

/// One random-effects value from the conditional given the data up to `t_l`;
/// the final state of a short chain.
#[allow(clippy::too_many_arguments)]
fn conditional_b(
    model: &Model,
    draws: &PosteriorDraws,
    d: usize,
    s: &SubjectRecord,
    t_l: f64,
    event: bool,
    mh: &MhConfig,
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    let target = ConditionalTarget::new(model, &draws.draws[d], d, &s.truncated_at(t_l), t_l, event)?;
    let out = mh_sample_conditional(&target, mh, rng)
        .map_err(|e| Error::Sampler(format!("subject '{}': {e}", s.id)))?;
    out.draws
        .last()
        .cloned()
        .ok_or_else(|| Error::Config("MH configuration keeps no draws".into()))
}

/// Replicates after the landmark for the subjects still at risk at `t_l`.
///
/// b_i is drawn given the measurements up to `t_l` and survival past it;
/// y_rep is simulated at the observed times in (t_l, T_i] and T*_rep from the
/// event-time distribution conditional on T* > t_l.
pub fn replicate_dynamic(
    data: &JointDataset,
    spec: &ModelSpec,
    draws: &PosteriorDraws,
    t_l: f64,
    m: usize,
    mh: &MhConfig,
    seed: u64,
) -> Result<ReplicatedData> {
    check_count(m)?;
    mh.validate()?;
    if !(t_l.is_finite() && t_l >= 0.0) {
        return Err(Error::Config(format!("landmark must be finite and nonnegative, got {t_l}")));
    }
    let setup = Setup::new(data, spec)?;
    check_draws(draws, &setup.model)?;
    let subjects = setup.scaled.subjects();
    let at_risk: Vec<usize> = (0..subjects.len()).filter(|&i| subjects[i].event_time > t_l).collect();
    if at_risk.is_empty() {
        return Err(Error::Data(format!("no subject is at risk at the landmark {t_l}")));
    }
    if t_l >= setup.horizon {
        return Err(Error::Config(format!("landmark {t_l} is beyond the simulation horizon {}", setup.horizon)));
    }
    let after = |s: &SubjectRecord| -> (Vec<f64>, Vec<f64>) {
        let from = s.times.partition_point(|&t| t <= t_l);
        (s.times[from..].to_vec(), s.values[from..].to_vec())
    };
    let replicates = generate(seed, m, draws.n_draws(), &at_risk, |d, i, rng| {
        let s = &subjects[i];
        let draw = &draws.draws[d];
        let b = conditional_b(&setup.model, draws, d, s, t_l, false, mh, rng)?;
        let state = SubjectState::new(&setup.model, draw, &s.covariates, &b, &s.id)?;
        let (times, _) = after(s);
        let values = simulate_values(&state, draw.sigma, &times, rng);
        let event = state.simulate_event_time(t_l, setup.horizon, rng)?;
        Ok(outcome_from(&s.id, times, values, event))
    })?;
    let observed = OutcomeSet {
        subjects: at_risk
            .iter()
            .map(|&i| {
                let s = &subjects[i];
                let (times, values) = after(s);
                SubjectOutcome {
                    times,
                    values,
                    ..outcome_of(s)
                }
            })
            .collect(),
    };
    Ok(ReplicatedData {
        regime: Regime::Dynamic { landmark: t_l },
        seed,
        horizon: setup.horizon,
        observed,
        replicates,
        cv: None,
    })
}

/// Cross-validated replicates: the model is refitted without each fold and the
/// held-out subjects are replicated from that fit; results are pooled in the
/// original subject order.
#[allow(clippy::too_many_arguments)]
pub fn replicate_cross_validated(
    data: &JointDataset,
    spec: &ModelSpec,
    priors: &PriorConfig,
    mcmc: &McmcConfig,
    folds: &FoldAssignment,
    inner: CvRegime,
    m: usize,
    mh: &MhConfig,
    seed: u64,
) -> Result<ReplicatedData> {
    check_count(m)?;
    mh.validate()?;
    if folds.n_folds < 2 {
        return Err(Error::Config(format!("cross-validation needs at least 2 folds, got {}", folds.n_folds)));
    }
    let setup = Setup::new(data, spec)?;
    let subjects = setup.scaled.subjects();
    let subject_folds = subjects
        .iter()
        .map(|s| {
            folds
                .fold_of(&s.id)
                .filter(|&v| v < folds.n_folds)
                .ok_or_else(|| Error::Data(format!("subject '{}' has no fold", s.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let fits = (0..folds.n_folds)
        .into_par_iter()
        .map(|v| {
            let training = folds.training(data, v);
            if training.is_empty() {
                return Err(Error::Data(format!("fold {v}: empty training set")));
            }
            let cfg = McmcConfig {
                seed: derive_seed(mcmc.seed, &[0xCF, v as u64]),
                ..*mcmc
            };
            let train = data.subset(&training);
            let draws = fit_joint_model(&train, spec, priors, &cfg)
                .map_err(|e| Error::Sampler(format!("fold {v}: {e}")))?;
            let ids = train.subjects().iter().map(|s| s.id.clone()).collect::<Vec<_>>();
            Ok((draws, ids))
        })
        .collect::<Result<Vec<_>>>()?;
    let positions: Vec<usize> = (0..subjects.len()).collect();
    // Every fold sample has the same length, so the draw index is shared.
    let n_draws = fits.iter().map(|(d, _)| d.n_draws()).min().unwrap_or(1);
    let replicates = generate(seed, m, n_draws, &positions, |d, i, rng| {
        let s = &subjects[i];
        let draws = &fits[subject_folds[i]].0;
        match inner {
            CvRegime::PosteriorPrior => prior_subject(&setup.model, draws, d, s, setup.horizon, rng),
            CvRegime::DynamicAtObserved => {
                let draw = &draws.draws[d];
                let b = conditional_b(&setup.model, draws, d, s, s.event_time, s.event, mh, rng)?;
                let state = SubjectState::new(&setup.model, draw, &s.covariates, &b, &s.id)?;
                let values = simulate_values(&state, draw.sigma, &s.times, rng);
                let event = state.simulate_event_time(0.0, setup.horizon, rng)?;
                Ok(outcome_from(&s.id, s.times.clone(), values, event))
            }
        }
    })?;
    let subject_landmarks =
        (inner == CvRegime::DynamicAtObserved).then(|| subjects.iter().map(|s| s.event_time).collect());
    Ok(ReplicatedData {
        regime: Regime::CrossValidated { inner, folds: folds.n_folds },
        seed,
        horizon: setup.horizon,
        observed: OutcomeSet::from_dataset(&setup.scaled),
        replicates,
        cv: Some(CvProvenance {
            subject_folds,
            training_ids: fits.into_iter().map(|(_, ids)| ids).collect(),
            subject_landmarks,
        }),
    })
}

const MANIFEST: &str = "manifest.json";
const OBSERVED_FILE: &str = "observed.csv";

fn replicate_file(index: usize) -> String {
    format!("replicate_{:04}.csv", index + 1)
}

/// Long format: one `y` row per measurement and one `event` or `censored` row per subject.
fn outcome_csv(set: &OutcomeSet) -> String {
    let mut out = String::from("id,row_type,time,value\n");
    for s in &set.subjects {
        let id = crate::data::csv_field(&s.id);
        for (t, y) in s.times.iter().zip(&s.values) {
            out.push_str(&format!("{id},y,{},{}\n", g17(*t), g17(*y)));
        }
        let kind = if s.event { "event" } else { "censored" };
        out.push_str(&format!("{id},{kind},{},{}\n", g17(s.event_time), u8::from(s.event)));
    }
    out
}

fn parse_outcome_csv(path: &Path) -> Result<OutcomeSet> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut subjects: Vec<SubjectOutcome> = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let field = |k: usize| row.get(k).unwrap_or("");
        let number = |k: usize| -> Result<f64> {
            field(k).parse().map_err(|_| {
                Error::Data(format!("{}: row {}: invalid number '{}'", path.display(), line + 2, field(k)))
            })
        };
        let id = field(0);
        if subjects.last().is_none_or(|s| s.id != id) {
            subjects.push(SubjectOutcome {
                id: id.to_string(),
                times: Vec::new(),
                values: Vec::new(),
                event_time: f64::NAN,
                event: false,
            });
        }
        let s = subjects.last_mut().expect("just pushed");
        match field(1) {
            "y" => {
                s.times.push(number(2)?);
                s.values.push(number(3)?);
            }
            kind @ ("event" | "censored") => {
                s.event_time = number(2)?;
                s.event = kind == "event";
            }
            other => {
                return Err(Error::Data(format!(
                    "{}: row {}: unknown row type '{other}'",
                    path.display(),
                    line + 2
                )))
            }
        }
    }
    if let Some(s) = subjects.iter().find(|s| s.event_time.is_nan()) {
        return Err(Error::Data(format!("{}: subject '{}' has no event row", path.display(), s.id)));
    }
    Ok(OutcomeSet { subjects })
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    index: usize,
    seed: u64,
    draw_index: usize,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    regime: Regime,
    regime_label: String,
    seed: u64,
    horizon: f64,
    landmark: Option<f64>,
    observed_file: String,
    replicates: Vec<ManifestEntry>,
    cv: Option<CvProvenance>,
}

impl ReplicatedData {
    /// Writes one CSV per replicate, the observed counterpart and `manifest.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join(OBSERVED_FILE), &outcome_csv(&self.observed))?;
        for r in &self.replicates {
            write_file(&dir.join(replicate_file(r.index)), &outcome_csv(&r.data))?;
        }
        let manifest = Manifest {
            regime: self.regime,
            regime_label: self.regime.to_string(),
            seed: self.seed,
            horizon: self.horizon,
            landmark: self.regime.landmark(),
            observed_file: OBSERVED_FILE.into(),
            replicates: self
                .replicates
                .iter()
                .map(|r| ManifestEntry {
                    index: r.index,
                    seed: r.seed,
                    draw_index: r.draw_index,
                    file: replicate_file(r.index),
                })
                .collect(),
            cv: self.cv.clone(),
        };
        write_file(&dir.join(MANIFEST), &(serde_json::to_string_pretty(&manifest)? + "\n"))
    }
}

pub fn load_replicated_data(dir: &Path) -> Result<ReplicatedData> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let observed = parse_outcome_csv(&dir.join(&manifest.observed_file))?;
    let replicates = manifest
        .replicates
        .iter()
        .map(|e| {
            Ok(Replicate {
                index: e.index,
                seed: e.seed,
                draw_index: e.draw_index,
                data: parse_outcome_csv(&dir.join(&e.file))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicatedData {
        regime: manifest.regime,
        seed: manifest.seed,
        horizon: manifest.horizon,
        observed,
        replicates,
        cv: manifest.cv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regime_labels_round_trip() {
        for s in ["pp", "prior", "dynamic:2.5", "cv:10", "cv:5:dynamic"] {
            let r: Regime = s.parse().unwrap();
            assert_eq!(r.to_string(), s);
        }
        assert!("dynamic:-1".parse::<Regime>().is_err());
        assert!("cv".parse::<Regime>().is_err());
    }
}
