use std::collections::BTreeSet;

use proptest::prelude::*;

use jmcheck::data::{split_folds, JointDataset};
use jmcheck::draws::{PosteriorDraws, RandomEffectDraws};
use jmcheck::fitter::{McmcConfig, PriorConfig};
use jmcheck::gof::kaplan_meier;
use jmcheck::ranef::PriorSampler;
use jmcheck::replicate::{
    load_replicated_data, replicate_cross_validated, replicate_dynamic, replicate_posterior_posterior,
    replicate_posterior_prior, replication_mh_config, CvRegime, Regime, ReplicatedData, HORIZON_FACTOR,
};
use jmcheck::rng::stream_rng;
use jmcheck::scenario::{analysis_model_spec, generate_scenario_dataset, AnalysisModelKind, ScenarioConfig};

fn scenario(n: usize) -> ScenarioConfig {
    ScenarioConfig {
        n_subjects: n,
        ..ScenarioConfig::default()
    }
}

/// True parameters as a single draw, with b_i from the prior as its random effects.
fn oracle_draws(cfg: &ScenarioConfig, data: &JointDataset, seed: u64) -> PosteriorDraws {
    let truth = cfg.true_draw();
    let prior = PriorSampler::new(&truth, 0).unwrap();
    let mut rng = stream_rng(seed, &[77]);
    let b = data.subjects().iter().map(|_| prior.sample(&mut rng)).collect();
    PosteriorDraws {
        draws: vec![truth],
        random_effects: Some(RandomEffectDraws {
            subject_ids: data.subjects().iter().map(|s| s.id.clone()).collect(),
            values: vec![b],
        }),
    }
}

fn assert_event_bookkeeping(rd: &ReplicatedData, lower: f64) {
    for r in &rd.replicates {
        for s in &r.data.subjects {
            assert!(s.event_time > lower && s.event_time <= rd.horizon, "{} outside ({lower}, {}]", s.event_time, rd.horizon);
            if !s.event {
                assert_eq!(s.event_time, rd.horizon);
            }
        }
    }
}

fn short_mh() -> jmcheck::ranef::MhConfig {
    jmcheck::ranef::MhConfig {
        n_iterations: 60,
        burn_in: 40,
        thinning: 20,
        ..replication_mh_config()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn posterior_posterior_reuses_observed_times(seed in 0u64..1000, n in 5usize..40, m in 1usize..6) {
        let cfg = scenario(n);
        let data = generate_scenario_dataset(&cfg, seed).unwrap();
        let spec = cfg.generating_spec();
        let draws = oracle_draws(&cfg, &data, seed);
        let rd = replicate_posterior_posterior(&data, &spec, &draws, m, seed).unwrap();
        prop_assert_eq!(rd.n_replicates(), m);
        prop_assert_eq!(rd.horizon, HORIZON_FACTOR * data.max_time());
        for (k, r) in rd.replicates.iter().enumerate() {
            prop_assert_eq!(r.index, k);
            prop_assert_eq!(r.draw_index, 0);
            prop_assert_eq!(r.data.subjects.len(), n);
            for (rep, obs) in r.data.subjects.iter().zip(data.subjects()) {
                prop_assert_eq!(&rep.id, &obs.id);
                prop_assert_eq!(&rep.times, &obs.times);
                prop_assert_eq!(rep.values.len(), obs.values.len());
            }
        }
        assert_event_bookkeeping(&rd, 0.0);
    }

    #[test]
    fn posterior_prior_truncates_at_the_replicated_event(seed in 0u64..1000, n in 5usize..40, m in 1usize..6) {
        let cfg = scenario(n);
        let data = generate_scenario_dataset(&cfg, seed).unwrap();
        let rd = replicate_posterior_prior(&data, &cfg.generating_spec(), &oracle_draws(&cfg, &data, seed), m, seed).unwrap();
        for r in &rd.replicates {
            for (rep, obs) in r.data.subjects.iter().zip(data.subjects()) {
                // A prefix of the observed schedule, cut strictly before an event.
                prop_assert!(obs.times.starts_with(&rep.times));
                prop_assert_eq!(rep.times.len(), rep.values.len());
                let expected = if rep.event {
                    obs.times.partition_point(|&t| t < rep.event_time)
                } else {
                    obs.times.len()
                };
                prop_assert_eq!(rep.times.len(), expected);
            }
        }
        assert_event_bookkeeping(&rd, 0.0);
    }

    #[test]
    fn dynamic_replicates_respect_the_landmark(seed in 0u64..1000, n in 5usize..30, t_l in 0.0f64..20.0) {
        let cfg = scenario(n);
        let data = generate_scenario_dataset(&cfg, seed).unwrap();
        let at_risk: Vec<&str> = data.subjects().iter().filter(|s| s.event_time > t_l).map(|s| s.id.as_str()).collect();
        prop_assume!(!at_risk.is_empty());
        let draws = PosteriorDraws::single(cfg.true_draw());
        let rd = replicate_dynamic(&data, &cfg.generating_spec(), &draws, t_l, 3, &short_mh(), seed).unwrap();
        prop_assert_eq!(rd.regime.landmark(), Some(t_l));
        let observed_ids: Vec<&str> = rd.observed.subjects.iter().map(|s| s.id.as_str()).collect();
        prop_assert_eq!(&observed_ids, &at_risk);
        for r in &rd.replicates {
            for (rep, obs) in r.data.subjects.iter().zip(&rd.observed.subjects) {
                prop_assert_eq!(&rep.times, &obs.times);
                prop_assert!(rep.times.iter().all(|&t| t > t_l && t <= obs.event_time));
            }
        }
        assert_event_bookkeeping(&rd, t_l);
    }

    #[test]
    fn same_seed_same_replicates(seed in 0u64..1000, regime in 0usize..3) {
        let cfg = scenario(12);
        let data = generate_scenario_dataset(&cfg, seed).unwrap();
        let spec = cfg.generating_spec();
        let draws = oracle_draws(&cfg, &data, seed);
        let run = |s: u64| match regime {
            0 => replicate_posterior_posterior(&data, &spec, &draws, 3, s).unwrap(),
            1 => replicate_posterior_prior(&data, &spec, &draws, 3, s).unwrap(),
            _ => replicate_dynamic(&data, &spec, &draws, 5.0, 3, &short_mh(), s).unwrap(),
        };
        let a = run(seed);
        prop_assert_eq!(&a, &run(seed));
        prop_assert_ne!(&a.replicates, &run(seed + 1).replicates);
    }
}

fn tiny_mcmc(seed: u64) -> McmcConfig {
    McmcConfig {
        n_iter: 40,
        burn_in: 20,
        thin: 4,
        seed,
        survival: true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn cross_validation_partitions_subjects(seed in 0u64..1000, n in 12usize..25, v in 2usize..5, dynamic in any::<bool>()) {
        let cfg = scenario(n);
        let data = generate_scenario_dataset(&cfg, seed).unwrap();
        prop_assume!(data.n_events() >= 5);
        let spec = analysis_model_spec(AnalysisModelKind::TrueModel, &cfg, &data).unwrap();
        let folds = split_folds(&data, v, seed).unwrap();
        let inner = if dynamic { CvRegime::DynamicAtObserved } else { CvRegime::PosteriorPrior };
        let rd = replicate_cross_validated(&data, &spec, &PriorConfig::default(), &tiny_mcmc(seed), &folds, inner, 2, &short_mh(), seed).unwrap();
        prop_assert_eq!(rd.regime, Regime::CrossValidated { inner, folds: v });
        let cv = rd.cv.as_ref().unwrap();
        prop_assert_eq!(cv.training_ids.len(), v);
        let all: BTreeSet<&str> = data.subjects().iter().map(|s| s.id.as_str()).collect();
        for (i, s) in data.subjects().iter().enumerate() {
            let f = cv.subject_folds[i];
            prop_assert_eq!(Some(f), folds.fold_of(&s.id));
            // Held out from its own fold's fit and used by every other fit.
            for (w, ids) in cv.training_ids.iter().enumerate() {
                prop_assert_eq!(ids.contains(&s.id), w != f);
            }
        }
        for ids in &cv.training_ids {
            let set: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
            prop_assert_eq!(set.len(), ids.len());
            prop_assert!(set.is_subset(&all));
        }
        let landmarks = cv.subject_landmarks.as_ref();
        prop_assert_eq!(landmarks.is_some(), dynamic);
        for r in &rd.replicates {
            prop_assert_eq!(r.data.subjects.len(), n);
            for (rep, obs) in r.data.subjects.iter().zip(data.subjects()) {
                prop_assert_eq!(&rep.id, &obs.id);
                if dynamic {
                    prop_assert_eq!(&rep.times, &obs.times);
                } else {
                    prop_assert!(obs.times.starts_with(&rep.times));
                }
            }
        }
    }
}

#[test]
fn leave_one_out_on_six_subjects() {
    let cfg = scenario(6);
    let data = (0..)
        .map(|s| generate_scenario_dataset(&cfg, s).unwrap())
        .find(|d| d.n_events() >= 5)
        .unwrap();
    let spec = analysis_model_spec(AnalysisModelKind::TrueModel, &cfg, &data).unwrap();
    let folds = split_folds(&data, 6, 1).unwrap();
    assert_eq!(folds.fold_sizes(), vec![1; 6]);
    let rd = replicate_cross_validated(&data, &spec, &PriorConfig::default(), &tiny_mcmc(1), &folds, CvRegime::PosteriorPrior, 4, &short_mh(), 2)
        .unwrap();
    let cv = rd.cv.unwrap();
    assert!(cv.training_ids.iter().all(|ids| ids.len() == 5));
    let mut seen = cv.subject_folds.clone();
    seen.sort_unstable();
    assert_eq!(seen, (0..6).collect::<Vec<_>>());
    assert!(rd.replicates.iter().all(|r| r.data.subjects.len() == 6));
}

#[test]
fn ten_fold_replicate_count_per_subject() {
    let cfg = scenario(300);
    let data = generate_scenario_dataset(&cfg, 3).unwrap();
    let spec = analysis_model_spec(AnalysisModelKind::TrueModel, &cfg, &data).unwrap();
    let folds = split_folds(&data, 10, 3).unwrap();
    assert_eq!(folds.fold_sizes(), vec![30; 10]);
    let m = 7;
    let rd = replicate_cross_validated(&data, &spec, &PriorConfig::default(), &tiny_mcmc(3), &folds, CvRegime::PosteriorPrior, m, &short_mh(), 4)
        .unwrap();
    for s in data.subjects() {
        let count = rd
            .replicates
            .iter()
            .filter(|r| r.data.subjects.iter().filter(|x| x.id == s.id).count() == 1)
            .count();
        assert_eq!(count, m, "subject {}", s.id);
    }
}

#[test]
fn dynamic_risk_set_at_ten() {
    let cfg = ScenarioConfig::default();
    let data = generate_scenario_dataset(&cfg, 21).unwrap();
    let mut expected = 0;
    for s in data.subjects() {
        if s.event_time > 10.0 {
            expected += 1;
        }
    }
    let rd = replicate_dynamic(&data, &cfg.generating_spec(), &PosteriorDraws::single(cfg.true_draw()), 10.0, 1, &short_mh(), 1).unwrap();
    assert_eq!(rd.observed.subjects.len(), expected);
    assert_eq!(rd.replicates[0].data.subjects.len(), expected);
}

#[test]
fn no_association_matches_weibull_survival() {
    let cfg = ScenarioConfig {
        alpha: 0.0,
        ..ScenarioConfig::default()
    };
    let data = generate_scenario_dataset(&cfg, 8).unwrap();
    let draws = PosteriorDraws::single(cfg.true_draw());
    let rd = replicate_posterior_prior(&data, &cfg.generating_spec(), &draws, 20, 9).unwrap();
    let (times, events): (Vec<f64>, Vec<bool>) = rd.replicates.iter().flat_map(|r| r.data.event_times().0.into_iter().zip(r.data.event_times().1)).unzip();
    let km = kaplan_meier(&times, &events).unwrap();
    // S_i(t) = exp(−e^{γ0 + γ w_i} t^φ), averaged over the subjects' treatment values.
    let analytic = |t: f64| {
        data.subjects()
            .iter()
            .map(|s| (-(cfg.gamma0 + cfg.gamma_treat * s.covariates[0]).exp() * t.powf(cfg.weibull_shape)).exp())
            .sum::<f64>()
            / data.n_subjects() as f64
    };
    for t in [15.0, 20.0, 23.0, 25.0, 28.0] {
        let (got, want) = (km.survival_at(t), analytic(t));
        assert!((got - want).abs() < 0.03, "S({t}): {got} vs {want}");
    }
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    for (k, &i) in idx.iter().enumerate() {
        r[i] = k as f64;
    }
    r
}

#[test]
fn higher_marker_means_earlier_events() {
    let cfg = ScenarioConfig::default();
    let data = generate_scenario_dataset(&cfg, 12).unwrap();
    let draws = PosteriorDraws::single(cfg.true_draw());
    let rd = replicate_posterior_prior(&data, &cfg.generating_spec(), &draws, 40, 13).unwrap();
    // Every subject has a visit at time 0, so y_rep(0) is always present.
    let (y0, t): (Vec<f64>, Vec<f64>) = rd
        .replicates
        .iter()
        .flat_map(|r| r.data.subjects.iter().map(|s| (s.values[0], s.event_time)))
        .unzip();
    let (ry, rt) = (ranks(&y0), ranks(&t));
    let n = ry.len() as f64;
    let mean = (n - 1.0) / 2.0;
    let cov: f64 = ry.iter().zip(&rt).map(|(a, b)| (a - mean) * (b - mean)).sum();
    let var: f64 = ry.iter().map(|a| (a - mean).powi(2)).sum();
    let rho = cov / var;
    assert!(rho < -0.05, "Spearman {rho}");
}

#[test]
fn persisted_replicates_round_trip() {
    let cfg = scenario(15);
    let data = generate_scenario_dataset(&cfg, 4).unwrap();
    let draws = oracle_draws(&cfg, &data, 4);
    let dir = tempfile::tempdir().unwrap();
    for (k, rd) in [
        replicate_posterior_posterior(&data, &cfg.generating_spec(), &draws, 3, 5).unwrap(),
        replicate_dynamic(&data, &cfg.generating_spec(), &draws, 4.5, 2, &short_mh(), 5).unwrap(),
    ]
    .into_iter()
    .enumerate()
    {
        let path = dir.path().join(k.to_string());
        rd.write_dir(&path).unwrap();
        assert_eq!(load_replicated_data(&path).unwrap(), rd);
    }
}
