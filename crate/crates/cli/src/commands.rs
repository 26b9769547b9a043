use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use jmcheck::data::{load_joint_dataset, split_folds, JointDataset};
use jmcheck::draws::{load_posterior_draws, PosteriorDraws};
use jmcheck::fitter::{fit_joint_model_detailed, FitDiagnostics};
use jmcheck::format::g17;
use jmcheck::gof::{run_check, CheckOptions, CheckReport, Statistic};
use jmcheck::model::{Model, ModelSpec};
use jmcheck::replicate::{
    replicate_cross_validated, replicate_dynamic, replicate_posterior_posterior, replicate_posterior_prior,
    Regime, ReplicatedData,
};
use jmcheck::scenario::{analysis_model_spec, generate_scenario_dataset, AnalysisModelKind, SCHEMA_VERSION};

use crate::config::{read_json, CheckConfig, FitConfig};
use crate::error::{CliError, Result};
use crate::svg;

const LONGITUDINAL: &str = "longitudinal.csv";
const SURVIVAL: &str = "survival.csv";
const MODEL_FILE: &str = "model.json";
const FIT_FILE: &str = "fit.json";
const DRAWS_FILE: &str = "draws.csv";
const CHECK_FILE: &str = "check.json";
const SUMMARY_FILE: &str = "mise_summary.csv";

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn load_data(dir: &Path) -> Result<JointDataset> {
    Ok(load_joint_dataset(&dir.join(LONGITUDINAL), &dir.join(SURVIVAL))?)
}

#[derive(Serialize)]
struct DatasetManifest<'a> {
    schema_version: u32,
    seed: u64,
    n_subjects: usize,
    n_measurements: usize,
    n_events: usize,
    longitudinal_file: &'a str,
    survival_file: &'a str,
    scenario: &'a jmcheck::scenario::ScenarioConfig,
}

pub fn simulate(scenario: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let cfg = crate::config::load_scenario(scenario)?;
    let data = generate_scenario_dataset(&cfg, seed)?;
    create_dir(out)?;
    data.write_csv(&out.join(LONGITUDINAL), &out.join(SURVIVAL))?;
    write_json(
        &out.join("manifest.json"),
        &DatasetManifest {
            schema_version: SCHEMA_VERSION,
            seed,
            n_subjects: data.n_subjects(),
            n_measurements: data.n_measurements(),
            n_events: data.n_events(),
            longitudinal_file: LONGITUDINAL,
            survival_file: SURVIVAL,
            scenario: &cfg,
        },
    )?;
    println!(
        "simulated {} subjects, {} measurements, {} events -> {}",
        data.n_subjects(),
        data.n_measurements(),
        data.n_events(),
        out.display()
    );
    Ok(())
}

/// What `jmcheck fit` records next to the draws.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitRecord {
    pub schema_version: u32,
    /// Model label used by `report`.
    pub label: String,
    /// True parameters written as a single draw instead of an MCMC fit.
    pub oracle: bool,
    pub config: FitConfig,
    pub n_draws: usize,
    pub diagnostics: Option<FitDiagnostics>,
}

pub struct FitArgs<'a> {
    pub data: &'a Path,
    pub config: Option<&'a Path>,
    pub model: Option<AnalysisModelKind>,
    pub seed: Option<u64>,
    pub oracle: bool,
    pub out: &'a Path,
}

pub fn fit(args: FitArgs<'_>) -> Result<()> {
    let mut cfg = FitConfig::load(args.config)?;
    if let Some(m) = args.model {
        cfg.model = m;
    }
    if let Some(s) = args.seed {
        cfg.mcmc.seed = s;
    }
    let data = load_data(args.data)?;
    let (spec, draws, diagnostics) = if args.oracle {
        if cfg.model != AnalysisModelKind::TrueModel {
            return Err(CliError::Usage(format!(
                "--oracle writes the generating parameters and needs --model true_model, got {}",
                cfg.model
            )));
        }
        let draws = PosteriorDraws::single(cfg.scenario.true_draw());
        (cfg.scenario.generating_spec(), draws, None)
    } else {
        let spec = analysis_model_spec(cfg.model, &cfg.scenario, &data)?;
        let fit = fit_joint_model_detailed(&data, &spec, &cfg.priors, &cfg.mcmc)?;
        (spec, fit.draws, Some(fit.diagnostics))
    };
    create_dir(args.out)?;
    write_json(&args.out.join(MODEL_FILE), &spec)?;
    let draws_path = args.out.join(DRAWS_FILE);
    draws.write_csv(&draws_path)?;
    let summary = posterior_summary(&draws_path)?;
    write(&args.out.join("summary.csv"), &summary)?;
    let record = FitRecord {
        schema_version: SCHEMA_VERSION,
        label: cfg.model.name().to_string(),
        oracle: args.oracle,
        n_draws: draws.n_draws(),
        diagnostics,
        config: cfg,
    };
    write_json(&args.out.join(FIT_FILE), &record)?;
    print!("{summary}");
    Ok(())
}

/// Linear interpolation between order statistics.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, sd and 2.5/50/97.5% quantiles of every column of a draws CSV.
fn posterior_summary(draws_csv: &Path) -> Result<String> {
    let mut reader = csv::Reader::from_path(draws_csv)?;
    let header = reader.headers()?.clone();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for row in reader.records() {
        for (col, field) in columns.iter_mut().zip(row?.iter()) {
            if let Ok(v) = field.parse::<f64>() {
                col.push(v);
            }
        }
    }
    let mut out = String::from("parameter,mean,sd,q2.5,q50,q97.5\n");
    for (name, mut col) in header.iter().zip(columns) {
        if col.is_empty() {
            continue;
        }
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let sd = if col.len() > 1 {
            (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        col.sort_by(f64::total_cmp);
        let q = |p| g17(quantile(&col, p));
        let _ = writeln!(out, "{name},{},{},{},{},{}", g17(mean), g17(sd), q(0.025), q(0.5), q(0.975));
    }
    Ok(out)
}

pub fn parse_statistics(list: &[String]) -> Result<Vec<Statistic>> {
    let mut stats = Vec::new();
    for item in list.iter().flat_map(|s| s.split(',')) {
        let item = item.trim();
        if item == "all" {
            stats.extend(Statistic::ALL);
        } else {
            stats.push(item.parse()?);
        }
    }
    if stats.is_empty() {
        return Err(CliError::Usage("no statistic requested".into()));
    }
    stats.sort_unstable();
    stats.dedup();
    Ok(stats)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckRecord {
    pub schema_version: u32,
    pub label: String,
    pub regime: String,
    pub seed: u64,
    pub n_replicates: usize,
    /// Subjects in the observed counterpart (the risk set under a landmark).
    pub n_subjects: usize,
    pub statistics: Vec<String>,
    pub config: CheckConfig,
}

pub struct CheckArgs<'a> {
    pub data: &'a Path,
    pub fit: &'a Path,
    pub draws: Option<&'a Path>,
    pub config: Option<&'a Path>,
    pub regime: Regime,
    pub statistics: Vec<Statistic>,
    pub m: usize,
    pub seed: u64,
    pub kappa: Option<f64>,
    pub span: Option<f64>,
    pub save_replicates: bool,
    pub out: &'a Path,
}

fn replicate(args: &CheckArgs<'_>, cfg: &CheckConfig, data: &JointDataset, spec: &ModelSpec, fit: &FitRecord) -> Result<ReplicatedData> {
    let model = Model::new(spec.clone(), data.covariate_names())?;
    let draws_path = args.draws.map_or_else(|| args.fit.join(DRAWS_FILE), Path::to_path_buf);
    let load = || load_posterior_draws(&draws_path, &model.dims());
    let (m, seed) = (args.m, args.seed);
    Ok(match args.regime {
        Regime::PosteriorPosterior => replicate_posterior_posterior(data, spec, &load()?, m, seed)?,
        Regime::PosteriorPrior => replicate_posterior_prior(data, spec, &load()?, m, seed)?,
        Regime::Dynamic { landmark } => replicate_dynamic(data, spec, &load()?, landmark, m, &cfg.mh, seed)?,
        Regime::CrossValidated { inner, folds } => {
            if fit.oracle {
                return Err(CliError::Usage(
                    "cross-validation refits the model and cannot use an oracle fit directory".into(),
                ));
            }
            let assignment = split_folds(data, folds, seed)?;
            let c = &fit.config;
            replicate_cross_validated(data, spec, &c.priors, &c.mcmc, &assignment, inner, m, &cfg.mh, seed)?
        }
    })
}

pub fn check(args: CheckArgs<'_>) -> Result<()> {
    let mut cfg = CheckConfig::load(args.config)?;
    if let Some(span) = args.span {
        cfg.loess.span = span;
    }
    if args.kappa.is_some() {
        cfg.concordance.kappa = args.kappa;
    }
    cfg.loess.validate()?;
    if cfg.concordance.kappa.is_some_and(|k| !(k > 0.0)) {
        return Err(CliError::Usage("--kappa must be positive".into()));
    }
    let data = load_data(args.data)?;
    let spec: ModelSpec = read_json(&args.fit.join(MODEL_FILE))?;
    let fit: FitRecord = read_json(&args.fit.join(FIT_FILE))?;
    let replicated = replicate(&args, &cfg, &data, &spec, &fit)?;

    create_dir(args.out)?;
    if args.save_replicates {
        replicated.write_dir(&args.out.join("replicates"))?;
    }
    let options = CheckOptions {
        loess: cfg.loess,
        concordance: cfg.concordance,
        scope: cfg.subject.clone(),
        max_lag: cfg.max_lag,
    };
    let regime = replicated.regime.to_string();
    let mut summary = String::from("model,statistic,regime,mise,band_coverage,n_replicates,skipped_replicates\n");
    for &stat in &args.statistics {
        let report = run_check(stat, &replicated, &options)?;
        write_report(&report, &fit.label, args.out)?;
        let coverage = report.band_coverage.map(g17).unwrap_or_default();
        let _ = writeln!(
            summary,
            "{},{stat},{regime},{},{coverage},{},{}",
            fit.label,
            g17(report.mise),
            replicated.n_replicates(),
            report.skipped_replicates.len()
        );
        println!("{stat:<14} MISE {:>12.5e}{}", report.mise, report.band_coverage.map(|c| format!("  band coverage {c:.3}")).unwrap_or_default());
    }
    write(&args.out.join(SUMMARY_FILE), &summary)?;
    write_json(
        &args.out.join(CHECK_FILE),
        &CheckRecord {
            schema_version: SCHEMA_VERSION,
            label: fit.label.clone(),
            regime,
            seed: args.seed,
            n_replicates: replicated.n_replicates(),
            n_subjects: replicated.observed.subjects.len(),
            statistics: args.statistics.iter().map(|s| s.name().to_string()).collect(),
            config: cfg,
        },
    )
}

fn write_report(report: &CheckReport, label: &str, out: &Path) -> Result<()> {
    let stem = report.statistic.name();
    report.write_json(&out.join(format!("{stem}.json")))?;
    report.write_csv(&out.join(format!("{stem}.csv")))?;
    let title = format!(
        "{label}: {stem} ({}), MISE {}",
        report.regime.as_deref().unwrap_or(""),
        format_args!("{:.4e}", report.mise)
    );
    write(&out.join(format!("{stem}.svg")), &svg::render(report, &title))
}

/// One `mise_summary.csv` row.
#[derive(Debug, Deserialize)]
struct SummaryRow {
    statistic: String,
    mise: f64,
}

/// Competition ranks ("1224"): 1 is the smallest MISE, ties share the lower rank.
pub fn ranks(values: &[f64]) -> Vec<usize> {
    values
        .iter()
        .map(|v| 1 + values.iter().filter(|w| w.total_cmp(v).is_lt()).count())
        .collect()
}

pub fn report(dirs: &[PathBuf], out: &Path) -> Result<()> {
    if dirs.len() < 2 {
        return Err(CliError::Usage("report needs at least two check directories".into()));
    }
    let mut labels = Vec::new();
    let mut tables: Vec<BTreeMap<String, f64>> = Vec::new();
    for dir in dirs {
        let record: CheckRecord = read_json(&dir.join(CHECK_FILE))?;
        let mut reader = csv::Reader::from_path(dir.join(SUMMARY_FILE))?;
        let table = reader
            .deserialize::<SummaryRow>()
            .map(|r| r.map(|r| (r.statistic, r.mise)))
            .collect::<std::result::Result<BTreeMap<_, _>, _>>()?;
        labels.push(record.label);
        tables.push(table);
    }
    // Identical labels (e.g. the same model under two regimes) fall back to the directory.
    for i in 0..labels.len() {
        if labels.iter().filter(|l| **l == labels[i]).count() > 1 {
            labels[i] = format!("{}@{}", labels[i], dirs[i].display());
        }
    }
    let stats: Vec<&String> = tables[0].keys().collect();
    for (t, dir) in tables.iter().zip(dirs).skip(1) {
        if !t.keys().eq(stats.iter().copied()) {
            return Err(CliError::Usage(format!(
                "statistic sets differ: {} has [{}], {} has [{}]",
                dirs[0].display(),
                stats.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "),
                dir.display(),
                t.keys().map(String::as_str).collect::<Vec<_>>().join(", ")
            )));
        }
    }
    create_dir(out)?;
    let mut csv_out = String::from("statistic,model,mise,rank\n");
    let width = labels.iter().map(String::len).max().unwrap_or(5).max(12);
    let mut table = format!("{:<14}", "statistic");
    for l in &labels {
        let _ = write!(table, " {l:>width$}");
    }
    table.push('\n');
    for stat in stats {
        let values: Vec<f64> = tables.iter().map(|t| t[stat]).collect();
        let r = ranks(&values);
        let _ = write!(table, "{stat:<14}");
        for ((label, v), rank) in labels.iter().zip(&values).zip(&r) {
            let _ = writeln!(csv_out, "{stat},{label},{},{rank}", g17(*v));
            let _ = write!(table, " {:>width$}", format!("{v:.3e} ({rank})"));
        }
        table.push('\n');
    }
    write(&out.join("comparison.csv"), &csv_out)?;
    print!("{table}");
    Ok(())
}
