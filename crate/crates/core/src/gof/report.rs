use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::write_file;
use crate::error::{Error, Result};
use crate::format::g17;
use crate::replicate::{OutcomeSet, ReplicatedData};

use super::{
    concordance_over_time, ecdf_longitudinal_check, mean_function_check, pit_check, semivariogram_check,
    survival_ecdf_check, variance_function_check, ConcordanceOptions, Curve, LoessConfig, Scope,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Statistic {
    #[serde(rename = "ecdf-long")]
    EcdfLongitudinal,
    #[serde(rename = "mean")]
    Mean,
    #[serde(rename = "variance")]
    Variance,
    #[serde(rename = "semivariogram")]
    Semivariogram,
    #[serde(rename = "ecdf-surv")]
    EcdfSurvival,
    #[serde(rename = "pit")]
    Pit,
    #[serde(rename = "concordance")]
    Concordance,
}

impl Statistic {
    pub const ALL: [Statistic; 7] = [
        Statistic::EcdfLongitudinal,
        Statistic::Mean,
        Statistic::Variance,
        Statistic::Semivariogram,
        Statistic::EcdfSurvival,
        Statistic::Pit,
        Statistic::Concordance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::EcdfLongitudinal => "ecdf-long",
            Statistic::Mean => "mean",
            Statistic::Variance => "variance",
            Statistic::Semivariogram => "semivariogram",
            Statistic::EcdfSurvival => "ecdf-surv",
            Statistic::Pit => "pit",
            Statistic::Concordance => "concordance",
        }
    }

    /// Whether the statistic uses the longitudinal replicates.
    pub fn is_longitudinal(self) -> bool {
        matches!(
            self,
            Statistic::EcdfLongitudinal | Statistic::Mean | Statistic::Variance | Statistic::Semivariogram
        )
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Statistic::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Statistic::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown statistic '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

/// Pointwise 95% limits of the observed curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub statistic: Statistic,
    pub regime: Option<String>,
    pub landmark: Option<f64>,
    /// Subject id for individual mean-function checks.
    pub scope: Option<String>,
    /// Integration range of the MISE.
    pub range: (f64, f64),
    pub mise: f64,
    pub observed: Curve,
    pub observed_band: Option<Band>,
    pub replicates: Vec<Curve>,
    /// Fraction of replicate grid values inside the observed band, over grid
    /// points where the band has positive width.
    pub band_coverage: Option<f64>,
    /// Mean fraction of replicated event times beyond the simulation horizon.
    pub beyond_horizon: Option<f64>,
    /// Concordance horizon τ.
    pub tau: Option<f64>,
    /// Evaluation points where the observed statistic was undefined.
    pub skipped_points: Vec<f64>,
    /// Replicates for which the statistic could not be computed.
    pub skipped_replicates: Vec<usize>,
}

impl CheckReport {
    pub(crate) fn new(statistic: Statistic, observed: Curve, replicates: Vec<Curve>, mise: f64, range: (f64, f64)) -> Self {
        CheckReport {
            statistic,
            regime: None,
            landmark: None,
            scope: None,
            range,
            mise,
            observed,
            observed_band: None,
            replicates,
            band_coverage: None,
            beyond_horizon: None,
            tau: None,
            skipped_points: Vec::new(),
            skipped_replicates: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_json()?)
    }

    /// Long format: `curve,replicate,x,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("curve,replicate,x,value\n");
        let mut push = |name: &str, rep: &str, grid: &[f64], values: &[f64]| {
            for (x, v) in grid.iter().zip(values) {
                out.push_str(&format!("{name},{rep},{},{}\n", g17(*x), g17(*v)));
            }
        };
        push("observed", "", &self.observed.grid, &self.observed.values);
        if let Some(b) = &self.observed_band {
            push("lower", "", &self.observed.grid, &b.lower);
            push("upper", "", &self.observed.grid, &b.upper);
        }
        for (m, c) in self.replicates.iter().enumerate() {
            push("replicate", &(m + 1).to_string(), &c.grid, &c.values);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_csv())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckOptions {
    pub loess: LoessConfig,
    pub concordance: ConcordanceOptions,
    pub scope: Option<String>,
    pub max_lag: Option<f64>,
}

/// Computes one statistic on replicated data and its observed counterpart.
pub fn run_check(statistic: Statistic, data: &ReplicatedData, options: &CheckOptions) -> Result<CheckReport> {
    let obs = &data.observed;
    let reps: Vec<&OutcomeSet> = data.replicates.iter().map(|r| &r.data).collect();
    let cfg = &options.loess;
    let mut report = match statistic {
        Statistic::EcdfLongitudinal => ecdf_longitudinal_check(obs, &reps),
        Statistic::Mean => {
            let scope = options.scope.clone().map_or(Scope::Pooled, Scope::Subject);
            mean_function_check(obs, &reps, cfg, &scope)
        }
        Statistic::Variance => variance_function_check(obs, &reps, cfg),
        Statistic::Semivariogram => semivariogram_check(obs, &reps, cfg, options.max_lag),
        Statistic::EcdfSurvival => survival_ecdf_check(obs, &reps, data.regime.landmark().unwrap_or(0.0)),
        Statistic::Pit => pit_check(obs, &reps),
        Statistic::Concordance => concordance_over_time(obs, &reps, cfg, &options.concordance),
    }
    .map_err(|e| Error::Data(format!("{statistic} check: {e}")))?;
    report.regime = Some(data.regime.to_string());
    report.landmark = data.regime.landmark();
    Ok(report)
}
