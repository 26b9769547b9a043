//! Posterior draws of the joint-model parameters.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::g17;
use crate::model::Dimensions;

/// One draw of θ = (β, σ, γ, α, γ_h0, D, τ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDraw {
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub gamma_h0: Vec<f64>,
    /// Random-effects covariance, row-major `q x q`.
    pub d: Vec<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
}

impl ParameterDraw {
    pub fn n_random(&self) -> usize {
        (self.d.len() as f64).sqrt().round() as usize
    }

    pub fn d_matrix(&self) -> DMatrix<f64> {
        let q = self.n_random();
        DMatrix::from_row_slice(q, q, &self.d)
    }

    /// Cholesky factor of D, or an error naming `index`.
    pub fn d_cholesky(&self, index: usize) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.d_matrix()).ok_or_else(|| {
            Error::Data(format!("draw {index}: D is not symmetric positive definite"))
        })
    }

    pub fn validate(&self, dims: &Dimensions, index: usize) -> Result<()> {
        let check = |name: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Data(format!(
                    "draw {index}: {name} has {got} entries, model expects {want}"
                )))
            }
        };
        check("beta", self.beta.len(), dims.n_beta)?;
        check("gamma", self.gamma.len(), dims.n_gamma)?;
        check("alpha", self.alpha.len(), dims.n_alpha)?;
        check("gamma_h0", self.gamma_h0.len(), dims.n_gamma_h0)?;
        check("D", self.d.len(), dims.n_random * dims.n_random)?;
        let all = self
            .beta
            .iter()
            .chain(&self.gamma)
            .chain(&self.alpha)
            .chain(&self.gamma_h0)
            .chain(&self.d);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("draw {index}: non-finite parameter value")));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Data(format!("draw {index}: sigma must be positive")));
        }
        if let Some(tau) = self.tau {
            if !(tau.is_finite() && tau > 0.0) {
                return Err(Error::Data(format!("draw {index}: tau must be positive")));
            }
        }
        let q = dims.n_random;
        for i in 0..q {
            for j in 0..i {
                let (a, b) = (self.d[i * q + j], self.d[j * q + i]);
                if (a - b).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::Data(format!("draw {index}: D is not symmetric")));
                }
            }
        }
        self.d_cholesky(index).map(|_| ())
    }
}

/// Per-subject random-effects draws aligned with the parameter draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEffectDraws {
    pub subject_ids: Vec<String>,
    /// `values[draw][subject]` is the random-effects vector.
    pub values: Vec<Vec<Vec<f64>>>,
}

impl RandomEffectDraws {
    pub fn subject_position(&self, id: &str) -> Option<usize> {
        self.subject_ids.iter().position(|s| s == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub draws: Vec<ParameterDraw>,
    #[serde(default)]
    pub random_effects: Option<RandomEffectDraws>,
}

impl PosteriorDraws {
    /// Degenerate sample holding a single known parameter vector.
    pub fn single(draw: ParameterDraw) -> Self {
        PosteriorDraws {
            draws: vec![draw],
            random_effects: None,
        }
    }

    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn validate(&self, dims: &Dimensions) -> Result<()> {
        if self.draws.is_empty() {
            return Err(Error::Data("posterior sample contains no draws".into()));
        }
        for (k, d) in self.draws.iter().enumerate() {
            d.validate(dims, k)?;
        }
        if let Some(re) = &self.random_effects {
            if re.values.len() != self.draws.len() {
                return Err(Error::Data(format!(
                    "{} random-effects draws for {} parameter draws",
                    re.values.len(),
                    self.draws.len()
                )));
            }
            for (k, per_draw) in re.values.iter().enumerate() {
                if per_draw.len() != re.subject_ids.len()
                    || per_draw.iter().any(|b| b.len() != dims.n_random)
                {
                    return Err(Error::Data(format!(
                        "draw {k}: random effects do not match {} subjects of dimension {}",
                        re.subject_ids.len(),
                        dims.n_random
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes the parameter table to `path`; random effects go to [`ranef_path`].
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let first = self
            .draws
            .first()
            .ok_or_else(|| Error::Data("posterior sample contains no draws".into()))?;
        let q = first.n_random();
        let mut out = String::new();
        let mut header: Vec<String> = (1..=first.beta.len()).map(|i| format!("beta.{i}")).collect();
        header.push("sigma".into());
        header.extend((1..=first.gamma.len()).map(|i| format!("gamma.{i}")));
        header.extend((1..=first.alpha.len()).map(|i| format!("alpha.{i}")));
        header.extend((1..=first.gamma_h0.len()).map(|i| format!("gh0.{i}")));
        for i in 0..q {
            for j in i..q {
                header.push(format!("D.{}.{}", i + 1, j + 1));
            }
        }
        header.push("tau".into());
        out.push_str(&header.join(","));
        out.push('\n');
        for d in &self.draws {
            let mut row: Vec<String> = d.beta.iter().map(|&v| g17(v)).collect();
            row.push(g17(d.sigma));
            row.extend(d.gamma.iter().chain(&d.alpha).chain(&d.gamma_h0).map(|&v| g17(v)));
            for i in 0..q {
                for j in i..q {
                    row.push(g17(d.d[i * q + j]));
                }
            }
            row.push(d.tau.map(g17).unwrap_or_default());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        crate::data::write_file(path, &out)?;
        let companion = ranef_path(path);
        match &self.random_effects {
            Some(re) => {
                let mut text = String::from("draw,subject");
                for i in 1..=q {
                    text.push_str(&format!(",b.{i}"));
                }
                text.push('\n');
                for (k, per_draw) in re.values.iter().enumerate() {
                    for (id, b) in re.subject_ids.iter().zip(per_draw) {
                        text.push_str(&format!("{},{}", k + 1, crate::data::csv_field(id)));
                        for v in b {
                            text.push(',');
                            text.push_str(&g17(*v));
                        }
                        text.push('\n');
                    }
                }
                crate::data::write_file(&companion, &text)?;
            }
            None => {
                if companion.exists() {
                    std::fs::remove_file(&companion).map_err(|e| Error::io(&companion, e))?;
                }
            }
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        crate::data::write_file(path, &text)
    }
}

/// Companion random-effects file for a draws CSV: `draws.csv` → `draws.ranef.csv`.
pub fn ranef_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("draws");
    path.with_file_name(format!("{stem}.ranef.csv"))
}

/// Loads draws from JSON (`.json`) or CSV (anything else, with an optional
/// companion random-effects file) and validates them against `dims`.
pub fn load_posterior_draws(path: &Path, dims: &Dimensions) -> Result<PosteriorDraws> {
    let draws = if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)?
    } else {
        read_csv_draws(path, dims)?
    };
    draws.validate(dims)?;
    Ok(draws)
}

fn parse_cell(s: &str, column: &str, row: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Data(format!("row {row}, column {column}: cannot parse '{s}'")))
}

fn read_csv_draws(path: &Path, dims: &Dimensions) -> Result<PosteriorDraws> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Data(format!("cannot open {}: {e}", path.display())),
        _ => Error::Csv(e),
    })?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let col: BTreeMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let need = |name: String| -> Result<usize> {
        col.get(name.as_str())
            .copied()
            .ok_or_else(|| Error::Data(format!("draws file lacks column '{name}'")))
    };
    let indices = |prefix: &str, n: usize| -> Result<Vec<usize>> {
        (1..=n).map(|i| need(format!("{prefix}.{i}"))).collect()
    };
    let beta_c = indices("beta", dims.n_beta)?;
    let gamma_c = indices("gamma", dims.n_gamma)?;
    let alpha_c = indices("alpha", dims.n_alpha)?;
    let gh0_c = indices("gh0", dims.n_gamma_h0)?;
    let sigma_c = need("sigma".into())?;
    let q = dims.n_random;
    let mut d_c = Vec::new();
    for i in 0..q {
        for j in i..q {
            d_c.push((i, j, need(format!("D.{}.{}", i + 1, j + 1))?));
        }
    }
    let tau_c = col.get("tau").copied();
    let extra = headers.iter().filter(|h| {
        let h = h.as_str();
        !(h == "sigma" || h == "tau" || ["beta.", "gamma.", "alpha.", "gh0.", "D."].iter().any(|p| h.starts_with(p)))
    });
    if let Some(h) = extra.clone().next() {
        return Err(Error::Data(format!("draws file has unexpected column '{h}'")));
    }
    let expected = dims.n_beta + dims.n_gamma + dims.n_alpha + dims.n_gamma_h0 + 1 + q * (q + 1) / 2
        + usize::from(tau_c.is_some());
    if headers.len() != expected {
        return Err(Error::Data(format!(
            "draws file has {} columns, model expects {expected}",
            headers.len()
        )));
    }
    let mut draws = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let get = |c: usize| parse_cell(&rec[c], &headers[c], row + 1);
        let many = |cs: &[usize]| cs.iter().map(|&c| get(c)).collect::<Result<Vec<f64>>>();
        let mut d = vec![0.0; q * q];
        for &(i, j, c) in &d_c {
            let v = get(c)?;
            d[i * q + j] = v;
            d[j * q + i] = v;
        }
        let tau = match tau_c {
            Some(c) if !rec[c].trim().is_empty() => Some(get(c)?),
            _ => None,
        };
        draws.push(ParameterDraw {
            beta: many(&beta_c)?,
            sigma: get(sigma_c)?,
            gamma: many(&gamma_c)?,
            alpha: many(&alpha_c)?,
            gamma_h0: many(&gh0_c)?,
            d,
            tau,
        });
    }
    let companion = ranef_path(path);
    let random_effects = if companion.exists() {
        Some(read_ranef(&companion, draws.len(), q)?)
    } else {
        None
    };
    Ok(PosteriorDraws {
        draws,
        random_effects,
    })
}

fn read_ranef(path: &Path, n_draws: usize, q: usize) -> Result<RandomEffectDraws> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let mut expected = vec!["draw".to_string(), "subject".to_string()];
    expected.extend((1..=q).map(|i| format!("b.{i}")));
    if headers != expected {
        return Err(Error::Data(format!(
            "random-effects file header {headers:?} does not match expected {expected:?}"
        )));
    }
    let mut subject_ids: Vec<String> = Vec::new();
    let mut position: BTreeMap<String, usize> = BTreeMap::new();
    let mut values: Vec<Vec<Option<Vec<f64>>>> = vec![Vec::new(); n_draws];
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let k: usize = rec[0]
            .trim()
            .parse()
            .ok()
            .filter(|k| (1..=n_draws).contains(k))
            .ok_or_else(|| Error::Data(format!("random-effects row {}: bad draw index '{}'", row + 1, &rec[0])))?;
        let id = rec[1].to_string();
        let s = *position.entry(id.clone()).or_insert_with(|| {
            subject_ids.push(id);
            subject_ids.len() - 1
        });
        let b = (0..q)
            .map(|i| parse_cell(&rec[2 + i], &headers[2 + i], row + 1))
            .collect::<Result<Vec<f64>>>()?;
        let slot = &mut values[k - 1];
        if slot.len() <= s {
            slot.resize(s + 1, None);
        }
        slot[s] = Some(b);
    }
    let n = subject_ids.len();
    let values = values
        .into_iter()
        .enumerate()
        .map(|(k, mut per_draw)| {
            per_draw.resize(n, None);
            per_draw
                .into_iter()
                .enumerate()
                .map(|(s, b)| {
                    b.ok_or_else(|| {
                        Error::Data(format!(
                            "random-effects file lacks draw {} for subject '{}'",
                            k + 1,
                            subject_ids[s]
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RandomEffectDraws {
        subject_ids,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> Dimensions {
        Dimensions {
            n_beta: 2,
            n_random: 2,
            n_gamma: 1,
            n_alpha: 1,
            n_gamma_h0: 3,
        }
    }

    fn draw(scale: f64) -> ParameterDraw {
        ParameterDraw {
            beta: vec![1.0 * scale, -0.25],
            sigma: 0.3,
            gamma: vec![-0.85],
            alpha: vec![0.145],
            gamma_h0: vec![-3.0, -2.5, 0.1 / 3.0],
            d: vec![1.0, 0.2, 0.2, 0.5],
            tau: Some(12.5),
        }
    }

    fn sample() -> PosteriorDraws {
        PosteriorDraws {
            draws: vec![draw(1.0), draw(2.0)],
            random_effects: Some(RandomEffectDraws {
                subject_ids: vec!["a".into(), "b,c".into()],
                values: vec![
                    vec![vec![0.1, 0.2], vec![-1.0 / 3.0, 0.0]],
                    vec![vec![1e-7, 2.0], vec![3.0, -4.0]],
                ],
            }),
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("draws.csv");
        let s = sample();
        s.write_csv(&path).unwrap();
        assert!(ranef_path(&path).exists());
        assert_eq!(load_posterior_draws(&path, &dims()).unwrap(), s);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("draws.json");
        let s = sample();
        s.write_json(&path).unwrap();
        assert_eq!(load_posterior_draws(&path, &dims()).unwrap(), s);
    }

    #[test]
    fn rejects_indefinite_covariance_naming_draw() {
        let mut s = PosteriorDraws::single(draw(1.0));
        let mut bad = draw(1.0);
        // Eigenvalues 1 +/- 1.001.
        bad.d = vec![1.0, 1.001, 1.001, 1.0];
        s.draws.push(bad);
        let err = s.validate(&dims()).unwrap_err().to_string();
        assert!(err.contains("draw 1"), "{err}");
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("draws.csv");
        PosteriorDraws::single(draw(1.0)).write_csv(&path).unwrap();
        let mut other = dims();
        other.n_beta = 3;
        assert!(load_posterior_draws(&path, &other).is_err());
        other = dims();
        other.n_gamma_h0 = 2;
        assert!(load_posterior_draws(&path, &other).is_err());
    }

    #[test]
    fn missing_tau_is_none() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut d = draw(1.0);
        d.tau = None;
        PosteriorDraws::single(d.clone()).write_csv(&path).unwrap();
        let back = load_posterior_draws(&path, &dims()).unwrap();
        assert_eq!(back.draws[0], d);
        assert!(back.random_effects.is_none());
    }
}
