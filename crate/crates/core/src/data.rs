//! Joint longitudinal and survival datasets, CSV ingestion and fold splitting.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::g17;
use crate::rng::stream_rng;

/// One subject: repeated measurements, observed event time and baseline covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub event_time: f64,
    pub event: bool,
    /// Baseline covariates, aligned with [`JointDataset::covariate_names`].
    pub covariates: Vec<f64>,
}

impl SubjectRecord {
    pub fn n_measurements(&self) -> usize {
        self.times.len()
    }

    /// Copy holding only the measurements taken at or before `t`.
    pub fn truncated_at(&self, t: f64) -> SubjectRecord {
        let keep = self.times.partition_point(|&s| s <= t);
        SubjectRecord {
            times: self.times[..keep].to_vec(),
            values: self.values[..keep].to_vec(),
            ..self.clone()
        }
    }

    fn validate(&self, n_covariates: usize) -> Result<()> {
        let id = &self.id;
        if self.times.len() != self.values.len() {
            return Err(Error::Data(format!(
                "subject {id}: {} times but {} values",
                self.times.len(),
                self.values.len()
            )));
        }
        if !self.event_time.is_finite() || self.event_time < 0.0 {
            return Err(Error::Data(format!(
                "subject {id}: event time {} must be finite and nonnegative",
                self.event_time
            )));
        }
        if self.covariates.len() != n_covariates {
            return Err(Error::Data(format!(
                "subject {id}: expected {n_covariates} covariates, found {}",
                self.covariates.len()
            )));
        }
        if let Some(c) = self.covariates.iter().find(|c| !c.is_finite()) {
            return Err(Error::Data(format!("subject {id}: non-finite covariate {c}")));
        }
        for (l, (&t, &y)) in self.times.iter().zip(&self.values).enumerate() {
            if !t.is_finite() || t < 0.0 {
                return Err(Error::Data(format!("subject {id}: invalid measurement time {t}")));
            }
            if !y.is_finite() {
                return Err(Error::Data(format!(
                    "subject {id}: non-finite value at time {t}"
                )));
            }
            if l > 0 && t <= self.times[l - 1] {
                return Err(Error::Data(format!(
                    "subject {id}: measurement times not strictly increasing at {t}"
                )));
            }
            if t >= self.event_time {
                return Err(Error::Data(format!(
                    "subject {id}: measurement not before event time ({t} >= {})",
                    self.event_time
                )));
            }
        }
        Ok(())
    }
}

/// Validated collection of subjects sharing one covariate layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDataset {
    covariate_names: Vec<String>,
    subjects: Vec<SubjectRecord>,
}

impl JointDataset {
    pub fn new(covariate_names: Vec<String>, subjects: Vec<SubjectRecord>) -> Result<Self> {
        let mut seen = HashMap::with_capacity(subjects.len());
        for (i, s) in subjects.iter().enumerate() {
            if seen.insert(s.id.as_str(), i).is_some() {
                return Err(Error::Data(format!("duplicate subject id {}", s.id)));
            }
            s.validate(covariate_names.len())?;
        }
        let mut names = covariate_names.clone();
        names.sort();
        names.dedup();
        if names.len() != covariate_names.len() {
            return Err(Error::Data("duplicate covariate names".into()));
        }
        Ok(JointDataset {
            covariate_names,
            subjects,
        })
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_measurements(&self) -> usize {
        self.subjects.iter().map(|s| s.times.len()).sum()
    }

    pub fn n_events(&self) -> usize {
        self.subjects.iter().filter(|s| s.event).count()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    pub fn subject_index(&self, id: &str) -> Option<usize> {
        self.subjects.iter().position(|s| s.id == id)
    }

    pub fn max_time(&self) -> f64 {
        self.subjects
            .iter()
            .map(|s| s.event_time)
            .fold(0.0, f64::max)
    }

    /// Dataset restricted to the listed subject positions, in the given order.
    pub fn subset(&self, indices: &[usize]) -> JointDataset {
        JointDataset {
            covariate_names: self.covariate_names.clone(),
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
        }
    }

    /// Applies `f` to every longitudinal value, revalidating the result.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<JointDataset> {
        let subjects = self
            .subjects
            .iter()
            .map(|s| SubjectRecord {
                values: s.values.iter().map(|&y| f(y)).collect(),
                ..s.clone()
            })
            .collect();
        JointDataset::new(self.covariate_names.clone(), subjects)
    }

    /// Writes the `(id, time, value)` and `(id, event_time, event_indicator, covariates...)` pair.
    pub fn write_csv(&self, longitudinal: &Path, survival: &Path) -> Result<()> {
        let mut out = String::from("id,time,value\n");
        for s in &self.subjects {
            for (&t, &y) in s.times.iter().zip(&s.values) {
                out.push_str(&format!("{},{},{}\n", csv_field(&s.id), g17(t), g17(y)));
            }
        }
        write_file(longitudinal, &out)?;

        let mut out = String::from("id,event_time,event_indicator");
        for name in &self.covariate_names {
            out.push(',');
            out.push_str(&csv_field(name));
        }
        out.push('\n');
        for s in &self.subjects {
            out.push_str(&format!(
                "{},{},{}",
                csv_field(&s.id),
                g17(s.event_time),
                u8::from(s.event)
            ));
            for &c in &s.covariates {
                out.push(',');
                out.push_str(&g17(c));
            }
            out.push('\n');
        }
        write_file(survival, &out)
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn parse_f64(field: &str, what: &str, line: u64) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("line {line}: cannot parse {what} '{field}'")))?;
    if v.is_nan() {
        return Err(Error::Data(format!("line {line}: {what} is NaN")));
    }
    Ok(v)
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

/// Reads and validates a dataset from its longitudinal and survival CSV files.
///
/// Measurements at or after the subject's event time are rejected rather than
/// dropped. Extra longitudinal columns are rejected because covariates are
/// baseline-only.
pub fn load_joint_dataset(longitudinal_csv: &Path, survival_csv: &Path) -> Result<JointDataset> {
    let mut surv = open_csv(survival_csv)?;
    let header = surv.headers()?.clone();
    let expected = ["id", "event_time", "event_indicator"];
    if header.len() < 3 || header.iter().take(3).ne(expected) {
        return Err(Error::Data(format!(
            "{}: header must start with id,event_time,event_indicator",
            survival_csv.display()
        )));
    }
    let covariate_names: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
    let mut subjects = Vec::new();
    let mut position = HashMap::new();
    for row in surv.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let id = row[0].to_string();
        let event_time = parse_f64(&row[1], "event_time", line)?;
        let event = match row[2].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Data(format!(
                    "line {line}: event_indicator must be 0 or 1, found '{other}'"
                )))
            }
        };
        let covariates = (3..row.len())
            .map(|j| parse_f64(&row[j], &header[j], line))
            .collect::<Result<Vec<_>>>()?;
        if position.insert(id.clone(), subjects.len()).is_some() {
            return Err(Error::Data(format!("line {line}: duplicate subject id {id}")));
        }
        subjects.push(SubjectRecord {
            id,
            times: Vec::new(),
            values: Vec::new(),
            event_time,
            event,
            covariates,
        });
    }

    let mut long = open_csv(longitudinal_csv)?;
    let header = long.headers()?.clone();
    if header.iter().ne(["id", "time", "value"]) {
        if header.len() > 3 && header.iter().take(3).eq(["id", "time", "value"]) {
            return Err(Error::Data(format!(
                "{}: extra columns found; time-varying covariates are not supported",
                longitudinal_csv.display()
            )));
        }
        return Err(Error::Data(format!(
            "{}: header must be id,time,value",
            longitudinal_csv.display()
        )));
    }
    for row in long.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let &i = position.get(&row[0]).ok_or_else(|| {
            Error::Data(format!(
                "line {line}: subject {} missing from survival data",
                &row[0]
            ))
        })?;
        let t = parse_f64(&row[1], "time", line)?;
        let y = parse_f64(&row[2], "value", line)?;
        subjects[i].times.push(t);
        subjects[i].values.push(y);
    }
    JointDataset::new(covariate_names, subjects)
}

/// Subject-level assignment to `V` cross-validation folds (0-based fold indices).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub n_folds: usize,
    /// Fold of each subject, keyed by id.
    pub fold_of_subject: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.fold_of_subject.get(id).copied()
    }

    /// Positions (in `data`) of the subjects held out in fold `v`.
    pub fn held_out(&self, data: &JointDataset, v: usize) -> Vec<usize> {
        data.subjects()
            .iter()
            .enumerate()
            .filter(|(_, s)| self.fold_of(&s.id) == Some(v))
            .map(|(i, _)| i)
            .collect()
    }

    /// Positions of the subjects used for fitting when fold `v` is held out.
    pub fn training(&self, data: &JointDataset, v: usize) -> Vec<usize> {
        data.subjects()
            .iter()
            .enumerate()
            .filter(|(_, s)| self.fold_of(&s.id) != Some(v))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for &v in self.fold_of_subject.values() {
            sizes[v] += 1;
        }
        sizes
    }
}

/// Shuffles subjects with `seed` and deals them round-robin into `v` folds.
pub fn split_folds(data: &JointDataset, v: usize, seed: u64) -> Result<FoldAssignment> {
    let n = data.n_subjects();
    if v < 2 {
        return Err(Error::Config(format!("fold count must be at least 2, got {v}")));
    }
    if v > n {
        return Err(Error::Config(format!(
            "fold count {v} exceeds the number of subjects {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, &[0xF01D]));
    let fold_of_subject = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| (data.subjects()[i].id.clone(), rank % v))
        .collect();
    Ok(FoldAssignment {
        n_folds: v,
        fold_of_subject,
    })
}
