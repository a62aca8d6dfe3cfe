//! Value-orientation measurement of subjects from their free-form answers,
//! the subjects x values matrix, and cross-dataset consistency.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::stats::pearson;

/// One measured subject: a model run under one profiling prompt.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Subject {
    pub model_name: String,
    pub profile_prompt_id: String,
}

impl Subject {
    pub fn new(model_name: impl Into<String>, profile_prompt_id: impl Into<String>) -> Self {
        Self {
            model_name: model_name.into(),
            profile_prompt_id: profile_prompt_id.into(),
        }
    }
}

impl std::fmt::Display for Subject {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.model_name, self.profile_prompt_id)
    }
}

/// Produces a subject's answer to a prompt.
pub trait Responder: Send + Sync {
    fn respond(&self, subject: &Subject, prompt: &str) -> Result<String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureOptions {
    /// Scores backed by fewer relevant perceptions are masked.
    pub min_support: u32,
    /// Weight each judgment by the evaluator's confidence instead of counting it once.
    pub confidence_weighted: bool,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        Self {
            min_support: 1,
            confidence_weighted: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectScores {
    pub scores: Vec<Option<f64>>,
    pub support: Vec<u32>,
}

/// Scores every value from all of a subject's responses:
/// `(n_support - n_oppose) / (n_support + n_oppose)` over relevant perceptions.
pub fn measure_subject(
    responses: &[String],
    values: &[String],
    gateway: &Gateway,
    opts: MeasureOptions,
) -> Result<SubjectScores> {
    if responses.is_empty() {
        return Err(Error::invalid("measure_subject needs at least one response"));
    }
    let mut perceptions = Vec::new();
    for r in responses {
        if r.trim().is_empty() {
            continue;
        }
        perceptions.extend(gateway.parse_perceptions(r)?);
    }
    let mut scores = Vec::with_capacity(values.len());
    let mut support = Vec::with_capacity(values.len());
    for v in values {
        let (mut pos, mut neg, mut count) = (0.0, 0.0, 0u32);
        for p in &perceptions {
            let j = gateway.evaluate_valence(p, v)?;
            let Some(sign) = j.sign() else { continue };
            let w = if opts.confidence_weighted {
                j.confidence()
            } else {
                1.0
            };
            if sign > 0.0 {
                pos += w;
            } else {
                neg += w;
            }
            count += 1;
        }
        let defined = count >= opts.min_support.max(1) && pos + neg > 0.0;
        scores.push(defined.then(|| (pos - neg) / (pos + neg)));
        support.push(count);
    }
    Ok(SubjectScores { scores, support })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix {
    pub subjects: Vec<Subject>,
    pub values: Vec<String>,
    /// Row-major, `None` = masked.
    pub scores: Vec<Vec<Option<f64>>>,
    pub support: Vec<Vec<u32>>,
    pub min_support: u32,
}

/// Matrix plus the subjects whose rows could not be measured.
#[derive(Debug)]
pub struct MatrixBuild {
    pub matrix: MeasurementMatrix,
    pub failures: Vec<(Subject, String)>,
}

/// Every subject answers every prompt; rows come from [`measure_subject`].
/// A subject whose backend fails is excluded and reported, the rest continue.
pub fn build_matrix(
    roster: &[Subject],
    prompts: &[String],
    values: &[String],
    responder: &dyn Responder,
    gateway: &Gateway,
    opts: MeasureOptions,
) -> Result<MatrixBuild> {
    if roster.is_empty() || prompts.is_empty() || values.is_empty() {
        return Err(Error::invalid(
            "build_matrix needs a non-empty roster, prompt list and lexicon",
        ));
    }
    let mut seen = BTreeSet::new();
    for s in roster {
        if !seen.insert(s) {
            return Err(Error::DuplicateId(s.to_string()));
        }
    }
    let rows: Vec<Result<SubjectScores>> = roster
        .par_iter()
        .map(|subject| {
            let responses = prompts
                .iter()
                .map(|p| responder.respond(subject, p))
                .collect::<Result<Vec<_>>>()?;
            measure_subject(&responses, values, gateway, opts)
        })
        .collect();

    let mut matrix = MeasurementMatrix {
        subjects: Vec::new(),
        values: values.to_vec(),
        scores: Vec::new(),
        support: Vec::new(),
        min_support: opts.min_support,
    };
    let mut failures = Vec::new();
    for (subject, row) in roster.iter().zip(rows) {
        match row {
            Ok(r) => {
                matrix.subjects.push(subject.clone());
                matrix.scores.push(r.scores);
                matrix.support.push(r.support);
            }
            Err(e) => {
                log::warn!("excluding subject {subject}: {e}");
                failures.push((subject.clone(), e.to_string()));
            }
        }
    }
    if matrix.subjects.is_empty() {
        return Err(Error::Retriable {
            attempts: 0,
            message: "every subject failed to respond".into(),
        });
    }
    Ok(MatrixBuild { matrix, failures })
}

/// Imputed dense data ready for correlation, PCA and CFA.
#[derive(Debug, Clone)]
pub struct AnalysisData {
    pub values: Vec<String>,
    pub data: DMatrix<f64>,
    pub dropped_values: Vec<String>,
    /// (value, number of imputed cells)
    pub imputed: Vec<(String, usize)>,
}

impl MeasurementMatrix {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_values(&self) -> usize {
        self.values.len()
    }

    pub fn value_index(&self, name: &str) -> Option<usize> {
        self.values.iter().position(|v| v == name)
    }

    /// Keeps the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> MeasurementMatrix {
        MeasurementMatrix {
            subjects: rows.iter().map(|&i| self.subjects[i].clone()).collect(),
            values: self.values.clone(),
            scores: rows.iter().map(|&i| self.scores[i].clone()).collect(),
            support: rows.iter().map(|&i| self.support[i].clone()).collect(),
            min_support: self.min_support,
        }
    }

    /// Reorders (or subsets) the value columns.
    pub fn select_values(&self, cols: &[usize]) -> MeasurementMatrix {
        MeasurementMatrix {
            subjects: self.subjects.clone(),
            values: cols.iter().map(|&j| self.values[j].clone()).collect(),
            scores: self
                .scores
                .iter()
                .map(|r| cols.iter().map(|&j| r[j]).collect())
                .collect(),
            support: self
                .support
                .iter()
                .map(|r| cols.iter().map(|&j| r[j]).collect())
                .collect(),
            min_support: self.min_support,
        }
    }

    /// Drops value columns with more than `max_missing` masked fraction and
    /// fills the remaining gaps with the column mean.
    pub fn prepare_for_analysis(&self, max_missing: f64) -> Result<AnalysisData> {
        let n = self.n_subjects();
        if n == 0 {
            return Err(Error::invalid("matrix has no subjects"));
        }
        let mut kept = Vec::new();
        let mut dropped_values = Vec::new();
        let mut imputed = Vec::new();
        for (j, name) in self.values.iter().enumerate() {
            let present: Vec<f64> = self.scores.iter().filter_map(|r| r[j]).collect();
            let missing = n - present.len();
            if present.is_empty() || missing as f64 / n as f64 > max_missing {
                dropped_values.push(name.clone());
                continue;
            }
            if missing > 0 {
                imputed.push((name.clone(), missing));
            }
            let m = present.iter().sum::<f64>() / present.len() as f64;
            kept.push((j, m));
        }
        if kept.is_empty() {
            return Err(Error::invalid("no value column survives the missing-data filter"));
        }
        let data = DMatrix::from_fn(n, kept.len(), |i, c| {
            let (j, m) = kept[c];
            self.scores[i][j].unwrap_or(m)
        });
        for (v, k) in &imputed {
            log::info!("imputed {k} missing cells of `{v}` with the column mean");
        }
        Ok(AnalysisData {
            values: kept.iter().map(|&(j, _)| self.values[j].clone()).collect(),
            data,
            dropped_values,
            imputed,
        })
    }

    /// CSV: `model_name,profile_prompt_id,<values...>`; masked cells are empty.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["model_name".to_string(), "profile_prompt_id".to_string()];
        header.extend(self.values.iter().cloned());
        w.write_record(&header)?;
        for (s, row) in self.subjects.iter().zip(&self.scores) {
            let mut rec = vec![s.model_name.clone(), s.profile_prompt_id.clone()];
            rec.extend(row.iter().map(|c| c.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSONL sidecar: one metadata line, then one support-count line per subject.
    pub fn write_sidecar(&self, mut out: impl Write, metadata: serde_json::Value) -> Result<()> {
        let meta = json!({
            "kind": "meta",
            "min_support": self.min_support,
            "n_subjects": self.n_subjects(),
            "values": self.values,
            "run": metadata,
        });
        writeln!(out, "{meta}")?;
        for (s, sup) in self.subjects.iter().zip(&self.support) {
            let line = json!({
                "kind": "support",
                "model_name": s.model_name,
                "profile_prompt_id": s.profile_prompt_id,
                "support": sup,
            });
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Reads the CSV form. Without a sidecar, support is taken as 1 for
    /// defined cells and 0 for masked ones.
    pub fn read(csv_in: impl Read, sidecar: Option<impl Read>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(csv_in);
        let header = r.headers()?.clone();
        if header.len() < 3 || &header[0] != "model_name" || &header[1] != "profile_prompt_id" {
            return Err(Error::Parse {
                source_name: "matrix csv".into(),
                line: 1,
                message: "expected header model_name,profile_prompt_id,<values>".into(),
            });
        }
        let values: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let mut subjects = Vec::new();
        let mut scores = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            subjects.push(Subject::new(&rec[0], &rec[1]));
            let mut row = Vec::with_capacity(values.len());
            for cell in rec.iter().skip(2) {
                if cell.trim().is_empty() {
                    row.push(None);
                } else {
                    let x: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                        source_name: "matrix csv".into(),
                        line,
                        message: format!("bad score `{cell}`"),
                    })?;
                    if !(-1.0..=1.0).contains(&x) {
                        return Err(Error::Parse {
                            source_name: "matrix csv".into(),
                            line,
                            message: format!("score {x} outside [-1, 1]"),
                        });
                    }
                    row.push(Some(x));
                }
            }
            scores.push(row);
        }
        let mut min_support = 1;
        let mut support: Vec<Vec<u32>> = scores
            .iter()
            .map(|r: &Vec<Option<f64>>| r.iter().map(|c| u32::from(c.is_some())).collect())
            .collect();
        if let Some(side) = sidecar {
            let mut by_row = Vec::new();
            for line in BufReader::new(side).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let v: serde_json::Value = serde_json::from_str(&line)?;
                match v["kind"].as_str() {
                    Some("meta") => {
                        min_support = v["min_support"].as_u64().unwrap_or(1) as u32;
                    }
                    Some("support") => {
                        let sup: Vec<u32> = serde_json::from_value(v["support"].clone())?;
                        by_row.push(sup);
                    }
                    _ => {}
                }
            }
            if by_row.len() == subjects.len() {
                support = by_row;
            } else {
                return Err(Error::invalid("sidecar row count does not match matrix"));
            }
        }
        Ok(Self {
            subjects,
            values,
            scores,
            support,
            min_support,
        })
    }
}

/// Pearson correlation over jointly unmasked entries of two score rows.
pub fn intra_subject_correlation(a: &[Option<f64>], b: &[Option<f64>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("score rows differ in length"));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .unzip();
    if xs.len() < 3 {
        return Err(Error::invalid(
            "intra-subject correlation needs at least 3 jointly unmasked values",
        ));
    }
    pearson(&xs, &ys).ok_or_else(|| Error::numerical("correlation undefined: zero variance"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    /// Per subject; `None` where the correlation is undefined.
    pub per_subject: Vec<Option<f64>>,
    pub mean: f64,
    /// Correlation between per-subject consistency and external safety scores.
    pub safety_correlation: Option<f64>,
}

pub fn consistency_report(
    a: &MeasurementMatrix,
    b: &MeasurementMatrix,
    safety: Option<&[f64]>,
) -> Result<ConsistencyReport> {
    if a.subjects != b.subjects || a.values != b.values {
        return Err(Error::invalid(
            "matrices must share subject and value orderings",
        ));
    }
    if let Some(s) = safety {
        if s.len() != a.n_subjects() {
            return Err(Error::invalid("one safety score per subject is required"));
        }
    }
    let per_subject: Vec<Option<f64>> = a
        .scores
        .iter()
        .zip(&b.scores)
        .map(|(ra, rb)| intra_subject_correlation(ra, rb).ok())
        .collect();
    let defined: Vec<(usize, f64)> = per_subject
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (i, r)))
        .collect();
    if defined.is_empty() {
        return Err(Error::numerical("no subject has a defined intra-subject correlation"));
    }
    let mean = defined.iter().map(|(_, r)| r).sum::<f64>() / defined.len() as f64;
    let safety_correlation = safety.and_then(|s| {
        let rs: Vec<f64> = defined.iter().map(|(_, r)| *r).collect();
        let ss: Vec<f64> = defined.iter().map(|(i, _)| s[*i]).collect();
        pearson(&rs, &ss)
    });
    Ok(ConsistencyReport {
        per_subject,
        mean,
        safety_correlation,
    })
}
