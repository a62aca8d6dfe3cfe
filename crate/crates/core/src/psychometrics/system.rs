use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::alpha::{cronbach_alpha, signed_items, AlphaEstimate};
use super::dendrogram::{dendrogram, Dendrogram};
use super::factor::{prune_items, scree_elbow, scree_retention, solve, Assignment, DroppedItem, PruneRules};
use super::pca::sorted_eigen;
use crate::error::{Error, Result};
use crate::stats::correlation_matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructureConfig {
    /// Fixed factor count; `None` picks it from the scree elbow and reliability.
    pub k: Option<usize>,
    pub bootstrap_reps: usize,
    pub prune: PruneRules,
    /// Value columns with a larger masked fraction are dropped before analysis.
    pub max_missing: f64,
}

impl Default for StructureConfig {
    fn default() -> Self {
        Self {
            k: None,
            bootstrap_reps: 2000,
            prune: PruneRules::default(),
            max_missing: 0.2,
        }
    }
}

/// Atomic values, their factors and the loadings relating them.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSystem {
    pub values: Vec<String>,
    pub factors: Vec<String>,
    /// |values| x |factors|
    pub loadings: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub factor_alphas: Vec<AlphaEstimate>,
    pub assignment: Vec<Assignment>,
}

#[derive(Debug, Clone)]
pub struct StructureOutcome {
    pub system: ValueSystem,
    /// Eigenvalues of the unpruned correlation matrix (scree data).
    pub initial_eigenvalues: Vec<f64>,
    pub elbow: usize,
    pub dropped: Vec<DroppedItem>,
    /// Correlation matrix of the retained values.
    pub correlation: DMatrix<f64>,
    pub dendrogram: Dendrogram,
}

/// Full structuring pass over imputed data: factor count, pruning, bootstrap
/// reliabilities and the value dendrogram.
pub fn build_value_system(
    data: &DMatrix<f64>,
    values: &[String],
    config: &StructureConfig,
    seed: u64,
) -> Result<StructureOutcome> {
    if values.len() != data.ncols() {
        return Err(Error::invalid("value names do not match data columns"));
    }
    let all: Vec<usize> = (0..values.len()).collect();
    let r = correlation_matrix(data, values)?;
    let (initial_eigenvalues, _) = sorted_eigen(&r)?;
    let initial_eigenvalues: Vec<f64> = initial_eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let elbow = scree_elbow(&initial_eigenvalues)?;
    let k = match config.k {
        Some(k) => k,
        None => scree_retention(&initial_eigenvalues, |k| {
            Ok(solve(data, values, &all, k, config.prune.rotate)?.alphas)
        })?,
    };
    let pruned = prune_items(data, values, k, config.prune)?;
    let sol = pruned.solution;

    let sub = data.select_columns(&sol.columns);
    let factor_alphas = (0..k)
        .map(|f| {
            let cols: Vec<(usize, bool)> = sol
                .items_of(f)
                .into_iter()
                .map(|i| (i, sol.assignment[i].negative))
                .collect();
            cronbach_alpha(
                &signed_items(&sub, &cols),
                config.bootstrap_reps,
                seed.wrapping_add(f as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let dendro = dendrogram(&sol.correlation, &sol.values)?;
    Ok(StructureOutcome {
        system: ValueSystem {
            values: sol.values.clone(),
            factors: (1..=k).map(|f| format!("F{f}")).collect(),
            loadings: sol.loadings.clone(),
            eigenvalues: sol.eigenvalues.clone(),
            factor_alphas,
            assignment: sol.assignment.clone(),
        },
        initial_eigenvalues,
        elbow,
        dropped: pruned.dropped,
        correlation: sol.correlation,
        dendrogram: dendro,
    })
}

impl ValueSystem {
    pub fn k(&self) -> usize {
        self.factors.len()
    }

    pub fn items_of(&self, factor: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, a)| a.factor == factor)
            .map(|(i, _)| i)
            .collect()
    }

    /// Highest-|loading| assigned values per factor, to help a human name it.
    pub fn naming_hints(&self, top: usize) -> Vec<Vec<String>> {
        (0..self.k())
            .map(|f| {
                let mut items = self.items_of(f);
                items.sort_by(|&a, &b| {
                    self.loadings[(b, f)]
                        .abs()
                        .total_cmp(&self.loadings[(a, f)].abs())
                });
                items
                    .into_iter()
                    .take(top)
                    .map(|i| {
                        let star = if self.assignment[i].negative { "*" } else { "" };
                        format!("{}{star}", self.values[i])
                    })
                    .collect()
            })
            .collect()
    }

    /// value -> factor name, for building a confirmatory model.
    pub fn mapping(&self) -> Vec<(String, String)> {
        self.values
            .iter()
            .zip(&self.assignment)
            .map(|(v, a)| (v.clone(), self.factors[a.factor].clone()))
            .collect()
    }

    /// Per-row factor scores: mean of sign-corrected assigned items.
    /// `data` columns follow `data_values`; every system value must be present.
    pub fn factor_scores(&self, data: &DMatrix<f64>, data_values: &[String]) -> Result<DMatrix<f64>> {
        let idx: Vec<usize> = self
            .values
            .iter()
            .map(|v| {
                data_values
                    .iter()
                    .position(|d| d == v)
                    .ok_or_else(|| Error::invalid(format!("value `{v}` missing from data")))
            })
            .collect::<Result<_>>()?;
        let k = self.k();
        let mut out = DMatrix::zeros(data.nrows(), k);
        for f in 0..k {
            let items = self.items_of(f);
            if items.is_empty() {
                continue;
            }
            for r in 0..data.nrows() {
                let s: f64 = items
                    .iter()
                    .map(|&i| {
                        let x = data[(r, idx[i])];
                        if self.assignment[i].negative {
                            -x
                        } else {
                            x
                        }
                    })
                    .sum();
                out[(r, f)] = s / items.len() as f64;
            }
        }
        Ok(out)
    }

    /// JSONL: a header line with factors, eigenvalues and reliabilities, then
    /// one line per value.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        let alphas: Vec<_> = self
            .factors
            .iter()
            .zip(&self.factor_alphas)
            .map(|(f, a)| json!({"factor": f, "alpha": a.alpha, "ci_low": a.ci_low, "ci_high": a.ci_high}))
            .collect();
        writeln!(
            out,
            "{}",
            json!({
                "kind": "system",
                "factors": self.factors,
                "eigenvalues": self.eigenvalues,
                "alphas": alphas,
            })
        )?;
        for (i, v) in self.values.iter().enumerate() {
            let loadings: Vec<f64> = self.loadings.row(i).iter().copied().collect();
            let a = self.assignment[i];
            writeln!(
                out,
                "{}",
                json!({
                    "kind": "value",
                    "value": v,
                    "factor": self.factors[a.factor],
                    "negative": a.negative,
                    "loadings": loadings,
                })
            )?;
        }
        Ok(())
    }

    pub fn read_jsonl(input: impl Read) -> Result<Self> {
        #[derive(Deserialize)]
        struct AlphaLine {
            alpha: f64,
            ci_low: f64,
            ci_high: f64,
        }
        let mut factors: Vec<String> = Vec::new();
        let mut eigenvalues = Vec::new();
        let mut factor_alphas = Vec::new();
        let mut values = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut assignment = Vec::new();
        for (n, line) in BufReader::new(input).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: &str| Error::Parse {
                source_name: "value system".into(),
                line: n + 1,
                message: m.to_string(),
            };
            let v: serde_json::Value = serde_json::from_str(&line)?;
            match v["kind"].as_str() {
                Some("system") => {
                    factors = serde_json::from_value(v["factors"].clone())?;
                    eigenvalues = serde_json::from_value(v["eigenvalues"].clone())?;
                    let a: Vec<AlphaLine> = serde_json::from_value(v["alphas"].clone())?;
                    factor_alphas = a
                        .into_iter()
                        .map(|a| AlphaEstimate {
                            alpha: a.alpha,
                            ci_low: a.ci_low,
                            ci_high: a.ci_high,
                        })
                        .collect();
                }
                Some("value") => {
                    let name = v["value"].as_str().ok_or_else(|| bad("missing value"))?;
                    let f = v["factor"].as_str().ok_or_else(|| bad("missing factor"))?;
                    let factor = factors
                        .iter()
                        .position(|x| x == f)
                        .ok_or_else(|| bad("unknown factor"))?;
                    values.push(name.to_string());
                    rows.push(serde_json::from_value(v["loadings"].clone())?);
                    assignment.push(Assignment {
                        factor,
                        negative: v["negative"].as_bool().unwrap_or(false),
                    });
                }
                _ => return Err(bad("unknown line kind")),
            }
        }
        let k = factors.len();
        if k == 0 || values.is_empty() || rows.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("value system file is incomplete"));
        }
        let loadings = DMatrix::from_fn(values.len(), k, |i, j| rows[i][j]);
        Ok(Self {
            values,
            factors,
            loadings,
            eigenvalues,
            factor_alphas,
            assignment,
        })
    }

    pub fn write_loadings_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["value".to_string()];
        header.extend(self.factors.iter().cloned());
        w.write_record(&header)?;
        for (i, v) in self.values.iter().enumerate() {
            let mut rec = vec![v.clone()];
            rec.extend(self.loadings.row(i).iter().map(|x| format!("{x:.6}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
