//! Alignment targets distilled from preference triplets, the L1 value
//! reward, and best-of-n selection against a target.

use std::io::{BufRead, BufReader, Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::measurement::{measure_subject, MeasureOptions};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceTriplet {
    pub prompt: String,
    pub winning_response: String,
    pub losing_response: String,
}

impl PreferenceTriplet {
    pub fn validate(&self) -> Result<()> {
        if self.prompt.trim().is_empty()
            || self.winning_response.trim().is_empty()
            || self.losing_response.trim().is_empty()
        {
            return Err(Error::invalid("triplet fields must be non-empty"));
        }
        if self.winning_response == self.losing_response {
            return Err(Error::invalid("winning and losing responses are identical"));
        }
        Ok(())
    }
}

pub fn read_triplets(input: impl Read) -> Result<Vec<PreferenceTriplet>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            source_name: "triplets".into(),
            line: n + 1,
            message,
        };
        let t: PreferenceTriplet = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        t.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push(t);
    }
    Ok(out)
}

pub fn write_triplets(triplets: &[PreferenceTriplet], mut out: impl Write) -> Result<()> {
    for t in triplets {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetVector {
    pub values: Vec<String>,
    pub target: Vec<f64>,
}

impl TargetVector {
    pub fn new(values: Vec<String>, target: Vec<f64>) -> Result<Self> {
        if values.len() != target.len() {
            return Err(Error::invalid("target length does not match the value list"));
        }
        if let Some(x) = target.iter().find(|x| !(-1.0..=1.0).contains(*x)) {
            return Err(Error::invalid(format!("target entry {x} outside [-1, 1]")));
        }
        Ok(Self { values, target })
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["value", "target"])?;
        for (v, t) in self.values.iter().zip(&self.target) {
            w.write_record([v.clone(), format!("{t}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(input: impl Read) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            value: String,
            target: f64,
        }
        let mut r = csv::Reader::from_reader(input);
        let (mut values, mut target) = (Vec::new(), Vec::new());
        for row in r.deserialize() {
            let row: Row = row?;
            values.push(row.value);
            target.push(row.target);
        }
        Self::new(values, target)
    }
}

/// Value vector of a single response; values without a relevant perception score 0.
pub fn measure_response(_prompt: &str, response: &str, values: &[String], gateway: &Gateway) -> Result<Vec<f64>> {
    let s = measure_subject(&[response.to_string()], values, gateway, MeasureOptions::default())?;
    Ok(s.scores.into_iter().map(|x| x.unwrap_or(0.0)).collect())
}

/// Value vectors of the winning and losing response of one triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletMeasurement {
    pub m_w: Vec<f64>,
    pub m_l: Vec<f64>,
}

pub fn measure_triplets(
    triplets: &[PreferenceTriplet],
    values: &[String],
    gateway: &Gateway,
) -> Result<Vec<TripletMeasurement>> {
    triplets
        .par_iter()
        .map(|t| {
            Ok(TripletMeasurement {
                m_w: measure_response(&t.prompt, &t.winning_response, values, gateway)?,
                m_l: measure_response(&t.prompt, &t.losing_response, values, gateway)?,
            })
        })
        .collect()
}

fn check_dims(x: usize, ms: &[TripletMeasurement]) -> Result<()> {
    if ms.iter().any(|m| m.m_w.len() != x || m.m_l.len() != x) {
        return Err(Error::invalid("measurement dimension does not match"));
    }
    Ok(())
}

/// `Σ_triplets Σ_i (|x_i − m_w,i| − |x_i − m_l,i|)`.
pub fn objective(x: &[f64], ms: &[TripletMeasurement]) -> Result<f64> {
    check_dims(x.len(), ms)?;
    Ok(ms
        .iter()
        .map(|m| {
            x.iter()
                .zip(m.m_w.iter().zip(&m.m_l))
                .map(|(xi, (w, l))| (xi - w).abs() - (xi - l).abs())
                .sum::<f64>()
        })
        .sum())
}

/// `Σ|c − a|` for every query `c`, via prefix sums over sorted `a`.
struct AbsSum {
    sorted: Vec<f64>,
    prefix: Vec<f64>,
}

impl AbsSum {
    fn new(mut a: Vec<f64>) -> Self {
        a.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(a.len() + 1);
        prefix.push(0.0);
        for x in &a {
            prefix.push(prefix.last().unwrap() + x);
        }
        Self { sorted: a, prefix }
    }

    fn at(&self, c: f64) -> f64 {
        let k = self.sorted.partition_point(|&x| x <= c);
        let n = self.sorted.len();
        let below = c * k as f64 - self.prefix[k];
        let above = (self.prefix[n] - self.prefix[k]) - c * (n - k) as f64;
        below + above
    }
}

/// Minimizes one dimension's objective over the measured values. Among
/// candidates within rounding of the minimum the smallest value wins.
pub fn distill_dimension(winning: &[f64], losing: &[f64]) -> Result<(f64, f64)> {
    if winning.is_empty() || winning.len() != losing.len() {
        return Err(Error::invalid("need matching, non-empty winning and losing measurements"));
    }
    let w = AbsSum::new(winning.to_vec());
    let l = AbsSum::new(losing.to_vec());
    let mut cands: Vec<f64> = winning.iter().chain(losing).copied().collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let scored: Vec<(f64, f64)> = cands.iter().map(|&c| (c, w.at(c) - l.at(c))).collect();
    let min = scored.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * (1.0 + winning.len() as f64);
    Ok(*scored.iter().find(|s| s.1 <= min + tol).unwrap())
}

pub fn distill_target(ms: &[TripletMeasurement], values: &[String]) -> Result<TargetVector> {
    if ms.is_empty() {
        return Err(Error::invalid("no measured triplets"));
    }
    check_dims(values.len(), ms)?;
    let target = (0..values.len())
        .map(|i| {
            let w: Vec<f64> = ms.iter().map(|m| m.m_w[i]).collect();
            let l: Vec<f64> = ms.iter().map(|m| m.m_l[i]).collect();
            distill_dimension(&w, &l).map(|(x, _)| x)
        })
        .collect::<Result<_>>()?;
    TargetVector::new(values.to_vec(), target)
}

/// `−Σ|x*_i − m_i|` over dimensions with `|m_i| ≥ mask_threshold`.
pub fn reward(measured: &[f64], target: &TargetVector, mask_threshold: f64) -> Result<f64> {
    if measured.len() != target.target.len() {
        return Err(Error::invalid("measured vector does not match the target"));
    }
    if !(mask_threshold >= 0.0) {
        return Err(Error::invalid("mask threshold must be non-negative"));
    }
    Ok(-measured
        .iter()
        .zip(&target.target)
        .filter(|(m, _)| m.abs() >= mask_threshold)
        .map(|(m, t)| (t - m).abs())
        .sum::<f64>())
}

pub fn reward_response(
    prompt: &str,
    response: &str,
    target: &TargetVector,
    mask_threshold: f64,
    gateway: &Gateway,
) -> Result<f64> {
    let m = measure_response(prompt, response, &target.values, gateway)?;
    reward(&m, target, mask_threshold)
}

/// Index of the highest reward; the first one on ties.
pub fn select_best(rewards: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rewards.iter().enumerate() {
        if best.map_or(true, |b| *r > rewards[b]) {
            best = Some(i);
        }
    }
    best
}

/// Picks the candidate response with the highest reward.
pub fn best_of_n_select(
    prompt: &str,
    candidates: &[String],
    target: &TargetVector,
    mask_threshold: f64,
    gateway: &Gateway,
) -> Result<(usize, f64)> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate responses"));
    }
    let rewards: Vec<f64> = candidates
        .par_iter()
        .map(|c| reward_response(prompt, c, target, mask_threshold, gateway))
        .collect::<Result<_>>()?;
    let i = select_best(&rewards).unwrap();
    Ok((i, rewards[i]))
}
