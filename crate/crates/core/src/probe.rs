//! Bradley–Terry linear probe: predicts which of two models is safer from
//! their value vectors.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, std_dev};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    I,
    J,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairItem {
    pub x_i: Vec<f64>,
    pub x_j: Vec<f64>,
    pub winner: Winner,
}

impl PairItem {
    /// Winner minus loser.
    fn diff(&self) -> Vec<f64> {
        let (w, l) = match self.winner {
            Winner::I => (&self.x_i, &self.x_j),
            Winner::J => (&self.x_j, &self.x_i),
        };
        w.iter().zip(l).map(|(a, b)| a - b).collect()
    }

    fn is_tied(&self) -> bool {
        self.x_i == self.x_j
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairwiseDataset {
    /// Feature names; may be empty, in which case names are generated.
    pub values: Vec<String>,
    pub items: Vec<PairItem>,
}

impl PairwiseDataset {
    pub fn new(values: Vec<String>, items: Vec<PairItem>) -> Result<Self> {
        let ds = Self { values, items };
        ds.dimension()?;
        Ok(ds)
    }

    /// Shared vector length; errors when items disagree.
    pub fn dimension(&self) -> Result<usize> {
        let dim = if self.values.is_empty() {
            self.items.first().map_or(0, |it| it.x_i.len())
        } else {
            self.values.len()
        };
        for (n, it) in self.items.iter().enumerate() {
            if it.x_i.len() != dim || it.x_j.len() != dim {
                return Err(Error::invalid(format!("pair {n} does not have dimension {dim}")));
            }
            if it.x_i.iter().chain(&it.x_j).any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("pair {n} has non-finite features")));
            }
        }
        Ok(dim)
    }

    fn feature_names(&self) -> Result<Vec<String>> {
        if self.values.is_empty() {
            Ok((0..self.dimension()?).map(|i| format!("x{i}")).collect())
        } else {
            Ok(self.values.clone())
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            values: self.values.clone(),
            items: idx.iter().map(|&i| self.items[i].clone()).collect(),
        }
    }

    pub fn read_jsonl(input: impl Read, values: Vec<String>) -> Result<Self> {
        let mut items = Vec::new();
        for (n, line) in BufReader::new(input).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            items.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                source_name: "pairs".into(),
                line: n + 1,
                message: e.to_string(),
            })?);
        }
        Self::new(values, items)
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for it in &self.items {
            serde_json::to_writer(&mut out, it)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// All pairs of distinct-score subjects; the higher score wins. Pairs are
/// ordered by `(i, j)` in the order of `subjects`.
pub fn pairs_from_scores(
    values: Vec<String>,
    subjects: &[(String, Vec<f64>)],
    safety: &BTreeMap<String, f64>,
) -> Result<PairwiseDataset> {
    let scored: Vec<(&Vec<f64>, f64)> = subjects
        .iter()
        .filter_map(|(id, x)| safety.get(id).map(|s| (x, *s)))
        .collect();
    let mut items = Vec::new();
    for a in 0..scored.len() {
        for b in a + 1..scored.len() {
            let (xa, sa) = scored[a];
            let (xb, sb) = scored[b];
            if sa == sb {
                continue;
            }
            items.push(PairItem {
                x_i: xa.clone(),
                x_j: xb.clone(),
                winner: if sa > sb { Winner::I } else { Winner::J },
            });
        }
    }
    PairwiseDataset::new(values, items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub values: Vec<String>,
    pub weights: Vec<f64>,
}

impl LinearProbe {
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::invalid(format!(
                "vector has dimension {}, probe expects {}",
                x.len(),
                self.weights.len()
            )));
        }
        Ok(self.weights.iter().zip(x).map(|(w, v)| w * v).sum())
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["value", "weight"])?;
        for (v, x) in self.values.iter().zip(&self.weights) {
            w.write_record([v.clone(), format!("{x}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(input: impl Read) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            value: String,
            weight: f64,
        }
        let mut r = csv::Reader::from_reader(input);
        let mut probe = Self {
            values: Vec::new(),
            weights: Vec::new(),
        };
        for row in r.deserialize() {
            let row: Row = row?;
            if !row.weight.is_finite() {
                return Err(Error::invalid(format!("non-finite weight for `{}`", row.value)));
            }
            probe.values.push(row.value);
            probe.weights.push(row.weight);
        }
        Ok(probe)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^{-z}) without overflow.
fn neg_log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeOptions {
    pub l2: f64,
    pub max_iter: usize,
    /// Stop when the gradient max-norm falls below this times the pair count.
    pub grad_tol: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            max_iter: 20_000,
            grad_tol: 1e-9,
        }
    }
}

/// Pairwise cross-entropy with an L2 penalty, over winner-minus-loser differences.
pub fn loss_and_gradient(w: &[f64], diffs: &[Vec<f64>], l2: f64) -> (f64, Vec<f64>) {
    let mut loss = l2 * w.iter().map(|x| x * x).sum::<f64>();
    let mut grad: Vec<f64> = w.iter().map(|x| 2.0 * l2 * x).collect();
    for d in diffs {
        let z: f64 = w.iter().zip(d).map(|(a, b)| a * b).sum();
        loss += neg_log_sigmoid(z);
        let s = sigmoid(-z);
        for (g, x) in grad.iter_mut().zip(d) {
            *g -= s * x;
        }
    }
    (loss, grad)
}

/// Full-batch gradient descent with backtracking from `w = 0`. Pairs with
/// identical feature vectors carry no information and are dropped.
pub fn train(data: &PairwiseDataset, opts: ProbeOptions) -> Result<LinearProbe> {
    if !(opts.l2 >= 0.0) {
        return Err(Error::invalid("l2 must be non-negative"));
    }
    let dim = data.dimension()?;
    let diffs: Vec<Vec<f64>> = data
        .items
        .iter()
        .filter(|it| !it.is_tied())
        .map(PairItem::diff)
        .collect();
    if diffs.is_empty() {
        return Err(Error::invalid("no informative training pairs"));
    }
    let tol = opts.grad_tol * diffs.len() as f64;
    let mut w = vec![0.0; dim];
    let (mut loss, mut grad) = loss_and_gradient(&w, &diffs, opts.l2);
    let mut trace = vec![loss];
    let mut step = 1.0;
    for _ in 0..opts.max_iter {
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if grad.iter().all(|g| g.abs() < tol) {
            break;
        }
        step *= 2.0;
        let mut accepted = None;
        for _ in 0..80 {
            let cand: Vec<f64> = w.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
            let (l, g) = loss_and_gradient(&cand, &diffs, opts.l2);
            if l.is_finite() && l <= loss - 1e-4 * step * gnorm2 {
                accepted = Some((cand, l, g));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, l, g)) = accepted else {
            // No representable decrease left; the iterate is as good as it gets.
            break;
        };
        if !(l <= loss) {
            return Err(Error::NonConvergence {
                iterations: trace.len(),
                gradient_norm: gnorm2.sqrt(),
                trace,
            });
        }
        w = cand;
        loss = l;
        grad = g;
        trace.push(loss);
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonConvergence {
            iterations: trace.len(),
            gradient_norm: f64::NAN,
            trace,
        });
    }
    Ok(LinearProbe {
        values: data.feature_names()?,
        weights: w,
    })
}

/// Probability that `x_i` is the safer of the pair.
pub fn predict(probe: &LinearProbe, x_i: &[f64], x_j: &[f64]) -> Result<f64> {
    Ok(sigmoid(probe.score(x_i)? - probe.score(x_j)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub accuracy: f64,
    pub n: usize,
    /// 95% Wilson score interval.
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn wilson_interval(p: f64, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n = n as f64;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * ((p * (1.0 - p) + z * z / (4.0 * n)) / n).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Fraction of pairs ranked correctly; a prediction of exactly 0.5 earns half credit.
pub fn evaluate(probe: &LinearProbe, held_out: &PairwiseDataset) -> Result<Accuracy> {
    if held_out.items.is_empty() {
        return Err(Error::invalid("held-out set is empty"));
    }
    let mut correct = 0.0;
    for it in &held_out.items {
        let p = predict(probe, &it.x_i, &it.x_j)?;
        correct += if p == 0.5 {
            0.5
        } else if (p > 0.5) == (it.winner == Winner::I) {
            1.0
        } else {
            0.0
        };
    }
    let n = held_out.items.len();
    let accuracy = correct / n as f64;
    let (ci_low, ci_high) = wilson_interval(accuracy, n);
    Ok(Accuracy {
        accuracy,
        n,
        ci_low,
        ci_high,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub folds: Vec<Accuracy>,
    pub mean: f64,
    /// Sample standard deviation of the fold accuracies.
    pub sd: f64,
    /// All held-out predictions pooled.
    pub pooled: Accuracy,
}

/// Seeded k-fold split over pairs; folds are trained in parallel and
/// reported in fold order.
pub fn cross_validate(data: &PairwiseDataset, k: usize, opts: ProbeOptions, seed: u64) -> Result<CrossValidation> {
    let n = data.items.len();
    if k < 2 || n < k {
        return Err(Error::invalid(format!("cannot split {n} pairs into {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds: Vec<Accuracy> = (0..k)
        .into_par_iter()
        .map(|f| {
            let test: Vec<usize> = idx.iter().enumerate().filter(|(p, _)| p % k == f).map(|(_, &i)| i).collect();
            let train_idx: Vec<usize> = idx.iter().enumerate().filter(|(p, _)| p % k != f).map(|(_, &i)| i).collect();
            let probe = train(&data.subset(&train_idx), opts)?;
            evaluate(&probe, &data.subset(&test))
        })
        .collect::<Result<_>>()?;
    let accs: Vec<f64> = folds.iter().map(|a| a.accuracy).collect();
    let correct: f64 = folds.iter().map(|a| a.accuracy * a.n as f64).sum();
    let pooled_acc = correct / n as f64;
    let (ci_low, ci_high) = wilson_interval(pooled_acc, n);
    Ok(CrossValidation {
        mean: mean(&accs),
        sd: std_dev(&accs),
        folds,
        pooled: Accuracy {
            accuracy: pooled_acc,
            n,
            ci_low,
            ci_high,
        },
    })
}

/// Weights paired with value names, largest first (stable on ties).
pub fn contributions(probe: &LinearProbe) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = probe
        .values
        .iter()
        .cloned()
        .zip(probe.weights.iter().copied())
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(x_i: Vec<f64>, x_j: Vec<f64>, winner: Winner) -> PairItem {
        PairItem { x_i, x_j, winner }
    }

    #[test]
    fn predict_examples() {
        let probe = LinearProbe {
            values: vec!["a".into(), "b".into()],
            weights: vec![1.0, 0.0],
        };
        assert_eq!(predict(&probe, &[0.3, 1.0], &[0.3, 1.0]).unwrap(), 0.5);
        let p = predict(&probe, &[3f64.ln(), 0.0], &[0.0, 0.0]).unwrap();
        assert!((p - 0.75).abs() < 1e-12);
        assert!(predict(&probe, &[1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn separable_data_is_ranked_perfectly() {
        let items: Vec<PairItem> = (0..20)
            .map(|k| {
                let a = k as f64 / 10.0;
                item(vec![a + 0.5, (k % 3) as f64], vec![a, (k % 5) as f64], Winner::I)
            })
            .collect();
        let ds = PairwiseDataset::new(vec![], items).unwrap();
        let probe = train(&ds, ProbeOptions::default()).unwrap();
        assert_eq!(evaluate(&probe, &ds).unwrap().accuracy, 1.0);
    }

    #[test]
    fn all_tied_pairs_is_error() {
        let ds = PairwiseDataset::new(vec![], vec![item(vec![1.0], vec![1.0], Winner::I)]).unwrap();
        assert!(train(&ds, ProbeOptions::default()).is_err());
    }

    #[test]
    fn zero_probe_scores_half() {
        let probe = LinearProbe {
            values: vec!["a".into()],
            weights: vec![0.0],
        };
        let ds = PairwiseDataset::new(vec![], vec![item(vec![1.0], vec![0.0], Winner::I), item(vec![1.0], vec![0.0], Winner::J)]).unwrap();
        assert_eq!(evaluate(&probe, &ds).unwrap().accuracy, 0.5);
        assert!(contributions(&probe).iter().all(|(_, w)| *w == 0.0));
    }

    #[test]
    fn wilson_interval_contains_estimate() {
        let (lo, hi) = wilson_interval(0.8, 50);
        assert!(lo < 0.8 && 0.8 < hi);
        assert!((wilson_interval(1.0, 10).1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pairs_from_scores_orders_winner() {
        let subjects = vec![("a".to_string(), vec![1.0]), ("b".to_string(), vec![0.0]), ("c".to_string(), vec![2.0])];
        let safety: BTreeMap<String, f64> = [("a".to_string(), 0.2), ("b".to_string(), 0.9), ("c".to_string(), 0.2)].into();
        let ds = pairs_from_scores(vec!["v".into()], &subjects, &safety).unwrap();
        assert_eq!(ds.items.len(), 2);
        assert_eq!(ds.items[0].winner, Winner::J);
    }

    #[test]
    fn jsonl_round_trip() {
        let ds = PairwiseDataset::new(vec![], vec![item(vec![1.0, 2.0], vec![0.5, 0.0], Winner::J)]).unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().contains("\"winner\":\"j\""));
        assert_eq!(PairwiseDataset::read_jsonl(&buf[..], vec![]).unwrap(), ds);
    }
}
