//! Factor retention, assignment, reliability-driven item pruning and loading
//! congruence.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::alpha::{cronbach_alpha_point, signed_items};
use super::pca::pca;
use super::varimax::{rotate_varimax, VarimaxOptions};
use crate::error::{Error, Result};
use crate::stats::correlation_matrix;

/// Conventional minimum reliability for a factor.
pub const MIN_ALPHA: f64 = 0.7;

/// Which factor a value belongs to and whether it loads negatively on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub factor: usize,
    pub negative: bool,
}

/// Assigns every row to the column with the largest absolute loading
/// (ties go to the lower column index).
pub fn assign(loadings: &DMatrix<f64>) -> Vec<Assignment> {
    loadings
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j].abs() > row[best].abs() {
                    best = j;
                }
            }
            Assignment {
                factor: best,
                negative: row[best] < 0.0,
            }
        })
        .collect()
}

/// Point alpha per factor over its sign-corrected items. Factors with fewer
/// than two items, or a degenerate total score, report 0.
pub fn factor_alphas(data: &DMatrix<f64>, assignment: &[Assignment], k: usize) -> Vec<f64> {
    (0..k)
        .map(|f| {
            let cols: Vec<(usize, bool)> = assignment
                .iter()
                .enumerate()
                .filter(|(_, a)| a.factor == f)
                .map(|(j, a)| (j, a.negative))
                .collect();
            if cols.len() < 2 {
                return 0.0;
            }
            cronbach_alpha_point(&signed_items(data, &cols)).unwrap_or(0.0)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FactorSolution {
    pub values: Vec<String>,
    /// Column indices into the data matrix the solution was computed from.
    pub columns: Vec<usize>,
    pub correlation: DMatrix<f64>,
    pub loadings: DMatrix<f64>,
    /// Eigenvalues of `correlation`, descending.
    pub eigenvalues: Vec<f64>,
    pub assignment: Vec<Assignment>,
    pub alphas: Vec<f64>,
}

impl FactorSolution {
    pub fn k(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn items_of(&self, factor: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, a)| a.factor == factor)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Correlation -> PCA(k) -> optional varimax -> assignment -> alphas, over
/// the given data columns.
pub fn solve(
    data: &DMatrix<f64>,
    values: &[String],
    columns: &[usize],
    k: usize,
    rotate: bool,
) -> Result<FactorSolution> {
    let sub = data.select_columns(columns);
    let names: Vec<String> = columns.iter().map(|&j| values[j].clone()).collect();
    let correlation = correlation_matrix(&sub, &names)?;
    let pc = pca(&correlation, k)?;
    let loadings = if rotate && k > 1 {
        rotate_varimax(&pc.loadings, VarimaxOptions::default())?.loadings
    } else {
        pc.loadings
    };
    let assignment = assign(&loadings);
    let alphas = factor_alphas(&sub, &assignment, k);
    Ok(FactorSolution {
        values: names,
        columns: columns.to_vec(),
        correlation,
        loadings,
        eigenvalues: pc.eigenvalues,
        assignment,
        alphas,
    })
}

/// Index of the elbow: the `k` maximizing `λ_k - 2 λ_{k+1} + λ_{k+2}`
/// (1-based, ties to the smaller `k`).
pub fn scree_elbow(eigenvalues: &[f64]) -> Result<usize> {
    if eigenvalues.len() < 3 {
        return Err(Error::invalid("scree analysis needs at least 3 eigenvalues"));
    }
    let mut best_k = 1;
    let mut best = f64::NEG_INFINITY;
    for k in 1..=eigenvalues.len() - 2 {
        let d2 = eigenvalues[k - 1] - 2.0 * eigenvalues[k] + eigenvalues[k + 1];
        if d2 > best + 1e-12 {
            best = d2;
            best_k = k;
        }
    }
    Ok(best_k)
}

/// Starts at the scree elbow and steps down until every factor of the
/// `k`-factor solution reaches [`MIN_ALPHA`]; never returns less than 1.
pub fn scree_retention<F>(eigenvalues: &[f64], mut alphas_by_k: F) -> Result<usize>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    let elbow = scree_elbow(eigenvalues)?;
    for k in (1..=elbow).rev() {
        let alphas = alphas_by_k(k)?;
        if alphas.iter().all(|&a| a >= MIN_ALPHA) {
            return Ok(k);
        }
        log::info!("{k}-factor solution has alphas {alphas:?}; trying fewer factors");
    }
    Ok(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneRules {
    /// A value must load at least this much on its own factor.
    pub primary_cutoff: f64,
    /// ... and beat its second-highest absolute loading by at least this much.
    pub gap_cutoff: f64,
    pub min_alpha: f64,
    pub rotate: bool,
}

impl Default for PruneRules {
    fn default() -> Self {
        Self {
            primary_cutoff: 0.40,
            gap_cutoff: 0.10,
            min_alpha: MIN_ALPHA,
            rotate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedItem {
    pub value: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub solution: FactorSolution,
    pub dropped: Vec<DroppedItem>,
}

fn loading_profile(row: nalgebra::RowDVector<f64>) -> (f64, f64) {
    let mut abs: Vec<f64> = row.iter().map(|x| x.abs()).collect();
    abs.sort_by(|a, b| b.total_cmp(a));
    let primary = abs[0];
    let gap = if abs.len() > 1 { abs[0] - abs[1] } else { f64::INFINITY };
    (primary, gap)
}

/// Iteratively removes the worst value until every value loads cleanly and
/// every factor is reliable, refitting after each removal.
///
/// A value fails when its primary |loading| is below `primary_cutoff` or its
/// gap to the runner-up is below `gap_cutoff`; the failing value with the
/// weakest primary loading goes first. Once no value fails, a factor below
/// `min_alpha` loses its weakest item.
pub fn prune_items(
    data: &DMatrix<f64>,
    values: &[String],
    k: usize,
    rules: PruneRules,
) -> Result<PruneOutcome> {
    let mut columns: Vec<usize> = (0..values.len()).collect();
    let mut dropped = Vec::new();
    loop {
        if columns.len() <= k {
            return Err(Error::invalid(format!(
                "pruning left {} values for {k} factors",
                columns.len()
            )));
        }
        let sol = solve(data, values, &columns, k, rules.rotate)?;
        for f in 0..k {
            if sol.items_of(f).is_empty() {
                return Err(Error::invalid(format!("factor {} has no assigned values", f + 1)));
            }
        }
        let worst = (0..columns.len())
            .filter_map(|i| {
                let (primary, gap) = loading_profile(sol.loadings.row(i).into_owned());
                let fails = primary < rules.primary_cutoff || gap < rules.gap_cutoff;
                fails.then_some((i, primary, gap))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.2.total_cmp(&b.2)).then(a.0.cmp(&b.0)));
        if let Some((i, primary, gap)) = worst {
            let factor = sol.assignment[i].factor;
            if sol.items_of(factor).len() <= 1 {
                return Err(Error::invalid(format!(
                    "pruning `{}` would empty factor {}",
                    sol.values[i],
                    factor + 1
                )));
            }
            dropped.push(DroppedItem {
                value: sol.values[i].clone(),
                reason: format!("primary loading {primary:.3}, gap {gap:.3}"),
            });
            columns.remove(i);
            continue;
        }
        let weak = sol
            .alphas
            .iter()
            .enumerate()
            .filter(|(_, &a)| a < rules.min_alpha)
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)));
        if let Some((f, &a)) = weak {
            let items = sol.items_of(f);
            if items.len() <= 2 {
                return Err(Error::invalid(format!(
                    "factor {} stays below alpha {} (alpha {a:.3}) and pruning would empty it",
                    f + 1,
                    rules.min_alpha
                )));
            }
            let i = *items
                .iter()
                .min_by(|&&x, &&y| {
                    sol.loadings[(x, f)]
                        .abs()
                        .total_cmp(&sol.loadings[(y, f)].abs())
                        .then(x.cmp(&y))
                })
                .unwrap();
            dropped.push(DroppedItem {
                value: sol.values[i].clone(),
                reason: format!("factor {} alpha {a:.3}", f + 1),
            });
            columns.remove(i);
            continue;
        }
        return Ok(PruneOutcome {
            solution: sol,
            dropped,
        });
    }
}

/// Tucker's congruence coefficient between two loading vectors.
pub fn congruence(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Matches columns of `found` to columns of `reference` (same shape) over all
/// permutations and sign flips, maximizing total |congruence|. Returns the
/// per-reference-column congruence after alignment.
pub fn matched_congruence(found: &DMatrix<f64>, reference: &DMatrix<f64>) -> Vec<f64> {
    let k = reference.ncols();
    assert_eq!(found.shape(), reference.shape());
    let c = DMatrix::from_fn(k, k, |i, j| {
        congruence(
            reference.column(i).as_slice(),
            found.column(j).as_slice(),
        )
    });
    let mut best_perm: Vec<usize> = (0..k).collect();
    let mut best_score = f64::NEG_INFINITY;
    let mut perm: Vec<usize> = (0..k).collect();
    permute(&mut perm, 0, &mut |p| {
        let s: f64 = p.iter().enumerate().map(|(i, &j)| c[(i, j)].abs()).sum();
        if s > best_score {
            best_score = s;
            best_perm = p.to_vec();
        }
    });
    best_perm
        .iter()
        .enumerate()
        .map(|(i, &j)| c[(i, j)].abs())
        .collect()
}

fn permute(v: &mut Vec<usize>, start: usize, f: &mut impl FnMut(&[usize])) {
    if start == v.len() {
        f(v);
        return;
    }
    for i in start..v.len() {
        v.swap(start, i);
        permute(v, start + 1, f);
        v.swap(start, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elbow_of_dominant_drop() {
        assert_eq!(scree_elbow(&[10.0, 1.1, 1.0, 0.9]).unwrap(), 1);
        assert!(scree_elbow(&[1.0, 0.5]).is_err());
    }

    #[test]
    fn retention_steps_down_on_low_alpha() {
        let eig = [5.0, 4.8, 4.6, 0.2, 0.1, 0.05];
        assert_eq!(scree_elbow(&eig).unwrap(), 3);
        let k = scree_retention(&eig, |k| Ok(if k == 3 { vec![0.9, 0.8, 0.5] } else { vec![0.9; k] }))
            .unwrap();
        assert_eq!(k, 2);
        let k = scree_retention(&eig, |k| Ok(vec![0.1; k])).unwrap();
        assert_eq!(k, 1);
    }

    #[test]
    fn assignment_uses_absolute_loading() {
        let l = DMatrix::from_row_slice(2, 2, &[0.2, -0.8, 0.5, 0.4]);
        let a = assign(&l);
        assert_eq!(a[0], Assignment { factor: 1, negative: true });
        assert_eq!(a[1], Assignment { factor: 0, negative: false });
    }

    #[test]
    fn congruence_matching_handles_sign_and_order() {
        let r = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.9, 0.1, 0.0, 1.0]);
        let f = DMatrix::from_row_slice(3, 2, &[0.0, -1.0, -0.1, -0.9, 1.0, 0.0]);
        for c in matched_congruence(&f, &r) {
            assert!(c > 0.98);
        }
    }
}
