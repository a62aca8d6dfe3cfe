use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::quantile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub alpha: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Cronbach's alpha of an n x k item matrix with unbiased variances.
pub fn cronbach_alpha_point(items: &DMatrix<f64>) -> Result<f64> {
    let (n, k) = items.shape();
    if k < 2 {
        return Err(Error::invalid("alpha needs at least two items"));
    }
    if n < 3 {
        return Err(Error::invalid("alpha needs at least three rows"));
    }
    alpha_of_rows(items, &(0..n).collect::<Vec<_>>())
        .ok_or_else(|| Error::numerical("total score has zero variance"))
}

fn alpha_of_rows(items: &DMatrix<f64>, rows: &[usize]) -> Option<f64> {
    let k = items.ncols();
    let n = rows.len() as f64;
    let mut item_var_sum = 0.0;
    for j in 0..k {
        let m = rows.iter().map(|&i| items[(i, j)]).sum::<f64>() / n;
        item_var_sum += rows.iter().map(|&i| (items[(i, j)] - m).powi(2)).sum::<f64>() / (n - 1.0);
    }
    let totals: Vec<f64> = rows.iter().map(|&i| items.row(i).sum()).collect();
    let mt = totals.iter().sum::<f64>() / n;
    let total_var = totals.iter().map(|t| (t - mt).powi(2)).sum::<f64>() / (n - 1.0);
    if total_var <= 1e-300 {
        return None;
    }
    let k = k as f64;
    Some(k / (k - 1.0) * (1.0 - item_var_sum / total_var))
}

/// Alpha with a percentile bootstrap 95% interval over resampled rows.
///
/// Resample `b` draws from its own ChaCha8 stream (`seed`, stream `b`), so the
/// interval does not depend on thread scheduling. Resamples whose total score
/// is constant are skipped. With `reps == 0` the interval collapses to the
/// point estimate.
pub fn cronbach_alpha(items: &DMatrix<f64>, reps: usize, seed: u64) -> Result<AlphaEstimate> {
    let alpha = cronbach_alpha_point(items)?;
    let n = items.nrows();
    let boots: Vec<f64> = (0..reps)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            alpha_of_rows(items, &rows)
        })
        .collect();
    if boots.is_empty() {
        return Ok(AlphaEstimate {
            alpha,
            ci_low: alpha,
            ci_high: alpha,
        });
    }
    Ok(AlphaEstimate {
        alpha,
        ci_low: quantile(&boots, 0.025),
        ci_high: quantile(&boots, 0.975),
    })
}

/// Copies the selected columns, negating those flagged as negatively loaded.
pub fn signed_items(data: &DMatrix<f64>, columns: &[(usize, bool)]) -> DMatrix<f64> {
    DMatrix::from_fn(data.nrows(), columns.len(), |i, c| {
        let (j, negative) = columns[c];
        if negative {
            -data[(i, j)]
        } else {
            data[(i, j)]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicated_columns_give_one() {
        let col = [0.1, -0.5, 0.9, 0.3, -0.2];
        let items = DMatrix::from_fn(5, 4, |i, _| col[i]);
        assert!((cronbach_alpha_point(&items).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn preconditions() {
        assert!(cronbach_alpha_point(&DMatrix::zeros(5, 1)).is_err());
        assert!(cronbach_alpha_point(&DMatrix::zeros(2, 3)).is_err());
        assert!(matches!(
            cronbach_alpha_point(&DMatrix::from_element(4, 3, 1.0)),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn bootstrap_is_seeded() {
        let items = DMatrix::from_fn(30, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 + i as f64 * 0.3);
        let a = cronbach_alpha(&items, 200, 9).unwrap();
        let b = cronbach_alpha(&items, 200, 9).unwrap();
        assert_eq!(a.ci_low.to_bits(), b.ci_low.to_bits());
        assert_eq!(a.ci_high.to_bits(), b.ci_high.to_bits());
        assert!(a.ci_low <= a.ci_high);
    }
}
