//! Descriptive statistics helpers.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased (n - 1) sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Pearson correlation; `None` when either side has zero variance or fewer
/// than two points.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return None;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Linear-interpolation quantile (the "type 7" definition) of unsorted data.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() as f64 - 1.0) * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Column-wise Pearson correlation matrix of an n x p data matrix.
///
/// `names` is only used for error messages; a zero-variance column is an error.
pub fn correlation_matrix(data: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    let (n, p) = data.shape();
    if n < 2 {
        return Err(Error::invalid("correlation needs at least two rows"));
    }
    let mut centered = data.clone();
    let mut sd = vec![0.0; p];
    for j in 0..p {
        let m = data.column(j).mean();
        let mut ss = 0.0;
        for i in 0..n {
            let d = data[(i, j)] - m;
            centered[(i, j)] = d;
            ss += d * d;
        }
        if ss <= 1e-300 {
            let name = names.get(j).cloned().unwrap_or_else(|| format!("column {j}"));
            return Err(Error::numerical(format!("zero variance in `{name}`")));
        }
        sd[j] = ss.sqrt();
    }
    for j in 0..p {
        let s = sd[j];
        centered.column_mut(j).iter_mut().for_each(|x| *x /= s);
    }
    let mut r = centered.transpose() * &centered;
    for i in 0..p {
        r[(i, i)] = 1.0;
        for j in 0..i {
            let v = (0.5 * (r[(i, j)] + r[(j, i)])).clamp(-1.0, 1.0);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    Ok(r)
}

/// Unbiased sample covariance matrix.
pub fn covariance_matrix(data: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = data.shape();
    let mut centered = data.clone();
    for j in 0..p {
        let m = data.column(j).mean();
        centered.column_mut(j).iter_mut().for_each(|x| *x -= m);
    }
    let mut s = centered.transpose() * &centered / (n as f64 - 1.0);
    for i in 0..p {
        for j in 0..i {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}
