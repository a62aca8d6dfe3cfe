use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PcaResult {
    /// p x k, column j = sqrt(eigenvalue_j) * eigenvector_j.
    pub loadings: DMatrix<f64>,
    /// All p eigenvalues, descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue. Each
/// eigenvector is signed so its largest-magnitude entry is positive.
pub fn sorted_eigen(r: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let p = r.nrows();
    if p == 0 || r.ncols() != p {
        return Err(Error::invalid("expected a non-empty square matrix"));
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("matrix has non-finite entries"));
    }
    let scale = r.amax().max(1.0);
    for i in 0..p {
        for j in 0..i {
            if (r[(i, j)] - r[(j, i)]).abs() > 1e-8 * scale {
                return Err(Error::invalid(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let eig = SymmetricEigen::try_new(r.clone(), 1e-14, 10_000).ok_or_else(|| {
        Error::numerical(format!(
            "eigendecomposition did not converge (p = {p}, max |entry| = {scale:.3e})"
        ))
    })?;
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(p, p);
    for (c, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let (imax, _) = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |acc, (k, x)| if x.abs() > acc.1 + 1e-12 { (k, x.abs()) } else { acc });
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(c, &v);
    }
    Ok((values, vectors))
}

/// Principal-component loadings of a correlation matrix, keeping `k` components.
pub fn pca(r: &DMatrix<f64>, k: usize) -> Result<PcaResult> {
    let p = r.nrows();
    if k == 0 || k > p {
        return Err(Error::invalid(format!("component count {k} outside 1..={p}")));
    }
    let (values, vectors) = sorted_eigen(r)?;
    let smallest = *values.last().unwrap();
    let tol = 1e-8 * values[0].abs().max(1.0) * p as f64;
    if smallest < -tol {
        return Err(Error::numerical(format!(
            "matrix is not positive semidefinite (smallest eigenvalue {smallest:.3e}, largest {:.3e})",
            values[0]
        )));
    }
    let eigenvalues: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    let mut loadings = DMatrix::zeros(p, k);
    for j in 0..k {
        let s = eigenvalues[j].sqrt();
        loadings.set_column(j, &(vectors.column(j) * s));
    }
    Ok(PcaResult {
        loadings,
        eigenvalues,
    })
}
