use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarimaxOptions {
    /// Kaiser row normalization before rotating.
    pub normalize: bool,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for VarimaxOptions {
    fn default() -> Self {
        Self {
            normalize: true,
            max_iter: 1000,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rotated {
    pub loadings: DMatrix<f64>,
    /// Orthogonal k x k matrix with `loadings = input * rotation`.
    pub rotation: DMatrix<f64>,
}

/// The raw varimax criterion: summed column variances of squared loadings.
pub fn varimax_criterion(l: &DMatrix<f64>) -> f64 {
    let p = l.nrows() as f64;
    l.column_iter()
        .map(|c| {
            let sq: Vec<f64> = c.iter().map(|x| x * x).collect();
            let m = sq.iter().sum::<f64>() / p;
            sq.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / p
        })
        .sum()
}

/// Orthogonal varimax rotation (SVD iteration). Output columns are signed so
/// their loading sums are non-negative and ordered by explained variance.
pub fn rotate_varimax(l: &DMatrix<f64>, opts: VarimaxOptions) -> Result<Rotated> {
    let (p, k) = l.shape();
    if k < 2 {
        return Ok(Rotated {
            loadings: l.clone(),
            rotation: DMatrix::identity(k, k),
        });
    }
    let scale: Vec<f64> = (0..p)
        .map(|i| {
            if opts.normalize {
                let s = l.row(i).norm();
                if s > 1e-300 {
                    s
                } else {
                    1.0
                }
            } else {
                1.0
            }
        })
        .collect();
    let x = DMatrix::from_fn(p, k, |i, j| l[(i, j)] / scale[i]);
    let mut t = DMatrix::<f64>::identity(k, k);
    let mut d = 0.0;
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let z = &x * &t;
        let col_ss: Vec<f64> = z.column_iter().map(|c| c.norm_squared() / p as f64).collect();
        let target = DMatrix::from_fn(p, k, |i, j| {
            let zij = z[(i, j)];
            zij * zij * zij - zij * col_ss[j]
        });
        let b = x.transpose() * target;
        let svd = b.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        t = u * vt;
        let d_past = d;
        d = svd.singular_values.sum();
        trace.push(d);
        if d <= d_past * (1.0 + opts.tol) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: opts.max_iter,
            gradient_norm: f64::NAN,
            trace,
        });
    }
    let z = &x * &t;
    let mut rotated = DMatrix::from_fn(p, k, |i, j| z[(i, j)] * scale[i]);

    let mut order: Vec<usize> = (0..k).collect();
    let ss: Vec<f64> = rotated.column_iter().map(|c| c.norm_squared()).collect();
    order.sort_by(|&a, &b| ss[b].total_cmp(&ss[a]).then(a.cmp(&b)));
    let mut out_l = DMatrix::zeros(p, k);
    let mut out_t = DMatrix::zeros(k, k);
    for (c, &j) in order.iter().enumerate() {
        let sign = if rotated.column(j).sum() < 0.0 { -1.0 } else { 1.0 };
        out_l.set_column(c, &(rotated.column(j) * sign));
        out_t.set_column(c, &(t.column(j) * sign));
    }
    rotated = out_l;
    Ok(Rotated {
        loadings: rotated,
        rotation: out_t,
    })
}
