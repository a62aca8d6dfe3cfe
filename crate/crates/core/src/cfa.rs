//! Confirmatory factor analysis by maximum likelihood, with the usual fit
//! indices, embedding-based mapping onto a reference value system, and the
//! resampling helpers of the held-out validation protocol.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::cosine;
use crate::optim::{bfgs, MinimizeOptions};
use crate::stats::{correlation_matrix, covariance_matrix};

/// A confirmatory model: each observed value loads on exactly one factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CfaSpec {
    pub observed: Vec<String>,
    pub factors: Vec<String>,
    /// Factor index per observed variable.
    pub assignment: Vec<usize>,
    pub correlated_factors: bool,
}

impl CfaSpec {
    /// Factors are ordered by first appearance in `mapping`.
    pub fn new(mapping: &[(String, String)], correlated_factors: bool) -> Result<Self> {
        let mut factors: Vec<String> = Vec::new();
        let mut observed = Vec::new();
        let mut assignment = Vec::new();
        for (v, f) in mapping {
            if observed.contains(v) {
                return Err(Error::invalid(format!("value `{v}` assigned twice")));
            }
            let fi = match factors.iter().position(|x| x == f) {
                Some(i) => i,
                None => {
                    factors.push(f.clone());
                    factors.len() - 1
                }
            };
            observed.push(v.clone());
            assignment.push(fi);
        }
        for (fi, f) in factors.iter().enumerate() {
            let n = assignment.iter().filter(|&&a| a == fi).count();
            if n < 2 {
                return Err(Error::invalid(format!(
                    "factor `{f}` has {n} indicator(s); at least 2 are required"
                )));
            }
        }
        Ok(Self {
            observed,
            factors,
            assignment,
            correlated_factors,
        })
    }

    pub fn p(&self) -> usize {
        self.observed.len()
    }

    pub fn m(&self) -> usize {
        self.factors.len()
    }

    fn factor_pairs(&self) -> Vec<(usize, usize)> {
        if !self.correlated_factors {
            return Vec::new();
        }
        let m = self.m();
        (0..m).flat_map(|f| (f + 1..m).map(move |g| (f, g))).collect()
    }

    /// Free parameters: one loading and one error variance per observed
    /// variable, plus factor correlations when allowed.
    pub fn n_params(&self) -> usize {
        2 * self.p() + self.factor_pairs().len()
    }

    pub fn df(&self) -> i64 {
        let p = self.p() as i64;
        p * (p + 1) / 2 - self.n_params() as i64
    }

    pub fn read_csv(input: impl Read, correlated_factors: bool) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            value: String,
            factor: String,
        }
        let mut r = csv::Reader::from_reader(input);
        let mut mapping = Vec::new();
        for row in r.deserialize() {
            let row: Row = row?;
            mapping.push((row.value, row.factor));
        }
        Self::new(&mapping, correlated_factors)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["value", "factor"])?;
        for (v, &f) in self.observed.iter().zip(&self.assignment) {
            w.write_record([v.as_str(), self.factors[f].as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CfaFit {
    pub observed: Vec<String>,
    pub factors: Vec<String>,
    /// Loading of each observed variable on its assigned factor.
    pub free_loadings: Vec<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub factor_covariance: DMatrix<f64>,
    pub error_variances: Vec<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub implied: DMatrix<f64>,
    pub f_ml: f64,
    pub chi_square: f64,
    pub df: i64,
    pub n_params: usize,
    pub n_obs: usize,
    /// Multivariate normal log-likelihood at the optimum.
    pub log_likelihood: f64,
    pub grad_norm: f64,
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

/// Independence (zero-covariance) model fitted on the same S.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaselineFit {
    pub chi_square: f64,
    pub df: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitIndices {
    pub cfi: f64,
    pub gfi: f64,
    pub rmsea: f64,
    pub aic: f64,
    pub bic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfaOptions {
    pub restarts: usize,
    /// Supplied by the caller; not read from config files.
    #[serde(skip)]
    pub seed: u64,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// An error variance below this fraction of the observed variance counts
    /// as a Heywood case.
    pub heywood_ratio: f64,
    /// Minimum rows per observed variable.
    pub min_rows_per_variable: usize,
}

impl Default for CfaOptions {
    fn default() -> Self {
        Self {
            restarts: 4,
            seed: 0,
            max_iter: 5000,
            grad_tol: 1e-7,
            heywood_ratio: 1e-4,
            min_rows_per_variable: 5,
        }
    }
}

/// Unpacked parameter vector: `[loadings (p), log error variances (p), factor correlations]`.
struct Params {
    lambda: DMatrix<f64>,
    phi: DMatrix<f64>,
    theta: Vec<f64>,
}

fn unpack(spec: &CfaSpec, x: &[f64]) -> Params {
    let (p, m) = (spec.p(), spec.m());
    let mut lambda = DMatrix::zeros(p, m);
    for i in 0..p {
        lambda[(i, spec.assignment[i])] = x[i];
    }
    let theta: Vec<f64> = (0..p).map(|i| x[p + i].exp()).collect();
    let mut phi = DMatrix::identity(m, m);
    for (k, (f, g)) in spec.factor_pairs().into_iter().enumerate() {
        phi[(f, g)] = x[2 * p + k];
        phi[(g, f)] = x[2 * p + k];
    }
    Params { lambda, phi, theta }
}

fn implied(par: &Params) -> DMatrix<f64> {
    let mut sigma = &par.lambda * &par.phi * par.lambda.transpose();
    for (i, t) in par.theta.iter().enumerate() {
        sigma[(i, i)] += t;
    }
    sigma
}

fn log_det(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// ML discrepancy and its analytic gradient; `None` when Σ(θ) or Φ is not
/// positive definite.
pub struct Discrepancy<'a> {
    spec: &'a CfaSpec,
    s: &'a DMatrix<f64>,
    log_det_s: f64,
}

impl<'a> Discrepancy<'a> {
    pub fn new(spec: &'a CfaSpec, s: &'a DMatrix<f64>) -> Result<Self> {
        let ch = Cholesky::new(s.clone())
            .ok_or_else(|| Error::numerical("sample covariance matrix is not invertible"))?;
        Ok(Self {
            spec,
            s,
            log_det_s: log_det(&ch),
        })
    }

    pub fn value(&self, x: &[f64]) -> Option<f64> {
        self.eval(x, false).map(|(f, _)| f)
    }

    pub fn value_and_gradient(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.eval(x, true)
    }

    fn eval(&self, x: &[f64], want_grad: bool) -> Option<(f64, Vec<f64>)> {
        let spec = self.spec;
        let p = spec.p();
        let par = unpack(spec, x);
        if spec.correlated_factors {
            Cholesky::new(par.phi.clone())?;
        }
        let sigma = implied(&par);
        let ch = Cholesky::new(sigma)?;
        let inv = ch.inverse();
        let inv_s = &inv * self.s;
        let f = log_det(&ch) + inv_s.trace() - self.log_det_s - p as f64;
        if !f.is_finite() {
            return None;
        }
        if !want_grad {
            return Some((f, Vec::new()));
        }
        let omega = &inv - &inv_s * &inv;
        let olp = &omega * &par.lambda * &par.phi;
        let mut grad = vec![0.0; x.len()];
        for i in 0..p {
            grad[i] = 2.0 * olp[(i, spec.assignment[i])];
            grad[p + i] = omega[(i, i)] * par.theta[i];
        }
        if spec.correlated_factors {
            let lol = par.lambda.transpose() * &omega * &par.lambda;
            for (k, (a, b)) in spec.factor_pairs().into_iter().enumerate() {
                grad[2 * p + k] = 2.0 * lol[(a, b)];
            }
        }
        Some((f, grad))
    }
}

/// Factor correlations in unconstrained form: row `i` of a unit-row
/// lower-triangular `L` is `(z_i0, .., z_i,i-1, 1)` normalised, and
/// `Φ = L Lᵀ`, which is positive definite for every finite `z`.
fn unit_rows(m: usize, z: &[f64]) -> Vec<DVector<f64>> {
    let mut rows = Vec::with_capacity(m);
    let mut k = 0;
    for i in 0..m {
        let mut v = DVector::zeros(m);
        for c in 0..i {
            v[c] = z[k];
            k += 1;
        }
        v[i] = 1.0;
        rows.push(v);
    }
    rows
}

fn phi_from_z(m: usize, z: &[f64]) -> Vec<(usize, usize, f64)> {
    let u: Vec<DVector<f64>> = unit_rows(m, z).into_iter().map(|v| v.normalize()).collect();
    (0..m).flat_map(|f| (f + 1..m).map(move |g| (f, g))).map(|(f, g)| (f, g, u[f].dot(&u[g]))).collect()
}

/// Inverse of [`phi_from_z`] for a positive definite correlation matrix.
fn z_from_phi(phi: &DMatrix<f64>) -> Option<Vec<f64>> {
    let l = Cholesky::new(phi.clone())?.l();
    let m = phi.nrows();
    Some((1..m).flat_map(|i| (0..i).map(move |c| (i, c))).map(|(i, c)| l[(i, c)] / l[(i, i)]).collect())
}

/// Maps an optimizer point (correlations as `z`) to the natural layout.
fn natural_from_z(spec: &CfaSpec, y: &[f64]) -> Vec<f64> {
    let p = spec.p();
    let mut x = y[..2 * p].to_vec();
    if spec.correlated_factors {
        x.extend(phi_from_z(spec.m(), &y[2 * p..]).into_iter().map(|(_, _, r)| r));
    }
    x
}

fn z_from_natural(spec: &CfaSpec, x: &[f64]) -> Option<Vec<f64>> {
    let p = spec.p();
    let mut y = x[..2 * p].to_vec();
    if spec.correlated_factors {
        y.extend(z_from_phi(&unpack(spec, x).phi)?);
    }
    Some(y)
}

/// Discrepancy and gradient over the unconstrained parameterisation.
fn value_and_gradient_z(disc: &Discrepancy, y: &[f64]) -> Option<(f64, Vec<f64>)> {
    let spec = disc.spec;
    let (p, m) = (spec.p(), spec.m());
    let x = natural_from_z(spec, y);
    let (f, gx) = disc.value_and_gradient(&x)?;
    if !spec.correlated_factors {
        return Some((f, gx));
    }
    let mut gphi = DMatrix::zeros(m, m);
    for (k, (a, b)) in spec.factor_pairs().into_iter().enumerate() {
        gphi[(a, b)] = gx[2 * p + k];
        gphi[(b, a)] = gx[2 * p + k];
    }
    let rows = unit_rows(m, &y[2 * p..]);
    let u: Vec<DVector<f64>> = rows.iter().map(|v| v.normalize()).collect();
    let mut g = gx[..2 * p].to_vec();
    for i in 1..m {
        let mut du = DVector::zeros(m);
        for j in 0..m {
            if j != i {
                du += &u[j] * gphi[(i, j)];
            }
        }
        let dv = (&du - &u[i] * u[i].dot(&du)) / rows[i].norm();
        g.extend((0..i).map(|c| dv[c]));
    }
    Some((f, g))
}

/// Deterministic start on the scale of `s`: loadings 0.7 sd, error
/// variances 0.51 of the observed variance, uncorrelated factors.
pub fn start_values(spec: &CfaSpec, s: &DMatrix<f64>) -> Vec<f64> {
    let p = spec.p();
    let mut x = Vec::with_capacity(spec.n_params());
    x.extend((0..p).map(|i| 0.7 * s[(i, i)].sqrt()));
    x.extend((0..p).map(|i| (0.51 * s[(i, i)]).ln()));
    x.extend(std::iter::repeat(0.0).take(spec.factor_pairs().len()));
    x
}

/// Fits `spec` to the covariance (or correlation) matrix `s` of `n` rows.
pub fn fit_matrix(spec: &CfaSpec, s: &DMatrix<f64>, n: usize, opts: CfaOptions) -> Result<CfaFit> {
    let p = spec.p();
    if s.shape() != (p, p) {
        return Err(Error::invalid("sample matrix does not match the model"));
    }
    if n < opts.min_rows_per_variable * p {
        return Err(Error::invalid(format!(
            "{n} rows for {p} observed variables; at least {} required (bootstrap-expand first)",
            opts.min_rows_per_variable * p
        )));
    }
    let disc = Discrepancy::new(spec, s)?;
    let base = start_values(spec, s);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![base.clone()];
    for _ in 0..opts.restarts {
        let jittered: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let u: f64 = rng.random_range(-1.0..1.0);
                if i < p {
                    v * (1.0 + 0.3 * u)
                } else if i < 2 * p {
                    v + 0.3 * u
                } else {
                    0.3 * u
                }
            })
            .collect();
        starts.push(jittered);
    }
    let min_opts = MinimizeOptions {
        max_iter: opts.max_iter,
        grad_tol: opts.grad_tol,
    };
    let mut best: Option<crate::optim::Minimum> = None;
    let mut best_failed_grad = f64::INFINITY;
    for start in starts {
        let Some(start) = z_from_natural(spec, &start) else {
            continue;
        };
        if disc.value(&natural_from_z(spec, &start)).is_none() {
            continue;
        }
        let mut m = bfgs(|y| value_and_gradient_z(&disc, y), &start, min_opts);
        m.x = natural_from_z(spec, &m.x);
        if !m.converged {
            best_failed_grad = best_failed_grad.min(m.grad_norm);
            continue;
        }
        if best.as_ref().map_or(true, |b| m.value < b.value - 1e-12) {
            best = Some(m);
        }
    }
    let Some(best) = best else {
        return Err(Error::NonConvergence {
            iterations: opts.max_iter,
            gradient_norm: best_failed_grad,
            trace: Vec::new(),
        });
    };

    let mut par = unpack(spec, &best.x);
    for (i, t) in par.theta.iter().enumerate() {
        if *t < opts.heywood_ratio * s[(i, i)] {
            return Err(Error::Heywood(spec.observed[i].clone()));
        }
    }
    // Each factor's loadings are identified only up to a joint sign flip.
    for f in 0..spec.m() {
        if par.lambda.column(f).sum() < 0.0 {
            par.lambda.column_mut(f).neg_mut();
            for g in 0..spec.m() {
                if g != f {
                    par.phi[(f, g)] = -par.phi[(f, g)];
                    par.phi[(g, f)] = -par.phi[(g, f)];
                }
            }
        }
    }
    let sigma = implied(&par);
    let ch = Cholesky::new(sigma.clone()).expect("optimum is feasible");
    let free_loadings = (0..p).map(|i| par.lambda[(i, spec.assignment[i])]).collect();
    let log_likelihood = -0.5
        * n as f64
        * (p as f64 * (2.0 * std::f64::consts::PI).ln()
            + log_det(&ch)
            + (ch.inverse() * s).trace());
    Ok(CfaFit {
        observed: spec.observed.clone(),
        factors: spec.factors.clone(),
        free_loadings,
        factor_covariance: par.phi,
        error_variances: par.theta,
        implied: sigma,
        f_ml: best.value.max(0.0),
        chi_square: (n as f64 - 1.0) * best.value.max(0.0),
        df: spec.df(),
        n_params: spec.n_params(),
        n_obs: n,
        log_likelihood,
        grad_norm: best.grad_norm,
    })
}

/// Which sample matrix the fit runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SampleMatrix {
    #[default]
    Covariance,
    Correlation,
}

pub fn sample_matrix(data: &DMatrix<f64>, names: &[String], kind: SampleMatrix) -> Result<DMatrix<f64>> {
    match kind {
        SampleMatrix::Covariance => Ok(covariance_matrix(data)),
        SampleMatrix::Correlation => correlation_matrix(data, names),
    }
}

/// Fits `spec` to raw data whose columns are named by `names`.
pub fn fit(
    spec: &CfaSpec,
    data: &DMatrix<f64>,
    names: &[String],
    kind: SampleMatrix,
    opts: CfaOptions,
) -> Result<(CfaFit, DMatrix<f64>)> {
    let cols: Vec<usize> = spec
        .observed
        .iter()
        .map(|v| {
            names
                .iter()
                .position(|n| n == v)
                .ok_or_else(|| Error::invalid(format!("observed value `{v}` not in data")))
        })
        .collect::<Result<_>>()?;
    let sub = data.select_columns(&cols);
    let s = sample_matrix(&sub, &spec.observed, kind)?;
    let fitted = fit_matrix(spec, &s, data.nrows(), opts)?;
    Ok((fitted, s))
}

pub fn fit_independence(s: &DMatrix<f64>, n: usize) -> Result<BaselineFit> {
    let p = s.nrows();
    let ch = Cholesky::new(s.clone())
        .ok_or_else(|| Error::numerical("sample covariance matrix is not invertible"))?;
    let f = (0..p).map(|i| s[(i, i)].ln()).sum::<f64>() - log_det(&ch);
    let p = p as i64;
    Ok(BaselineFit {
        chi_square: (n as f64 - 1.0) * f.max(0.0),
        df: p * (p - 1) / 2,
    })
}

/// CFI, GFI, RMSEA, AIC and BIC of a fitted model against its baseline.
/// RMSEA is reported as 0 for a model without degrees of freedom.
pub fn indices(fitted: &CfaFit, s: &DMatrix<f64>, n: usize, baseline: &BaselineFit) -> Result<FitIndices> {
    if baseline.df <= 0 {
        return Err(Error::invalid("baseline model has no degrees of freedom"));
    }
    let chi = fitted.chi_square;
    let df = fitted.df as f64;
    let q = fitted.n_params as f64;
    let rmsea = if df > 0.0 {
        ((chi - df) / (df * (n as f64 - 1.0))).max(0.0).sqrt()
    } else {
        0.0
    };
    let excess = (chi - df).max(0.0);
    let denom = (baseline.chi_square - baseline.df as f64).max(chi - df).max(0.0);
    let cfi = if denom > 0.0 { 1.0 - excess / denom } else { 1.0 };
    let inv = fitted
        .implied
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("implied covariance is not positive definite"))?
        .inverse();
    let a = inv * s;
    let resid = &a - DMatrix::identity(a.nrows(), a.ncols());
    let gfi = 1.0 - (&resid * &resid).trace() / (&a * &a).trace();
    Ok(FitIndices {
        cfi: cfi.clamp(0.0, 1.0),
        gfi: gfi.clamp(0.0, 1.0),
        rmsea,
        aic: chi + 2.0 * q,
        bic: chi + q * (n as f64).ln(),
    })
}

/// Maps each value to the target with the highest embedding cosine
/// (ties to the lexicographically smallest target).
pub fn map_values_to_system<E>(
    values: &[String],
    targets: &[String],
    embed: E,
) -> Result<Vec<(String, String)>>
where
    E: Fn(&str) -> Result<Vec<f64>>,
{
    if targets.is_empty() {
        return Err(Error::invalid("no target values to map onto"));
    }
    let target_vecs: BTreeMap<&String, Vec<f64>> = targets
        .iter()
        .map(|t| Ok((t, embed(t)?)))
        .collect::<Result<_>>()?;
    values
        .iter()
        .map(|v| {
            let e = embed(v)?;
            let mut best: Option<(&String, f64)> = None;
            // BTreeMap iteration is lexicographic, so strict `>` keeps the smallest on ties.
            for (t, tv) in &target_vecs {
                let c = cosine(&e, tv);
                if best.map_or(true, |(_, bc)| c > bc) {
                    best = Some((t, c));
                }
            }
            Ok((v.clone(), best.unwrap().0.clone()))
        })
        .collect()
}

/// Row indices: all original rows first, then seeded draws with replacement
/// up to `target_n`.
pub fn bootstrap_rows(n: usize, target_n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::invalid("cannot expand empty data"));
    }
    if target_n < n {
        return Err(Error::invalid("target row count is below the current one"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<usize> = (0..n).collect();
    rows.extend((n..target_n).map(|_| rng.random_range(0..n)));
    Ok(rows)
}

pub fn bootstrap_expand(data: &DMatrix<f64>, target_n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let rows = bootstrap_rows(data.nrows(), target_n, seed)?;
    Ok(data.select_rows(&rows))
}

/// Seeded half/half split of `n` row indices: (construction, held out).
pub fn split_half(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut a = idx[..n / 2].to_vec();
    let mut b = idx[n / 2..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}
