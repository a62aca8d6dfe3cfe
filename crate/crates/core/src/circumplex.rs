//! Circular placement of factors from their correlation matrix.
//!
//! Correlations are modelled as a truncated cosine series in the angular
//! distance, `ρ(d) = β₀ + Σⱼ βⱼ cos(j·d)`. The coefficients are profiled out
//! by bounded least squares, so the search runs over angles only.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{bfgs, MinimizeOptions};
use crate::psychometrics::sorted_eigen;

const TAU: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircumplexOptions {
    /// Number of cosine terms after the constant.
    pub order: usize,
    pub starts: usize,
    /// Supplied by the caller; not read from config files.
    #[serde(skip)]
    pub seed: u64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for CircumplexOptions {
    fn default() -> Self {
        Self {
            order: 1,
            starts: 32,
            seed: 0,
            max_iter: 3000,
            grad_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircumplexFit {
    pub factors: Vec<String>,
    /// Radians in [0, 2π); the first factor sits at 0 and the second in [0, π].
    pub angles: Vec<f64>,
    /// `[β₀, β₁, ...]`.
    pub coefficients: Vec<f64>,
    pub stress: f64,
}

impl CircumplexFit {
    /// Model correlation at angular separation `d`.
    pub fn rho(&self, d: f64) -> f64 {
        series(&self.coefficients, d)
    }

    pub fn index_of(&self, factor: &str) -> Result<usize> {
        self.factors
            .iter()
            .position(|f| f == factor)
            .ok_or_else(|| Error::invalid(format!("unknown factor `{factor}`")))
    }

    pub fn distance(&self, a: &str, b: &str) -> Result<f64> {
        Ok(angular_distance(
            self.angles[self.index_of(a)?],
            self.angles[self.index_of(b)?],
        ))
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["factor", "angle_deg"])?;
        for (f, a) in self.factors.iter().zip(&self.angles) {
            w.write_record([f.clone(), format!("{:.6}", a.to_degrees())])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn series(beta: &[f64], d: f64) -> f64 {
    beta[0]
        + beta[1..]
            .iter()
            .enumerate()
            .map(|(j, b)| b * ((j + 1) as f64 * d).cos())
            .sum::<f64>()
}

fn series_slope(beta: &[f64], d: f64) -> f64 {
    -beta[1..]
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let jj = (j + 1) as f64;
            b * jj * (jj * d).sin()
        })
        .sum::<f64>()
}

/// Shortest distance on the circle, in [0, π].
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

fn wrap(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

fn upper_pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect()
}

/// Least-squares coefficients for fixed angles, restricted to a proper
/// correlation function: `β_j ≥ 0` for `j ≥ 1` and `|β₀| + Σ β_j ≤ 1`, so
/// `|ρ(d)| ≤ 1` everywhere. Without the bound the fit can keep improving by
/// collapsing all angles together while `β₁` grows without limit.
///
/// The feasible set has `order + 2` faces; every subset of them is tried as
/// an equality-constrained problem and the best feasible solution is kept.
fn profile_coefficients(r: &[f64], d: &[f64], order: usize) -> Vec<f64> {
    let m = order + 1;
    let x = DMatrix::from_fn(d.len(), m, |p, j| if j == 0 { 1.0 } else { (j as f64 * d[p]).cos() });
    let y = DVector::from_column_slice(r);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;
    // Rows `a` with `a·β ≤ b`.
    let mut faces: Vec<(DVector<f64>, f64)> = (1..m)
        .map(|j| {
            let mut a = DVector::zeros(m);
            a[j] = -1.0;
            (a, 0.0)
        })
        .collect();
    for sign in [1.0, -1.0] {
        let a = DVector::from_fn(m, |j, _| if j == 0 { sign } else { 1.0 });
        faces.push((a, 1.0));
    }
    let feasible = |b: &DVector<f64>| faces.iter().all(|(a, c)| a.dot(b) <= c + 1e-12);
    let sse = |b: &DVector<f64>| (&y - &x * b).norm_squared();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << faces.len()) {
        let active: Vec<usize> = (0..faces.len()).filter(|i| mask & (1 << i) != 0).collect();
        if active.len() > m {
            continue;
        }
        let n = m + active.len();
        let mut kkt = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        kkt.view_mut((0, 0), (m, m)).copy_from(&xtx);
        rhs.rows_mut(0, m).copy_from(&xty);
        for (row, &f) in active.iter().enumerate() {
            let (a, c) = &faces[f];
            for j in 0..m {
                kkt[(m + row, j)] = a[j];
                kkt[(j, m + row)] = a[j];
            }
            rhs[m + row] = *c;
        }
        let Ok(sol) = kkt.svd(true, true).solve(&rhs, 1e-12) else {
            continue;
        };
        let beta = sol.rows(0, m).into_owned();
        if !feasible(&beta) {
            continue;
        }
        let e = sse(&beta);
        if best.as_ref().map_or(true, |(b, _)| e < b - 1e-15) {
            best = Some((e, beta));
        }
    }
    // β = 0 is always feasible, so some subset produced a candidate.
    best.map(|(_, b)| b.iter().copied().collect())
        .unwrap_or_else(|| vec![0.0; m])
}

struct Stress<'a> {
    r: &'a [f64],
    pairs: &'a [(usize, usize)],
    order: usize,
}

impl Stress<'_> {
    /// `free` holds the angles of factors 1..k; factor 0 is pinned at 0.
    fn full_angles(free: &[f64]) -> Vec<f64> {
        std::iter::once(0.0).chain(free.iter().copied()).collect()
    }

    fn eval(&self, free: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let th = Self::full_angles(free);
        let d: Vec<f64> = self.pairs.iter().map(|&(i, j)| th[i] - th[j]).collect();
        let beta = profile_coefficients(self.r, &d, self.order);
        let mut grad = vec![0.0; th.len()];
        let mut stress = 0.0;
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            let e = self.r[p] - series(&beta, d[p]);
            stress += e * e;
            let g = -2.0 * e * series_slope(&beta, d[p]);
            grad[i] += g;
            grad[j] -= g;
        }
        (stress, grad[1..].to_vec(), beta)
    }
}

/// Classical MDS of the distances `1 − r` onto the plane, read as angles.
pub fn mds_angles(r: &DMatrix<f64>) -> Result<Vec<f64>> {
    let k = r.nrows();
    let d2 = r.map(|x| (1.0 - x).powi(2));
    let j = DMatrix::identity(k, k) - DMatrix::from_element(k, k, 1.0 / k as f64);
    let b = -0.5 * &j * d2 * &j;
    let (vals, vecs) = sorted_eigen(&b)?;
    let s0 = vals[0].max(0.0).sqrt();
    let s1 = vals.get(1).copied().unwrap_or(0.0).max(0.0).sqrt();
    Ok((0..k)
        .map(|i| wrap((vecs[(i, 1)] * s1).atan2(vecs[(i, 0)] * s0)))
        .collect())
}

/// Rotates so factor 0 is at 0 and reflects so factor 1 lies in [0, π].
fn gauge(angles: &[f64]) -> Vec<f64> {
    let a0 = angles[0];
    let mut out: Vec<f64> = angles.iter().map(|a| wrap(a - a0)).collect();
    if out.len() > 1 && out[1] > PI {
        out = out.iter().map(|a| wrap(-a)).collect();
    }
    out
}

pub fn fit_circumplex(
    r: &DMatrix<f64>,
    factors: &[String],
    opts: CircumplexOptions,
) -> Result<CircumplexFit> {
    let k = r.nrows();
    if k < 3 || r.ncols() != k {
        return Err(Error::invalid("need a square correlation matrix over at least 3 factors"));
    }
    if factors.len() != k {
        return Err(Error::invalid("factor names do not match the matrix"));
    }
    if opts.order == 0 || opts.starts == 0 {
        return Err(Error::invalid("order and starts must be positive"));
    }
    let pairs = upper_pairs(k);
    let rv: Vec<f64> = pairs.iter().map(|&(i, j)| 0.5 * (r[(i, j)] + r[(j, i)])).collect();
    let stress = Stress {
        r: &rv,
        pairs: &pairs,
        order: opts.order,
    };

    let mut starts = vec![gauge(&mds_angles(r)?)];
    for s in 1..opts.starts {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(s as u64);
        let a: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..TAU)).collect();
        starts.push(gauge(&a));
    }
    let min_opts = MinimizeOptions {
        max_iter: opts.max_iter,
        grad_tol: opts.grad_tol,
    };
    let results: Vec<_> = starts
        .par_iter()
        .map(|st| {
            bfgs(
                |x| {
                    let (f, g, _) = stress.eval(x);
                    Some((f, g))
                },
                &st[1..],
                min_opts,
            )
        })
        .collect();

    let accept = |m: &crate::optim::Minimum| m.converged || m.grad_norm < 1e-6;
    let mut best: Option<&crate::optim::Minimum> = None;
    for m in results.iter().filter(|m| accept(m)) {
        if best.map_or(true, |b| m.value < b.value - 1e-12) {
            best = Some(m);
        }
    }
    let Some(best) = best else {
        let best_stress = results.iter().map(|m| m.value).fold(f64::INFINITY, f64::min);
        return Err(Error::numerical(format!(
            "circumplex search did not converge from any start (best stress {best_stress:.3e})"
        )));
    };
    let (value, _, coefficients) = stress.eval(&best.x);
    Ok(CircumplexFit {
        factors: factors.to_vec(),
        angles: gauge(&Stress::full_angles(&best.x)),
        coefficients,
        stress: value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Near,
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub a: String,
    pub b: String,
    pub relation: Relation,
}

impl Expectation {
    pub fn new(a: &str, b: &str, relation: Relation) -> Self {
        Self {
            a: a.into(),
            b: b.into(),
            relation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternResult {
    pub expectation: Expectation,
    pub distance_deg: f64,
    pub pass: bool,
}

/// Near means under 60° apart, diagonal means over 120° apart.
pub fn pattern_check(fit: &CircumplexFit, expectations: &[Expectation]) -> Result<Vec<PatternResult>> {
    expectations
        .iter()
        .map(|e| {
            let d = fit.distance(&e.a, &e.b)?;
            let pass = match e.relation {
                Relation::Near => d < PI / 3.0,
                Relation::Diagonal => d > 2.0 * PI / 3.0,
            };
            Ok(PatternResult {
                expectation: e.clone(),
                distance_deg: d.to_degrees(),
                pass,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("F{i}")).collect()
    }

    fn planted(deg: &[f64], b0: f64, b1: f64) -> DMatrix<f64> {
        let k = deg.len();
        DMatrix::from_fn(k, k, |i, j| {
            if i == j {
                1.0
            } else {
                b0 + b1 * (deg[i] - deg[j]).to_radians().cos()
            }
        })
    }

    #[test]
    fn recovers_square_layout() {
        let r = planted(&[0.0, 90.0, 180.0, 270.0], 0.0, 0.8);
        let fit = fit_circumplex(&r, &names(4), CircumplexOptions::default()).unwrap();
        assert!(fit.stress < 1e-6);
        let got: Vec<f64> = fit.angles.iter().map(|a| a.to_degrees()).collect();
        for (g, w) in got.iter().zip([0.0, 90.0, 180.0, 270.0]) {
            assert!((g - w).abs() < 2.0, "{got:?}");
        }
        assert!(fit.coefficients[1] >= 0.0);
    }

    #[test]
    fn equicorrelated_triple_is_evenly_spaced() {
        let r = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.3 });
        let fit = fit_circumplex(&r, &names(3), CircumplexOptions::default()).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let d = angular_distance(fit.angles[i], fit.angles[j]).to_degrees();
            assert!((d - 120.0).abs() < 2.0, "{:?}", fit.angles);
        }
    }

    #[test]
    fn pattern_thresholds() {
        let fit = CircumplexFit {
            factors: names(3),
            angles: vec![0.0, PI, 30f64.to_radians()],
            coefficients: vec![0.0, 1.0],
            stress: 0.0,
        };
        let res = pattern_check(
            &fit,
            &[
                Expectation::new("F0", "F1", Relation::Diagonal),
                Expectation::new("F0", "F2", Relation::Diagonal),
                Expectation::new("F0", "F2", Relation::Near),
            ],
        )
        .unwrap();
        assert_eq!(res.iter().map(|r| r.pass).collect::<Vec<_>>(), [true, false, true]);
        assert!(pattern_check(&fit, &[Expectation::new("F0", "nope", Relation::Near)]).is_err());
    }

    #[test]
    fn gauge_pins_first_two() {
        let g = gauge(&[1.0, 0.5, 3.0]);
        assert_eq!(g[0], 0.0);
        assert!(g[1] <= PI);
    }

    #[test]
    fn rejects_small_k() {
        let r = DMatrix::<f64>::identity(2, 2);
        assert!(fit_circumplex(&r, &names(2), CircumplexOptions::default()).is_err());
    }
}
