//! Independent reference implementations used as test oracles. None of these
//! call into the library's numerical code.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Box-Muller; keeps the oracle side free of library samplers.
pub fn gauss(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Two-pass sample covariance with `n - 1` in the denominator.
pub fn sample_cov(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let means: Vec<f64> = (0..p).map(|j| x.column(j).iter().sum::<f64>() / n as f64).collect();
    DMatrix::from_fn(p, p, |a, b| {
        (0..n).map(|i| (x[(i, a)] - means[a]) * (x[(i, b)] - means[b])).sum::<f64>() / (n as f64 - 1.0)
    })
}

/// Alpha from the item covariance matrix: the total-score variance is the
/// sum of every covariance entry.
pub fn alpha_oracle(x: &DMatrix<f64>) -> f64 {
    let c = sample_cov(x);
    let k = c.nrows() as f64;
    let total: f64 = c.iter().sum();
    let diag: f64 = c.diagonal().iter().sum();
    k / (k - 1.0) * (1.0 - diag / total)
}

/// `ln|Σ| + tr(SΣ⁻¹) − ln|S| − p` through LU determinants and a dense inverse.
pub fn f_ml(sigma: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    let p = s.nrows() as f64;
    let det_sigma = sigma.clone().lu().determinant();
    let det_s = s.clone().lu().determinant();
    if det_sigma <= 0.0 {
        return f64::INFINITY;
    }
    let inv = sigma.clone().try_inverse().unwrap();
    det_sigma.ln() + (s * inv).trace() - det_s.ln() - p
}

/// One-factor implied covariance `λλᵀ + diag(θ)`.
pub fn one_factor_sigma(lambda: &[f64], theta: &[f64]) -> DMatrix<f64> {
    let p = lambda.len();
    DMatrix::from_fn(p, p, |i, j| lambda[i] * lambda[j] + if i == j { theta[i] } else { 0.0 })
}

/// Coarse-to-fine grid search: `points` per axis around `center`, keep the
/// best node, shrink, repeat until the half-width is below `final_width`.
pub fn grid_minimize(
    f: impl Fn(&[f64]) -> f64,
    center: &[f64],
    half_width: f64,
    points: usize,
    final_width: f64,
) -> (Vec<f64>, f64) {
    let d = center.len();
    let mut c = center.to_vec();
    let mut w = half_width;
    let mut best = f(&c);
    while w > final_width {
        let step = 2.0 * w / (points - 1) as f64;
        let total = points.pow(d as u32);
        let mut node = vec![0.0; d];
        let mut best_node = c.clone();
        for idx in 0..total {
            let mut r = idx;
            for (k, v) in node.iter_mut().enumerate() {
                *v = c[k] - w + step * (r % points) as f64;
                r /= points;
            }
            let v = f(&node);
            if v < best {
                best = v;
                best_node.copy_from_slice(&node);
            }
        }
        c = best_node;
        w = step;
    }
    (c, best)
}

/// Profiled first-order circumplex stress for fixed angles. The coefficients
/// range over the triangle `β₁ ≥ 0, |β₀| + β₁ ≤ 1`; the optimum is the free
/// least-squares point when it lies inside, otherwise the best point on one
/// of the three edges.
pub fn circumplex_stress(r: &[f64], cos_d: &[f64]) -> f64 {
    let sse = |b0: f64, b1: f64| -> f64 { cos_d.iter().zip(r).map(|(c, y)| (y - b0 - b1 * c).powi(2)).sum() };
    let inside = |b0: f64, b1: f64| b1 >= -1e-12 && b0.abs() + b1 <= 1.0 + 1e-12;
    let n = r.len() as f64;
    let mr = r.iter().sum::<f64>() / n;
    let mc = cos_d.iter().sum::<f64>() / n;
    let sxx: f64 = cos_d.iter().map(|c| (c - mc) * (c - mc)).sum();
    let sxy: f64 = cos_d.iter().zip(r).map(|(c, y)| (c - mc) * (y - mr)).sum();
    let mut best = f64::INFINITY;
    if sxx > 1e-12 {
        let b1 = sxy / sxx;
        let b0 = mr - b1 * mc;
        if inside(b0, b1) {
            best = sse(b0, b1);
        }
    }
    // Each edge as `β(t) = p + t·q`, t in [0, 1]; the SSE is quadratic in t.
    let corners = [(-1.0, 0.0), (1.0, 0.0), (0.0, 1.0)];
    for (a, b) in [(0, 1), (1, 2), (2, 0)] {
        let (p0, p1) = corners[a];
        let (q0, q1) = (corners[b].0 - p0, corners[b].1 - p1);
        let e0 = sse(p0, p1);
        let eh = sse(p0 + 0.5 * q0, p1 + 0.5 * q1);
        let e1 = sse(p0 + q0, p1 + q1);
        // Fit e(t) = α t² + β t + e0 through t = 0, 1/2, 1.
        let alpha = 2.0 * (e1 - 2.0 * eh + e0);
        let beta = e1 - e0 - alpha;
        let mut t_star = if alpha > 0.0 { -beta / (2.0 * alpha) } else { 0.0 };
        t_star = t_star.clamp(0.0, 1.0);
        for t in [0.0, 1.0, t_star] {
            best = best.min(sse(p0 + t * q0, p1 + t * q1));
        }
    }
    best
}

/// Minimum stress over a 1° lattice. Factor 0 sits at 0° and factor 1 in
/// [0°, 180°]; the rest range over the full circle. Supports k = 3 or 4.
pub fn circumplex_brute_force(r: &DMatrix<f64>) -> f64 {
    let k = r.nrows();
    assert!(k == 3 || k == 4);
    let cos: Vec<f64> = (0..360).map(|d| (d as f64).to_radians().cos()).collect();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    let rv: Vec<f64> = pairs.iter().map(|&(i, j)| r[(i, j)]).collect();
    let mut best = f64::INFINITY;
    let mut ang = vec![0i32; k];
    let mut cd = vec![0.0; pairs.len()];
    let last_range = if k == 4 { 360 } else { 1 };
    for a1 in 0..=180 {
        for a2 in 0..360 {
            for a3 in 0..last_range {
                ang[1] = a1;
                ang[2] = a2;
                if k == 4 {
                    ang[3] = a3;
                }
                for (c, &(i, j)) in cd.iter_mut().zip(&pairs) {
                    *c = cos[(ang[i] - ang[j]).rem_euclid(360) as usize];
                }
                best = best.min(circumplex_stress(&rv, &cd));
            }
        }
    }
    best
}

/// Correlation matrix `β₀ + β₁ cos(θ_i − θ_j)` with a unit diagonal.
pub fn circumplex_matrix(angles_deg: &[f64], b0: f64, b1: f64) -> DMatrix<f64> {
    let k = angles_deg.len();
    DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else {
            b0 + b1 * (angles_deg[i] - angles_deg[j]).to_radians().cos()
        }
    })
}

/// Angles in degrees moved into the fit's gauge: factor 0 at 0, factor 1 in
/// [0, 180].
pub fn gauge_deg(angles_deg: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = angles_deg.iter().map(|x| (x - angles_deg[0]).rem_euclid(360.0)).collect();
    if a.len() > 1 && a[1] > 180.0 {
        a = a.iter().map(|x| (-x).rem_euclid(360.0)).collect();
    }
    a
}

pub fn circ_diff_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Naive per-coordinate objective for one dimension.
pub fn distill_objective_1d(x: f64, w: &[f64], l: &[f64]) -> f64 {
    let mut total = 0.0;
    for (a, b) in w.iter().zip(l) {
        total += (x - a).abs();
        total -= (x - b).abs();
    }
    total
}

/// Minimum over the grid `-1, -1 + step, ..., 1`.
pub fn distill_grid_min(w: &[f64], l: &[f64], step: f64) -> f64 {
    let n = (2.0 / step).round() as usize;
    (0..=n)
        .map(|i| distill_objective_1d(-1.0 + i as f64 * step, w, l))
        .fold(f64::INFINITY, f64::min)
}

/// Logistic pairwise loss with an L2 term, written out directly.
pub fn bt_loss(w: &[f64], diffs: &[Vec<f64>], l2: f64) -> f64 {
    let mut loss = l2 * w.iter().map(|x| x * x).sum::<f64>();
    for d in diffs {
        let z: f64 = w.iter().zip(d).map(|(a, b)| a * b).sum();
        loss += (1.0 + (-z).exp()).ln();
    }
    loss
}

/// Central differences of `f` at `x`.
pub fn finite_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(floor)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Correlation-scale loadings of `x = Λf + e` with unit factor variances and
/// noise variance `noise_sd²`.
pub fn standardized_loadings(l: &DMatrix<f64>, noise_sd: f64) -> DMatrix<f64> {
    let mut out = l.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let sd = (l.row(i).norm_squared() + noise_sd * noise_sd).sqrt();
        row /= sd;
    }
    out
}
