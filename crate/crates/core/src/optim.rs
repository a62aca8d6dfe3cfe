//! Quasi-Newton minimization used by the CFA and circumplex fits.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct MinimizeOptions {
    pub max_iter: usize,
    /// Converged when the max-norm of the gradient drops below this.
    pub grad_tol: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            grad_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each iteration.
    pub trace: Vec<f64>,
}

fn max_norm(g: &DVector<f64>) -> f64 {
    g.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// BFGS with Armijo backtracking. `objective` returns `None` outside the
/// feasible region; the line search then shrinks the step.
pub fn bfgs<F>(mut objective: F, x0: &[f64], opts: MinimizeOptions) -> Minimum
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut f, g0) = objective(x.as_slice()).expect("starting point must be feasible");
    let mut g = DVector::from_vec(g0);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = max_norm(&g) < opts.grad_tol;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let mut dir = -(&h * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            h.fill_with_identity();
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let trial = &x + &dir * step;
            if let Some((ft, gt)) = objective(trial.as_slice()) {
                if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                    accepted = Some((trial, ft, DVector::from_vec(gt)));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            if h != DMatrix::identity(n, n) {
                h.fill_with_identity();
                continue;
            }
            break;
        };
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(f);
        converged = max_norm(&g) < opts.grad_tol;
    }
    Minimum {
        grad_norm: max_norm(&g),
        x: x.as_slice().to_vec(),
        value: f,
        iterations,
        converged,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let m = bfgs(
            |p| {
                let (x, y) = (p[0], p[1]);
                let f = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
                let gx = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
                let gy = 200.0 * (y - x * x);
                Some((f, vec![gx, gy]))
            },
            &[-1.2, 1.0],
            MinimizeOptions::default(),
        );
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn respects_infeasible_region() {
        // Minimum of (x - 2)^2 restricted to x < 1.5 by returning None beyond.
        let m = bfgs(
            |p| (p[0] < 1.5).then(|| ((p[0] - 2.0).powi(2), vec![2.0 * (p[0] - 2.0)])),
            &[0.0],
            MinimizeOptions {
                max_iter: 200,
                ..Default::default()
            },
        );
        assert!(m.x[0] < 1.5 && m.x[0] > 1.4);
        assert!(!m.converged);
    }
}
