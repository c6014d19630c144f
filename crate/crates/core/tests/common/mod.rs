//! Reference solvers and fixtures shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Lawson–Hanson active-set NNLS.
pub fn nnls_active_set(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let p = a.ncols();
    let mut x = DVector::zeros(p);
    let mut passive = vec![false; p];
    let tol = 1e-12 * a.norm() * b.norm().max(1.0);
    for _outer in 0..3 * p {
        let w = a.tr_mul(&(b - a * &x));
        let cand = (0..p).filter(|&j| !passive[j] && w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = cand else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..p).filter(|&k| passive[k]).collect();
            let sub = a.select_columns(&idx);
            let z_sub = sub.clone().svd(true, true).solve(b, 1e-14).unwrap();
            if z_sub.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &c) in idx.iter().enumerate() {
                    x[c] = z_sub[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &c) in idx.iter().enumerate() {
                if z_sub[k] <= 0.0 {
                    alpha = alpha.min(x[c] / (x[c] - z_sub[k]));
                }
            }
            for (k, &c) in idx.iter().enumerate() {
                x[c] += alpha * (z_sub[k] - x[c]);
                if x[c] <= 1e-15 {
                    x[c] = 0.0;
                    passive[c] = false;
                }
            }
        }
    }
    x
}

/// FISTA for `min ½‖b − Ax‖² + Σ w_j x_j` subject to `x ≥ 0`.
pub fn nonneg_weighted_l1(a: &DMatrix<f64>, b: &DVector<f64>, w: &[f64], iters: usize) -> DVector<f64> {
    let p = a.ncols();
    let lip = a.tr_mul(a).symmetric_eigenvalues().max();
    let step = 1.0 / lip;
    let mut x = DVector::zeros(p);
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let g = a.tr_mul(&(a * &y - b));
        let mut xn = &y - g * step;
        for j in 0..p {
            xn[j] = (xn[j] - step * w[j]).max(0.0);
        }
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &xn + (&xn - &x) * ((t - 1.0) / tn);
        x = xn;
        t = tn;
    }
    x
}

/// A random `m×p` matrix with entries in `[lo, hi)`.
pub fn random_matrix<R: Rng>(rng: &mut R, m: usize, p: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m, p, |_, _| rng.gen_range(lo..hi))
}

/// A non-negative vector with roughly `density` of its entries non-zero.
pub fn sparse_nonneg<R: Rng>(rng: &mut R, p: usize, density: f64) -> DVector<f64> {
    DVector::from_fn(p, |_, _| if rng.gen_bool(density) { rng.gen_range(0.5..2.0) } else { 0.0 })
}
