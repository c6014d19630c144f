//! Non-negative matrix factorization `D ≈ WH` by alternating non-negative
//! least squares with the projected-CGLS solver.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sparse::{nnls_cgls_damped, CglsStop};

#[derive(Clone, Debug, PartialEq)]
pub struct NmfOptions {
    pub max_sweeps: usize,
    /// Stop when a sweep lowers the objective by less than this fraction.
    pub tol: f64,
    pub seed: u64,
}

impl Default for NmfOptions {
    fn default() -> Self {
        NmfOptions { max_sweeps: 200, tol: 1e-8, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Nmf {
    pub w: DMatrix<f64>,
    pub h: DMatrix<f64>,
    /// `‖D − WH‖_F` at the start and after every half-sweep.
    pub history: Vec<f64>,
    pub converged: bool,
}

impl Nmf {
    pub fn relative_error(&self, d: &DMatrix<f64>) -> f64 {
        (d - &self.w * &self.h).norm() / d.norm()
    }
}

/// Factors the non-negative `d` (m×n) with inner dimension `rank`.
pub fn compress(d: &DMatrix<f64>, rank: usize, opts: &NmfOptions) -> Result<Nmf> {
    let (m, n) = d.shape();
    if rank == 0 || rank > m.min(n) {
        return Err(Error::config(format!("NMF rank {rank} outside 1..={}", m.min(n))));
    }
    if d.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::domain("NMF input must be non-negative and finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut w = DMatrix::from_fn(m, rank, |_, _| rng.gen::<f64>());
    let mut h = DMatrix::from_fn(rank, n, |_, _| rng.gen::<f64>());
    let wh = (&w * &h).norm();
    if wh > 0.0 && d.norm() > 0.0 {
        let s = (d.norm() / wh).sqrt();
        w *= s;
        h *= s;
    }

    let mut err = (d - &w * &h).norm();
    let mut history = vec![err];
    let mut converged = false;
    let dt = d.transpose();
    for _ in 0..opts.max_sweeps {
        let start = err;
        update_columns(&w, d, &mut h);
        err = (d - &w * &h).norm();
        history.push(err);

        let mut wt = w.transpose();
        update_columns(&h.transpose(), &dt, &mut wt);
        w = wt.transpose();
        err = (d - &w * &h).norm();
        history.push(err);

        balance(&mut w, &mut h);
        if err == 0.0 || start - err <= opts.tol * start {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("NMF stopped after {} sweeps at relative error {:e}", opts.max_sweeps, err / d.norm().max(f64::MIN_POSITIVE));
    }
    Ok(Nmf { w, h, history, converged })
}

/// Replaces each column `x_j` by the NNLS fit of `b_j` in `a`, unless that fit is worse.
fn update_columns(a: &DMatrix<f64>, b: &DMatrix<f64>, x: &mut DMatrix<f64>) {
    if a.iter().all(|&v| v == 0.0) {
        return;
    }
    let cols: Vec<DVector<f64>> = (0..b.ncols())
        .into_par_iter()
        .map(|j| {
            let bj = b.column(j).into_owned();
            let old = x.column(j).into_owned();
            let old_r = (&bj - a * &old).norm_squared();
            match nnls_cgls_damped(a, &bj, None, Some(&old), &CglsStop::default()) {
                Ok((new, _)) if (&bj - a * &new).norm_squared() <= old_r => new,
                _ => old,
            }
        })
        .collect();
    for (j, c) in cols.into_iter().enumerate() {
        x.set_column(j, &c);
    }
}

/// Rescales so that the columns of `w` and rows of `h` have roughly equal
/// norms. The factor is a power of two, so `WH` is unchanged bit for bit.
fn balance(w: &mut DMatrix<f64>, h: &mut DMatrix<f64>) {
    for r in 0..w.ncols() {
        let a = w.column(r).norm();
        let b = h.row(r).norm();
        if a > 0.0 && b > 0.0 {
            let s = 2f64.powi((0.5 * (b / a).log2()).round() as i32);
            w.column_mut(r).scale_mut(s);
            h.row_mut(r).scale_mut(1.0 / s);
        }
    }
}

/// Singular values in decreasing order, via the smaller Gram matrix.
pub fn singular_values(d: &DMatrix<f64>) -> Vec<f64> {
    let g = if d.nrows() <= d.ncols() { d * d.transpose() } else { d.tr_mul(d) };
    let mut s: Vec<f64> = g.symmetric_eigenvalues().iter().map(|&l| l.max(0.0).sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Smallest `k` with `σ_{k+1} / σ_1 < threshold`; the full length if none.
pub fn select_rank(singular: &[f64], threshold: f64) -> usize {
    let s1 = singular.first().copied().unwrap_or(0.0);
    if s1 == 0.0 {
        return 1;
    }
    (1..singular.len()).find(|&k| singular[k] / s1 < threshold).unwrap_or(singular.len())
}
