//! Conjugate-gradient least squares with optional diagonal damping, and the
//! projected two-pass non-negative variant built on it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// When to stop a CGLS pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CglsStop {
    /// Morozov level: stop once `‖b − Ax‖² ≤ T`.
    pub discrepancy: Option<f64>,
    /// Stop when the normal-equation residual falls below `tol` times its initial value.
    pub tol: f64,
    /// Iteration cap per pass; `0` means `2·min(m, p) + 10`.
    pub max_iter: usize,
}

impl Default for CglsStop {
    fn default() -> Self {
        CglsStop { discrepancy: None, tol: 1e-12, max_iter: 0 }
    }
}

impl CglsStop {
    pub fn morozov(level: f64) -> Self {
        CglsStop { discrepancy: Some(level), ..Default::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CglsStatus {
    /// The discrepancy level was reached.
    TargetReached,
    /// The normal equations were solved to tolerance.
    Converged,
    /// Neither happened within the iteration cap.
    IterationLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NnlsReport {
    pub iterations: [usize; 2],
    pub status: CglsStatus,
    /// `‖b − Ax‖²` of the returned (projected) solution.
    pub residual_sq: f64,
}

impl NnlsReport {
    /// Whether the requested stopping target was met. Without a discrepancy
    /// level, convergence of the normal equations counts.
    pub fn target_met(&self) -> bool {
        !matches!(self.status, CglsStatus::IterationLimit)
    }
}

pub(crate) struct Pass {
    pub iterations: usize,
    pub status: CglsStatus,
}

/// One CGLS pass for `min ‖b − Ax‖² + Σ d_j x_j²` over the free components,
/// starting from `x`. Components with `free[j] == false` stay fixed.
pub(crate) fn cgls_pass(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    damp: Option<&[f64]>,
    free: Option<&[bool]>,
    x: &mut DVector<f64>,
    stop: &CglsStop,
) -> Pass {
    let (m, p) = a.shape();
    let max_iter = if stop.max_iter == 0 { 2 * m.min(p) + 10 } else { stop.max_iter };
    let mask = |v: &mut DVector<f64>| {
        if let Some(f) = free {
            for (vj, &fj) in v.iter_mut().zip(f) {
                if !fj {
                    *vj = 0.0;
                }
            }
        }
    };
    let normal_residual = |r: &DVector<f64>, x: &DVector<f64>| {
        let mut s = a.tr_mul(r);
        if let Some(d) = damp {
            for j in 0..p {
                s[j] -= d[j] * x[j];
            }
        }
        mask(&mut s);
        s
    };

    let mut r = b - a * &*x;
    if let Some(t) = stop.discrepancy {
        if r.norm_squared() <= t {
            return Pass { iterations: 0, status: CglsStatus::TargetReached };
        }
    }
    let mut s = normal_residual(&r, x);
    let mut gamma = s.norm_squared();
    let gamma0 = gamma;
    if gamma == 0.0 {
        return Pass { iterations: 0, status: CglsStatus::Converged };
    }
    let mut dir = s.clone();
    let mut q = DVector::zeros(m);
    for it in 1..=max_iter {
        q.gemv(1.0, a, &dir, 0.0);
        let mut delta = q.norm_squared();
        if let Some(d) = damp {
            delta += dir.iter().zip(d).map(|(pj, dj)| dj * pj * pj).sum::<f64>();
        }
        if !(delta > 0.0) {
            return Pass { iterations: it - 1, status: CglsStatus::Converged };
        }
        let alpha = gamma / delta;
        x.axpy(alpha, &dir, 1.0);
        r.axpy(-alpha, &q, 1.0);
        if let Some(t) = stop.discrepancy {
            if r.norm_squared() <= t {
                return Pass { iterations: it, status: CglsStatus::TargetReached };
            }
        }
        s = normal_residual(&r, x);
        let gamma_new = s.norm_squared();
        if gamma_new <= stop.tol * stop.tol * gamma0 {
            return Pass { iterations: it, status: CglsStatus::Converged };
        }
        let beta = gamma_new / gamma;
        gamma = gamma_new;
        dir.axpy(1.0, &s, beta);
    }
    Pass { iterations: max_iter, status: CglsStatus::IterationLimit }
}

pub(crate) fn check_shapes(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<()> {
    if a.nrows() != b.len() {
        return Err(Error::domain(format!("matrix has {} rows but right-hand side has {}", a.nrows(), b.len())));
    }
    if a.ncols() == 0 || a.iter().all(|&v| v == 0.0) {
        return Err(Error::domain("matrix is empty or zero"));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite entries in least-squares problem"));
    }
    Ok(())
}

fn project(x: &mut DVector<f64>) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Non-negative least squares by projected CGLS: one CGLS pass on all
/// components, projection onto `x ≥ 0`, one restart on the components left
/// positive, and a final projection.
pub fn nnls_cgls(a: &DMatrix<f64>, b: &DVector<f64>, stop: &CglsStop) -> Result<(DVector<f64>, NnlsReport)> {
    nnls_cgls_damped(a, b, None, None, stop)
}

/// As [`nnls_cgls`] with Tikhonov damping `Σ d_j x_j²` and an optional start.
pub fn nnls_cgls_damped(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    damp: Option<&[f64]>,
    x0: Option<&DVector<f64>>,
    stop: &CglsStop,
) -> Result<(DVector<f64>, NnlsReport)> {
    check_shapes(a, b)?;
    let p = a.ncols();
    if let Some(d) = damp {
        if d.len() != p || d.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::domain("damping weights must be non-negative, one per column"));
        }
    }
    let mut x = match x0 {
        Some(v) if v.len() == p => v.map(|t| t.max(0.0)),
        Some(_) => return Err(Error::domain("initial guess has the wrong length")),
        None => DVector::zeros(p),
    };
    let first = cgls_pass(a, b, damp, None, &mut x, stop);
    project(&mut x);
    let free: Vec<bool> = x.iter().map(|&v| v > 0.0).collect();
    let second = if free.iter().any(|&f| f) {
        let pass = cgls_pass(a, b, damp, Some(&free), &mut x, stop);
        project(&mut x);
        pass
    } else {
        Pass { iterations: 0, status: first.status }
    };
    let residual_sq = (b - a * &x).norm_squared();
    let status = match stop.discrepancy {
        Some(t) if residual_sq <= t => CglsStatus::TargetReached,
        Some(_) => CglsStatus::IterationLimit,
        None => second.status,
    };
    Ok((x, NnlsReport { iterations: [first.iterations, second.iterations], status, residual_sq }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_system() {
        let a = DMatrix::identity(5, 5);
        let b = DVector::from_vec(vec![1.0, 0.0, 2.0, 3.5, 0.25]);
        let (x, rep) = nnls_cgls(&a, &b, &CglsStop::default()).unwrap();
        assert!((x - &b).norm() < 1e-14);
        assert!(rep.target_met());

        let b = DVector::from_vec(vec![1.0, -1.0, 2.0, -3.5, 0.25]);
        let (x, _) = nnls_cgls(&a, &b, &CglsStop::default()).unwrap();
        assert_eq!(x, b.map(|v| v.max(0.0)));
    }

    #[test]
    fn recovers_nonnegative_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(20, 10, |_, _| rng.gen_range(-1.0..1.0)) + DMatrix::identity(20, 10) * 3.0;
        let xs = DVector::from_fn(10, |_, _| rng.gen_range(0.0..2.0));
        let b = &a * &xs;
        let (x, _) = nnls_cgls(&a, &b, &CglsStop::default()).unwrap();
        assert!((&x - &xs).norm() <= 1e-4 * xs.norm());
    }

    #[test]
    fn damped_pass_solves_ridge_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(15, 8, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(15, |_, _| rng.gen_range(-1.0..1.0));
        let d: Vec<f64> = (0..8).map(|j| 0.1 + j as f64 * 0.05).collect();
        let mut x = DVector::zeros(8);
        let pass = cgls_pass(&a, &b, Some(&d), None, &mut x, &CglsStop::default());
        assert_eq!(pass.status, CglsStatus::Converged);
        let n = a.tr_mul(&a) + DMatrix::from_diagonal(&DVector::from_vec(d));
        let exact = n.lu().solve(&a.tr_mul(&b)).unwrap();
        assert!((x - exact).norm() < 1e-9);
    }

    #[test]
    fn morozov_stops_early() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = DMatrix::from_fn(40, 30, |_, _| rng.gen_range(0.0..1.0));
        let xs = DVector::from_fn(30, |_, _| rng.gen_range(0.0..1.0));
        let b = &a * &xs;
        let level = 1e-2 * b.norm_squared();
        let (x, rep) = nnls_cgls(&a, &b, &CglsStop::morozov(level)).unwrap();
        assert_eq!(rep.status, CglsStatus::TargetReached);
        assert!(rep.residual_sq <= level);
        assert!(rep.iterations[0] < 30);
        assert!(x.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn unreachable_target_is_flagged() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let (x, rep) = nnls_cgls(&a, &b, &CglsStop::morozov(1e-6)).unwrap();
        assert_eq!(rep.status, CglsStatus::IterationLimit);
        assert!(!rep.target_met());
        assert_eq!(x[0], 0.0);
    }

    #[test]
    fn bad_inputs_rejected() {
        let a = DMatrix::<f64>::zeros(3, 2);
        assert!(nnls_cgls(&a, &DVector::zeros(3), &CglsStop::default()).is_err());
        let a = DMatrix::<f64>::identity(3, 2);
        assert!(nnls_cgls(&a, &DVector::zeros(4), &CglsStop::default()).is_err());
    }
}
