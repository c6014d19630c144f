mod common;

use nalgebra::DVector;
use phdict::sparse::{ias, nnls_cgls, CglsStop, IasConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn relative_residual(a: &nalgebra::DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> f64 {
    (b - a * x).norm() / b.norm()
}

#[test]
fn active_set_oracle_sanity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_matrix(&mut rng, 8, 4, -1.0, 1.0);
    let b = DVector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0));
    let x = nnls_active_set(&a, &b);
    // KKT: x >= 0, gradient >= 0 on zeros, = 0 on the support
    let g = a.tr_mul(&(&a * &x - &b));
    for j in 0..4 {
        assert!(x[j] >= 0.0);
        if x[j] > 0.0 {
            assert!(g[j].abs() < 1e-10);
        } else {
            assert!(g[j] > -1e-10);
        }
    }
}

#[test]
fn projected_cgls_matches_active_set_on_random_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a = random_matrix(&mut rng, 20, 10, -1.0, 1.0);
        let xs = sparse_nonneg(&mut rng, 10, 0.6);
        let noise = DVector::from_fn(20, |_, _| rng.gen_range(-1e-3..1e-3));
        let b = &a * &xs + noise;
        let (x, _) = nnls_cgls(&a, &b, &CglsStop::default()).unwrap();
        let xo = nnls_active_set(&a, &b);
        let d = (relative_residual(&a, &b, &x) - relative_residual(&a, &b, &xo)).abs();
        worst = worst.max(d);
        assert!(x.iter().all(|&v| v >= 0.0));
    }
    assert!(worst <= 1e-4, "worst relative residual gap {worst:e}");
}

#[test]
fn small_eta_matches_weighted_l1() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let a = random_matrix(&mut rng, 30, 60, -1.0, 1.0);
    let xs = sparse_nonneg(&mut rng, 60, 0.1);
    let noise = DVector::from_fn(30, |_, _| rng.gen_range(-0.01..0.01));
    let b = &a * &xs + noise;
    let cfg = IasConfig { eta: 1e-4, theta_scale: 10.0, tol_theta: 1e-10, max_iter: 5000, ..Default::default() };
    let r = ias(&a, &b, &cfg).unwrap();
    let v = phdict::sparse::sensitivity_scales(&a, cfg.theta_scale);
    let w: Vec<f64> = v.iter().map(|t| 2f64.sqrt() / t.sqrt()).collect();
    let xo = nonneg_weighted_l1(&a, &b, &w, 20000);
    let rel = (&r.x - &xo).norm() / xo.norm();
    assert!(rel <= 1e-2, "relative difference {rel:e} after {} iterations", r.iterations());
}
