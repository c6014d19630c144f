//! Dictionary compression error: sampled mean and regularized covariance of
//! `e = d − W h` for perturbed parameters around a subdictionary's labels.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::forward_datum;
use crate::error::{Error, Result};
use crate::forward::{ParamVector, Simulator};
use crate::sparse::{nnls_cgls, CglsStop};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DceMode {
    Full,
    Diagonal,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Covariance {
    Full(DMatrix<f64>),
    Diagonal(DVector<f64>),
}

impl Covariance {
    pub fn mode(&self) -> DceMode {
        match self {
            Covariance::Full(_) => DceMode::Full,
            Covariance::Diagonal(_) => DceMode::Diagonal,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Full(c) => c.nrows(),
            Covariance::Diagonal(d) => d.len(),
        }
    }
}

#[derive(Clone, Debug)]
enum Factor {
    Full(Cholesky<f64, Dyn>),
    Diagonal(DVector<f64>),
}

/// DCE mean and covariance (ridge included) with a cached factorization.
#[derive(Clone, Debug)]
pub struct DceStats {
    pub mean: DVector<f64>,
    pub cov: Covariance,
    pub delta: f64,
    pub samples: usize,
    factor: Factor,
}

impl PartialEq for DceStats {
    fn eq(&self, o: &Self) -> bool {
        self.mean == o.mean && self.cov == o.cov && self.delta == o.delta && self.samples == o.samples
    }
}

impl DceStats {
    /// Factors `cov`; fails if it is not symmetric positive definite.
    pub fn new(mean: DVector<f64>, cov: Covariance, delta: f64, samples: usize) -> Result<Self> {
        if cov.dim() != mean.len() {
            return Err(Error::Bundle("DCE mean and covariance sizes differ".into()));
        }
        let factor = match &cov {
            Covariance::Full(c) => Factor::Full(
                Cholesky::new(c.clone()).ok_or_else(|| Error::config("DCE covariance is not positive definite"))?,
            ),
            Covariance::Diagonal(d) => {
                if d.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(Error::config("DCE variances must be positive"));
                }
                Factor::Diagonal(d.map(f64::sqrt))
            }
        };
        Ok(DceStats { mean, cov, delta, samples, factor })
    }

    /// Identity covariance and zero mean.
    pub fn identity(m: usize) -> Self {
        DceStats::new(DVector::zeros(m), Covariance::Diagonal(DVector::from_element(m, 1.0)), 0.0, 0).unwrap()
    }

    pub fn mode(&self) -> DceMode {
        self.cov.mode()
    }

    /// `L⁻¹ v` with `C = L Lᵀ`.
    pub fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Full(ch) => ch.l_dirty().solve_lower_triangular(v).expect("Cholesky factor is non-singular"),
            Factor::Diagonal(s) => v.component_div(s),
        }
    }

    pub fn whiten_matrix(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.factor {
            Factor::Full(ch) => ch.l_dirty().solve_lower_triangular(a).expect("Cholesky factor is non-singular"),
            Factor::Diagonal(s) => {
                let mut out = a.clone();
                for (i, si) in s.iter().enumerate() {
                    out.row_mut(i).scale_mut(1.0 / si);
                }
                out
            }
        }
    }

    /// `‖L⁻¹(e − μ)‖²`.
    pub fn mahalanobis_sq(&self, e: &DVector<f64>) -> f64 {
        self.whiten(&(e - &self.mean)).norm_squared()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DceOptions {
    pub samples: usize,
    pub mode: DceMode,
    pub seed: u64,
    /// Redraws allowed per sample after a failed forward solve.
    pub max_retries: usize,
    /// Perturbation width in grid cells; `1` draws `s ~ U[−½, ½]`.
    pub perturbation: f64,
}

impl Default for DceOptions {
    fn default() -> Self {
        DceOptions { samples: 500, mode: DceMode::Diagonal, seed: 0, max_retries: 3, perturbation: 1.0 }
    }
}

/// Error samples `e_s = d_s − W h_s` as columns; sample `s` of cluster
/// `cluster_id` uses its own random stream, so results do not depend on scheduling.
pub fn dce_samples(
    sim: &Simulator,
    w: &DMatrix<f64>,
    labels: &[ParamVector],
    spacing: [f64; 3],
    cluster_id: usize,
    opts: &DceOptions,
) -> Result<DMatrix<f64>> {
    if labels.is_empty() || opts.samples == 0 {
        return Err(Error::config("DCE sampling needs labels and at least one sample"));
    }
    let m = w.nrows();
    let cols: Vec<Result<DVector<f64>>> = (0..opts.samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(((cluster_id as u64) << 32) | s as u64);
            let mut last_err = None;
            for _ in 0..=opts.max_retries {
                let base = labels[rng.gen_range(0..labels.len())];
                let xi = ParamVector(std::array::from_fn(|a| {
                    let u: f64 = rng.gen_range(-0.5..=0.5);
                    (base.0[a] + opts.perturbation * u * spacing[a]).clamp(0.0, 1.0)
                }));
                match forward_datum(sim, &xi) {
                    Ok(d) => {
                        let d = DVector::from_vec(d.values);
                        let (h, _) = nnls_cgls(w, &d, &CglsStop::default())?;
                        return Ok(&d - w * h);
                    }
                    Err(e) => {
                        log::warn!("DCE sample {s} of cluster {cluster_id} failed at xi = {:?}: {e}", xi.0);
                        last_err = Some(e);
                    }
                }
            }
            Err(last_err.unwrap())
        })
        .collect();
    let mut e = DMatrix::zeros(m, opts.samples);
    for (s, c) in cols.into_iter().enumerate() {
        e.set_column(s, &c?);
    }
    Ok(e)
}

/// Sample mean and covariance of the columns of `e`, plus the ridge
/// `δ = max(10⁻⁶ · trace(C)/m, 10⁻¹²)`.
pub fn dce_statistics(e: &DMatrix<f64>, mode: DceMode) -> Result<DceStats> {
    let (m, k) = e.shape();
    let mean = e.column_mean();
    let mut centered = e.clone();
    for mut c in centered.column_iter_mut() {
        c -= &mean;
    }
    let denom = (k.max(2) - 1) as f64;
    let var = DVector::from_fn(m, |i, _| centered.row(i).norm_squared() / denom);
    let delta = (1e-6 * var.sum() / m as f64).max(1e-12);
    let cov = match mode {
        DceMode::Diagonal => Covariance::Diagonal(var.add_scalar(delta)),
        DceMode::Full => {
            let mut c = &centered * centered.transpose() / denom;
            for i in 0..m {
                c[(i, i)] += delta;
            }
            Covariance::Full(c)
        }
    };
    DceStats::new(mean, cov, delta, k)
}

pub fn estimate_dce(
    sim: &Simulator,
    w: &DMatrix<f64>,
    labels: &[ParamVector],
    spacing: [f64; 3],
    cluster_id: usize,
    opts: &DceOptions,
) -> Result<DceStats> {
    let e = dce_samples(sim, w, labels, spacing, cluster_id, opts)?;
    dce_statistics(&e, opts.mode)
}
