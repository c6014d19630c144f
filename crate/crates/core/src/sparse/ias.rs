//! Iterative alternating sequential (IAS) MAP estimation under a
//! conditionally Gaussian prior `x_j | θ_j ~ N(0, θ_j)`, `x ≥ 0`, with a
//! gamma or inverse-gamma hyperprior on the variances.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cgls::{check_shapes, nnls_cgls_damped, CglsStop};
use crate::error::{Error, Result};

/// Closed form used for the gamma-hyperprior variance update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaRule {
    /// Root of `∂E/∂θ_j = 0`: `θ = ϑ/2 (η + √(η² + 2x²/ϑ))`.
    Stationary,
    /// `θ = ϑ/2 (η + √(η² + x²/(4ϑ)))`, kept for comparison runs.
    Printed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IasConfig {
    /// Shape parameter `η = β − 3/2 > 0` of the gamma hyperprior.
    pub eta: f64,
    /// `ϑ_j = theta_scale / ‖a_j‖²` unless `theta` is given.
    pub theta_scale: f64,
    pub theta: Option<Vec<f64>>,
    /// Stop when `‖θ^{k+1} − θ^k‖ / ‖θ^k‖ < tol_theta`.
    pub tol_theta: f64,
    pub max_iter: usize,
    /// Iteration from which the inverse-gamma hyperprior is used.
    pub hybrid_switch_iter: Option<usize>,
    /// Inverse-gamma shape `η_ig = β + 3/2`; defaults to `eta`.
    pub eta_ig: Option<f64>,
    pub inner: CglsStop,
    pub theta_rule: ThetaRule,
}

impl Default for IasConfig {
    fn default() -> Self {
        IasConfig {
            eta: 0.03,
            theta_scale: 1.0,
            theta: None,
            tol_theta: 1e-3,
            max_iter: 250,
            hybrid_switch_iter: None,
            eta_ig: None,
            inner: CglsStop::default(),
            theta_rule: ThetaRule::Stationary,
        }
    }
}

impl IasConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::config("IAS eta must be positive"));
        }
        if !(self.theta_scale > 0.0) {
            return Err(Error::config("IAS theta scale must be positive"));
        }
        if let Some(t) = &self.theta {
            if t.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::config("IAS theta values must be positive"));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::config("IAS needs max_iter >= 1"));
        }
        if let Some(e) = self.eta_ig {
            if !(e > 0.0) {
                return Err(Error::config("inverse-gamma eta must be positive"));
            }
        }
        if !(self.tol_theta >= 0.0) {
            return Err(Error::config("tol_theta must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hyperprior {
    Gamma,
    InverseGamma,
}

/// Per-component hyperparameters used by the updates and the objective.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    pub vartheta: Vec<f64>,
    pub eta: f64,
    pub eta_ig: f64,
}

impl HyperParams {
    /// Inverse-gamma scale chosen so both hyperpriors share the `x = 0` fixed point `ϑη`.
    pub fn vartheta_ig(&self, j: usize) -> f64 {
        self.vartheta[j] * self.eta * self.eta_ig
    }

    pub fn theta_update(&self, mode: Hyperprior, rule: ThetaRule, j: usize, x: f64) -> f64 {
        let v = self.vartheta[j];
        match mode {
            Hyperprior::Gamma => {
                let inner = match rule {
                    ThetaRule::Stationary => 2.0 * x * x / v,
                    ThetaRule::Printed => x * x / (4.0 * v),
                };
                0.5 * v * (self.eta + (self.eta * self.eta + inner).sqrt())
            }
            Hyperprior::InverseGamma => (0.5 * x * x + self.vartheta_ig(j)) / self.eta_ig,
        }
    }

    /// Prior part of the negative log posterior for one component.
    pub fn prior_term(&self, mode: Hyperprior, j: usize, x: f64, theta: f64) -> f64 {
        let quad = x * x / (2.0 * theta);
        match mode {
            Hyperprior::Gamma => quad + theta / self.vartheta[j] - self.eta * theta.ln(),
            Hyperprior::InverseGamma => quad + self.vartheta_ig(j) / theta + self.eta_ig * theta.ln(),
        }
    }

    pub fn objective(&self, mode: Hyperprior, residual_sq: f64, x: &DVector<f64>, theta: &[f64]) -> f64 {
        0.5 * residual_sq + (0..x.len()).map(|j| self.prior_term(mode, j, x[j], theta[j])).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IasIteration {
    pub hyperprior: Hyperprior,
    pub objective: f64,
    pub residual_sq: f64,
    pub support: usize,
    pub dtheta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IasResult {
    pub x: DVector<f64>,
    pub theta: Vec<f64>,
    pub converged: bool,
    pub history: Vec<IasIteration>,
}

impl IasResult {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    /// Indices with `x_j > rel · max x`.
    pub fn support(&self, rel: f64) -> Vec<usize> {
        support_of(&self.x, rel)
    }

    pub fn write_diagnostics<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,hyperprior,objective,residual_sq,support,dtheta")?;
        for (k, it) in self.history.iter().enumerate() {
            let hp = match it.hyperprior {
                Hyperprior::Gamma => "gamma",
                Hyperprior::InverseGamma => "inverse-gamma",
            };
            writeln!(w, "{},{hp},{:e},{:e},{},{:e}", k + 1, it.objective, it.residual_sq, it.support, it.dtheta)?;
        }
        Ok(())
    }
}

pub(crate) const SUPPORT_REL: f64 = 1e-6;

fn support_of(x: &DVector<f64>, rel: f64) -> Vec<usize> {
    let mx = x.iter().copied().fold(0.0, f64::max);
    if mx == 0.0 {
        return Vec::new();
    }
    (0..x.len()).filter(|&j| x[j] > rel * mx).collect()
}

/// Default `ϑ_j = scale / ‖a_j‖²`; zero columns get `scale`.
pub fn sensitivity_scales(a: &DMatrix<f64>, scale: f64) -> Vec<f64> {
    a.column_iter()
        .map(|c| {
            let n2 = c.norm_squared();
            if n2 > 0.0 {
                scale / n2
            } else {
                scale
            }
        })
        .collect()
}

/// IAS with the gamma hyperprior throughout (`hybrid_switch_iter` is ignored).
pub fn ias(a: &DMatrix<f64>, b: &DVector<f64>, cfg: &IasConfig) -> Result<IasResult> {
    let cfg = IasConfig { hybrid_switch_iter: None, ..cfg.clone() };
    run(a, b, &cfg)
}

/// IAS starting with the gamma hyperprior and switching to the inverse gamma
/// at `hybrid_switch_iter` (never, if unset).
pub fn ias_hybrid(a: &DMatrix<f64>, b: &DVector<f64>, cfg: &IasConfig) -> Result<IasResult> {
    run(a, b, cfg)
}

fn run(a: &DMatrix<f64>, b: &DVector<f64>, cfg: &IasConfig) -> Result<IasResult> {
    cfg.validate()?;
    check_shapes(a, b)?;
    let p = a.ncols();
    let vartheta = match &cfg.theta {
        Some(t) if t.len() == p => t.clone(),
        Some(_) => return Err(Error::config("theta scales need one value per column")),
        None => sensitivity_scales(a, cfg.theta_scale),
    };
    let hp = HyperParams { vartheta, eta: cfg.eta, eta_ig: cfg.eta_ig.unwrap_or(cfg.eta) };

    let mut x = DVector::zeros(p);
    let mut theta: Vec<f64> = (0..p).map(|j| hp.vartheta[j] * hp.eta).collect();
    let mut residual = b.clone();
    let mut prev_mode = Hyperprior::Gamma;
    let mut e_prev = hp.objective(prev_mode, residual.norm_squared(), &x, &theta);
    let mut history = Vec::new();
    let mut converged = false;
    let mut damp = vec![0.0; p];

    for k in 0..cfg.max_iter {
        let mode = match cfg.hybrid_switch_iter {
            Some(s) if k >= s => Hyperprior::InverseGamma,
            _ => Hyperprior::Gamma,
        };
        if mode != prev_mode {
            e_prev = hp.objective(mode, residual.norm_squared(), &x, &theta);
            prev_mode = mode;
        }

        // x-update: damped NNLS, then the exact minimizer of the convex
        // quadratic on the segment from the previous x to the candidate
        for j in 0..p {
            damp[j] = 1.0 / theta[j];
        }
        let (cand, _) = nnls_cgls_damped(a, b, Some(&damp), Some(&x), &cfg.inner)?;
        let d = &cand - &x;
        let ad = a * &d;
        let num = residual.dot(&ad) - (0..p).map(|j| x[j] * d[j] * damp[j]).sum::<f64>();
        let den = ad.norm_squared() + (0..p).map(|j| d[j] * d[j] * damp[j]).sum::<f64>();
        let t = if den > 0.0 { (num / den).clamp(0.0, 1.0) } else { 0.0 };
        if t > 0.0 {
            x.axpy(t, &d, 1.0);
            x.iter_mut().for_each(|v| *v = v.max(0.0));
            residual = b - a * &x;
        }

        // θ-update
        let new_theta: Vec<f64> = (0..p).map(|j| hp.theta_update(mode, cfg.theta_rule, j, x[j])).collect();
        let num: f64 = new_theta.iter().zip(&theta).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = theta.iter().map(|v| v * v).sum();
        let dtheta = (num / den).sqrt();
        theta = new_theta;

        let residual_sq = residual.norm_squared();
        let e = hp.objective(mode, residual_sq, &x, &theta);
        if mode == Hyperprior::Gamma
            && cfg.theta_rule == ThetaRule::Stationary
            && e > e_prev + 1e-10 * e_prev.abs().max(1.0)
        {
            return Err(Error::Invariant(format!("IAS objective increased from {e_prev:e} to {e:e} at iteration {}", k + 1)));
        }
        e_prev = e;
        history.push(IasIteration {
            hyperprior: mode,
            objective: e,
            residual_sq,
            support: support_of(&x, SUPPORT_REL).len(),
            dtheta,
        });
        if dtheta < cfg.tol_theta {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("IAS stopped at max_iter = {} without meeting tol_theta", cfg.max_iter);
    }
    Ok(IasResult { x, theta, converged, history })
}
