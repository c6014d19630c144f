//! Three-phase estimation: whitened subdictionary identification, sparse
//! coding on the winning block and interpolation of the support labels.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{DceStats, DictionaryBundle, Subdictionary};
use crate::error::{Error, Result};
use crate::forward::{map_params, ParamVector, PhysicalParams, Simulator};
use crate::measure::{make_datum, PhTrace};
use crate::sparse::{ias_hybrid, CglsStatus, CglsStop, IasConfig, IasResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// `Σ x_j ξ_j / Σ x_j`.
    Normalized,
    /// `Σ x_j ξ_j`.
    Raw,
}

/// Default `ϑ` scale for Phase 2, tuned on the standard 12³ bundle.
pub const PHASE2_THETA_SCALE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateOptions {
    /// Phase-2 IAS settings; set `hybrid_switch_iter` for the hybrid hyperprior.
    pub ias: IasConfig,
    /// Noise level used to scale the unwhitened Phase-2 system.
    pub sigma: f64,
    /// Whiten Phase 2 with the winner's DCE statistics instead of `sigma`.
    pub whitened_phase2: bool,
    pub interpolation: Interpolation,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            ias: IasConfig { theta_scale: PHASE2_THETA_SCALE, ..IasConfig::default() },
            sigma: 1e-5,
            whitened_phase2: false,
            interpolation: Interpolation::Normalized,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phase1 {
    pub winner: usize,
    /// Whitened residual norm per subdictionary.
    pub residuals: Vec<f64>,
    pub status: Vec<CglsStatus>,
}

/// Fits `b − μ_i` in each code book `W_i` under `C_i`-whitening and picks
/// the smallest residual; ties go to the lowest index.
pub fn phase1_identify(b: &DVector<f64>, subs: &[Subdictionary]) -> Result<Phase1> {
    if subs.is_empty() {
        return Err(Error::Estimation("no subdictionaries".into()));
    }
    let m = b.len();
    let fits: Vec<Result<(f64, CglsStatus)>> = subs
        .par_iter()
        .map(|s| {
            if s.w.nrows() != m {
                return Err(Error::Parse(format!("datum has {m} samples, code book has {}", s.w.nrows())));
            }
            let a = s.dce.whiten_matrix(&s.w);
            let r = s.dce.whiten(&(b - &s.dce.mean));
            let (_, rep) = crate::sparse::nnls_cgls(&a, &r, &CglsStop::morozov(m as f64))?;
            Ok((rep.residual_sq.sqrt(), rep.status))
        })
        .collect();
    let mut residuals = Vec::with_capacity(subs.len());
    let mut status = Vec::with_capacity(subs.len());
    for f in fits {
        let (r, s) = f?;
        residuals.push(r);
        status.push(s);
    }
    let mut winner = 0;
    for i in 1..residuals.len() {
        if residuals[i] < residuals[winner] {
            winner = i;
        }
    }
    let ties: Vec<usize> = (0..residuals.len()).filter(|&i| i != winner && residuals[i] == residuals[winner]).collect();
    if !ties.is_empty() {
        log::warn!("phase 1 tie between subdictionary {winner} and {ties:?}; lowest index wins");
    }
    Ok(Phase1 { winner, residuals, status })
}

/// Sparse non-negative code of `b` in the atom block by IAS.
pub fn phase2_code(b: &DVector<f64>, block: &DMatrix<f64>, dce: Option<&DceStats>, opts: &EstimateOptions) -> Result<IasResult> {
    if b.iter().all(|&v| v == 0.0) {
        let p = block.ncols();
        let v = crate::sparse::sensitivity_scales(block, opts.ias.theta_scale);
        return Ok(IasResult { x: DVector::zeros(p), theta: v.iter().map(|t| t * opts.ias.eta).collect(), converged: true, history: Vec::new() });
    }
    let m = b.len() as f64;
    let (a, rhs) = match dce {
        Some(s) if opts.whitened_phase2 => (s.whiten_matrix(block), s.whiten(&(b - &s.mean))),
        _ => {
            if !(opts.sigma > 0.0) {
                return Err(Error::config("phase 2 sigma must be positive"));
            }
            (block / opts.sigma, b / opts.sigma)
        }
    };
    let cfg = IasConfig { inner: CglsStop::morozov(m), ..opts.ias.clone() };
    let r = ias_hybrid(&a, &rhs, &cfg)?;
    if !r.converged {
        log::warn!("phase 2 IAS did not converge in {} iterations", r.iterations());
    }
    Ok(r)
}

/// Raw and normalized label averages under the weights `x`.
pub fn phase3_interpolate(x: &DVector<f64>, labels: &[ParamVector]) -> Result<([f64; 3], ParamVector)> {
    if x.len() != labels.len() {
        return Err(Error::domain("one weight per label required"));
    }
    if x.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::domain("weights must be non-negative"));
    }
    let total: f64 = x.sum();
    if !(total > 0.0) {
        return Err(Error::Estimation("sparse code is identically zero".into()));
    }
    let mut raw = [0.0; 3];
    for (w, l) in x.iter().zip(labels) {
        for a in 0..3 {
            raw[a] += w * l.0[a];
        }
    }
    let norm = ParamVector(std::array::from_fn(|a| (raw[a] / total).clamp(0.0, 1.0)));
    Ok((raw, norm))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportEntry {
    /// Column in the full dictionary.
    pub column: usize,
    pub label: ParamVector,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Timings {
    pub phase1: Duration,
    pub phase2: Duration,
    pub phase3: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimationResult {
    pub winner: usize,
    pub residuals: Vec<f64>,
    pub support: Vec<SupportEntry>,
    pub xi_raw: [f64; 3],
    pub xi_normalized: ParamVector,
    /// The estimate in the configured interpolation mode.
    pub xi: ParamVector,
    pub physical: PhysicalParams,
    pub ias_converged: bool,
    pub ias_iterations: usize,
    pub timings: Timings,
}

/// Runs all three phases on `datum` against `bundle`.
pub fn estimate(bundle: &DictionaryBundle, datum: &PhTrace, opts: &EstimateOptions) -> Result<EstimationResult> {
    let m = bundle.dictionary.n_samples();
    datum.validate(m)?;
    let b = DVector::from_column_slice(&datum.values);

    let t0 = Instant::now();
    let p1 = phase1_identify(&b, &bundle.subs)?;
    let t1 = Instant::now();
    let sub = &bundle.subs[p1.winner];
    let block = bundle.block(p1.winner);
    let code = phase2_code(&b, &block, Some(&sub.dce), opts)?;
    let t2 = Instant::now();
    let labels = bundle.block_labels(p1.winner);
    let (xi_raw, xi_normalized) = phase3_interpolate(&code.x, &labels)?;
    let xi = match opts.interpolation {
        Interpolation::Normalized => xi_normalized,
        Interpolation::Raw => ParamVector(xi_raw.map(|v| v.clamp(0.0, 1.0))),
    };
    let physical = map_params(&xi, &bundle.config.scaling)?;
    let t3 = Instant::now();

    let support = code
        .support(crate::sparse::ias::SUPPORT_REL)
        .into_iter()
        .map(|j| SupportEntry { column: sub.columns[j], label: labels[j], weight: code.x[j] })
        .collect();
    Ok(EstimationResult {
        winner: p1.winner,
        residuals: p1.residuals,
        support,
        xi_raw,
        xi_normalized,
        xi,
        physical,
        ias_converged: code.converged,
        ias_iterations: code.iterations(),
        timings: Timings { phase1: t1 - t0, phase2: t2 - t1, phase3: t3 - t2 },
    })
}

/// Compartment pH and its datum at the estimated parameters.
pub fn replay(sim: &Simulator, xi: &ParamVector) -> Result<(Vec<f64>, PhTrace)> {
    let ph = sim.simulate(xi)?.ph();
    let d = make_datum(&ph, &sim.config.measurement)?;
    Ok((ph, d))
}

impl EstimationResult {
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "winner: {}", self.winner)?;
        writeln!(w, "residuals:")?;
        for (i, r) in self.residuals.iter().enumerate() {
            writeln!(w, "  {i}: {r:.6e}{}", if i == self.winner { "  *" } else { "" })?;
        }
        writeln!(w, "support ({} atoms):", self.support.len())?;
        for s in &self.support {
            let [a, b, c] = s.label.0;
            writeln!(w, "  column {:>6}  xi = ({a:.4}, {b:.4}, {c:.4})  weight {:.6e}", s.column, s.weight)?;
        }
        let [a, b, c] = self.xi_raw;
        writeln!(w, "xi raw:        ({a:.6}, {b:.6}, {c:.6})")?;
        let [a, b, c] = self.xi_normalized.0;
        writeln!(w, "xi normalized: ({a:.6}, {b:.6}, {c:.6})")?;
        let p = &self.physical;
        writeln!(w, "lambda = {:.4} um/s", p.lambda)?;
        writeln!(w, "A0     = {:.4}", p.a0)?;
        writeln!(w, "gamma  = {:.6e} um/s (log10 {:.4})", p.gamma, p.gamma.log10())?;
        writeln!(w, "IAS: {} iterations, converged {}", self.ias_iterations, self.ias_converged)?;
        let t = &self.timings;
        writeln!(w, "timings: phase1 {:.3?}, phase2 {:.3?}, phase3 {:.3?}", t.phase1, t.phase2, t.phase3)?;
        Ok(())
    }

    /// Key/value CSV followed by the support table.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "key,value")?;
        writeln!(w, "winner,{}", self.winner)?;
        for (i, r) in self.residuals.iter().enumerate() {
            writeln!(w, "residual_{i},{r:e}")?;
        }
        for (name, v) in ["xi_lambda", "xi_a", "xi_gamma"].iter().zip(self.xi_raw) {
            writeln!(w, "{name}_raw,{v}")?;
        }
        for (name, v) in ["xi_lambda", "xi_a", "xi_gamma"].iter().zip(self.xi_normalized.0) {
            writeln!(w, "{name}_normalized,{v}")?;
        }
        writeln!(w, "lambda,{}", self.physical.lambda)?;
        writeln!(w, "a0,{}", self.physical.a0)?;
        writeln!(w, "gamma,{:e}", self.physical.gamma)?;
        writeln!(w, "ias_iterations,{}", self.ias_iterations)?;
        writeln!(w, "ias_converged,{}", self.ias_converged)?;
        writeln!(w)?;
        writeln!(w, "column,xi_lambda,xi_a,xi_gamma,weight")?;
        for s in &self.support {
            let [a, b, c] = s.label.0;
            writeln!(w, "{},{a},{b},{c},{:e}", s.column, s.weight)?;
        }
        Ok(())
    }
}

/// Overlay CSV: time, measured reading, replayed pH and replayed reading.
pub fn write_replay_csv<W: Write>(mut w: W, datum: &PhTrace, replay_ph: &[f64], replay_datum: &PhTrace) -> Result<()> {
    writeln!(w, "t,measured,replay_ph,replay_reading")?;
    let measured = datum.readings();
    let rr = replay_datum.readings();
    for i in 0..measured.len().min(replay_ph.len()) {
        writeln!(w, "{},{},{},{}", i as f64 * datum.dt, measured[i], replay_ph[i], rr[i])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::DceStats;

    fn sub(w: DMatrix<f64>, columns: Vec<usize>) -> Subdictionary {
        let m = w.nrows();
        let k = w.ncols();
        Subdictionary { medoid: columns[0], h: DMatrix::zeros(k, columns.len()), columns, w, dce: DceStats::identity(m) }
    }

    #[test]
    fn exact_member_wins() {
        let e = |i: usize| DMatrix::from_fn(6, 1, |r, _| if r == i { 10.0 } else { 0.0 });
        let subs: Vec<_> = (0..5).map(|i| sub(e(i), vec![i])).collect();
        let b = DVector::from_fn(6, |r, _| if r == 3 { 10.0 } else { 0.0 });
        let p = phase1_identify(&b, &subs).unwrap();
        assert_eq!(p.winner, 3);
        for (i, r) in p.residuals.iter().enumerate() {
            assert!(p.residuals[3] <= *r, "{i}");
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let w = DMatrix::from_element(4, 1, 1.0);
        let subs = vec![sub(w.clone(), vec![0]), sub(w, vec![1])];
        let p = phase1_identify(&DVector::from_element(4, 5.0), &subs).unwrap();
        assert_eq!(p.winner, 0);
    }

    #[test]
    fn interpolation_modes() {
        let labels = vec![ParamVector::new(0.6, 0.7, 0.2), ParamVector::new(0.8, 0.9, 0.4), ParamVector::new(1.0, 1.0, 1.0)];
        let (raw, norm) = phase3_interpolate(&DVector::from_vec(vec![0.0, 1.0, 0.0]), &labels).unwrap();
        assert_eq!(raw, [0.8, 0.9, 0.4]);
        assert_eq!(norm.0, [0.8, 0.9, 0.4]);
        let (raw, norm) = phase3_interpolate(&DVector::from_vec(vec![2.0, 2.0, 0.0]), &labels).unwrap();
        assert!((raw[0] - 2.8).abs() < 1e-12);
        for a in 0..3 {
            assert!((norm.0[a] - 0.5 * (labels[0].0[a] + labels[1].0[a])).abs() < 1e-15);
        }
        assert!(matches!(phase3_interpolate(&DVector::zeros(3), &labels), Err(Error::Estimation(_))));
    }

    #[test]
    fn zero_datum_codes_to_zero() {
        let block = DMatrix::from_fn(5, 3, |r, c| (r + c) as f64);
        let r = phase2_code(&DVector::zeros(5), &block, None, &EstimateOptions::default()).unwrap();
        assert!(r.x.iter().all(|&v| v == 0.0));
    }
}
