//! Adaptive Rosenbrock integration (Rodas3: four stages, order 3, embedded
//! order-2 error estimate, stiffly accurate and L-stable).

use crate::error::{Error, Result};

/// An autonomous stiff system `y' = f(y)` that can factor `shift·I − ∂f/∂y`.
pub trait StiffProblem {
    fn dim(&self) -> usize;
    fn rhs(&self, y: &[f64], dy: &mut [f64]);
    fn factor(&mut self, y: &[f64], shift: f64) -> Result<()>;
    /// Solves with the most recent factorization, in place.
    fn solve(&self, b: &mut [f64]);
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: f64,
    pub max_steps: usize,
    /// Components may dip to `-negative_tolerance` and are then clamped to 0;
    /// deeper undershoots reject the step. Infinite disables the rule.
    pub negative_tolerance: f64,
    /// Indices subject to the positivity rule; `None` means all.
    pub nonnegative: Option<std::ops::Range<usize>>,
    /// Step freely and fill output times by cubic interpolation through the
    /// last accepted steps instead of shortening steps to land on them.
    pub dense_output: bool,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            rtol: 1e-6,
            atol: 1e-9,
            initial_step: 1e-6,
            max_steps: 100_000,
            negative_tolerance: f64::INFINITY,
            nonnegative: None,
            dense_output: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub factorizations: usize,
}

const GAMMA: f64 = 0.5;
// Lower-triangular stage coefficients; A21 = 0.
const A31: f64 = 2.0;
const A32: f64 = 0.0;
const A41: f64 = 2.0;
const A42: f64 = 0.0;
const A43: f64 = 1.0;
const C21: f64 = 4.0;
const C31: f64 = 1.0;
const C32: f64 = -1.0;
const C41: f64 = 1.0;
const C42: f64 = -1.0;
const C43: f64 = -8.0 / 3.0;
const M: [f64; 4] = [2.0, 0.0, 1.0, 1.0];
const E: [f64; 4] = [0.0, 0.0, 0.0, 1.0];
const ORDER: f64 = 3.0;

/// Integrates from `t = 0` and calls `observe(k, y)` at `t_k = k·dt` for
/// `k = 0..n_out`. Steps are shortened to land on every output time.
pub fn integrate<P: StiffProblem>(
    problem: &mut P,
    y0: &[f64],
    dt: f64,
    n_out: usize,
    ctl: &StepControl,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<IntegrationStats> {
    let n = problem.dim();
    assert_eq!(y0.len(), n);
    let mut stats = IntegrationStats::default();
    let mut y = y0.to_vec();
    let mut ynew = vec![0.0; n];
    let mut f0 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let nonneg = if ctl.negative_tolerance.is_finite() { ctl.nonnegative.clone().unwrap_or(0..n) } else { 0..0 };

    observe(0, &y);
    let t_end = (n_out.max(1) - 1) as f64 * dt;
    let mut next_out = 1;
    let mut t = 0.0;
    let mut h_free = ctl.initial_step.min(dt);
    let mut f_valid = false;
    let mut out_buf = if ctl.dense_output { vec![0.0; n] } else { Vec::new() };
    // previously accepted points, oldest first
    let mut hist_t: Vec<f64> = Vec::new();
    let mut hist_y: Vec<Vec<f64>> = Vec::new();
    while next_out < n_out {
        let target = if ctl.dense_output { t_end } else { next_out as f64 * dt };
        if stats.accepted + stats.rejected >= ctl.max_steps {
            return Err(Error::Integration { t, reason: format!("exceeded {} steps", ctl.max_steps) });
        }
        let remaining = target - t;
        let landing = h_free >= remaining;
        let h = if landing { remaining } else { h_free };
        if h < 1e-14 * t.max(1.0) {
            return Err(Error::Integration { t, reason: format!("step size underflow (h = {h:e})") });
        }

        if !f_valid {
            problem.rhs(&y, &mut f0);
            stats.rhs_evals += 1;
            f_valid = true;
        }
        problem.factor(&y, 1.0 / (h * GAMMA))?;
        stats.factorizations += 1;

        // stage 1
        k[0].copy_from_slice(&f0);
        problem.solve(&mut k[0]);
        // stage 2: A21 = 0, so f(y) is reused
        for i in 0..n {
            k[1][i] = f0[i] + C21 / h * k[0][i];
        }
        problem.solve(&mut k[1]);
        // stage 3
        for i in 0..n {
            tmp[i] = y[i] + A31 * k[0][i] + A32 * k[1][i];
        }
        problem.rhs(&tmp, &mut k[2]);
        stats.rhs_evals += 1;
        for i in 0..n {
            k[2][i] += (C31 * k[0][i] + C32 * k[1][i]) / h;
        }
        problem.solve(&mut k[2]);
        // stage 4
        for i in 0..n {
            tmp[i] = y[i] + A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i];
        }
        problem.rhs(&tmp, &mut k[3]);
        stats.rhs_evals += 1;
        for i in 0..n {
            k[3][i] += (C41 * k[0][i] + C42 * k[1][i] + C43 * k[2][i]) / h;
        }
        problem.solve(&mut k[3]);

        let mut err2 = 0.0;
        let mut finite = true;
        for i in 0..n {
            ynew[i] = y[i] + M[0] * k[0][i] + M[1] * k[1][i] + M[2] * k[2][i] + M[3] * k[3][i];
            let e = E[0] * k[0][i] + E[1] * k[1][i] + E[2] * k[2][i] + E[3] * k[3][i];
            let sc = ctl.atol + ctl.rtol * y[i].abs().max(ynew[i].abs());
            err2 += (e / sc) * (e / sc);
            finite &= ynew[i].is_finite();
        }
        let err = if finite { (err2 / n as f64).sqrt() } else { f64::INFINITY };
        let negative = finite && ynew[nonneg.clone()].iter().any(|&v| v < -ctl.negative_tolerance);

        if err <= 1.0 && !negative {
            stats.accepted += 1;
            for v in &mut ynew[nonneg.clone()] {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let t_new = if landing { target } else { t + h };
            if ctl.dense_output {
                if hist_t.len() == 3 {
                    hist_t.remove(0);
                    let recycled = hist_y.remove(0);
                    hist_y.push(recycled);
                    hist_y.last_mut().unwrap().copy_from_slice(&y);
                } else {
                    hist_y.push(y.clone());
                }
                hist_t.push(t);
                while next_out < n_out && (next_out as f64 * dt) <= t_new * (1.0 + 1e-14) {
                    let mut ts = hist_t.clone();
                    ts.push(t_new);
                    let mut ys: Vec<&[f64]> = hist_y.iter().map(|v| v.as_slice()).collect();
                    ys.push(&ynew);
                    lagrange(&ts, &ys, next_out as f64 * dt, &mut out_buf);
                    for v in &mut out_buf[nonneg.clone()] {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                    observe(next_out, &out_buf);
                    next_out += 1;
                }
            }
            f_valid = false;
            std::mem::swap(&mut y, &mut ynew);
            t = t_new;
            let fac = if err == 0.0 { 6.0 } else { (0.9 * err.powf(-1.0 / ORDER)).clamp(0.2, 6.0) };
            // a shortened landing step does not shrink the free step size
            h_free = if landing { h_free.max(h * fac) } else { h * fac };
            if !ctl.dense_output && landing {
                observe(next_out, &y);
                next_out += 1;
            }
        } else {
            stats.rejected += 1;
            let fac = if negative || !err.is_finite() {
                0.25
            } else {
                (0.9 * err.powf(-1.0 / ORDER)).clamp(0.1, 0.9)
            };
            h_free = h * fac;
        }
    }
    Ok(stats)
}

/// Lagrange interpolation at `t` through the points `(ts[i], ys[i])`.
fn lagrange(ts: &[f64], ys: &[&[f64]], t: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (i, (ti, yi)) in ts.iter().zip(ys).enumerate() {
        let mut w = 1.0;
        for (j, tj) in ts.iter().enumerate() {
            if j != i {
                w *= (t - tj) / (ti - tj);
            }
        }
        for (o, v) in out.iter_mut().zip(yi.iter()) {
            *o += w * v;
        }
    }
}
