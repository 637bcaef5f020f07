//! The four estimators: current-status MLE/LS, one-step least squares, full
//! least squares via the iterative convex minorant algorithm with Lagrange
//! multipliers, and the case-2 nonparametric MLE. A log-barrier interior
//! point solver cross-checks the full LS estimator.

use crate::characterization::{
    self, fenchel_grid, w_increments_grid, FenchelReport,
};
use crate::data_model::{
    CurrentStatusObservation, Endpoint, Sample2, StepDistribution,
};
use crate::isotonic::pava;
use crate::{Error, Result};

/// Interior clip applied to MLE iterates so log arguments stay positive;
/// the final pooled solution may still contain exact 0/1.
const MLE_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
pub struct IcmOptions {
    /// Fenchel-residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Armijo backtracking between old and new iterate.
    pub line_search: bool,
    pub armijo: f64,
}

impl Default for IcmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            line_search: true,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub f: StepDistribution,
    pub lambda1: f64,
    pub lambda2: f64,
    pub iterations: usize,
    pub fenchel: FenchelReport,
    pub objective: f64,
    pub converged: bool,
}

/// Current-status estimator: left GCM slopes of the cusum diagram of the
/// indicators, i.e. PAVA on the indicators. Tied inspection times are merged
/// with their indicator mean and multiplicity weight.
pub fn fit_current_status(sample: &[CurrentStatusObservation]) -> Result<StepDistribution> {
    if sample.is_empty() {
        return Err(Error::Invalid("empty sample".into()));
    }
    let mut sorted: Vec<_> = sample.to_vec();
    sorted.sort_by(|a, b| a.t.total_cmp(&b.t));

    let mut knots: Vec<f64> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for o in &sorted {
        match knots.last() {
            Some(&t) if t == o.t => {
                let k = values.len() - 1;
                let w = weights[k];
                values[k] = (values[k] * w + f64::from(o.delta)) / (w + 1.0);
                weights[k] = w + 1.0;
            }
            _ => {
                knots.push(o.t);
                values.push(f64::from(o.delta));
                weights.push(1.0);
            }
        }
    }
    let fit = pava(&values, &weights)?;
    StepDistribution::new(knots, fit)
}

/// Per-grid-point responses of the one-step cusum walk: `d0` at a u-point,
/// `d0 + d1` at a v-point, tied events averaged with multiplicity weight.
fn simple_responses(sample: &Sample2) -> (Vec<f64>, Vec<f64>) {
    let mut values = Vec::with_capacity(sample.grid().len());
    let mut weights = Vec::with_capacity(sample.grid().len());
    for gp in sample.grid() {
        let mut sum = 0.0;
        for ev in &gp.events {
            let o = sample.observations()[ev.obs];
            sum += match ev.endpoint {
                Endpoint::Left => f64::from(o.d0),
                Endpoint::Right => f64::from(o.d0 + o.d1),
            };
        }
        let m = gp.multiplicity() as f64;
        values.push(sum / m);
        weights.push(m);
    }
    (values, weights)
}

fn fit_ls_simple_grid(sample: &Sample2) -> Result<Vec<f64>> {
    let (values, weights) = simple_responses(sample);
    pava(&values, &weights)
}

/// One-step least squares estimator: left GCM slopes of the cusum diagram
/// built by walking the 2n grid times, adding `d0` at a u-point and
/// `d0 + d1` at a v-point. Slopes lie in [0, 1] automatically.
pub fn fit_ls_simple(sample: &Sample2) -> Result<StepDistribution> {
    let y = fit_ls_simple_grid(sample)?;
    StepDistribution::from_grid(sample, &y)
}

fn criterion_ls_full_grid(y: &[f64], sample: &Sample2) -> f64 {
    let mut c = 0.0;
    for (i, o) in sample.observations().iter().enumerate() {
        let (ju, jv) = sample.grid_indices(i);
        let (fu, fv) = (y[ju], y[jv]);
        let r0 = fu - f64::from(o.d0);
        let r1 = fv - fu - f64::from(o.d1);
        let r2 = fv - f64::from(o.d0 + o.d1);
        c += r0 * r0 + r1 * r1 + r2 * r2;
    }
    c
}

fn criterion_ls_simple_grid(y: &[f64], sample: &Sample2) -> f64 {
    let mut c = 0.0;
    for (i, o) in sample.observations().iter().enumerate() {
        let (ju, jv) = sample.grid_indices(i);
        let r0 = y[ju] - f64::from(o.d0);
        let r1 = y[jv] - f64::from(o.d0 + o.d1);
        c += r0 * r0 + r1 * r1;
    }
    c
}

fn loglik_ic2_grid(y: &[f64], sample: &Sample2) -> f64 {
    let mut l = 0.0;
    for (i, o) in sample.observations().iter().enumerate() {
        let (ju, jv) = sample.grid_indices(i);
        let (fu, fv) = (y[ju], y[jv]);
        // 0 * log 0 = 0 convention: skip terms with zero indicator
        if o.d0 == 1 {
            l += fu.ln();
        } else if o.d1 == 1 {
            l += (fv - fu).ln();
        } else {
            l += (1.0 - fv).ln();
        }
    }
    l
}

fn eval_on_grid(f: &StepDistribution, sample: &Sample2) -> Vec<f64> {
    sample.grid().iter().map(|gp| f.evaluate(gp.time)).collect()
}

/// Exact value of the three-term least squares criterion.
pub fn criterion_ls_full(f: &StepDistribution, sample: &Sample2) -> f64 {
    criterion_ls_full_grid(&eval_on_grid(f, sample), sample)
}

/// Exact value of the two-term one-step criterion.
pub fn criterion_ls_simple(f: &StepDistribution, sample: &Sample2) -> f64 {
    criterion_ls_simple_grid(&eval_on_grid(f, sample), sample)
}

/// Case-2 log likelihood, with the 0 * log 0 = 0 convention.
pub fn loglik_ic2(f: &StepDistribution, sample: &Sample2) -> f64 {
    loglik_ic2_grid(&eval_on_grid(f, sample), sample)
}

fn clip01(y: &mut [f64]) {
    for v in y {
        if *v < 0.0 {
            *v = 0.0;
        } else if *v > 1.0 {
            *v = 1.0;
        }
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Full least squares estimator by the iterative convex minorant algorithm.
///
/// Each step forms the self-induced cusum diagram at the current iterate
/// (an isotonic regression of `y_j + n dW_j / (2 m_j)` with multiplicity
/// weights, `m_j` the number of endpoint events at grid point `j`; the
/// diagonal of the criterion Hessian is exactly `4 m_j`), clips the slopes
/// to [0, 1], recomputes the Lagrange multipliers on the clipped iterate and
/// stops once the Fenchel residuals and the sup-change fall below `tol`.
pub fn fit_ls_full(sample: &Sample2, opts: &IcmOptions) -> Result<FitResult> {
    let n = sample.n() as f64;
    let mult: Vec<f64> = sample.grid().iter().map(|gp| gp.multiplicity() as f64).collect();

    let mut y = fit_ls_simple_grid(sample)?;
    let mut crit = criterion_ls_full_grid(&y, sample);
    let mut report = fenchel_grid(&y, sample, opts.tol);
    let mut converged = report.pass;
    let mut iterations = 0;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let dw = w_increments_grid(&y, sample);
        let target: Vec<f64> = y
            .iter()
            .zip(&dw)
            .zip(&mult)
            .map(|((yj, dwj), mj)| yj + n * dwj / (2.0 * mj))
            .collect();
        let mut ynew = pava(&target, &mult)?;
        clip01(&mut ynew);

        if opts.line_search {
            // directional derivative of the criterion along d is
            // sum_j (-2 n dW_j) d_j
            let deriv: f64 = dw
                .iter()
                .zip(&ynew)
                .zip(&y)
                .map(|((dwj, yn), yo)| -2.0 * n * dwj * (yn - yo))
                .sum();
            let mut alpha = 1.0;
            let mut cand = ynew.clone();
            for _ in 0..60 {
                let c = criterion_ls_full_grid(&cand, sample);
                if c <= crit + opts.armijo * alpha * deriv.min(0.0) + 1e-14 * (1.0 + crit) {
                    ynew = cand;
                    break;
                }
                alpha *= 0.5;
                cand = y
                    .iter()
                    .zip(&ynew)
                    .map(|(yo, yn)| yo + alpha * (yn - yo))
                    .collect();
            }
        }

        let change = sup_diff(&y, &ynew);
        y = ynew;
        crit = criterion_ls_full_grid(&y, sample);
        report = fenchel_grid(&y, sample, opts.tol);
        converged = report.pass && change <= opts.tol;
    }

    Ok(FitResult {
        f: StepDistribution::from_grid(sample, &y)?,
        lambda1: report.lambda1,
        lambda2: report.lambda2,
        iterations,
        fenchel: report,
        objective: crit,
        converged,
    })
}

/// Nonparametric MLE for case 2 interval censoring via the iterative convex
/// minorant algorithm with diagonal-Hessian weights (floored at 1e-8) and
/// Armijo line search on the log likelihood.
pub fn fit_mle_ic2(sample: &Sample2, opts: &IcmOptions) -> Result<FitResult> {
    let k = sample.grid().len();
    let n = sample.n() as f64;

    // strictly increasing interior start so every log argument is positive
    let simple = fit_ls_simple_grid(sample)?;
    let mut y: Vec<f64> = simple
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            let ramp = (j as f64 + 1.0) / (k as f64 + 1.0);
            (0.9 * s + 0.1 * ramp).clamp(MLE_EPS, 1.0 - MLE_EPS)
        })
        .collect();
    // the blend can break monotonicity where the simple fit steps down the ramp
    for j in 1..k {
        if y[j] < y[j - 1] {
            y[j] = y[j - 1];
        }
    }
    // re-separate exact ties so differences for d1 observations are positive
    for j in 1..k {
        if y[j] <= y[j - 1] {
            y[j] = (y[j - 1] + 1e-12).min(1.0 - MLE_EPS);
        }
    }

    let mut obj = -loglik_ic2_grid(&y, sample);
    let mut iterations = 0;
    let mut converged = false;
    let mut report = mle_fenchel_grid(&y, sample, opts.tol);

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let (grad, mut hess) = mle_grad_hess(&y, sample);
        for h in &mut hess {
            if *h < 1e-8 {
                *h = 1e-8;
            }
        }
        let target: Vec<f64> = y
            .iter()
            .zip(&grad)
            .zip(&hess)
            .map(|((yj, gj), hj)| yj - gj / hj)
            .collect();
        let mut ynew = pava(&target, &hess)?;
        for v in &mut ynew {
            *v = v.clamp(MLE_EPS, 1.0 - MLE_EPS);
        }

        // Armijo backtracking on the negative log likelihood; -inf likelihood
        // (pooled difference hit zero for a d1 observation) forces a shorter
        // step.
        let deriv: f64 = grad
            .iter()
            .zip(&ynew)
            .zip(&y)
            .map(|((g, yn), yo)| g * (yn - yo))
            .sum();
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut cand = ynew.clone();
        for _ in 0..60 {
            let c = -loglik_ic2_grid(&cand, sample);
            if c.is_finite() && c <= obj + opts.armijo * alpha * deriv.min(0.0) + 1e-12 * (1.0 + obj.abs()) {
                ynew = cand;
                accepted = true;
                break;
            }
            alpha *= 0.5;
            cand = y
                .iter()
                .zip(&ynew)
                .map(|(yo, yn)| yo + alpha * (yn - yo))
                .collect();
        }
        if !accepted {
            break;
        }

        let change = sup_diff(&y, &ynew);
        y = ynew;
        obj = -loglik_ic2_grid(&y, sample);
        report = mle_fenchel_grid(&y, sample, opts.tol);
        converged = report.pass && change <= opts.tol;
    }

    // allow exact 0/1 in the final pooled solution where the likelihood
    // permits it
    let mut snapped = y.clone();
    for v in &mut snapped {
        if *v <= 2.0 * MLE_EPS {
            *v = 0.0;
        } else if *v >= 1.0 - 2.0 * MLE_EPS {
            *v = 1.0;
        }
    }
    let l_snap = loglik_ic2_grid(&snapped, sample);
    if l_snap.is_finite() && l_snap >= -obj - 1e-9 {
        y = snapped;
        obj = -l_snap;
        report = mle_fenchel_grid(&y, sample, opts.tol);
    }

    let _ = n;
    Ok(FitResult {
        f: StepDistribution::from_grid(sample, &y)?,
        lambda1: report.lambda1,
        lambda2: report.lambda2,
        iterations,
        fenchel: report,
        objective: -obj,
        converged,
    })
}

/// Gradient and diagonal Hessian of the negative case-2 log likelihood with
/// respect to the grid values.
fn mle_grad_hess(y: &[f64], sample: &Sample2) -> (Vec<f64>, Vec<f64>) {
    let k = y.len();
    let mut grad = vec![0.0; k];
    let mut hess = vec![0.0; k];
    for (i, o) in sample.observations().iter().enumerate() {
        let (ju, jv) = sample.grid_indices(i);
        let (fu, fv) = (y[ju], y[jv]);
        if o.d0 == 1 {
            grad[ju] -= 1.0 / fu;
            hess[ju] += 1.0 / (fu * fu);
        } else if o.d1 == 1 {
            let diff = fv - fu;
            grad[ju] += 1.0 / diff;
            grad[jv] -= 1.0 / diff;
            let h = 1.0 / (diff * diff);
            hess[ju] += h;
            hess[jv] += h;
        } else {
            let tail = 1.0 - fv;
            grad[jv] += 1.0 / tail;
            hess[jv] += 1.0 / (tail * tail);
        }
    }
    (grad, hess)
}

/// Fenchel-style optimality residuals for the MLE: the same inequality and
/// equality pair as the least squares lemma, applied to the cumulated
/// likelihood gradient with boundary corrections from the active 0/1 sets.
fn mle_fenchel_grid(y: &[f64], sample: &Sample2, tol: f64) -> FenchelReport {
    let n = sample.n() as f64;
    let (grad, _) = mle_grad_hess(y, sample);
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for (j, &yj) in y.iter().enumerate() {
        if yj <= 2.0 * MLE_EPS {
            l1 += grad[j] / n;
        } else if yj >= 1.0 - 2.0 * MLE_EPS {
            l2 -= grad[j] / n;
        }
    }
    let mut w = 0.0;
    let mut min_w = 0.0f64;
    let mut integral = 0.0;
    for (j, &yj) in y.iter().enumerate() {
        w += -grad[j] / n;
        min_w = min_w.min(w);
        integral += yj * (-grad[j] / n);
    }
    let min_slack = l1 + min_w;
    let equality_residual = (integral - l2).abs();
    FenchelReport {
        min_slack,
        equality_residual,
        lambda1: l1,
        lambda2: l2,
        tol,
        pass: min_slack >= -tol && equality_residual <= tol,
    }
}

/// Options for the log-barrier interior point cross-solver.
#[derive(Debug, Clone, Copy)]
pub struct BarrierOptions {
    pub mu0: f64,
    pub mu_factor: f64,
    pub mu_min: f64,
    pub max_newton: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            mu0: 1.0,
            mu_factor: 0.1,
            // weakly active bounds sit sqrt(mu) off the boundary on the
            // central path, so the floor must be well below the square of
            // the agreement tolerance
            mu_min: 1e-14,
            max_newton: 60,
        }
    }
}

/// Full least squares estimator by an interior point method with a
/// logarithmic barrier on `0 <= y_1 <= ... <= y_K <= 1`, `mu` driven down on
/// a geometric schedule with a damped Newton inner loop. Converges to the
/// solution from the interior, as opposed to the convex minorant algorithm
/// which hits the boundary in its first step.
pub fn fit_ls_full_barrier(sample: &Sample2, opts: &BarrierOptions) -> Result<StepDistribution> {
    let k = sample.grid().len();
    let n = sample.n() as f64;
    let mult: Vec<f64> = sample.grid().iter().map(|gp| gp.multiplicity() as f64).collect();

    // strictly feasible equally spaced start
    let mut y: Vec<f64> = (0..k).map(|j| (j as f64 + 1.0) / (k as f64 + 1.0)).collect();

    let phi = |y: &[f64], mu: f64| -> f64 {
        criterion_ls_full_grid(y, sample) + mu * barrier_value(y)
    };

    let mut mu = opts.mu0;
    while mu >= opts.mu_min {
        let inner_tol = (mu * 1e-2).max(1e-12);
        for _ in 0..opts.max_newton {
            let dw = w_increments_grid(&y, sample);
            let mut grad: Vec<f64> = dw.iter().map(|d| -2.0 * n * d).collect();
            let gaps = gaps_of(&y);
            for j in 0..k {
                grad[j] += mu * (-1.0 / gaps[j] + 1.0 / gaps[j + 1]);
            }
            let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if gnorm <= inner_tol {
                break;
            }

            let dir = match newton_direction(sample, &mult, &gaps, mu, &grad) {
                Some(d) => d,
                // fall back to a preconditioned gradient step
                None => grad.iter().zip(&mult).map(|(g, m)| -g / (4.0 * m)).collect(),
            };

            // fraction-to-boundary then Armijo backtracking
            let mut alpha: f64 = 1.0;
            for j in 0..=k {
                let dgap = match j {
                    0 => dir[0],
                    _ if j == k => -dir[k - 1],
                    _ => dir[j] - dir[j - 1],
                };
                if dgap < 0.0 {
                    alpha = alpha.min(-0.99 * gaps[j] / dgap);
                }
            }
            let deriv: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
            let base = phi(&y, mu);
            let mut stepped = false;
            for _ in 0..60 {
                let cand: Vec<f64> = y.iter().zip(&dir).map(|(yj, d)| yj + alpha * d).collect();
                let val = phi(&cand, mu);
                if val.is_finite() && val <= base + 1e-4 * alpha * deriv + 1e-12 * (1.0 + base.abs()) {
                    y = cand;
                    stepped = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !stepped {
                break;
            }
        }
        mu *= opts.mu_factor;
    }

    // tiny float noise only; the iterate is strictly interior by construction
    for j in 1..k {
        if y[j] < y[j - 1] {
            y[j] = y[j - 1];
        }
    }
    clip01(&mut y);
    StepDistribution::from_grid(sample, &y)
}

/// Gap vector `(y_1 - 0, y_2 - y_1, ..., 1 - y_K)`, length K + 1.
fn gaps_of(y: &[f64]) -> Vec<f64> {
    let k = y.len();
    let mut g = Vec::with_capacity(k + 1);
    g.push(y[0]);
    for j in 1..k {
        g.push(y[j] - y[j - 1]);
    }
    g.push(1.0 - y[k - 1]);
    g
}

fn barrier_value(y: &[f64]) -> f64 {
    let gaps = gaps_of(y);
    if gaps.iter().any(|&g| g <= 0.0) {
        return f64::INFINITY;
    }
    -gaps.iter().map(|g| g.ln()).sum::<f64>()
}

/// Solve `(H_C + mu H_B) d = -grad` by preconditioned conjugate gradients.
///
/// `H_C` is the criterion Hessian (diagonal `4 m_j` plus a `-2` coupling for
/// each observation's endpoint pair), `H_B` the tridiagonal barrier Hessian.
/// The tridiagonal part (which dominates for small `mu`) serves as the
/// preconditioner, solved by the Thomas algorithm.
fn newton_direction(
    sample: &Sample2,
    mult: &[f64],
    gaps: &[f64],
    mu: f64,
    grad: &[f64],
) -> Option<Vec<f64>> {
    let k = grad.len();
    let inv2: Vec<f64> = gaps.iter().map(|g| 1.0 / (g * g)).collect();
    let mut diag = vec![0.0; k];
    let mut off = vec![0.0; k.saturating_sub(1)]; // off[j] couples j and j+1
    for j in 0..k {
        diag[j] = 4.0 * mult[j] + mu * (inv2[j] + inv2[j + 1]);
    }
    for j in 0..k - 1 {
        off[j] = -mu * inv2[j + 1];
    }

    let pairs: Vec<(usize, usize)> = (0..sample.n()).map(|i| sample.grid_indices(i)).collect();
    let matvec = |x: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; k];
        for j in 0..k {
            out[j] = diag[j] * x[j];
        }
        for j in 0..k - 1 {
            out[j] += off[j] * x[j + 1];
            out[j + 1] += off[j] * x[j];
        }
        for &(ju, jv) in &pairs {
            out[ju] += -2.0 * x[jv];
            out[jv] += -2.0 * x[ju];
        }
        out
    };

    // Thomas factorization of the tridiagonal preconditioner
    let mut c_prime = vec![0.0; k];
    let mut d_diag = vec![0.0; k];
    d_diag[0] = diag[0];
    for j in 1..k {
        c_prime[j - 1] = off[j - 1] / d_diag[j - 1];
        d_diag[j] = diag[j] - off[j - 1] * c_prime[j - 1];
        if !(d_diag[j] > 0.0) {
            return None;
        }
    }
    let precond = |r: &[f64]| -> Vec<f64> {
        let mut z = vec![0.0; k];
        z[0] = r[0];
        for j in 1..k {
            z[j] = r[j] - c_prime[j - 1] * z[j - 1];
        }
        for j in 0..k {
            z[j] /= d_diag[j];
        }
        for j in (0..k - 1).rev() {
            z[j] -= c_prime[j] * z[j + 1];
        }
        z
    };

    let b: Vec<f64> = grad.iter().map(|g| -g).collect();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Some(vec![0.0; k]);
    }
    let mut x = vec![0.0; k];
    let mut r = b.clone();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..4 * k {
        let hp = matvec(&p);
        let php: f64 = p.iter().zip(&hp).map(|(a, b)| a * b).sum();
        if !(php > 0.0) {
            return None;
        }
        let alpha = rz / php;
        for j in 0..k {
            x[j] += alpha * p[j];
            r[j] -= alpha * hp[j];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= 1e-12 * bnorm {
            return Some(x);
        }
        z = precond(&r);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for j in 0..k {
            p[j] = z[j] + beta * p[j];
        }
    }
    Some(x)
}

/// Shared helper for tests and studies: fit all three case-2 estimators.
pub fn fit_all(sample: &Sample2, opts: &IcmOptions) -> Result<(FitResult, FitResult, StepDistribution)> {
    let mle = fit_mle_ic2(sample, opts)?;
    let ls = fit_ls_full(sample, opts)?;
    let simple = fit_ls_simple(sample)?;
    Ok((mle, ls, simple))
}

/// Sup distance between two step functions over a shared set of times.
pub fn sup_distance(a: &StepDistribution, b: &StepDistribution, times: &[f64]) -> f64 {
    times
        .iter()
        .map(|&t| (a.evaluate(t) - b.evaluate(t)).abs())
        .fold(0.0, f64::max)
}

pub use characterization::{verify_fenchel, verify_fenchel_simple};
