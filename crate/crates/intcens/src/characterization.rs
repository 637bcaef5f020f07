//! The W-processes, Lagrange multipliers and Fenchel optimality conditions.
//!
//! These serve double duty: they drive the iterative convex minorant solver
//! and provide an independent audit of any fitted estimator.

use crate::data_model::{Sample2, StepDistribution};

/// Quantified optimality-condition residuals for a fitted estimator.
#[derive(Debug, Clone, Copy)]
pub struct FenchelReport {
    /// min over the grid (and t = 0) of `lambda1 + W_{n,F}(t)`, or of
    /// `W^(2)_{n,F}(t)` for the one-step estimator.
    pub min_slack: f64,
    /// `|∫ F dW - lambda2|`, or `|∫ F dW^(2)|` for the one-step estimator.
    pub equality_residual: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tol: f64,
    pub pass: bool,
}

impl std::fmt::Display for FenchelReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{{\"min_slack\": {:e}, \"equality_residual\": {:e}, \"lambda1\": {:e}, \"lambda2\": {:e}, \"tol\": {:e}, \"pass\": {}}}",
            self.min_slack, self.equality_residual, self.lambda1, self.lambda2, self.tol, self.pass
        )
    }
}

/// u-part and v-part increments of `W_{n,F}` for observation `i`, given grid
/// values `y` (already divided by n).
#[inline]
pub(crate) fn obs_w_parts(y: &[f64], sample: &Sample2, i: usize) -> (f64, f64) {
    let o = sample.observations()[i];
    let (ju, jv) = sample.grid_indices(i);
    let (fu, fv) = (y[ju], y[jv]);
    let n = sample.n() as f64;
    let mid = f64::from(o.d1) - (fv - fu);
    let wu = ((f64::from(o.d0) - fu) - mid) / n;
    let wv = (mid + (f64::from(o.d0 + o.d1) - fv)) / n;
    (wu, wv)
}

/// u-part and v-part increments of `W^(2)_{n,F}` for observation `i`.
#[inline]
pub(crate) fn obs_w2_parts(y: &[f64], sample: &Sample2, i: usize) -> (f64, f64) {
    let o = sample.observations()[i];
    let (ju, jv) = sample.grid_indices(i);
    let n = sample.n() as f64;
    (
        (f64::from(o.d0) - y[ju]) / n,
        (f64::from(o.d0 + o.d1) - y[jv]) / n,
    )
}

fn increments_grid(
    y: &[f64],
    sample: &Sample2,
    parts: impl Fn(&[f64], &Sample2, usize) -> (f64, f64),
) -> Vec<f64> {
    let mut dw = vec![0.0; sample.grid().len()];
    for i in 0..sample.n() {
        let (ju, jv) = sample.grid_indices(i);
        let (wu, wv) = parts(y, sample, i);
        dw[ju] += wu;
        dw[jv] += wv;
    }
    dw
}

/// Per-grid-point increments of `W_{n,F}`.
pub(crate) fn w_increments_grid(y: &[f64], sample: &Sample2) -> Vec<f64> {
    increments_grid(y, sample, obs_w_parts)
}

/// Per-grid-point increments of `W^(2)_{n,F}`.
pub(crate) fn w2_increments_grid(y: &[f64], sample: &Sample2) -> Vec<f64> {
    increments_grid(y, sample, obs_w2_parts)
}

/// Lagrange multipliers `(lambda1, lambda2)` for grid values `y`.
///
/// `lambda1` is the (negated) sum of the `dW` increments sitting at
/// observation points where `F = 0`, i.e. u-parts with `F(u) = 0` and
/// v-parts with `F(v) = 0`; `lambda2` is the sum of the increments at points
/// where `F = 1`. This is the multiplier pair of the stationarity system:
/// within the boundary blocks `F = 0` and `F = 1` the cumulative increments
/// telescope to the active-constraint multipliers. Boundary sets are detected
/// by exact comparison; the solver's clipping writes exact 0.0/1.0.
pub(crate) fn lagrange_grid(y: &[f64], sample: &Sample2) -> (f64, f64) {
    let (mut l1, mut l2) = (0.0, 0.0);
    for i in 0..sample.n() {
        let (ju, jv) = sample.grid_indices(i);
        let (wu, wv) = obs_w_parts(y, sample, i);
        if y[ju] == 0.0 {
            l1 -= wu;
        } else if y[ju] == 1.0 {
            l2 += wu;
        }
        if y[jv] == 0.0 {
            l1 -= wv;
        } else if y[jv] == 1.0 {
            l2 += wv;
        }
    }
    (l1, l2)
}

fn cum_min_and_integral(y: &[f64], dw: &[f64]) -> (f64, f64) {
    let mut w = 0.0;
    let mut min_w = 0.0f64; // includes t = 0 where W = 0
    let mut integral = 0.0;
    for (yj, dwj) in y.iter().zip(dw) {
        w += dwj;
        min_w = min_w.min(w);
        integral += yj * dwj;
    }
    (min_w, integral)
}

pub(crate) fn fenchel_grid(y: &[f64], sample: &Sample2, tol: f64) -> FenchelReport {
    let dw = w_increments_grid(y, sample);
    let (l1, l2) = lagrange_grid(y, sample);
    let (min_w, integral) = cum_min_and_integral(y, &dw);
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

pub(crate) fn fenchel_simple_grid(y: &[f64], sample: &Sample2, tol: f64) -> FenchelReport {
    let dw = w2_increments_grid(y, sample);
    let (min_w, integral) = cum_min_and_integral(y, &dw);
    let equality_residual = integral.abs();
    FenchelReport {
        min_slack: min_w,
        equality_residual,
        lambda1: 0.0,
        lambda2: 0.0,
        tol,
        pass: min_w >= -tol && equality_residual <= tol,
    }
}

fn eval_on_grid(f: &StepDistribution, sample: &Sample2) -> Vec<f64> {
    sample.grid().iter().map(|gp| f.evaluate(gp.time)).collect()
}

/// `W_{n,F}` evaluated at every grid time, as `(t, W(t))` pairs.
pub fn w_process(f: &StepDistribution, sample: &Sample2) -> Vec<(f64, f64)> {
    let y = eval_on_grid(f, sample);
    let dw = w_increments_grid(&y, sample);
    let mut w = 0.0;
    sample
        .grid()
        .iter()
        .zip(dw)
        .map(|(gp, d)| {
            w += d;
            (gp.time, w)
        })
        .collect()
}

/// `W^(2)_{n,F}` evaluated at every grid time.
pub fn w2_process(f: &StepDistribution, sample: &Sample2) -> Vec<(f64, f64)> {
    let y = eval_on_grid(f, sample);
    let dw = w2_increments_grid(&y, sample);
    let mut w = 0.0;
    sample
        .grid()
        .iter()
        .zip(dw)
        .map(|(gp, d)| {
            w += d;
            (gp.time, w)
        })
        .collect()
}

pub fn lagrange_multipliers(f: &StepDistribution, sample: &Sample2) -> (f64, f64) {
    lagrange_grid(&eval_on_grid(f, sample), sample)
}

/// Check conditions (i)-(ii) of the full-LS characterization at `tol`.
pub fn verify_fenchel(f: &StepDistribution, sample: &Sample2, tol: f64) -> FenchelReport {
    fenchel_grid(&eval_on_grid(f, sample), sample, tol)
}

/// Check the multiplier-free conditions of the one-step LS characterization.
pub fn verify_fenchel_simple(f: &StepDistribution, sample: &Sample2, tol: f64) -> FenchelReport {
    fenchel_simple_grid(&eval_on_grid(f, sample), sample, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{parse_csv, Observation2};

    fn single(u: f64, v: f64, d0: u8, d1: u8) -> Sample2 {
        Sample2::new(vec![Observation2::new(u, v, d0, d1).unwrap()], None).unwrap()
    }

    #[test]
    fn w_process_hand_values() {
        let s = single(1.0, 2.0, 1, 0);
        let f1 = StepDistribution::new(vec![0.5], vec![1.0]).unwrap();
        let w = w_process(&f1, &s);
        assert_eq!(w, vec![(1.0, 0.0), (2.0, 0.0)]);

        // F == 0: increments 1 and 1, cumulated
        let y = vec![0.0, 0.0];
        let dw = w_increments_grid(&y, &s);
        assert_eq!(dw, vec![1.0, 1.0]);
    }

    #[test]
    fn w2_process_hand_values() {
        let s = single(1.0, 2.0, 0, 1);
        let y = vec![0.0, 1.0];
        assert_eq!(w2_increments_grid(&y, &s), vec![0.0, 0.0]);

        let s = single(1.0, 2.0, 1, 0);
        let y = vec![0.0, 0.0];
        assert_eq!(w2_increments_grid(&y, &s), vec![1.0, 1.0]);

        let s = single(1.0, 2.0, 0, 0);
        let y = vec![0.0, 0.0];
        assert_eq!(w2_increments_grid(&y, &s), vec![0.0, 0.0]);
    }

    #[test]
    fn lagrange_hand_values() {
        // all residuals vanish at degenerate fits
        let s = single(1.0, 2.0, 0, 0);
        assert_eq!(lagrange_grid(&[0.0, 0.0], &s), (0.0, 0.0));
        let s = single(1.0, 2.0, 1, 0);
        assert_eq!(lagrange_grid(&[1.0, 1.0], &s), (0.0, 0.0));
        // strictly interior values leave both boundary sets empty
        let s = single(1.0, 2.0, 0, 1);
        assert_eq!(lagrange_grid(&[0.3, 0.7], &s), (0.0, 0.0));
    }

    #[test]
    fn fenchel_passes_at_exact_minimizer() {
        // single obs (1,2,0,1): minimizer is (0,1)
        let s = single(1.0, 2.0, 0, 1);
        let rep = fenchel_grid(&[0.0, 1.0], &s, 1e-12);
        assert!(rep.pass, "{rep}");
    }

    #[test]
    fn w_is_affine_in_f() {
        let s = parse_csv("0.2,1.4,1,0\n0.5,0.9,0,1\n0.1,1.9,0,0\n1.0,1.5,1,0\n").unwrap();
        let k = s.grid().len();
        let ya: Vec<f64> = (0..k).map(|j| j as f64 / k as f64).collect();
        let yb: Vec<f64> = (0..k).map(|j| 0.1 + 0.8 * j as f64 / k as f64).collect();
        for &alpha in &[0.0, 0.25, 0.7, 1.0] {
            let mix: Vec<f64> = ya
                .iter()
                .zip(&yb)
                .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
                .collect();
            let wa = w_increments_grid(&ya, &s);
            let wb = w_increments_grid(&yb, &s);
            let wm = w_increments_grid(&mix, &s);
            for j in 0..k {
                let expect = alpha * wa[j] + (1.0 - alpha) * wb[j];
                assert!((wm[j] - expect).abs() < 1e-14);
            }
        }
    }

    /// Partition check: the boundary and interior contributions to W sum to
    /// the total increment, i.e. W(last) = lambda2 - lambda1 + interior sum.
    #[test]
    fn boundary_interior_partition() {
        let s = parse_csv("0.2,1.4,1,0\n0.5,0.9,0,1\n0.1,1.9,0,0\n1.0,1.5,1,0\n").unwrap();
        let y = vec![0.0, 0.0, 0.4, 0.6, 0.6, 1.0, 1.0, 1.0];
        assert_eq!(y.len(), s.grid().len());
        let dw = w_increments_grid(&y, &s);
        let total: f64 = dw.iter().sum();
        let (l1, l2) = lagrange_grid(&y, &s);
        let mut interior = 0.0;
        for i in 0..s.n() {
            let (ju, jv) = s.grid_indices(i);
            let (wu, wv) = obs_w_parts(&y, &s, i);
            if y[ju] > 0.0 && y[ju] < 1.0 {
                interior += wu;
            }
            if y[jv] > 0.0 && y[jv] < 1.0 {
                interior += wv;
            }
        }
        assert!((total - (l2 - l1 + interior)).abs() < 1e-14);
    }
}
