//! Limit-theory calculators: the scale a(t0), drift b(t0) and sigma(t0) for
//! both least squares estimators, a Monte Carlo estimate of the variance of
//! the argmin of two-sided Brownian motion plus t^2, and theoretical
//! variance curves for overlay against simulations.

use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use std::path::Path;
use std::sync::{Arc, OnceLock};

type Univariate = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Bivariate = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A data-generating model: event distribution `F0` (with density `f0`) and
/// inspection-pair density `h` on the triangle `{0 <= u < v <= M}`.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub m: f64,
    cdf: Univariate,
    density: Univariate,
    h: Bivariate,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("m", &self.m)
            .finish()
    }
}

impl ModelSpec {
    /// Truncated exponential event distribution on [0,2], inspection pair
    /// the order statistics of two Uniform[0,2] draws (h = 1/2 on the
    /// triangle).
    pub fn trunc_exp_02() -> Self {
        let z = 1.0 - (-2.0f64).exp();
        Self {
            name: "trunc-exp-[0,2]".into(),
            m: 2.0,
            cdf: Arc::new(move |x: f64| ((1.0 - (-x).exp()) / z).clamp(0.0, 1.0)),
            density: Arc::new(move |x: f64| {
                if (0.0..=2.0).contains(&x) {
                    (-x).exp() / z
                } else {
                    0.0
                }
            }),
            h: Arc::new(|_, _| 0.5),
        }
    }

    /// Uniform event distribution on [0,2], same inspection model.
    pub fn uniform_02() -> Self {
        Self {
            name: "uniform-[0,2]".into(),
            m: 2.0,
            cdf: Arc::new(|x: f64| (x / 2.0).clamp(0.0, 1.0)),
            density: Arc::new(|x: f64| if (0.0..=2.0).contains(&x) { 0.5 } else { 0.0 }),
            h: Arc::new(|_, _| 0.5),
        }
    }

    /// Uniform event distribution on [0,1], inspection pair uniform on the
    /// upper triangle of the unit square (h = 2).
    pub fn triangle_01() -> Self {
        Self {
            name: "triangle-[0,1]".into(),
            m: 1.0,
            cdf: Arc::new(|x: f64| x.clamp(0.0, 1.0)),
            density: Arc::new(|x: f64| if (0.0..=1.0).contains(&x) { 1.0 } else { 0.0 }),
            h: Arc::new(|_, _| 2.0),
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "trunc-exp-[0,2]" | "trunc-exp" => Ok(Self::trunc_exp_02()),
            "uniform-[0,2]" | "uniform" => Ok(Self::uniform_02()),
            "triangle-[0,1]" | "triangle" => Ok(Self::triangle_01()),
            other => Err(Error::Invalid(format!(
                "unknown model '{other}' (expected trunc-exp-[0,2], uniform-[0,2] or triangle-[0,1])"
            ))),
        }
    }

    #[inline]
    pub fn cdf(&self, x: f64) -> f64 {
        (self.cdf)(x)
    }

    #[inline]
    pub fn density(&self, x: f64) -> f64 {
        (self.density)(x)
    }

    #[inline]
    pub fn h(&self, u: f64, v: f64) -> f64 {
        (self.h)(u, v)
    }

    /// Validate the model: positive densities and `∫∫ h = 1` to 1e-6.
    pub fn check(&self) -> Result<()> {
        let total = integrate(0.0, self.m, |u| integrate(u, self.m, |v| self.h(u, v)));
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Numerical(format!(
                "h does not integrate to 1 on the triangle: got {total}"
            )));
        }
        let probe = 16;
        for i in 1..probe {
            let x = self.m * i as f64 / probe as f64 - 1e-9;
            if self.density(x) <= 0.0 {
                return Err(Error::Invalid(format!("f0 not positive at {x}")));
            }
        }
        Ok(())
    }
}

/// 256-point Gauss-Legendre nodes/weights on [-1, 1], computed once by
/// Newton iteration on the Legendre recurrence.
fn gl_nodes() -> &'static (Vec<f64>, Vec<f64>) {
    static NODES: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    NODES.get_or_init(|| {
        let n = 256usize;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        for i in 0..(n + 1) / 2 {
            // Chebyshev initial guess
            let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, t);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
                let dt = p1 / dp;
                t -= dt;
                if dt.abs() < 1e-15 {
                    break;
                }
            }
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
            x[i] = -t;
            x[n - 1 - i] = t;
            w[i] = 2.0 / ((1.0 - t * t) * dp * dp);
            w[n - 1 - i] = w[i];
        }
        (x, w)
    })
}

/// Fixed-order Gauss-Legendre integral of `f` over [a, b].
pub fn integrate(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (x, w) = gl_nodes();
    let c = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    x.iter()
        .zip(w)
        .map(|(&xi, &wi)| wi * f(mid + c * xi))
        .sum::<f64>()
        * c
}

/// First marginal `h1(t) = ∫_t^M h(t, v) dv`.
pub fn marginal_h1(model: &ModelSpec, t: f64) -> f64 {
    integrate(t, model.m, |v| model.h(t, v))
}

/// Second marginal `h2(t) = ∫_0^t h(u, t) du`.
pub fn marginal_h2(model: &ModelSpec, t: f64) -> f64 {
    integrate(0.0, t, |u| model.h(u, t))
}

/// The five nonnegative terms of a(t0)^2 for the full LS estimator.
pub fn scale_a_terms(t0: f64, model: &ModelSpec) -> [f64; 5] {
    let f0 = model.cdf(t0);
    let b = marginal_h1(model, t0) + marginal_h2(model, t0);
    let t1 = f0 * (1.0 - f0) * b;
    let t2 = integrate(t0, model.m, |v| {
        let d = model.cdf(v) - f0;
        d * (1.0 - d) * model.h(t0, v)
    });
    let t3 = integrate(0.0, t0, |u| {
        let d = f0 - model.cdf(u);
        d * (1.0 - d) * model.h(u, t0)
    });
    let t4 = 2.0 * f0 * integrate(t0, model.m, |v| (model.cdf(v) - f0) * model.h(t0, v));
    let t5 = 2.0 * (1.0 - f0) * integrate(0.0, t0, |u| (f0 - model.cdf(u)) * model.h(u, t0));
    [t1, t2, t3, t4, t5]
}

/// Scale a(t0) for the full LS estimator (positive square root of the
/// five-term variance expression).
pub fn scale_a(t0: f64, model: &ModelSpec) -> Result<f64> {
    let a2: f64 = scale_a_terms(t0, model).iter().sum();
    if a2 < 0.0 {
        return Err(Error::Numerical(format!("negative a^2 = {a2} at t0 = {t0}")));
    }
    Ok(a2.sqrt())
}

/// Drift b(t0) = h1(t0) + h2(t0) for the full LS estimator.
pub fn drift_b(t0: f64, model: &ModelSpec) -> f64 {
    marginal_h1(model, t0) + marginal_h2(model, t0)
}

/// Drift b'(t0) = (h1 + h2)(t0) / 4 for the one-step estimator.
pub fn drift_b_simple(t0: f64, model: &ModelSpec) -> f64 {
    drift_b(t0, model) / 4.0
}

/// Scale a'(t0) = sqrt(F0 (1 - F0) (h1 + h2)) for the one-step estimator.
pub fn scale_a_simple(t0: f64, model: &ModelSpec) -> f64 {
    let f0 = model.cdf(t0);
    (f0 * (1.0 - f0) * drift_b(t0, model)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    Simple,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "simple" => Ok(Self::Simple),
            other => Err(Error::Invalid(format!("unknown variant '{other}'"))),
        }
    }
}

/// sigma(t0) = (a f0 / b)^{1/3}, with the primed quantities for the one-step
/// estimator.
pub fn sigma(t0: f64, model: &ModelSpec, variant: Variant) -> Result<f64> {
    let (a, b) = match variant {
        Variant::Full => (scale_a(t0, model)?, drift_b(t0, model)),
        Variant::Simple => (scale_a_simple(t0, model), drift_b_simple(t0, model)),
    };
    Ok((a * model.density(t0) / b).cbrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChernoffParams {
    pub paths: usize,
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
}

impl Default for ChernoffParams {
    fn default() -> Self {
        Self {
            paths: 100_000,
            horizon: 2.5,
            step: 1e-3,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ChernoffEstimate {
    pub var: f64,
    pub var_stderr: f64,
    pub mean: f64,
    pub mean_stderr: f64,
}

/// Monte Carlo estimate of Var(Z), Z the argmin over [-T, T] of discretized
/// two-sided Brownian motion plus t^2.
///
/// Path r draws from stream r of a counter-based generator seeded by the
/// master seed, so the result is independent of worker count and schedule;
/// the reduction runs over the ordered per-path argmins.
pub fn chernoff_variance(params: &ChernoffParams) -> Result<ChernoffEstimate> {
    if params.paths < 2 || !(params.step > 0.0) || !(params.horizon > 0.0) {
        return Err(Error::Invalid(
            "chernoff_variance needs paths >= 2, step > 0, horizon > 0".into(),
        ));
    }
    let steps = (params.horizon / params.step).ceil() as usize;
    let zs: Vec<f64> = (0..params.paths)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha12Rng::seed_from_u64(params.seed);
            rng.set_stream(r as u64 + 1);
            let sd = params.step.sqrt();
            let mut best_t = 0.0;
            let mut best = 0.0; // value at t = 0
            for side in [1.0f64, -1.0] {
                let mut w = 0.0;
                for k in 1..=steps {
                    let t = side * k as f64 * params.step;
                    w += sd * normal_draw(&mut rng);
                    let val = w + t * t;
                    if val < best {
                        best = val;
                        best_t = t;
                    }
                }
            }
            best_t
        })
        .collect();

    let nf = zs.len() as f64;
    let mean = zs.iter().sum::<f64>() / nf;
    let m2 = zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / nf;
    let m4 = zs.iter().map(|z| (z - mean).powi(4)).sum::<f64>() / nf;
    let var = m2 * nf / (nf - 1.0);
    // delta-method standard error of the sample variance
    let var_stderr = ((m4 - (nf - 3.0) / (nf - 1.0) * m2 * m2) / nf).max(0.0).sqrt();
    let mean_stderr = (var / nf).sqrt();
    Ok(ChernoffEstimate {
        var,
        var_stderr,
        mean,
        mean_stderr,
    })
}

fn normal_draw(rng: &mut impl Rng) -> f64 {
    // Box-Muller; one draw per call keeps the stream layout simple
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Cached variant: looks `params` up in a small CSV table at `cache`,
/// computing and appending on a miss.
pub fn chernoff_variance_cached(params: &ChernoffParams, cache: &Path) -> Result<ChernoffEstimate> {
    let key = format!(
        "{},{},{},{}",
        params.paths, params.horizon, params.step, params.seed
    );
    if let Ok(text) = std::fs::read_to_string(cache) {
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix(&format!("{key},")) {
                let vals: Vec<f64> = rest.split(',').filter_map(|s| s.parse().ok()).collect();
                if vals.len() == 4 {
                    return Ok(ChernoffEstimate {
                        var: vals[0],
                        var_stderr: vals[1],
                        mean: vals[2],
                        mean_stderr: vals[3],
                    });
                }
            }
        }
    }
    let est = chernoff_variance(params)?;
    let line = format!(
        "{key},{},{},{},{}\n",
        est.var, est.var_stderr, est.mean, est.mean_stderr
    );
    let existing = std::fs::read_to_string(cache).unwrap_or_default();
    std::fs::write(cache, existing + &line).map_err(|source| Error::Io {
        path: cache.to_path_buf(),
        source,
    })?;
    Ok(est)
}

/// Limiting value of `n^{2/3} var(F_hat(t))`: `sigma(t)^2 Var(Z)` on a grid.
pub fn theoretical_variance_curve(
    model: &ModelSpec,
    grid: &[f64],
    variant: Variant,
    var_z: f64,
) -> Result<Vec<(f64, f64, f64)>> {
    grid.iter()
        .map(|&t| {
            let s = sigma(t, model, variant)?;
            Ok((t, s, s * s * var_z))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marginals_closed_forms() {
        let m = ModelSpec::uniform_02();
        for &t in &[0.3, 1.0, 1.7] {
            assert!((marginal_h1(&m, t) - (2.0 - t) / 2.0).abs() < 1e-8);
            assert!((marginal_h2(&m, t) - t / 2.0).abs() < 1e-8);
            assert!((drift_b(t, &m) - 1.0).abs() < 1e-8);
        }
        let tri = ModelSpec::triangle_01();
        for &t in &[0.2, 0.5, 0.9] {
            assert!((marginal_h1(&tri, t) - 2.0 * (1.0 - t)).abs() < 1e-8);
            assert!((marginal_h2(&tri, t) - 2.0 * t).abs() < 1e-8);
        }
    }

    #[test]
    fn models_validate() {
        for m in [
            ModelSpec::trunc_exp_02(),
            ModelSpec::uniform_02(),
            ModelSpec::triangle_01(),
        ] {
            m.check().unwrap();
        }
    }

    #[test]
    fn scale_a_uniform_hand_value() {
        // term-by-term: 0.25 + 1/12 + 1/12 + 0.125 + 0.125 = 2/3
        let m = ModelSpec::uniform_02();
        let terms = scale_a_terms(1.0, &m);
        let expect = [0.25, 1.0 / 12.0, 1.0 / 12.0, 0.125, 0.125];
        for (got, want) in terms.iter().zip(expect) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
        let a = scale_a(1.0, &m).unwrap();
        assert!((a * a - 2.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn scale_a_lower_bound_and_symmetry() {
        let m = ModelSpec::uniform_02();
        for i in 1..20 {
            let t = 0.1 * i as f64;
            let terms = scale_a_terms(t, &m);
            for term in terms {
                assert!(term >= 0.0);
            }
            let f0 = m.cdf(t);
            let a2: f64 = terms.iter().sum();
            assert!(a2 >= f0 * (1.0 - f0) * drift_b(t, &m) - 1e-12);
            // symmetry of the uniform model about t = 1
            let a2m: f64 = scale_a_terms(2.0 - t, &m).iter().sum();
            assert!((a2 - a2m).abs() < 1e-8);
        }
    }

    #[test]
    fn sigma_hand_values() {
        let m = ModelSpec::uniform_02();
        let s = sigma(1.0, &m, Variant::Full).unwrap();
        assert!((s - ((2.0f64 / 3.0).sqrt() * 0.5).cbrt()).abs() < 1e-8);
        assert!((s - 0.7418).abs() < 5e-4);

        // simple variant: a' = 0.5, b' = 0.25, f0 = 0.5 -> sigma' = 1
        let sp = sigma(1.0, &m, Variant::Simple).unwrap();
        assert!((sp - 1.0).abs() < 1e-8);
        assert!((scale_a_simple(1.0, &m) - 0.5).abs() < 1e-8);
        assert!((drift_b_simple(1.0, &m) - 0.25).abs() < 1e-8);
    }

    #[test]
    fn simple_sigma_dominates_full() {
        for m in [ModelSpec::trunc_exp_02(), ModelSpec::uniform_02()] {
            for i in 1..20 {
                let t = 0.1 * i as f64;
                let s_full = sigma(t, &m, Variant::Full).unwrap();
                let s_simple = sigma(t, &m, Variant::Simple).unwrap();
                assert!(s_simple >= s_full - 1e-10, "t={t} model={}", m.name);
            }
        }
    }

    #[test]
    fn quadrature_self_consistency() {
        // two half-interval panels against one panel
        let m = ModelSpec::trunc_exp_02();
        let one = integrate(0.0, 2.0, |x| m.density(x));
        let two = integrate(0.0, 1.0, |x| m.density(x)) + integrate(1.0, 2.0, |x| m.density(x));
        assert!((one - two).abs() < 1e-12);
        assert!((one - 1.0).abs() < 1e-10);
    }

    #[test]
    fn chernoff_small_run_is_deterministic_and_centered() {
        let params = ChernoffParams {
            paths: 4000,
            horizon: 2.0,
            step: 5e-3,
            seed: 7,
        };
        let a = chernoff_variance(&params).unwrap();
        let b = chernoff_variance(&params).unwrap();
        assert_eq!(a.var, b.var);
        assert!(a.mean.abs() <= 3.0 * a.mean_stderr, "mean {} se {}", a.mean, a.mean_stderr);
        assert!(a.var > 0.05 && a.var < 1.0);
    }

    #[test]
    fn chernoff_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("chernoff.csv");
        let params = ChernoffParams {
            paths: 500,
            horizon: 1.5,
            step: 1e-2,
            seed: 3,
        };
        let a = chernoff_variance_cached(&params, &cache).unwrap();
        let b = chernoff_variance_cached(&params, &cache).unwrap();
        assert_eq!(a.var, b.var);
        let text = std::fs::read_to_string(&cache).unwrap();
        assert_eq!(text.lines().count(), 1);
    }
}
