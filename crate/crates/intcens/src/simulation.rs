//! Data generators for the studied models and the Monte Carlo variance-grid
//! studies.
//!
//! Replication r draws from stream r of a counter-based generator seeded by
//! the master seed, so study results are invariant to worker count and
//! scheduling; aggregation runs over the ordered per-replication records.

use crate::asymptotics::ModelSpec;
use crate::data_model::{Observation2, Sample2};
use crate::estimators::{fit_ls_full, fit_ls_simple, fit_mle_ic2, IcmOptions};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use std::fmt::Write as _;

/// Independent RNG stream for replication `rep` of a study with master seed
/// `seed`.
pub fn rep_rng(seed: u64, rep: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(rep.wrapping_add(1));
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum F0Choice {
    TruncExp,
    Uniform,
}

/// Draw one latent event time from the model's event distribution by
/// inversion.
fn draw_event(model: &ModelSpec, rng: &mut impl Rng) -> f64 {
    let w: f64 = rng.gen();
    match model.name.as_str() {
        "trunc-exp-[0,2]" => -(1.0 - w * (1.0 - (-2.0f64).exp())).ln(),
        "uniform-[0,2]" => 2.0 * w,
        "triangle-[0,1]" => w,
        _ => unreachable!("draw_event only supports the named presets"),
    }
}

fn sorted_pair(m: f64, rng: &mut impl Rng) -> (f64, f64) {
    loop {
        let a: f64 = rng.gen::<f64>() * m;
        let b: f64 = rng.gen::<f64>() * m;
        if a < b {
            return (a, b);
        }
        if b < a {
            return (b, a);
        }
    }
}

/// Sample from one of the [0,2] models: latent event time by inversion,
/// inspection pair the order statistics of two Uniform[0,2] draws.
pub fn gen_example1(n: usize, f0: F0Choice, rng: &mut impl Rng) -> Result<Sample2> {
    let model = match f0 {
        F0Choice::TruncExp => ModelSpec::trunc_exp_02(),
        F0Choice::Uniform => ModelSpec::uniform_02(),
    };
    gen_model(&model, n, rng)
}

/// Sample from the triangle model: Uniform[0,1] event times, inspection pair
/// uniform on the upper triangle of the unit square.
pub fn gen_triangle(n: usize, rng: &mut impl Rng) -> Result<Sample2> {
    gen_model(&ModelSpec::triangle_01(), n, rng)
}

pub fn gen_model(model: &ModelSpec, n: usize, rng: &mut impl Rng) -> Result<Sample2> {
    if n == 0 {
        return Err(Error::Invalid("sample size must be >= 1".into()));
    }
    let mut obs = Vec::with_capacity(n);
    for _ in 0..n {
        let x = draw_event(model, rng);
        let (u, v) = sorted_pair(model.m, rng);
        obs.push(Observation2::from_latent(u, v, x)?);
    }
    Sample2::new(obs, Some(model.m))
}

/// Inversion helper exposed for tests: truncated-exponential quantile on
/// [0, 2].
pub fn trunc_exp_inverse(w: f64) -> f64 {
    -(1.0 - w * (1.0 - (-2.0f64).exp())).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Mle,
    LsFull,
    LsSimple,
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Mle => "mle",
            Self::LsFull => "ls_full",
            Self::LsSimple => "ls_simple",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mle" => Ok(Self::Mle),
            "ls-full" | "ls_full" => Ok(Self::LsFull),
            "ls-simple" | "ls_simple" => Ok(Self::LsSimple),
            other => Err(Error::Invalid(format!("unknown estimator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub model: ModelSpec,
    pub n: usize,
    pub reps: usize,
    pub grid: Vec<f64>,
    pub estimators: Vec<EstimatorKind>,
    pub seed: u64,
    pub icm: IcmOptions,
}

impl StudyConfig {
    /// Default evaluation grid 0.1, 0.2, ..., M - 0.1 in steps of 0.1.
    pub fn default_grid(m: f64) -> Vec<f64> {
        let k = (m / 0.1).round() as usize;
        (1..k).map(|i| i as f64 * 0.1).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::Invalid(
                "variance studies need reps >= 2".into(),
            ));
        }
        if self.estimators.is_empty() {
            return Err(Error::Invalid("no estimators requested".into()));
        }
        if self
            .grid
            .iter()
            .any(|&t| !(t > 0.0 && t < self.model.m))
        {
            return Err(Error::Invalid(format!(
                "grid must lie strictly inside (0, {})",
                self.model.m
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub t: f64,
    pub estimator: EstimatorKind,
    pub scaled_var: f64,
    pub mc_stderr: f64,
    pub theory: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StudyTable {
    pub n: usize,
    pub reps: usize,
    pub rows: Vec<StudyRow>,
    /// Non-converged replication count per requested estimator.
    pub excluded: Vec<(EstimatorKind, usize)>,
}

impl StudyTable {
    pub fn to_csv(&self) -> String {
        let with_theory = self.rows.iter().any(|r| r.theory.is_some());
        let mut out = String::from("t,estimator,n,reps,scaled_var,mc_stderr");
        if with_theory {
            out.push_str(",theory");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{},{},{}",
                r.t,
                r.estimator.label(),
                self.n,
                self.reps,
                r.scaled_var,
                r.mc_stderr
            );
            if with_theory {
                let _ = write!(out, ",{}", r.theory.map_or(f64::NAN, |v| v));
            }
            out.push('\n');
        }
        out
    }
}

/// Unbiased sample variance and its delta-method standard error from the
/// centered fourth moment.
pub(crate) fn variance_with_stderr(xs: &[f64]) -> (f64, f64) {
    let nf = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf;
    let var = m2 * nf / (nf - 1.0);
    let se = ((m4 - (nf - 3.0) / (nf - 1.0) * m2 * m2) / nf).max(0.0).sqrt();
    (var, se)
}

/// Simulate `reps` samples, fit the requested estimators, and report
/// `n^{2/3}` times the sample variance of each estimator at each grid time.
pub fn variance_grid_study(cfg: &StudyConfig) -> Result<StudyTable> {
    cfg.validate()?;
    let per_rep: Vec<Vec<Option<Vec<f64>>>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rep_rng(cfg.seed, rep as u64);
            let sample = gen_model(&cfg.model, cfg.n, &mut rng)?;
            let mut rec = Vec::with_capacity(cfg.estimators.len());
            for est in &cfg.estimators {
                let values = match est {
                    EstimatorKind::Mle => {
                        let r = fit_mle_ic2(&sample, &cfg.icm)?;
                        r.converged
                            .then(|| cfg.grid.iter().map(|&t| r.f.evaluate(t)).collect())
                    }
                    EstimatorKind::LsFull => {
                        let r = fit_ls_full(&sample, &cfg.icm)?;
                        r.converged
                            .then(|| cfg.grid.iter().map(|&t| r.f.evaluate(t)).collect())
                    }
                    EstimatorKind::LsSimple => {
                        let f = fit_ls_simple(&sample)?;
                        Some(cfg.grid.iter().map(|&t| f.evaluate(t)).collect())
                    }
                };
                rec.push(values);
            }
            Ok(rec)
        })
        .collect::<Result<_>>()?;

    let scale = (cfg.n as f64).powf(2.0 / 3.0);
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for (e_idx, est) in cfg.estimators.iter().enumerate() {
        let kept: Vec<&Vec<f64>> = per_rep
            .iter()
            .filter_map(|rec| rec[e_idx].as_ref())
            .collect();
        excluded.push((*est, cfg.reps - kept.len()));
        if kept.len() < 2 {
            return Err(Error::NonConvergence {
                iterations: cfg.icm.max_iter,
                residual: f64::NAN,
            });
        }
        for (g_idx, &t) in cfg.grid.iter().enumerate() {
            let xs: Vec<f64> = kept.iter().map(|v| v[g_idx]).collect();
            let (var, se) = variance_with_stderr(&xs);
            rows.push(StudyRow {
                t,
                estimator: *est,
                scaled_var: scale * var,
                mc_stderr: scale * se,
                theory: None,
            });
        }
    }
    Ok(StudyTable {
        n: cfg.n,
        reps: cfg.reps,
        rows,
        excluded,
    })
}
