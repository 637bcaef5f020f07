//! Command-line surface: estimation, verification, asymptotics, and the
//! Monte Carlo studies, with reproducible flat `key = value` configs.
//!
//! Exit codes: 0 success, 1 usage or I/O failure, 2 numerical
//! non-convergence. Logs go to stderr; data goes to stdout or `--out`.

use crate::asymptotics::{
    chernoff_variance, chernoff_variance_cached, drift_b, drift_b_simple, scale_a,
    scale_a_simple, sigma, theoretical_variance_curve, ChernoffParams, ModelSpec, Variant,
};
use crate::characterization::{verify_fenchel, verify_fenchel_simple};
use crate::data_model::{ingest_csv, CurrentStatusObservation, Sample2, StepDistribution};
use crate::estimators::{
    fit_current_status, fit_ls_full, fit_ls_simple, fit_mle_ic2, IcmOptions,
};
use crate::simulation::{variance_grid_study, EstimatorKind, StudyConfig};
use crate::smooth_functionals::functional_variance_study;
use crate::{Error, Result};
use clap::{Args, Parser, Subcommand};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "intcens",
    version,
    about = "Nonparametric distribution estimation from interval-censored (case 2) data",
    max_term_width = 100
)]
pub struct Cli {
    /// Cap worker threads for parallel studies (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit an estimator to a CSV sample and write the step function
    Estimate(EstimateArgs),
    /// Run a variance-grid Monte Carlo study from a config file
    Study(StudyArgs),
    /// Tabulate the limit scale, drift, and sigma over a time grid
    Asymptotics(AsymptoticsArgs),
    /// Monte Carlo estimate of the limit-process argmin variance
    Chernoff(ChernoffArgs),
    /// Monte Carlo study of the plug-in mean functional
    Functional(FunctionalArgs),
    /// Check a fitted step function against the optimality conditions
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// Input CSV: rows `u,v,d0,d1` or `u,v,x`; for current-status, `t,delta`
    pub input: PathBuf,
    /// One of: mle, ls-full, ls-simple, current-status
    #[arg(long, default_value = "ls-full")]
    pub estimator: String,
    /// Optimality tolerance for the iterative fits
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Write the fitted step function here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StudyArgs {
    /// Flat key=value config: model, n, reps, seed, and optionally grid,
    /// estimators, tol, max_iter, theory_variant, var_z
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AsymptoticsArgs {
    /// One of: trunc-exp-[0,2], uniform-[0,2], triangle-[0,1]
    #[arg(long)]
    pub model: String,
    /// Comma-separated evaluation times, e.g. 0.1,0.2,0.3
    #[arg(long)]
    pub grid: String,
    /// One of: full, simple
    #[arg(long, default_value = "full")]
    pub variant: String,
    /// Argmin variance of the limit process; adds a var_limit column
    #[arg(long)]
    pub var_z: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional config file overridden by the flags above
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ChernoffArgs {
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    /// Argmin search horizon T (search over [-T, T])
    #[arg(long, default_value_t = 2.5)]
    pub horizon: f64,
    /// Time discretization step
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// CSV cache file; repeated runs with the same parameters are read back
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FunctionalArgs {
    #[arg(long, default_value = "triangle-[0,1]")]
    pub model: String,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 2000)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Dump raw per-replication mean estimates here, one per line
    #[arg(long)]
    pub raw_out: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// The sample the fit was computed from
    #[arg(long)]
    pub input: PathBuf,
    /// Fitted step function CSV with columns t,F
    #[arg(long)]
    pub fit: PathBuf,
    /// Which optimality conditions to check: full or simple
    #[arg(long, default_value = "full")]
    pub which: String,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
}

/// Flat `key = value` config file; `#` starts a comment. Every key must be
/// consumed by the caller, unknown keys are rejected.
struct Config {
    values: HashMap<String, String>,
    used: std::cell::RefCell<Vec<String>>,
}

impl Config {
    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut values = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                msg: format!("expected key = value, got '{line}'"),
            })?;
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self {
            values,
            used: std::cell::RefCell::new(Vec::new()),
        })
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.used.borrow_mut().push(key.to_string());
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                Error::Invalid(format!("config key '{key}': cannot parse '{raw}'"))
            }),
        }
    }

    fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::Invalid(format!("config key '{key}' is required")))
    }

    fn reject_unknown(&self) -> Result<()> {
        let used = self.used.borrow();
        for key in self.values.keys() {
            if !used.iter().any(|u| u == key) {
                return Err(Error::Invalid(format!("unknown config key '{key}'")));
            }
        }
        Ok(())
    }
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let grid: Vec<f64> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("bad grid value '{s}'")))
        })
        .collect::<Result<_>>()?;
    if grid.is_empty() {
        return Err(Error::Invalid("empty grid".into()));
    }
    Ok(grid)
}

fn emit(data: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, data).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        }),
        None => {
            print!("{data}");
            Ok(())
        }
    }
}

fn step_csv(f: &StepDistribution) -> String {
    let mut out = String::from("t,F\n");
    for (&t, &v) in f.knots().iter().zip(f.values()) {
        let _ = writeln!(out, "{t},{v}");
    }
    out
}

fn read_step_csv(path: &Path) -> Result<StepDistribution> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut knots = Vec::new();
    let mut values = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let row = raw.trim();
        if row.is_empty() || (idx == 0 && row.parse::<f64>().is_err() && row.contains("t")) {
            continue;
        }
        let (a, b) = row.split_once(',').ok_or_else(|| Error::Parse {
            line: idx + 1,
            msg: "expected two columns t,F".into(),
        })?;
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: idx + 1,
                msg: format!("bad number '{s}'"),
            })
        };
        knots.push(parse(a)?);
        values.push(parse(b)?);
    }
    StepDistribution::new(knots, values)
}

fn read_current_status_csv(path: &Path) -> Result<Vec<CurrentStatusObservation>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut obs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if idx == 0 && fields.iter().any(|f| f.trim().parse::<f64>().is_err()) {
            continue;
        }
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("expected 2 columns t,delta, got {}", fields.len()),
            });
        }
        let t: f64 = fields[0].trim().parse().map_err(|_| Error::Parse {
            line: idx + 1,
            msg: format!("bad number '{}'", fields[0]),
        })?;
        let delta: u8 = match fields[1].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("indicator must be 0 or 1, got '{other}'"),
                })
            }
        };
        obs.push(CurrentStatusObservation { t, delta });
    }
    if obs.is_empty() {
        return Err(Error::Invalid("empty sample".into()));
    }
    Ok(obs)
}

fn cmd_estimate(args: &EstimateArgs) -> Result<bool> {
    eprintln!(
        "resolved config: input={} estimator={} tol={} max_iter={}",
        args.input.display(),
        args.estimator,
        args.tol,
        args.max_iter
    );
    let opts = IcmOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        ..IcmOptions::default()
    };
    let (f, converged) = match args.estimator.as_str() {
        "current-status" => {
            let obs = read_current_status_csv(&args.input)?;
            (fit_current_status(&obs)?, true)
        }
        "ls-simple" => {
            let sample = ingest_csv(&args.input)?;
            let f = fit_ls_simple(&sample)?;
            let report = verify_fenchel_simple(&f, &sample, args.tol.max(1e-10));
            eprintln!("{report}");
            (f, report.pass)
        }
        "ls-full" => {
            let sample = ingest_csv(&args.input)?;
            let r = fit_ls_full(&sample, &opts)?;
            eprintln!("iterations: {}", r.iterations);
            eprintln!("{}", r.fenchel);
            (r.f, r.converged)
        }
        "mle" => {
            let sample = ingest_csv(&args.input)?;
            let r = fit_mle_ic2(&sample, &opts)?;
            eprintln!("iterations: {}", r.iterations);
            eprintln!("{}", r.fenchel);
            (r.f, r.converged)
        }
        other => {
            return Err(Error::Invalid(format!(
                "unknown estimator '{other}' (expected mle, ls-full, ls-simple or current-status)"
            )))
        }
    };
    emit(&step_csv(&f), args.out.as_deref())?;
    Ok(converged)
}

fn cmd_study(args: &StudyArgs) -> Result<()> {
    let cfg = Config::load(&args.config)?;
    let model = ModelSpec::from_name(&cfg.require::<String>("model")?)?;
    let n: usize = cfg.require("n")?;
    let reps: usize = cfg.require("reps")?;
    let seed: u64 = cfg.get("seed")?.unwrap_or(1);
    let grid = match cfg.get::<String>("grid")? {
        Some(text) => parse_grid(&text)?,
        None => StudyConfig::default_grid(model.m),
    };
    let estimators: Vec<EstimatorKind> = match cfg.get::<String>("estimators")? {
        Some(text) => text
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<_>>()?,
        None => vec![
            EstimatorKind::Mle,
            EstimatorKind::LsFull,
            EstimatorKind::LsSimple,
        ],
    };
    let icm = IcmOptions {
        tol: cfg.get("tol")?.unwrap_or(1e-8),
        max_iter: cfg.get("max_iter")?.unwrap_or(500),
        ..IcmOptions::default()
    };
    let theory_variant: Option<Variant> = cfg
        .get::<String>("theory_variant")?
        .map(|s| s.parse())
        .transpose()?;
    let var_z: Option<f64> = cfg.get("var_z")?;
    cfg.reject_unknown()?;
    eprintln!(
        "resolved config: model={} n={n} reps={reps} seed={seed} grid={grid:?} \
         estimators={:?} tol={} max_iter={}",
        model.name,
        estimators.iter().map(|e| e.label()).collect::<Vec<_>>(),
        icm.tol,
        icm.max_iter
    );

    let study = StudyConfig {
        model: model.clone(),
        n,
        reps,
        grid: grid.clone(),
        estimators,
        seed,
        icm,
    };
    let mut table = variance_grid_study(&study)?;
    if let Some(variant) = theory_variant {
        let vz = var_z.ok_or_else(|| {
            Error::Invalid("theory_variant requires var_z (see the chernoff command)".into())
        })?;
        let curve = theoretical_variance_curve(&model, &grid, variant, vz)?;
        for row in &mut table.rows {
            let (_, _, limit) = curve
                .iter()
                .find(|(t, _, _)| *t == row.t)
                .copied()
                .expect("curve evaluated on the study grid");
            row.theory = Some(limit);
        }
    }
    for (est, count) in &table.excluded {
        if *count > 0 {
            eprintln!("excluded {count} non-converged replications for {}", est.label());
        }
    }
    emit(&table.to_csv(), args.out.as_deref())
}

fn cmd_asymptotics(args: &AsymptoticsArgs) -> Result<()> {
    let (mut model_name, mut grid_text, mut variant_text, mut var_z) = (
        args.model.clone(),
        args.grid.clone(),
        args.variant.clone(),
        args.var_z,
    );
    if let Some(path) = &args.config {
        let cfg = Config::load(path)?;
        // flags override config; clap fills defaults, so only absent-able
        // values fall back here
        if let Some(v) = cfg.get::<String>("model")? {
            if model_name.is_empty() {
                model_name = v;
            }
        }
        if let Some(v) = cfg.get::<String>("grid")? {
            if grid_text.is_empty() {
                grid_text = v;
            }
        }
        if let Some(v) = cfg.get::<String>("variant")? {
            variant_text = v;
        }
        if let Some(v) = cfg.get::<f64>("var_z")? {
            var_z = var_z.or(Some(v));
        }
        cfg.reject_unknown()?;
    }
    let model = ModelSpec::from_name(&model_name)?;
    let grid = parse_grid(&grid_text)?;
    let variant: Variant = variant_text.parse()?;
    eprintln!(
        "resolved config: model={} variant={variant_text} grid={grid:?} var_z={var_z:?}",
        model.name
    );

    let mut out = String::from("t,a,b,sigma");
    if var_z.is_some() {
        out.push_str(",var_limit");
    }
    out.push('\n');
    for &t in &grid {
        let (a, b) = match variant {
            Variant::Full => (scale_a(t, &model)?, drift_b(t, &model)),
            Variant::Simple => (scale_a_simple(t, &model), drift_b_simple(t, &model)),
        };
        let s = sigma(t, &model, variant)?;
        let _ = write!(out, "{t},{a},{b},{s}");
        if let Some(vz) = var_z {
            let _ = write!(out, ",{}", s * s * vz);
        }
        out.push('\n');
    }
    emit(&out, args.out.as_deref())
}

fn cmd_chernoff(args: &ChernoffArgs) -> Result<()> {
    let params = ChernoffParams {
        paths: args.paths,
        horizon: args.horizon,
        step: args.step,
        seed: args.seed,
    };
    eprintln!(
        "resolved config: paths={} horizon={} step={} seed={}",
        params.paths, params.horizon, params.step, params.seed
    );
    let est = match &args.cache {
        Some(path) => chernoff_variance_cached(&params, path)?,
        None => chernoff_variance(&params)?,
    };
    let mut out = String::from("paths,horizon,step,seed,var,var_stderr,mean,mean_stderr\n");
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{}",
        params.paths,
        params.horizon,
        params.step,
        params.seed,
        est.var,
        est.var_stderr,
        est.mean,
        est.mean_stderr
    );
    emit(&out, args.out.as_deref())
}

fn cmd_functional(args: &FunctionalArgs) -> Result<()> {
    let model = ModelSpec::from_name(&args.model)?;
    let icm = IcmOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        ..IcmOptions::default()
    };
    eprintln!(
        "resolved config: model={} n={} reps={} seed={} tol={} max_iter={}",
        model.name, args.n, args.reps, args.seed, icm.tol, icm.max_iter
    );
    let table = functional_variance_study(&model, args.n, args.reps, args.seed, &icm)?;
    for row in &table.rows {
        if row.excluded > 0 {
            eprintln!(
                "excluded {} non-converged replications for {}",
                row.excluded,
                row.estimator.label()
            );
        }
    }
    if let Some(path) = &args.raw_out {
        let mut raw = String::from("estimator,mean_estimate\n");
        for row in &table.rows {
            for &x in &row.raw {
                let _ = writeln!(raw, "{},{x}", row.estimator.label());
            }
        }
        std::fs::write(path, raw).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
    }
    emit(&table.to_csv(), args.out.as_deref())
}

fn cmd_verify(args: &VerifyArgs) -> Result<bool> {
    eprintln!(
        "resolved config: input={} fit={} which={} tol={}",
        args.input.display(),
        args.fit.display(),
        args.which,
        args.tol
    );
    let sample: Sample2 = ingest_csv(&args.input)?;
    let f = read_step_csv(&args.fit)?;
    let report = match args.which.as_str() {
        "full" => verify_fenchel(&f, &sample, args.tol),
        "simple" => verify_fenchel_simple(&f, &sample, args.tol),
        other => {
            return Err(Error::Invalid(format!(
                "unknown check '{other}' (expected full or simple)"
            )))
        }
    };
    println!("{report}");
    Ok(report.pass)
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::NonConvergence { .. } | Error::Numerical(_) => 2,
        _ => 1,
    }
}

/// Run the CLI and return the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // ignore failure: the global pool may already exist in tests
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let outcome: Result<bool> = match &cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Study(args) => cmd_study(args).map(|()| true),
        Command::Asymptotics(args) => cmd_asymptotics(args).map(|()| true),
        Command::Chernoff(args) => cmd_chernoff(args).map(|()| true),
        Command::Functional(args) => cmd_functional(args).map(|()| true),
        Command::Verify(args) => cmd_verify(args),
    };
    match outcome {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        std::fs::write(&path, "model = triangle\nbogus = 1\n").unwrap();
        let cfg = Config::load(&path).unwrap();
        let _: Option<String> = cfg.get("model").unwrap();
        assert!(cfg.reject_unknown().is_err());
    }

    #[test]
    fn config_parses_comments_and_spacing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        std::fs::write(&path, "# comment\n n = 50 # trailing\n\nseed=7\n").unwrap();
        let cfg = Config::load(&path).unwrap();
        assert_eq!(cfg.get::<usize>("n").unwrap(), Some(50));
        assert_eq!(cfg.get::<u64>("seed").unwrap(), Some(7));
        cfg.reject_unknown().unwrap();
    }

    #[test]
    fn step_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fit.csv");
        let f = StepDistribution::new(vec![0.25, 0.75], vec![0.5, 1.0]).unwrap();
        std::fs::write(&path, step_csv(&f)).unwrap();
        let g = read_step_csv(&path).unwrap();
        assert_eq!(f.knots(), g.knots());
        assert_eq!(f.values(), g.values());
    }

    #[test]
    fn current_status_csv_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cs.csv");
        std::fs::write(&path, "t,delta\n1.0,1\n2.0,0\n").unwrap();
        let obs = read_current_status_csv(&path).unwrap();
        assert_eq!(obs.len(), 2);
        assert_eq!(obs[0].delta, 1);
    }
}
