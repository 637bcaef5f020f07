//! Domain types, validation and dataset ingestion.
//!
//! All types are immutable after construction and safe to share across
//! concurrent workers.

use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// One interval-censored (case 2) record.
///
/// The latent event time `X` is observed only through its position relative
/// to the inspection pair `(u, v)`: `d0 = [X <= u]`, `d1 = [u < X <= v]`,
/// and `d2 = 1 - d0 - d1 = [X > v]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation2 {
    pub u: f64,
    pub v: f64,
    pub d0: u8,
    pub d1: u8,
}

impl Observation2 {
    pub fn new(u: f64, v: f64, d0: u8, d1: u8) -> Result<Self> {
        if !u.is_finite() || !v.is_finite() {
            return Err(Error::Invalid(format!("non-finite times u={u}, v={v}")));
        }
        if u < 0.0 {
            return Err(Error::Invalid(format!("u must be >= 0, got {u}")));
        }
        if u >= v {
            return Err(Error::Invalid(format!("u must be < v, got u={u}, v={v}")));
        }
        if d0 > 1 || d1 > 1 {
            return Err(Error::Invalid(format!(
                "indicators must be 0 or 1, got d0={d0}, d1={d1}"
            )));
        }
        if d0 + d1 > 1 {
            return Err(Error::Invalid(format!(
                "d0 + d1 must be <= 1, got d0={d0}, d1={d1}"
            )));
        }
        Ok(Self { u, v, d0, d1 })
    }

    /// Build the indicators from a latent event time.
    pub fn from_latent(u: f64, v: f64, x: f64) -> Result<Self> {
        let d0 = u8::from(x <= u);
        let d1 = u8::from(u < x && x <= v);
        Self::new(u, v, d0, d1)
    }

    #[inline]
    pub fn d2(&self) -> u8 {
        1 - self.d0 - self.d1
    }
}

/// One current-status (case 1) record: the inspection time and `[X <= t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentStatusObservation {
    pub t: f64,
    pub delta: u8,
}

impl CurrentStatusObservation {
    pub fn new(t: f64, delta: u8) -> Result<Self> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Invalid(format!("t must be finite and >= 0, got {t}")));
        }
        if delta > 1 {
            return Err(Error::Invalid(format!("delta must be 0 or 1, got {delta}")));
        }
        Ok(Self { t, delta })
    }
}

/// Which endpoint of an observation interval a grid point refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    /// The left inspection time `u`.
    Left,
    /// The right inspection time `v`.
    Right,
}

/// Back-reference from a grid time to an observation endpoint.
#[derive(Debug, Clone, Copy)]
pub struct GridEvent {
    pub obs: usize,
    pub endpoint: Endpoint,
}

/// One merged grid time carrying every endpoint event at that time.
///
/// Tied endpoint times are merged into a single grid point so that
/// estimators assign one value per distinct time; the multiplicity is the
/// number of events.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub time: f64,
    pub events: Vec<GridEvent>,
}

impl GridPoint {
    #[inline]
    pub fn multiplicity(&self) -> usize {
        self.events.len()
    }
}

/// A validated case-2 sample with its merged observation-time grid.
#[derive(Debug, Clone)]
pub struct Sample2 {
    obs: Vec<Observation2>,
    m_upper: f64,
    grid: Vec<GridPoint>,
    /// Per observation: (grid index of u, grid index of v).
    grid_of: Vec<(usize, usize)>,
}

impl Sample2 {
    /// Validate observations and build the merged grid. When `m_upper` is
    /// absent it defaults to the maximum `v` in the sample.
    pub fn new(obs: Vec<Observation2>, m_upper: Option<f64>) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::Invalid("empty sample".into()));
        }
        let max_v = obs.iter().map(|o| o.v).fold(f64::NEG_INFINITY, f64::max);
        let m_upper = m_upper.unwrap_or(max_v);
        if max_v > m_upper {
            return Err(Error::Invalid(format!(
                "observation v={max_v} exceeds support endpoint M={m_upper}"
            )));
        }

        let mut tagged: Vec<(f64, GridEvent)> = Vec::with_capacity(2 * obs.len());
        for (i, o) in obs.iter().enumerate() {
            tagged.push((
                o.u,
                GridEvent {
                    obs: i,
                    endpoint: Endpoint::Left,
                },
            ));
            tagged.push((
                o.v,
                GridEvent {
                    obs: i,
                    endpoint: Endpoint::Right,
                },
            ));
        }
        tagged.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut grid: Vec<GridPoint> = Vec::with_capacity(tagged.len());
        for (t, ev) in tagged {
            match grid.last_mut() {
                Some(gp) if gp.time == t => gp.events.push(ev),
                _ => grid.push(GridPoint {
                    time: t,
                    events: vec![ev],
                }),
            }
        }

        let mut grid_of = vec![(usize::MAX, usize::MAX); obs.len()];
        for (j, gp) in grid.iter().enumerate() {
            for ev in &gp.events {
                match ev.endpoint {
                    Endpoint::Left => grid_of[ev.obs].0 = j,
                    Endpoint::Right => grid_of[ev.obs].1 = j,
                }
            }
        }

        Ok(Self {
            obs,
            m_upper,
            grid,
            grid_of,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.obs.len()
    }

    #[inline]
    pub fn observations(&self) -> &[Observation2] {
        &self.obs
    }

    #[inline]
    pub fn m_upper(&self) -> f64 {
        self.m_upper
    }

    /// The merged, strictly increasing grid of observation times.
    #[inline]
    pub fn grid(&self) -> &[GridPoint] {
        &self.grid
    }

    #[inline]
    pub fn grid_times(&self) -> Vec<f64> {
        self.grid.iter().map(|gp| gp.time).collect()
    }

    /// Grid indices `(j_u, j_v)` of observation `i`'s endpoints.
    #[inline]
    pub fn grid_indices(&self, i: usize) -> (usize, usize) {
        self.grid_of[i]
    }
}

/// Nondecreasing right-continuous step function on `[0, M]` with values in
/// `[0, 1]`: `F(t) = values[j]` for the largest `knots[j] <= t`, and 0 to the
/// left of the first knot.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl StepDistribution {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(Error::Invalid(format!(
                "knots/values must be non-empty and equal length, got {} and {}",
                knots.len(),
                values.len()
            )));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("knots must be strictly increasing".into()));
        }
        if values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Invalid("values must be nondecreasing".into()));
        }
        if values.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
            return Err(Error::Invalid("values must lie in [0, 1]".into()));
        }
        Ok(Self { knots, values })
    }

    /// Step function over the grid times of `sample` with value `y[j]` at
    /// grid point `j`.
    pub fn from_grid(sample: &Sample2, y: &[f64]) -> Result<Self> {
        Self::new(sample.grid_times(), y.to_vec())
    }

    /// Right-continuous evaluation.
    pub fn evaluate(&self, t: f64) -> f64 {
        let k = self.knots.partition_point(|&w| w <= t);
        if k == 0 {
            0.0
        } else {
            self.values[k - 1]
        }
    }

    #[inline]
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mass points `(w_j, p_j)` with `p_j > 0`, where `p_j` is the jump of
    /// the step function at `w_j`.
    pub fn mass_points(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut prev = 0.0;
        for (&w, &f) in self.knots.iter().zip(&self.values) {
            let p = f - prev;
            if p > 0.0 {
                out.push((w, p));
            }
            prev = f;
        }
        out
    }
}

fn parse_field(s: &str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Parse {
        line,
        msg: format!("cannot parse '{}': {e}", s.trim()),
    })
}

fn parse_indicator(s: &str, line: usize) -> Result<u8> {
    match s.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Parse {
            line,
            msg: format!("indicator must be 0 or 1, got '{other}'"),
        }),
    }
}

/// Parse a case-2 sample from CSV text.
///
/// Rows are either `u,v,d0,d1` or `u,v,x` (latent event time, from which the
/// indicators are computed as `d0 = [x <= u]`, `d1 = [u < x <= v]`). A
/// non-numeric first row is treated as a header.
pub fn parse_csv(text: &str) -> Result<Sample2> {
    let mut obs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if idx == 0 && fields.iter().any(|f| f.trim().parse::<f64>().is_err()) {
            continue; // header
        }
        let o = match fields.len() {
            3 => {
                let u = parse_field(fields[0], line)?;
                let v = parse_field(fields[1], line)?;
                let x = parse_field(fields[2], line)?;
                Observation2::from_latent(u, v, x)
            }
            4 => {
                let u = parse_field(fields[0], line)?;
                let v = parse_field(fields[1], line)?;
                let d0 = parse_indicator(fields[2], line)?;
                let d1 = parse_indicator(fields[3], line)?;
                Observation2::new(u, v, d0, d1)
            }
            k => Err(Error::Parse {
                line,
                msg: format!("expected 3 or 4 columns, got {k}"),
            }),
        };
        obs.push(o.map_err(|e| match e {
            Error::Invalid(msg) => Error::Parse { line, msg },
            other => other,
        })?);
    }
    Sample2::new(obs, None)
}

pub fn ingest_csv(path: &Path) -> Result<Sample2> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(&text)
}

/// Canonical 4-column CSV emission; `{}` formatting of f64 round-trips.
pub fn to_csv(sample: &Sample2) -> String {
    let mut out = String::from("u,v,d0,d1\n");
    for o in sample.observations() {
        let _ = writeln!(out, "{},{},{},{}", o.u, o.v, o.d0, o.d1);
    }
    out
}

pub fn write_csv(sample: &Sample2, path: &Path) -> Result<()> {
    std::fs::write(path, to_csv(sample)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
