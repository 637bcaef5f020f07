//! Greatest-convex-minorant and pool-adjacent-violators kernels.
//!
//! Every estimator in the crate reduces to a weighted isotonic regression.
//! The GCM slopes are derived from PAVA on chord slopes rather than computed
//! geometrically, which avoids floating-point chord comparisons.

use crate::{Error, Result};

/// A cumulative sum diagram: points `(x_i, y_i)` with `x` strictly
/// increasing, starting at the origin.
#[derive(Debug, Clone)]
pub struct CusumDiagram {
    points: Vec<(f64, f64)>,
}

impl CusumDiagram {
    /// `points` excludes the origin `(0, 0)`, which is implied.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Invalid("cusum diagram needs at least one point".into()));
        }
        let mut prev = 0.0;
        for &(x, _) in &points {
            if x <= prev {
                return Err(Error::Invalid(format!(
                    "x coordinates must be strictly increasing from 0, got {x} after {prev}"
                )));
            }
            prev = x;
        }
        Ok(Self { points })
    }

    #[inline]
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
}

/// Weighted isotonic regression: the projection of `values` onto
/// nondecreasing sequences in the `weights`-inner product.
///
/// Linear-time stack-based pool-adjacent-violators; every index in a pooled
/// block receives the block's weighted mean, which is the left derivative of
/// the greatest convex minorant of the associated cusum diagram.
pub fn pava(values: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Invalid("empty input to pava".into()));
    }
    if values.len() != weights.len() {
        return Err(Error::Invalid(format!(
            "values/weights length mismatch: {} vs {}",
            values.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Invalid("weights must be positive".into()));
    }

    // (mean, weight, count) per block
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let m = blocks.len();
            if blocks[m - 2].0 <= blocks[m - 1].0 {
                break;
            }
            let (v1, w1, c1) = blocks.pop().unwrap();
            let (v0, w0, c0) = blocks.pop().unwrap();
            let w = w0 + w1;
            blocks.push(((w0 * v0 + w1 * v1) / w, w, c0 + c1));
        }
    }

    let mut out = Vec::with_capacity(values.len());
    for (v, _, c) in blocks {
        out.extend(std::iter::repeat(v).take(c));
    }
    Ok(out)
}

/// Left derivative of the greatest convex minorant of the diagram, evaluated
/// at each `x_i`. The output is nondecreasing.
pub fn gcm_left_slopes(diagram: &CusumDiagram) -> Result<Vec<f64>> {
    let pts = diagram.points();
    let mut slopes = Vec::with_capacity(pts.len());
    let mut dx = Vec::with_capacity(pts.len());
    let (mut px, mut py) = (0.0, 0.0);
    for &(x, y) in pts {
        slopes.push((y - py) / (x - px));
        dx.push(x - px);
        (px, py) = (x, y);
    }
    pava(&slopes, &dx)
}
