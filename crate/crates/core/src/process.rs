//! Intensity and classification surfaces, and simulation of marked point
//! patterns from the bivariate inhomogeneous Poisson point process.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CovariateField, Partition, Point, StudyWindow};
use crate::numeric::{sigmoid, EXP_CLAMP};

/// Regression parameters for the intensity (alpha) and classification (beta)
/// surfaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha0: f64,
    pub alpha: Vec<f64>,
    pub beta0: f64,
    pub beta: Vec<f64>,
}

impl ModelParams {
    pub fn new(alpha0: f64, alpha: Vec<f64>, beta0: f64, beta: Vec<f64>) -> Self {
        ModelParams { alpha0, alpha, beta0, beta }
    }

}

/// Linear predictor alpha0 + z(s)'alpha, clamped to +-EXP_CLAMP.
pub fn log_intensity_at(
    params: &ModelParams,
    z_fields: &[CovariateField],
    s: Point,
) -> Result<f64> {
    if params.alpha.len() != z_fields.len() {
        return Err(Error::InvalidArgument(format!(
            "alpha has {} coefficients but {} intensity covariates supplied",
            params.alpha.len(),
            z_fields.len()
        )));
    }
    let mut eta = params.alpha0;
    for (a, f) in params.alpha.iter().zip(z_fields) {
        eta += a * f.value_at(s)?;
    }
    if !eta.is_finite() {
        return Err(Error::NumericRange(format!(
            "non-finite intensity linear predictor at ({}, {})",
            s.x, s.y
        )));
    }
    Ok(eta.clamp(-EXP_CLAMP, EXP_CLAMP))
}

/// lambda(s) = exp(alpha0 + z(s)'alpha).
pub fn intensity_at(params: &ModelParams, z_fields: &[CovariateField], s: Point) -> Result<f64> {
    Ok(log_intensity_at(params, z_fields, s)?.exp())
}

/// Classification linear predictor beta0 + x(s)'beta.
pub fn class_predictor_at(
    params: &ModelParams,
    x_fields: &[CovariateField],
    s: Point,
) -> Result<f64> {
    if params.beta.len() != x_fields.len() {
        return Err(Error::InvalidArgument(format!(
            "beta has {} coefficients but {} classification covariates supplied",
            params.beta.len(),
            x_fields.len()
        )));
    }
    let mut eta = params.beta0;
    for (b, f) in params.beta.iter().zip(x_fields) {
        eta += b * f.value_at(s)?;
    }
    if !eta.is_finite() {
        return Err(Error::NumericRange(format!(
            "non-finite classification linear predictor at ({}, {})",
            s.x, s.y
        )));
    }
    Ok(eta)
}

/// p(s) = inverse-logit(beta0 + x(s)'beta).
pub fn prob_at(params: &ModelParams, x_fields: &[CovariateField], s: Point) -> Result<f64> {
    Ok(sigmoid(class_predictor_at(params, x_fields, s)?))
}

/// Exact marked locations: Type A data.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPattern {
    window: StudyWindow,
    points: Vec<(Point, u8)>,
}

impl PointPattern {
    pub fn new(window: StudyWindow, points: Vec<(Point, u8)>) -> Result<Self> {
        for &(p, m) in &points {
            if !window.contains(p) {
                return Err(Error::OutOfDomain { x: p.x, y: p.y });
            }
            if m > 1 {
                return Err(Error::Validation(format!("mark {m} is not binary")));
            }
        }
        Ok(PointPattern { window, points })
    }

    pub fn window(&self) -> StudyWindow {
        self.window
    }

    pub fn points(&self) -> &[(Point, u8)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Write as `x,y,mark` CSV.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y", "mark"])?;
        for &(p, m) in &self.points {
            w.write_record(&[format!("{}", p.x), format!("{}", p.y), format!("{m}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read from `x,y,mark` CSV; points must lie in `window`.
    pub fn read_csv<P: AsRef<Path>>(path: P, window: StudyWindow) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["x", "y", "mark"] {
            return Err(Error::Parse {
                line: 1,
                msg: format!(
                    "expected header `x,y,mark`, got `{}`",
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
        let mut points = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            let field = |k: usize| -> Result<&str> {
                rec.get(k).ok_or(Error::Parse { line, msg: "missing field".into() })
            };
            let x: f64 = field(0)?.trim().parse().map_err(|e: std::num::ParseFloatError| {
                Error::Parse { line, msg: e.to_string() }
            })?;
            let y: f64 = field(1)?.trim().parse().map_err(|e: std::num::ParseFloatError| {
                Error::Parse { line, msg: e.to_string() }
            })?;
            let m: u8 = field(2)?.trim().parse().map_err(|e: std::num::ParseIntError| {
                Error::Parse { line, msg: e.to_string() }
            })?;
            points.push((Point::new(x, y), m));
        }
        PointPattern::new(window, points)
    }
}

/// Simulate a marked pattern: n ~ Poisson(integral of lambda), locations by
/// exact cell-weighted inversion over the partition's quadrature cells, marks
/// Bernoulli(p(u)). Deterministic given the seed.
pub fn simulate_bippp(
    params: &ModelParams,
    z_fields: &[CovariateField],
    x_fields: &[CovariateField],
    partition: &Partition,
    seed: u64,
) -> Result<PointPattern> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_bippp_with(params, z_fields, x_fields, partition, &mut rng)
}

/// As [`simulate_bippp`] but with a caller-managed RNG stream.
pub fn simulate_bippp_with<R: Rng>(
    params: &ModelParams,
    z_fields: &[CovariateField],
    x_fields: &[CovariateField],
    partition: &Partition,
    rng: &mut R,
) -> Result<PointPattern> {
    let nodes = partition.nodes();
    // cumulative cell masses w * lambda(node); exact when the quadrature grid
    // is at least as fine as the rasters (fields piecewise constant)
    let mut cum = Vec::with_capacity(nodes.len());
    let mut total = 0.0;
    for node in nodes {
        let lam = intensity_at(params, z_fields, node.point)?;
        total += node.weight * lam;
        cum.push(total);
    }
    if !total.is_finite() {
        return Err(Error::NumericRange("integral of lambda is not finite".into()));
    }
    let n = if total > 0.0 {
        rand_distr::Poisson::new(total)
            .map_err(|e| Error::NumericRange(format!("Poisson({total}): {e}")))?
            .sample(rng) as usize
    } else {
        0
    };

    let window = partition.window();
    let sub_dx = (window.xmax - window.xmin) / (partition.nx() * partition.quad_per_cell()) as f64;
    let sub_dy = (window.ymax - window.ymin) / (partition.ny() * partition.quad_per_cell()) as f64;
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let t: f64 = rng.gen::<f64>() * total;
        let k = cum.partition_point(|&c| c <= t).min(nodes.len() - 1);
        let c = nodes[k].point;
        let u = Point::new(
            c.x + (rng.gen::<f64>() - 0.5) * sub_dx,
            c.y + (rng.gen::<f64>() - 0.5) * sub_dy,
        );
        let p = prob_at(params, x_fields, u)?;
        let y = u8::from(rng.gen::<f64>() < p);
        points.push((u, y));
    }
    PointPattern::new(window, points)
}
