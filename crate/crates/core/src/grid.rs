//! Study window, grid partition, gridded covariate surfaces, and a low-rank
//! Gaussian-process covariate generator.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the study window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Rectangular study area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyWindow {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl StudyWindow {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        if !(xmax > xmin) || !(ymax > ymin) {
            return Err(Error::InvalidArgument(format!(
                "degenerate window [{xmin}, {xmax}] x [{ymin}, {ymax}]"
            )));
        }
        Ok(StudyWindow { xmin, xmax, ymin, ymax })
    }

    /// The unit square used throughout the simulation experiment.
    pub fn unit_square() -> Self {
        StudyWindow { xmin: 0.0, xmax: 1.0, ymin: 0.0, ymax: 1.0 }
    }

    pub fn area(&self) -> f64 {
        (self.xmax - self.xmin) * (self.ymax - self.ymin)
    }

    pub fn contains(&self, s: Point) -> bool {
        s.x >= self.xmin && s.x <= self.xmax && s.y >= self.ymin && s.y <= self.ymax
    }

    /// Cell index along one axis under the closed-left/open-right convention.
    /// Points on the max edge map to the last cell.
    fn axis_index(lo: f64, hi: f64, n: usize, v: f64) -> usize {
        let t = (v - lo) / (hi - lo) * n as f64;
        (t.floor() as usize).min(n - 1)
    }
}

/// A quadrature node: location, weight, and owning subregion.
#[derive(Debug, Clone, Copy)]
pub struct QuadNode {
    pub point: Point,
    pub weight: f64,
    pub region: usize,
}

/// Regular partition of the window into `nx * ny` subregions, each carrying a
/// midpoint-rule quadrature grid of `quad_per_cell^2` nodes.
#[derive(Debug, Clone)]
pub struct Partition {
    window: StudyWindow,
    nx: usize,
    ny: usize,
    quad_per_cell: usize,
    nodes: Vec<QuadNode>,
}

impl Partition {
    pub fn window(&self) -> StudyWindow {
        self.window
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn quad_per_cell(&self) -> usize {
        self.quad_per_cell
    }

    /// Number of subregions J.
    pub fn n_regions(&self) -> usize {
        self.nx * self.ny
    }

    /// Area of each subregion (regular grid, so all equal).
    pub fn region_area(&self) -> f64 {
        self.window.area() / self.n_regions() as f64
    }

    /// All quadrature nodes, grouped contiguously by subregion index.
    pub fn nodes(&self) -> &[QuadNode] {
        &self.nodes
    }

    /// Quadrature nodes of subregion `j`.
    pub fn region_nodes(&self, j: usize) -> &[QuadNode] {
        let per = self.quad_per_cell * self.quad_per_cell;
        &self.nodes[j * per..(j + 1) * per]
    }

    /// Subregion containing `s` (closed-left/open-right; max edges map to the
    /// last row/column). Region index is row-major: `iy * nx + ix`.
    pub fn region_of(&self, s: Point) -> Result<usize> {
        if !self.window.contains(s) {
            return Err(Error::OutOfDomain { x: s.x, y: s.y });
        }
        let ix = StudyWindow::axis_index(self.window.xmin, self.window.xmax, self.nx, s.x);
        let iy = StudyWindow::axis_index(self.window.ymin, self.window.ymax, self.ny, s.y);
        Ok(iy * self.nx + ix)
    }

    /// Centroid of subregion `j`.
    pub fn region_centroid(&self, j: usize) -> Point {
        let ix = j % self.nx;
        let iy = j / self.nx;
        let dx = (self.window.xmax - self.window.xmin) / self.nx as f64;
        let dy = (self.window.ymax - self.window.ymin) / self.ny as f64;
        Point::new(
            self.window.xmin + (ix as f64 + 0.5) * dx,
            self.window.ymin + (iy as f64 + 0.5) * dy,
        )
    }
}

/// Build a regular `nx x ny` partition with a `quad_per_cell^2` midpoint
/// quadrature grid per subregion.
pub fn build_partition(
    window: StudyWindow,
    nx: usize,
    ny: usize,
    quad_per_cell: usize,
) -> Result<Partition> {
    if nx == 0 || ny == 0 || quad_per_cell == 0 {
        return Err(Error::InvalidArgument(format!(
            "partition dimensions must be positive (nx={nx}, ny={ny}, quad_per_cell={quad_per_cell})"
        )));
    }
    let dx = (window.xmax - window.xmin) / nx as f64;
    let dy = (window.ymax - window.ymin) / ny as f64;
    let q = quad_per_cell;
    let sub_dx = dx / q as f64;
    let sub_dy = dy / q as f64;
    let w = sub_dx * sub_dy;

    let mut nodes = Vec::with_capacity(nx * ny * q * q);
    for iy in 0..ny {
        for ix in 0..nx {
            let region = iy * nx + ix;
            let x0 = window.xmin + ix as f64 * dx;
            let y0 = window.ymin + iy as f64 * dy;
            for qy in 0..q {
                for qx in 0..q {
                    nodes.push(QuadNode {
                        point: Point::new(
                            x0 + (qx as f64 + 0.5) * sub_dx,
                            y0 + (qy as f64 + 0.5) * sub_dy,
                        ),
                        weight: w,
                        region,
                    });
                }
            }
        }
    }
    Ok(Partition { window, nx, ny, quad_per_cell, nodes })
}

/// Piecewise-constant raster covariate surface covering the window exactly.
/// Values stored row-major from the bottom-left cell: index `iy * mx + ix`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateField {
    window: StudyWindow,
    mx: usize,
    my: usize,
    values: Vec<f64>,
}

impl CovariateField {
    pub fn new(window: StudyWindow, mx: usize, my: usize, values: Vec<f64>) -> Result<Self> {
        if mx == 0 || my == 0 {
            return Err(Error::InvalidArgument(format!(
                "raster dimensions must be positive (mx={mx}, my={my})"
            )));
        }
        if values.len() != mx * my {
            return Err(Error::InvalidArgument(format!(
                "expected {} raster values, got {}",
                mx * my,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite raster value {v}")));
        }
        Ok(CovariateField { window, mx, my, values })
    }

    /// Field equal to `value` everywhere.
    pub fn constant(window: StudyWindow, value: f64) -> Self {
        CovariateField { window, mx: 1, my: 1, values: vec![value] }
    }

    pub fn window(&self) -> StudyWindow {
        self.window
    }

    pub fn mx(&self) -> usize {
        self.mx
    }

    pub fn my(&self) -> usize {
        self.my
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Center of raster cell `(ix, iy)`.
    pub fn cell_center(&self, ix: usize, iy: usize) -> Point {
        let dx = (self.window.xmax - self.window.xmin) / self.mx as f64;
        let dy = (self.window.ymax - self.window.ymin) / self.my as f64;
        Point::new(
            self.window.xmin + (ix as f64 + 0.5) * dx,
            self.window.ymin + (iy as f64 + 0.5) * dy,
        )
    }

    /// Value of the raster cell containing `s` (closed-left/open-right).
    pub fn value_at(&self, s: Point) -> Result<f64> {
        if !self.window.contains(s) {
            return Err(Error::OutOfDomain { x: s.x, y: s.y });
        }
        let ix = StudyWindow::axis_index(self.window.xmin, self.window.xmax, self.mx, s.x);
        let iy = StudyWindow::axis_index(self.window.ymin, self.window.ymax, self.my, s.y);
        Ok(self.values[iy * self.mx + ix])
    }

    /// Write the raster as `x,y,value` CSV, row-major over cell centers.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y", "value"])?;
        for iy in 0..self.my {
            for ix in 0..self.mx {
                let c = self.cell_center(ix, iy);
                w.write_record(&[
                    format!("{}", c.x),
                    format!("{}", c.y),
                    format!("{}", self.values[iy * self.mx + ix]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Load a raster from `x,y,value` CSV. Infers the grid from the cell
    /// centers and validates regularity (uniform spacing, full coverage).
    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let expected = ["x", "y", "value"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header `x,y,value`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut rows: Vec<(f64, f64, f64)> = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .ok_or(Error::Parse { line, msg: "missing field".into() })?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse { line, msg: e.to_string() })
            };
            rows.push((parse(0)?, parse(1)?, parse(2)?));
        }
        if rows.is_empty() {
            return Err(Error::Parse { line: 2, msg: "raster file has no data rows".into() });
        }

        let mut xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let mut ys: Vec<f64> = rows.iter().map(|r| r.1).collect();
        xs.sort_by(|a, b| a.total_cmp(b));
        xs.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        ys.sort_by(|a, b| a.total_cmp(b));
        ys.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        let (mx, my) = (xs.len(), ys.len());
        if mx * my != rows.len() {
            return Err(Error::Validation(format!(
                "raster is not a full grid: {} distinct x by {} distinct y but {} rows",
                mx, my, rows.len()
            )));
        }
        let spacing = |c: &[f64]| -> Result<f64> {
            if c.len() == 1 {
                return Err(Error::Validation(
                    "cannot infer cell size from a single coordinate; need >= 2 cells per axis".into(),
                ));
            }
            let d = c[1] - c[0];
            for w in c.windows(2) {
                if ((w[1] - w[0]) - d).abs() > 1e-9 * d.abs().max(1.0) {
                    return Err(Error::Validation("raster cell centers are not evenly spaced".into()));
                }
            }
            Ok(d)
        };
        // Degenerate single-row/column rasters are rejected above; both axes
        // need at least two centers to recover the cell size.
        let dx = spacing(&xs)?;
        let dy = spacing(&ys)?;
        let window = StudyWindow::new(
            xs[0] - dx / 2.0,
            xs[mx - 1] + dx / 2.0,
            ys[0] - dy / 2.0,
            ys[my - 1] + dy / 2.0,
        )?;

        let mut values = vec![f64::NAN; mx * my];
        let idx_of = |c: &[f64], v: f64| c.iter().position(|&u| (u - v).abs() < 1e-9).unwrap();
        for (x, y, v) in rows {
            values[idx_of(&ys, y) * mx + idx_of(&xs, x)] = v;
        }
        CovariateField::new(window, mx, my, values)
    }
}

/// Low-rank Gaussian-process generator config: process convolution of white
/// noise on a knot grid with an isotropic Gaussian kernel.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GpConfig {
    pub n_knots_x: usize,
    pub n_knots_y: usize,
    /// Kernel standard deviation in window units.
    pub bandwidth: f64,
    /// Target empirical standard deviation of the generated field.
    pub marginal_sd: f64,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig { n_knots_x: 5, n_knots_y: 5, bandwidth: 0.25, marginal_sd: 1.0, seed: 0 }
    }
}

impl GpConfig {
    fn validate(&self) -> Result<()> {
        if self.n_knots_x == 0 || self.n_knots_y == 0 {
            return Err(Error::InvalidArgument("knot counts must be positive".into()));
        }
        if !(self.bandwidth > 0.0) || !(self.marginal_sd > 0.0) {
            return Err(Error::InvalidArgument(
                "bandwidth and marginal_sd must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Draw a covariate surface from the low-rank GP: i.i.d. standard-normal knot
/// weights convolved with a Gaussian kernel, then centered and rescaled to the
/// configured marginal standard deviation. Knots sit on a regular grid
/// extended one bandwidth beyond the window to avoid edge deflation.
pub fn sample_gp_field(
    window: StudyWindow,
    mx: usize,
    my: usize,
    cfg: &GpConfig,
) -> Result<CovariateField> {
    cfg.validate()?;
    if mx == 0 || my == 0 {
        return Err(Error::InvalidArgument("raster dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    sample_gp_field_with(window, mx, my, cfg, &mut rng)
}

/// As [`sample_gp_field`] but drawing knot weights from a caller-supplied RNG,
/// for callers that manage seed streams themselves.
pub fn sample_gp_field_with<R: Rng>(
    window: StudyWindow,
    mx: usize,
    my: usize,
    cfg: &GpConfig,
    rng: &mut R,
) -> Result<CovariateField> {
    cfg.validate()?;
    let mut values = raw_gp_values(window, mx, my, cfg, rng);

    // Center and scale to the configured marginal sd so settings are
    // comparable across seeds. A flat draw (sd ~ 0) is left centered at zero.
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    for v in &mut values {
        *v -= mean;
    }
    let sd = (values.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    if sd > 1e-12 {
        let scale = cfg.marginal_sd / sd;
        for v in &mut values {
            *v *= scale;
        }
    }
    CovariateField::new(window, mx, my, values)
}

/// Kernel-convolution surface before centering and rescaling.
fn raw_gp_values<R: Rng>(
    window: StudyWindow,
    mx: usize,
    my: usize,
    cfg: &GpConfig,
    rng: &mut R,
) -> Vec<f64> {
    let bw = cfg.bandwidth;
    let (kx, ky) = (cfg.n_knots_x, cfg.n_knots_y);
    let x0 = window.xmin - bw;
    let x1 = window.xmax + bw;
    let y0 = window.ymin - bw;
    let y1 = window.ymax + bw;
    let knot = |i: usize, n: usize, lo: f64, hi: f64| -> f64 {
        if n == 1 {
            (lo + hi) / 2.0
        } else {
            lo + i as f64 * (hi - lo) / (n - 1) as f64
        }
    };
    use rand_distr::Distribution;
    let normal = rand_distr::StandardNormal;
    let mut knots = Vec::with_capacity(kx * ky);
    for iy in 0..ky {
        for ix in 0..kx {
            let w: f64 = normal.sample(rng);
            knots.push((knot(ix, kx, x0, x1), knot(iy, ky, y0, y1), w));
        }
    }

    let inv2b2 = 1.0 / (2.0 * bw * bw);
    let dx = (window.xmax - window.xmin) / mx as f64;
    let dy = (window.ymax - window.ymin) / my as f64;
    let mut values = Vec::with_capacity(mx * my);
    for iy in 0..my {
        let cy = window.ymin + (iy as f64 + 0.5) * dy;
        for ix in 0..mx {
            let cx = window.xmin + (ix as f64 + 0.5) * dx;
            let mut v = 0.0;
            for &(qx, qy, w) in &knots {
                let d2 = (cx - qx) * (cx - qx) + (cy - qy) * (cy - qy);
                v += w * (-d2 * inv2b2).exp();
            }
            values.push(v);
        }
    }
    values
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn partition_matches_experiment_layout() {
        let p = build_partition(StudyWindow::unit_square(), 20, 20, 1).unwrap();
        assert_eq!(p.n_regions(), 400);
        assert_relative_eq!(p.region_area(), 1.0 / 400.0, max_relative = 1e-12);
    }

    #[test]
    fn degenerate_partition_single_node() {
        let p = build_partition(StudyWindow::unit_square(), 1, 1, 1).unwrap();
        assert_eq!(p.n_regions(), 1);
        assert_eq!(p.nodes().len(), 1);
        let n = p.nodes()[0];
        assert_relative_eq!(n.point.x, 0.5);
        assert_relative_eq!(n.point.y, 0.5);
        assert_relative_eq!(n.weight, 1.0);
    }

    #[test]
    fn quad_weights_tile_region_area() {
        let p = build_partition(StudyWindow::unit_square(), 2, 1, 2).unwrap();
        assert_eq!(p.n_regions(), 2);
        for j in 0..2 {
            let nodes = p.region_nodes(j);
            assert_eq!(nodes.len(), 4);
            let total: f64 = nodes.iter().map(|n| n.weight).sum();
            assert_relative_eq!(total, 0.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn weights_sum_to_window_area() {
        let w = StudyWindow::new(-1.0, 3.0, 0.5, 2.5).unwrap();
        let p = build_partition(w, 7, 3, 3).unwrap();
        let total: f64 = p.nodes().iter().map(|n| n.weight).sum();
        assert_relative_eq!(total, w.area(), max_relative = 1e-12);
    }

    #[test]
    fn rejects_zero_dimensions() {
        assert!(build_partition(StudyWindow::unit_square(), 0, 1, 1).is_err());
        assert!(build_partition(StudyWindow::unit_square(), 1, 1, 0).is_err());
    }

    #[test]
    fn constant_field_lookup() {
        let f = CovariateField::constant(StudyWindow::unit_square(), 3.0);
        assert_eq!(f.value_at(Point::new(0.3, 0.9)).unwrap(), 3.0);
    }

    #[test]
    fn two_cell_lookup_and_boundary_tiebreak() {
        let f = CovariateField::new(StudyWindow::unit_square(), 2, 1, vec![1.0, 2.0]).unwrap();
        assert_eq!(f.value_at(Point::new(0.25, 0.5)).unwrap(), 1.0);
        assert_eq!(f.value_at(Point::new(0.75, 0.5)).unwrap(), 2.0);
        // interior boundary belongs to the right cell
        assert_eq!(f.value_at(Point::new(0.5, 0.5)).unwrap(), 2.0);
        // window max edge maps to the last cell
        assert_eq!(f.value_at(Point::new(1.0, 1.0)).unwrap(), 2.0);
    }

    #[test]
    fn lookup_outside_window_errors() {
        let f = CovariateField::constant(StudyWindow::unit_square(), 0.0);
        assert!(matches!(
            f.value_at(Point::new(1.5, 0.5)),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn gp_field_deterministic() {
        let cfg = GpConfig { seed: 42, ..Default::default() };
        let a = sample_gp_field(StudyWindow::unit_square(), 16, 16, &cfg).unwrap();
        let b = sample_gp_field(StudyWindow::unit_square(), 16, 16, &cfg).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn gp_huge_bandwidth_flattens() {
        // before standardization, the surface's relative spread shrinks as the
        // kernel widens, approaching a spatially constant field
        let mut prev = f64::INFINITY;
        for bw in [0.25, 2.5, 25.0, 250.0] {
            let cfg = GpConfig { bandwidth: bw, marginal_sd: 1.0, seed: 7, ..Default::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let raw = raw_gp_values(StudyWindow::unit_square(), 16, 16, &cfg, &mut rng);
            let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
            let scale = raw.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1e-300);
            let rel_spread = (max - min) / scale;
            assert!(rel_spread < prev, "bw={bw}: spread {rel_spread} vs {prev}");
            prev = rel_spread;
        }
        // spread decays like window-size / bandwidth
        assert!(prev < 1e-2, "largest bandwidth still varies by {prev}");
    }

    #[test]
    fn gp_mean_near_zero_over_seeds() {
        // centering forces each field's mean to zero exactly
        for seed in 0..50 {
            let cfg = GpConfig { seed, ..Default::default() };
            let f = sample_gp_field(StudyWindow::unit_square(), 16, 16, &cfg).unwrap();
            let mean = f.values().iter().sum::<f64>() / f.values().len() as f64;
            assert!(mean.abs() < 1e-10);
        }
    }

    #[test]
    fn raster_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.csv");
        let cfg = GpConfig { seed: 3, ..Default::default() };
        let f = sample_gp_field(StudyWindow::unit_square(), 8, 4, &cfg).unwrap();
        f.write_csv(&path).unwrap();
        let g = CovariateField::read_csv(&path).unwrap();
        assert_eq!(g.mx(), 8);
        assert_eq!(g.my(), 4);
        for (a, b) in f.values().iter().zip(g.values()) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        let w = g.window();
        assert_relative_eq!(w.xmin, 0.0, epsilon = 1e-12);
        assert_relative_eq!(w.xmax, 1.0, epsilon = 1e-12);
    }
}
