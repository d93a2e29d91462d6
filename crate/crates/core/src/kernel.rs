//! Per-orientation convolution kernels built from an observation.
//!
//! Each kernel has two layers on a grid centered on the observation point:
//! the recorded walls (RW), rasterized and widened by a Gaussian, and the
//! certainly empty space (CES), the union of triangles between the
//! observation point and every observed wall, pulled slightly towards the
//! observation point. The kernel value is `RW - alpha * CES`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rasterize_segments, rotate_segments, Angle, GridSpec, Point2, RasterGrid, Segment2D};
use crate::scan::{Observation, RANGE_SLACK};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Weight of the CES penalty.
    pub alpha: f64,
    /// Standard deviation of the RW widening, meters.
    pub gaussian_sigma: f64,
    /// CES triangles are scaled by this factor about the observation point.
    pub ces_shrink: f64,
    /// Meters per cell.
    pub resolution: f64,
    pub n_orientations: usize,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            alpha: 1.0,
            gaussian_sigma: 0.15,
            ces_shrink: 0.9,
            resolution: 0.10,
            n_orientations: 4,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Validation(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.ces_shrink > 0.0 && self.ces_shrink <= 1.0) {
            return Err(Error::Validation(format!("ces_shrink must be in (0, 1], got {}", self.ces_shrink)));
        }
        if !(self.gaussian_sigma >= 0.0) {
            return Err(Error::Validation(format!("gaussian_sigma must be >= 0, got {}", self.gaussian_sigma)));
        }
        if !(self.resolution > 0.0) {
            return Err(Error::Validation(format!("resolution must be > 0, got {}", self.resolution)));
        }
        if self.n_orientations == 0 {
            return Err(Error::Validation("n_orientations must be >= 1".into()));
        }
        Ok(())
    }

    /// Half-width in cells of the discrete Gaussian (truncated at 4σ).
    pub fn gaussian_radius_cells(&self) -> usize {
        (4.0 * self.gaussian_sigma / self.resolution).ceil() as usize
    }

    /// Half-width in cells of every kernel grid for a given sensor range.
    pub fn kernel_radius_cells(&self, max_range: f64) -> usize {
        ((max_range + RANGE_SLACK) / self.resolution).ceil() as usize + self.gaussian_radius_cells() + 1
    }

    /// Rotation applied to the observation for orientation `k`.
    pub fn rotation(&self, theta: Angle, k: usize) -> Angle {
        theta + Angle::from_radians(TAU * k as f64 / self.n_orientations as f64)
    }
}

/// Square grid centered on the observation point: cell `(r, r)` has its
/// center at the local origin.
pub fn kernel_grid_spec(max_range: f64, params: &KernelParams) -> GridSpec {
    let r = params.kernel_radius_cells(max_range);
    let half = (r as f64 + 0.5) * params.resolution;
    GridSpec::new(Point2::new(-half, -half), params.resolution, 2 * r + 1, 2 * r + 1)
        .expect("kernel grid is valid")
}

/// Unit-sum discrete Gaussian taps at integer cell offsets `-r..=r`.
pub fn gaussian_taps(sigma: f64, resolution: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let r = (4.0 * sigma / resolution).ceil() as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|k| {
            let d = k as f64 * resolution;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable convolution with zero extension at the borders.
pub fn gaussian_blur(grid: &RasterGrid, sigma: f64) -> RasterGrid {
    let taps = gaussian_taps(sigma, grid.spec.resolution);
    if taps.len() == 1 {
        return grid.clone();
    }
    let r = (taps.len() / 2) as i64;
    let (w, h) = (grid.width() as i64, grid.height() as i64);
    let mut tmp = RasterGrid::zeros(grid.spec);
    for j in 0..h {
        for i in 0..w {
            let v = grid.get(i as usize, j as usize);
            if v == 0.0 {
                continue;
            }
            for (t, tap) in taps.iter().enumerate() {
                let x = i + t as i64 - r;
                if x >= 0 && x < w {
                    let k = tmp.spec.index(x as usize, j as usize);
                    tmp.values[k] += v * tap;
                }
            }
        }
    }
    let mut out = RasterGrid::zeros(grid.spec);
    for j in 0..h {
        for i in 0..w {
            let v = tmp.get(i as usize, j as usize);
            if v == 0.0 {
                continue;
            }
            for (t, tap) in taps.iter().enumerate() {
                let y = j + t as i64 - r;
                if y >= 0 && y < h {
                    let k = out.spec.index(i as usize, y as usize);
                    out.values[k] += v * tap;
                }
            }
        }
    }
    out
}

/// Observed segments rotated into the floor-plan frame for `rotation`.
fn rotated_segments(obs: &Observation, rotation: Angle) -> Vec<Segment2D> {
    rotate_segments(&obs.segments, rotation, Point2::ORIGIN)
}

/// Unsmoothed binary raster of the rotated observation on the kernel grid.
pub fn rw_support(obs: &Observation, rotation: Angle, params: &KernelParams) -> RasterGrid {
    rasterize_segments(&rotated_segments(obs, rotation), kernel_grid_spec(obs.max_range, params))
}

/// RW layer: rotate, rasterize, widen with the Gaussian, scale to max 1.
pub fn build_rw_layer(obs: &Observation, theta: Angle, params: &KernelParams) -> RasterGrid {
    let mut rw = gaussian_blur(&rw_support(obs, theta, params), params.gaussian_sigma);
    let max = rw.max();
    if max > 0.0 {
        rw.values.iter_mut().for_each(|v| *v /= max);
    }
    rw
}

/// Union of observation-point triangles, one per observed segment.
#[derive(Debug, Clone, PartialEq)]
pub struct CesRegion {
    /// `[origin, a', b']` with the observation point at the origin.
    pub triangles: Vec<[Point2; 3]>,
}

impl CesRegion {
    pub fn area_sum(&self) -> f64 {
        self.triangles.iter().map(triangle_area).sum()
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.triangles.iter().any(|t| triangle_contains(t, p))
    }

    /// Union area estimated by counting cell centers on a fine raster.
    pub fn union_area(&self, resolution: f64) -> f64 {
        let Some(extent) = self
            .triangles
            .iter()
            .flat_map(|t| t.iter())
            .map(|p| p.x.abs().max(p.y.abs()))
            .reduce(f64::max)
        else {
            return 0.0;
        };
        let n = (extent / resolution).ceil() as i64 + 1;
        let mut count = 0usize;
        for j in -n..n {
            for i in -n..n {
                let c = Point2::new((i as f64 + 0.5) * resolution, (j as f64 + 0.5) * resolution);
                if self.contains(c) {
                    count += 1;
                }
            }
        }
        count as f64 * resolution * resolution
    }
}

pub fn triangle_area(t: &[Point2; 3]) -> f64 {
    ((t[1] - t[0]).cross(t[2] - t[0]) / 2.0).abs()
}

/// Closed-triangle membership, independent of vertex winding. Points within
/// rounding noise of an edge count as inside.
pub fn triangle_contains(t: &[Point2; 3], p: Point2) -> bool {
    const EPS: f64 = 1e-12;
    let d1 = (t[1] - t[0]).cross(p - t[0]);
    let d2 = (t[2] - t[1]).cross(p - t[1]);
    let d3 = (t[0] - t[2]).cross(p - t[2]);
    let neg = d1 < -EPS || d2 < -EPS || d3 < -EPS;
    let pos = d1 > EPS || d2 > EPS || d3 > EPS;
    !(neg && pos)
}

pub fn build_ces_region(obs: &Observation, theta: Angle, params: &KernelParams) -> CesRegion {
    let s = params.ces_shrink;
    CesRegion {
        triangles: rotated_segments(obs, theta)
            .iter()
            .map(|seg| [Point2::ORIGIN, seg.a * s, seg.b * s])
            .collect(),
    }
}

/// CES layer: 1 on cells whose center falls inside the region, except cells
/// crossed by an observed wall, 0 elsewhere.
pub fn rasterize_ces(region: &CesRegion, spec: GridSpec, walls: &RasterGrid) -> RasterGrid {
    let mut grid = RasterGrid::zeros(spec);
    for t in &region.triangles {
        let (lo, hi) = t.iter().fold(
            (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
            |(lo, hi), p| (Point2::new(lo.x.min(p.x), lo.y.min(p.y)), Point2::new(hi.x.max(p.x), hi.y.max(p.y))),
        );
        let (i0, j0) = spec.cell_of(lo);
        let (i1, j1) = spec.cell_of(hi);
        for j in j0.max(0)..=j1.min(spec.height as i64 - 1) {
            for i in i0.max(0)..=i1.min(spec.width as i64 - 1) {
                if triangle_contains(t, spec.cell_center(i, j)) {
                    grid.set(i as usize, j as usize, 1.0);
                }
            }
        }
    }
    for (k, w) in walls.values.iter().enumerate() {
        if *w != 0.0 {
            grid.values[k] = 0.0;
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationKernel {
    /// `rw - alpha * ces`, cellwise.
    pub grid: RasterGrid,
    /// Cell holding the observation point.
    pub anchor: (usize, usize),
    pub orientation_index: usize,
    /// Base alignment angle shared by all orientations.
    pub theta: Angle,
    /// Total rotation applied to the observation, `theta + k * 360° / N`.
    pub rotation: Angle,
    pub alpha: f64,
}

impl ObservationKernel {
    /// Non-zero cells as `(di, dj, value)` offsets from the anchor.
    pub fn taps(&self) -> Vec<(i64, i64, f64)> {
        let (ai, aj) = (self.anchor.0 as i64, self.anchor.1 as i64);
        self.grid
            .nonzero()
            .map(|(i, j, v)| (i as i64 - ai, j as i64 - aj, v))
            .collect()
    }
}

/// Kernel for a single rotation of the observation.
pub fn build_kernel(obs: &Observation, theta: Angle, k: usize, params: &KernelParams) -> ObservationKernel {
    let rotation = params.rotation(theta, k);
    let spec = kernel_grid_spec(obs.max_range, params);
    let walls = rw_support(obs, rotation, params);
    let rw = build_rw_layer(obs, rotation, params);
    let ces = rasterize_ces(&build_ces_region(obs, rotation, params), spec, &walls);
    let mut grid = rw;
    for (g, c) in grid.values.iter_mut().zip(&ces.values) {
        *g -= params.alpha * c;
    }
    let r = params.kernel_radius_cells(obs.max_range);
    ObservationKernel {
        grid,
        anchor: (r, r),
        orientation_index: k,
        theta,
        rotation,
        alpha: params.alpha,
    }
}

/// One kernel per orientation, each rotating the geometry before
/// rasterizing so all of them are exact.
pub fn build_kernels(obs: &Observation, theta: Angle, params: &KernelParams) -> Result<Vec<ObservationKernel>> {
    params.validate()?;
    Ok((0..params.n_orientations)
        .map(|k| build_kernel(obs, theta, k, params))
        .collect())
}
