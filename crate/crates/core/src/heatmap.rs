//! Heatmaps: cross-correlation of the rasterized floor plan with each
//! orientation kernel, and the joint top-fraction binarization that turns
//! them into candidate masks.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::export;
use crate::geometry::{Angle, GridSpec, Point2, RasterGrid};
use crate::kernel::{KernelParams, ObservationKernel};

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapSet {
    /// `maps[k]` scores every plan cell as the observation point under
    /// orientation `k`.
    pub maps: Vec<RasterGrid>,
    pub theta: Angle,
    pub rotations: Vec<Angle>,
    pub params: Option<KernelParams>,
}

impl HeatmapSet {
    pub fn spec(&self) -> GridSpec {
        self.maps[0].spec
    }

    pub fn n_orientations(&self) -> usize {
        self.maps.len()
    }
}

/// `H(c) = Σ_j K(j) · P(c + j - anchor)` for every plan cell `c`, with the
/// plan zero-extended. Evaluated by scattering each non-zero plan cell
/// through the kernel taps, which is exact and cheap for sparse wall
/// rasters.
pub fn correlate(plan: &RasterGrid, kernel: &ObservationKernel) -> RasterGrid {
    let spec = plan.spec;
    let (w, h) = (spec.width as i64, spec.height as i64);
    let taps = kernel.taps();
    let mut out = RasterGrid::zeros(spec);
    for (pi, pj, pv) in plan.nonzero() {
        let (pi, pj) = (pi as i64, pj as i64);
        for &(di, dj, kv) in &taps {
            // c + d = p  =>  c = p - d
            let (ci, cj) = (pi - di, pj - dj);
            if ci >= 0 && cj >= 0 && ci < w && cj < h {
                out.values[(cj * w + ci) as usize] += kv * pv;
            }
        }
    }
    out
}

/// Direct per-cell evaluation of the same sum; quadratic, for testing.
pub fn correlate_direct(plan: &RasterGrid, kernel: &ObservationKernel) -> RasterGrid {
    let spec = plan.spec;
    let (ai, aj) = (kernel.anchor.0 as i64, kernel.anchor.1 as i64);
    let mut out = RasterGrid::zeros(spec);
    for cj in 0..spec.height {
        for ci in 0..spec.width {
            let mut s = 0.0;
            for kj in 0..kernel.grid.height() {
                for ki in 0..kernel.grid.width() {
                    let kv = kernel.grid.get(ki, kj);
                    if kv != 0.0 {
                        s += kv * plan.get_or_zero(ci as i64 + ki as i64 - ai, cj as i64 + kj as i64 - aj);
                    }
                }
            }
            out.set(ci, cj, s);
        }
    }
    out
}

pub fn compute_heatmaps(plan_raster: &RasterGrid, kernels: &[ObservationKernel]) -> Result<HeatmapSet> {
    let first = kernels
        .first()
        .ok_or_else(|| Error::Validation("no kernels".into()))?;
    for k in kernels {
        let r = k.grid.spec.resolution;
        if (r - plan_raster.spec.resolution).abs() > 1e-12 * r.max(1.0) {
            return Err(Error::ResolutionMismatch {
                expected: plan_raster.spec.resolution,
                found: r,
            });
        }
    }
    let maps: Vec<RasterGrid> = {
        use rayon::prelude::*;
        kernels.par_iter().map(|k| correlate(plan_raster, k)).collect()
    };
    Ok(HeatmapSet {
        maps,
        theta: first.theta,
        rotations: kernels.iter().map(|k| k.rotation).collect(),
        params: None,
    })
}

/// Boolean raster sharing a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryGrid {
    pub spec: GridSpec,
    pub cells: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(spec: GridSpec) -> Self {
        BinaryGrid {
            spec,
            cells: vec![false; spec.len()],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[self.spec.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        let k = self.spec.index(i, j);
        self.cells[k] = v;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn true_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.spec.width;
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| **c)
            .map(move |(k, _)| (k % w, k / w))
    }

    pub fn contains_point(&self, p: Point2) -> bool {
        let (i, j) = self.spec.cell_of(p);
        self.spec.contains_cell(i, j) && self.get(i as usize, j as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMask {
    pub masks: Vec<BinaryGrid>,
    pub threshold_value: f64,
    pub top_fraction: f64,
}

impl CandidateMask {
    pub fn counts(&self) -> Vec<usize> {
        self.masks.iter().map(BinaryGrid::count).collect()
    }

    pub fn total(&self) -> usize {
        self.counts().iter().sum()
    }
}

/// Marks, in every map, the cells at or above the joint `(1 - top_fraction)`
/// quantile of all values of all maps. Ties at the threshold are all kept,
/// so a flat input yields all-true masks.
pub fn binarize_top_percent(hset: &HeatmapSet, top_fraction: f64) -> Result<CandidateMask> {
    if !(top_fraction > 0.0 && top_fraction < 1.0) {
        return Err(Error::Validation(format!("top_fraction must be in (0, 1), got {top_fraction}")));
    }
    let mut all: Vec<f64> = hset.maps.iter().flat_map(|m| m.values.iter().copied()).collect();
    let n = all.len();
    let keep = ((top_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let rank = n - keep;
    let (_, threshold, _) = all.select_nth_unstable_by(rank, f64::total_cmp);
    let threshold = *threshold;
    let masks = hset
        .maps
        .iter()
        .map(|m| BinaryGrid {
            spec: m.spec,
            cells: m.values.iter().map(|v| *v >= threshold).collect(),
        })
        .collect();
    Ok(CandidateMask {
        masks,
        threshold_value: threshold,
        top_fraction,
    })
}

#[derive(Debug, Serialize)]
pub struct HeatmapReport {
    pub theta_deg: f64,
    pub rotations_deg: Vec<f64>,
    pub threshold_value: f64,
    pub top_fraction: f64,
    pub mask_cell_counts: Vec<usize>,
    pub grid: GridSpec,
    pub score_ranges: Vec<[f64; 2]>,
    pub params: Option<KernelParams>,
}

/// Writes `heatmap_k.pgm` and `mask_k.pbm` for every orientation plus a
/// `heatmaps.json` sidecar, returning the sidecar contents.
pub fn export_heatmaps(dir: &Path, hset: &HeatmapSet, mask: &CandidateMask) -> Result<HeatmapReport> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, (map, m)) in hset.maps.iter().zip(&mask.masks).enumerate() {
        export::write_minmax_pgm(&dir.join(format!("heatmap_{k}.pgm")), map)?;
        export::write_pbm(&dir.join(format!("mask_{k}.pbm")), m)?;
    }
    let report = HeatmapReport {
        theta_deg: hset.theta.signed_degrees(),
        rotations_deg: hset.rotations.iter().map(|r| r.degrees()).collect(),
        threshold_value: mask.threshold_value,
        top_fraction: mask.top_fraction,
        mask_cell_counts: mask.counts(),
        grid: hset.spec(),
        score_ranges: hset.maps.iter().map(|m| [m.min(), m.max()]).collect(),
        params: hset.params,
    };
    let path = dir.join("heatmaps.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floorplan::{rasterize_floorplan, Bounds, FloorPlan};
    use crate::geometry::Segment2D;
    use crate::kernel::{build_kernel, build_kernels};
    use crate::scan::Observation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_kernel(rng: &mut ChaCha8Rng, size: usize) -> ObservationKernel {
        let spec = GridSpec::new(Point2::ORIGIN, 0.1, size, size).unwrap();
        let mut grid = RasterGrid::zeros(spec);
        for v in grid.values.iter_mut() {
            if rng.random_bool(0.3) {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        ObservationKernel {
            grid,
            anchor: (rng.random_range(0..size), rng.random_range(0..size)),
            orientation_index: 0,
            theta: Angle::ZERO,
            rotation: Angle::ZERO,
            alpha: 1.0,
        }
    }

    fn random_plan(rng: &mut ChaCha8Rng, n: usize) -> RasterGrid {
        let spec = GridSpec::new(Point2::ORIGIN, 0.1, n, n).unwrap();
        let mut g = RasterGrid::zeros(spec);
        for v in g.values.iter_mut() {
            if rng.random_bool(0.15) {
                *v = 1.0;
            }
        }
        g
    }

    #[test]
    fn scatter_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let plan = random_plan(&mut rng, 50);
            let k = random_kernel(&mut rng, 15);
            let a = correlate(&plan, &k);
            let b = correlate_direct(&plan, &k);
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn correlation_is_linear_in_the_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let plan = random_plan(&mut rng, 40);
        let a = random_kernel(&mut rng, 11);
        let mut b = random_kernel(&mut rng, 11);
        b.anchor = a.anchor;
        let mut sum = a.clone();
        for (s, v) in sum.grid.values.iter_mut().zip(&b.grid.values) {
            *s += v;
        }
        let (ha, hb, hs) = (correlate(&plan, &a), correlate(&plan, &b), correlate(&plan, &sum));
        for k in 0..hs.values.len() {
            assert!((hs.values[k] - ha.values[k] - hb.values[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn resolution_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let plan = RasterGrid::zeros(GridSpec::new(Point2::ORIGIN, 0.2, 10, 10).unwrap());
        let k = random_kernel(&mut rng, 5);
        assert!(matches!(compute_heatmaps(&plan, &[k]), Err(Error::ResolutionMismatch { .. })));
        assert!(compute_heatmaps(&plan, &[]).is_err());
    }

    #[test]
    fn single_wall_self_match() {
        // Plan: one long wall along x = 5. Observation: the same wall seen
        // from 2 m to its left. The best locations lie on the line x = 3.
        let plan = FloorPlan::new(
            "wall",
            vec![Segment2D::from_coords(5.0, 1.0, 5.0, 11.0)],
            Bounds::new(Point2::ORIGIN, Point2::new(10.0, 12.0)),
        )
        .unwrap();
        let obs = Observation::new(vec![Segment2D::from_coords(2.0, -1.5, 2.0, 1.5)], 5.0).unwrap();
        let p = KernelParams::default();
        let r = p.kernel_radius_cells(5.0);
        let raster = rasterize_floorplan(&plan, p.resolution, r).unwrap();
        let k0 = build_kernel(&obs, Angle::ZERO, 0, &p);
        let h = correlate(&raster, &k0);
        let best = h
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| (k % h.width(), k / h.width()))
            .unwrap();
        let c = h.spec.cell_center(best.0 as i64, best.1 as i64);
        assert!((c.x - 3.0).abs() <= 0.1, "{c:?}");
        assert!(c.y > 2.0 && c.y < 10.0);
    }

    #[test]
    fn flat_maps_select_everything() {
        let spec = GridSpec::new(Point2::ORIGIN, 0.1, 20, 10).unwrap();
        let hset = HeatmapSet {
            maps: vec![RasterGrid::filled(spec, 3.0); 4],
            theta: Angle::ZERO,
            rotations: vec![Angle::ZERO; 4],
            params: None,
        };
        let m = binarize_top_percent(&hset, 0.01).unwrap();
        assert_eq!(m.total(), 800);
        assert_eq!(m.threshold_value, 3.0);
    }

    #[test]
    fn rank_arithmetic_on_distinct_values() {
        let spec = GridSpec::new(Point2::ORIGIN, 0.1, 50, 50).unwrap();
        // 4 maps × 2500 cells holding 0..9999 in scrambled order.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut vals: Vec<f64> = (0..10_000).map(|v| v as f64).collect();
        for i in (1..vals.len()).rev() {
            vals.swap(i, rng.random_range(0..=i));
        }
        let maps = vals
            .chunks(2500)
            .map(|c| RasterGrid {
                spec,
                values: c.to_vec(),
            })
            .collect();
        let hset = HeatmapSet {
            maps,
            theta: Angle::ZERO,
            rotations: vec![Angle::ZERO; 4],
            params: None,
        };
        let m = binarize_top_percent(&hset, 0.01).unwrap();
        assert_eq!(m.threshold_value, 9900.0);
        assert_eq!(m.total(), 100);
        // Shrinking the fraction never adds cells.
        let smaller = binarize_top_percent(&hset, 0.005).unwrap();
        for (a, b) in smaller.masks.iter().zip(&m.masks) {
            assert!(a.cells.iter().zip(&b.cells).all(|(x, y)| !*x || *y));
        }
        assert!(binarize_top_percent(&hset, 0.0).is_err());
        assert!(binarize_top_percent(&hset, 1.0).is_err());
    }

    #[test]
    fn occluding_wall_lowers_the_score() {
        // Two identical alcoves; the second has an extra wall inside the
        // CES of its observation point.
        let s = Segment2D::from_coords;
        let alcove = |x0: f64| vec![s(x0, 0.0, x0, 4.0), s(x0, 4.0, x0 + 4.0, 4.0), s(x0 + 4.0, 4.0, x0 + 4.0, 0.0)];
        let mut walls = alcove(1.0);
        walls.extend(alcove(11.0));
        let clean = FloorPlan::new("clean", walls.clone(), Bounds::new(Point2::ORIGIN, Point2::new(16.0, 6.0))).unwrap();
        walls.push(s(12.5, 2.5, 13.5, 2.5));
        let cluttered = FloorPlan::new("cluttered", walls, Bounds::new(Point2::ORIGIN, Point2::new(16.0, 6.0))).unwrap();
        let obs = Observation::new(alcove(-2.0).iter().map(|w| w.translated(Point2::new(0.0, -1.0))).collect(), 5.0).unwrap();
        let p = KernelParams::default();
        let ks = build_kernels(&obs, Angle::ZERO, &p).unwrap();
        let r = p.kernel_radius_cells(5.0);
        let h_clean = compute_heatmaps(&rasterize_floorplan(&clean, 0.1, r).unwrap(), &ks[..1]).unwrap();
        let h_clut = compute_heatmaps(&rasterize_floorplan(&cluttered, 0.1, r).unwrap(), &ks[..1]).unwrap();
        let at = |h: &HeatmapSet, p: Point2| {
            let (i, j) = h.spec().cell_of(p);
            h.maps[0].get(i as usize, j as usize)
        };
        let (p1, p2) = (Point2::new(3.0, 1.0), Point2::new(13.0, 1.0));
        assert!((at(&h_clean, p1) - at(&h_clean, p2)).abs() < 1e-9);
        assert!(at(&h_clut, p2) < at(&h_clut, p1) - 1.0);
    }
}
