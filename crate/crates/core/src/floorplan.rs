//! Floor-plan walls: loading, validation, rasterization and exact
//! wall-collision queries.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    points_intersect, principal_orientations, rasterize_segments, Angle, GridSpec, Point2,
    RasterGrid, Segment2D, MIN_SEGMENT_LENGTH,
};

pub const FLOORPLAN_FORMAT: &str = "palms-floorplan/1";

/// Edge length of a collision-hash cell, meters.
pub const COLLISION_CELL: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point2,
    pub max: Point2,
}

impl Bounds {
    pub fn new(min: Point2, max: Point2) -> Self {
        Bounds { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point2 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    fn contains_with_tolerance(&self, p: Point2, tol: f64) -> bool {
        p.x >= self.min.x - tol
            && p.x <= self.max.x + tol
            && p.y >= self.min.y - tol
            && p.y <= self.max.y + tol
    }

    /// Tight box around a set of segments.
    pub fn of_segments(segments: &[Segment2D]) -> Option<Bounds> {
        let mut it = segments.iter().flat_map(|s| [s.a, s.b]);
        let first = it.next()?;
        Some(it.fold(Bounds::new(first, first), |b, p| Bounds {
            min: Point2::new(b.min.x.min(p.x), b.min.y.min(p.y)),
            max: Point2::new(b.max.x.max(p.x), b.max.y.max(p.y)),
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloorPlan {
    pub name: String,
    pub walls: Vec<Segment2D>,
    pub bounds: Bounds,
}

#[derive(Serialize, Deserialize)]
struct RawWall {
    a: Point2,
    b: Point2,
}

#[derive(Serialize, Deserialize)]
struct FloorPlanDoc {
    format: String,
    units: String,
    #[serde(default)]
    name: String,
    bounds: Bounds,
    walls: Vec<RawWall>,
}

impl FloorPlan {
    pub fn new(name: impl Into<String>, walls: Vec<Segment2D>, bounds: Bounds) -> Result<Self> {
        let plan = FloorPlan {
            name: name.into(),
            walls,
            bounds,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Plan whose bounds are the walls' bounding box.
    pub fn from_walls(name: impl Into<String>, walls: Vec<Segment2D>) -> Result<Self> {
        let bounds = Bounds::of_segments(&walls).ok_or_else(|| Error::Validation("floor plan has no walls".into()))?;
        FloorPlan::new(name, walls, bounds)
    }

    fn validate(&self) -> Result<()> {
        if self.walls.is_empty() {
            return Err(Error::Validation("floor plan has no walls".into()));
        }
        let b = &self.bounds;
        if !(b.min.is_finite() && b.max.is_finite()) || !(b.area() > 0.0) {
            return Err(Error::Validation("floor plan bounds must have positive area".into()));
        }
        for (i, w) in self.walls.iter().enumerate() {
            if !b.contains_with_tolerance(w.a, 1e-9) || !b.contains_with_tolerance(w.b, 1e-9) {
                return Err(Error::Validation(format!("wall {i} lies outside the bounds")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FloorPlanDoc = serde_json::from_str(text)?;
        if doc.format != FLOORPLAN_FORMAT {
            return Err(Error::Parse(format!("unsupported format tag {:?}", doc.format)));
        }
        if doc.units != "meters" {
            return Err(Error::Parse(format!("unsupported units {:?}", doc.units)));
        }
        let walls = doc
            .walls
            .iter()
            .enumerate()
            .map(|(i, w)| {
                if !w.a.is_finite() || !w.b.is_finite() {
                    return Err(Error::Validation(format!("wall {i} has a non-finite coordinate")));
                }
                if w.a.distance(w.b) <= MIN_SEGMENT_LENGTH {
                    return Err(Error::Validation(format!("wall {i} has zero length")));
                }
                Segment2D::new(w.a, w.b)
            })
            .collect::<Result<Vec<_>>>()?;
        FloorPlan::new(doc.name, walls, doc.bounds)
    }

    pub fn to_json(&self) -> String {
        let doc = FloorPlanDoc {
            format: FLOORPLAN_FORMAT.into(),
            units: "meters".into(),
            name: self.name.clone(),
            bounds: self.bounds,
            walls: self.walls.iter().map(|w| RawWall { a: w.a, b: w.b }).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("floor plan serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FloorPlan::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn principal_orientation(&self) -> Angle {
        principal_orientations(&self.walls).expect("validated plan has walls")
    }

    /// Distance from `p` to the nearest wall.
    pub fn wall_clearance(&self, p: Point2) -> f64 {
        self.walls
            .iter()
            .map(|w| w.distance_to_point(p))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Binary raster of the plan over its bounds, padded by `padding_cells` on
/// every side so that kernels anchored near the edge stay inside.
pub fn rasterize_floorplan(plan: &FloorPlan, resolution: f64, padding_cells: usize) -> Result<RasterGrid> {
    plan_grid_spec(&plan.bounds, resolution, padding_cells).map(|spec| rasterize_segments(&plan.walls, spec))
}

pub fn plan_grid_spec(bounds: &Bounds, resolution: f64, padding_cells: usize) -> Result<GridSpec> {
    if !(resolution > 0.0) {
        return Err(Error::Validation(format!("resolution must be > 0, got {resolution}")));
    }
    let pad = padding_cells as f64 * resolution;
    let w = (bounds.width() / resolution).ceil() as usize + 1 + 2 * padding_cells;
    let h = (bounds.height() / resolution).ceil() as usize + 1 + 2 * padding_cells;
    GridSpec::new(bounds.min - Point2::new(pad, pad), resolution, w, h)
}

/// Uniform spatial hash of wall segments. Queries answer exactly what a
/// brute-force scan over every wall would.
#[derive(Debug, Clone)]
pub struct CollisionIndex {
    walls: Vec<Segment2D>,
    bounds: Bounds,
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl CollisionIndex {
    pub fn new(plan: &FloorPlan) -> Self {
        CollisionIndex::with_cell_size(plan, COLLISION_CELL)
    }

    pub fn with_cell_size(plan: &FloorPlan, cell: f64) -> Self {
        let bounds = plan.bounds;
        let nx = (bounds.width() / cell).floor() as usize + 1;
        let ny = (bounds.height() / cell).floor() as usize + 1;
        let mut idx = CollisionIndex {
            walls: plan.walls.clone(),
            bounds,
            cell,
            nx,
            ny,
            cells: vec![Vec::new(); nx * ny],
        };
        for (k, w) in plan.walls.iter().enumerate() {
            let (i0, j0, i1, j1) = idx.cell_range(w.a, w.b);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    idx.cells[j * nx + i].push(k as u32);
                }
            }
        }
        idx
    }

    pub fn walls(&self) -> &[Segment2D] {
        &self.walls
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn clamp_cell(&self, v: f64, origin: f64, n: usize) -> usize {
        let c = ((v - origin) / self.cell).floor();
        if c < 0.0 {
            0
        } else {
            (c as usize).min(n - 1)
        }
    }

    /// Inclusive cell range covering the box spanned by two points, clamped
    /// to the grid. Any intersection point lies inside the bounds, hence in
    /// one of these cells.
    fn cell_range(&self, p: Point2, q: Point2) -> (usize, usize, usize, usize) {
        let o = self.bounds.min;
        (
            self.clamp_cell(p.x.min(q.x), o.x, self.nx),
            self.clamp_cell(p.y.min(q.y), o.y, self.ny),
            self.clamp_cell(p.x.max(q.x), o.x, self.nx),
            self.clamp_cell(p.y.max(q.y), o.y, self.ny),
        )
    }

    /// True iff the straight move `from → to` touches any wall.
    pub fn path_hits_wall(&self, from: Point2, to: Point2) -> bool {
        let (i0, j0, i1, j1) = self.cell_range(from, to);
        let (lo, hi) = (
            Point2::new(from.x.min(to.x), from.y.min(to.y)),
            Point2::new(from.x.max(to.x), from.y.max(to.y)),
        );
        for j in j0..=j1 {
            for cell in &self.cells[j * self.nx + i0..=j * self.nx + i1] {
                for &k in cell {
                    let w = &self.walls[k as usize];
                    // Disjoint boxes cannot intersect.
                    if w.a.x.max(w.b.x) < lo.x || w.a.x.min(w.b.x) > hi.x || w.a.y.max(w.b.y) < lo.y || w.a.y.min(w.b.y) > hi.y {
                        continue;
                    }
                    if points_intersect(from, to, w.a, w.b) {
                        return true;
                    }
                }
            }
        }
        false
    }

    pub fn path_hits_wall_brute_force(&self, from: Point2, to: Point2) -> bool {
        self.walls.iter().any(|w| points_intersect(from, to, w.a, w.b))
    }
}

/// Free-function form of [`CollisionIndex::path_hits_wall`].
pub fn path_hits_wall(index: &CollisionIndex, from: Point2, to: Point2) -> bool {
    index.path_hits_wall(from, to)
}
