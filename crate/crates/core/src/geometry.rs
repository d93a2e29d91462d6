//! Planar primitives shared by the rest of the crate: points, wall segments,
//! normalized angles, raster grids, supercover rasterization and exact
//! segment intersection.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum admissible segment length in meters.
pub const MIN_SEGMENT_LENGTH: f64 = 1e-9;

/// Nudge applied before flooring world coordinates into cells, so that a
/// coordinate sitting on a cell boundary up to float noise lands in the
/// upper cell, as the half-open cell convention intends.
const CELL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Counter-clockwise rotation about the origin.
    pub fn rotated(self, angle: Angle) -> Point2 {
        let (s, c) = angle.radians().sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn rotated_about(self, angle: Angle, pivot: Point2) -> Point2 {
        (self - pivot).rotated(angle) + pivot
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Point2 {
    fn add_assign(&mut self, o: Point2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// A wall segment in meters. Both endpoints are finite and distinct.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Segment2D {
    pub a: Point2,
    pub b: Point2,
}

impl Segment2D {
    pub fn new(a: Point2, b: Point2) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::Validation("non-finite segment coordinate".into()));
        }
        if a.distance(b) <= MIN_SEGMENT_LENGTH {
            return Err(Error::Validation(format!(
                "degenerate segment ({}, {})-({}, {})",
                a.x, a.y, b.x, b.y
            )));
        }
        Ok(Segment2D { a, b })
    }

    /// Panics on invalid input; for literals in tests and generators.
    pub fn from_coords(ax: f64, ay: f64, bx: f64, by: f64) -> Self {
        Segment2D::new(Point2::new(ax, ay), Point2::new(bx, by)).expect("valid segment")
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    pub fn direction(&self) -> Angle {
        let d = self.b - self.a;
        Angle::from_radians(d.y.atan2(d.x))
    }

    pub fn midpoint(&self) -> Point2 {
        (self.a + self.b) * 0.5
    }

    pub fn point_at(&self, t: f64) -> Point2 {
        self.a + (self.b - self.a) * t
    }

    pub fn rotated_about(&self, angle: Angle, pivot: Point2) -> Segment2D {
        Segment2D {
            a: self.a.rotated_about(angle, pivot),
            b: self.b.rotated_about(angle, pivot),
        }
    }

    pub fn translated(&self, v: Point2) -> Segment2D {
        Segment2D {
            a: self.a + v,
            b: self.b + v,
        }
    }

    /// Euclidean distance from `p` to the closed segment.
    pub fn distance_to_point(&self, p: Point2) -> f64 {
        let d = self.b - self.a;
        let t = ((p - self.a).dot(d) / d.dot(d)).clamp(0.0, 1.0);
        self.point_at(t).distance(p)
    }
}

impl<'de> Deserialize<'de> for Segment2D {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            a: Point2,
            b: Point2,
        }
        let raw = Raw::deserialize(d)?;
        Segment2D::new(raw.a, raw.b).map_err(serde::de::Error::custom)
    }
}

/// An angle kept in `[0, 2π)` radians.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Angle(f64);

impl Angle {
    pub const ZERO: Angle = Angle(0.0);

    pub fn from_radians(r: f64) -> Self {
        let mut v = r.rem_euclid(TAU);
        if v >= TAU {
            v = 0.0;
        }
        Angle(v)
    }

    pub fn from_degrees(d: f64) -> Self {
        Angle::from_radians(d.to_radians())
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0.to_degrees()
    }

    /// Same angle expressed in `(-π, π]`.
    pub fn signed_radians(self) -> f64 {
        if self.0 > PI {
            self.0 - TAU
        } else {
            self.0
        }
    }

    pub fn signed_degrees(self) -> f64 {
        self.signed_radians().to_degrees()
    }

    /// Quarter-turn offset `k · 2π / n`.
    pub fn fraction_of_turn(k: usize, n: usize) -> Self {
        Angle::from_radians(TAU * k as f64 / n as f64)
    }

    /// Smallest absolute difference to `other`, in `[0, π]`.
    pub fn distance(self, other: Angle) -> f64 {
        (self - other).signed_radians().abs()
    }
}

impl Add for Angle {
    type Output = Angle;
    fn add(self, o: Angle) -> Angle {
        Angle::from_radians(self.0 + o.0)
    }
}

impl Sub for Angle {
    type Output = Angle;
    fn sub(self, o: Angle) -> Angle {
        Angle::from_radians(self.0 - o.0)
    }
}

impl Neg for Angle {
    type Output = Angle;
    fn neg(self) -> Angle {
        Angle::from_radians(-self.0)
    }
}

impl Serialize for Angle {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.degrees())
    }
}

impl<'de> Deserialize<'de> for Angle {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        f64::deserialize(d).map(Angle::from_degrees)
    }
}

/// Placement of a raster in the world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// World coordinates of the outer corner of cell (0, 0).
    pub origin: Point2,
    /// Meters per cell.
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
}

impl GridSpec {
    pub fn new(origin: Point2, resolution: f64, width: usize, height: usize) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::Validation(format!("resolution must be > 0, got {resolution}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Validation("grid must be at least 1x1".into()));
        }
        if !origin.is_finite() {
            return Err(Error::Validation("non-finite grid origin".into()));
        }
        Ok(GridSpec {
            origin,
            resolution,
            width,
            height,
        })
    }

    /// Smallest grid with the given resolution covering `[min, max]`.
    pub fn covering(min: Point2, max: Point2, resolution: f64) -> Result<Self> {
        let w = ((max.x - min.x) / resolution).floor() as usize + 1;
        let h = ((max.y - min.y) / resolution).floor() as usize + 1;
        GridSpec::new(min, resolution, w, h)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Continuous cell coordinates (cell (i, j) spans `[i, i+1) × [j, j+1)`).
    pub fn to_cell_coords(&self, p: Point2) -> Point2 {
        Point2::new(
            (p.x - self.origin.x) / self.resolution,
            (p.y - self.origin.y) / self.resolution,
        )
    }

    /// Cell containing `p`, possibly outside the grid.
    pub fn cell_of(&self, p: Point2) -> (i64, i64) {
        let c = self.to_cell_coords(p);
        ((c.x + CELL_EPS).floor() as i64, (c.y + CELL_EPS).floor() as i64)
    }

    pub fn contains_cell(&self, i: i64, j: i64) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.width && (j as usize) < self.height
    }

    pub fn cell_center(&self, i: i64, j: i64) -> Point2 {
        Point2::new(
            self.origin.x + (i as f64 + 0.5) * self.resolution,
            self.origin.y + (j as f64 + 0.5) * self.resolution,
        )
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }
}

/// Row-major grid of real values (row `j` holds cells `(0..width, j)`).
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl RasterGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        RasterGrid {
            spec,
            values: vec![0.0; spec.len()],
        }
    }

    pub fn filled(spec: GridSpec, v: f64) -> Self {
        RasterGrid {
            spec,
            values: vec![v; spec.len()],
        }
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.spec.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.spec.index(i, j);
        self.values[k] = v;
    }

    /// Value at signed cell coordinates; zero outside the grid.
    pub fn get_or_zero(&self, i: i64, j: i64) -> f64 {
        if self.spec.contains_cell(i, j) {
            self.get(i as usize, j as usize)
        } else {
            0.0
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    /// Iterates `(i, j, value)` over cells with a non-zero value.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let w = self.spec.width;
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(move |(k, v)| (k % w, k / w, *v))
    }

    /// Rotates the cell array by 90° counter-clockwise about the grid
    /// center. The world placement is kept only for square grids centered
    /// on the world origin; callers use this to compare cell patterns.
    pub fn rotated_90(&self) -> RasterGrid {
        let (w, h) = (self.spec.width, self.spec.height);
        let mut spec = self.spec;
        spec.width = h;
        spec.height = w;
        let mut out = RasterGrid::zeros(spec);
        for j in 0..h {
            for i in 0..w {
                // (i, j) -> (h - 1 - j, i)
                out.set(h - 1 - j, i, self.get(i, j));
            }
        }
        out
    }
}

fn length_weighted_quarter_resultant(segments: &[Segment2D]) -> (f64, f64, f64) {
    segments.iter().fold((0.0, 0.0, 0.0), |(c, s, w), seg| {
        let len = seg.length();
        let phi4 = 4.0 * seg.direction().radians();
        (c + len * phi4.cos(), s + len * phi4.sin(), w + len)
    })
}

/// Dominant wall direction modulo 90°, in `[0°, 90°)`.
///
/// Each segment contributes its length as weight at angle `4φ`; the
/// resultant's argument divided by four is the orientation. The second
/// principal orientation is the returned value plus 90°.
pub fn principal_orientations(segments: &[Segment2D]) -> Result<Angle> {
    if segments.is_empty() {
        return Err(Error::NoSegments);
    }
    let (c, s, total) = length_weighted_quarter_resultant(segments);
    if !(total > 0.0) {
        return Err(Error::NoSegments);
    }
    let quarter = (s.atan2(c) / 4.0).rem_euclid(FRAC_PI_2);
    Ok(Angle::from_radians(if quarter >= FRAC_PI_2 { 0.0 } else { quarter }))
}

/// Minimal rotation `θ ∈ (-45°, 45°]` with `obs + θ ≡ fp (mod 90°)`.
pub fn alignment_angle(obs_principal: Angle, fp_principal: Angle) -> Angle {
    let mut delta = (fp_principal.radians() - obs_principal.radians()).rem_euclid(FRAC_PI_2);
    // The +45° boundary belongs to the interval; absorb rounding there.
    if delta > FRAC_PI_2 / 2.0 + 1e-12 {
        delta -= FRAC_PI_2;
    }
    Angle::from_radians(delta)
}

pub fn rotate_segments(segments: &[Segment2D], angle: Angle, pivot: Point2) -> Vec<Segment2D> {
    segments.iter().map(|s| s.rotated_about(angle, pivot)).collect()
}

/// Liang–Barsky clip of `p0 → p1` against `[xmin, xmax] × [ymin, ymax]`,
/// returning the parameter interval that survives.
fn clip_to_box(p0: Point2, p1: Point2, min: Point2, max: Point2) -> Option<(f64, f64)> {
    let d = p1 - p0;
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (p, q) in [
        (-d.x, p0.x - min.x),
        (d.x, max.x - p0.x),
        (-d.y, p0.y - min.y),
        (d.y, max.y - p0.y),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 > t1 {
                return None;
            }
        }
    }
    Some((t0, t1))
}

/// Visits every cell (under the half-open cell partition) that contains a
/// point of `seg`, restricted to cells inside the grid. Exact corner
/// crossings step diagonally since no point of the segment enters the two
/// side cells.
pub fn visit_supercover(seg: &Segment2D, spec: &GridSpec, mut visit: impl FnMut(usize, usize)) {
    let ua = spec.to_cell_coords(seg.a) + Point2::new(CELL_EPS, CELL_EPS);
    let ub = spec.to_cell_coords(seg.b) + Point2::new(CELL_EPS, CELL_EPS);
    let Some((t0, t1)) = clip_to_box(
        ua,
        ub,
        Point2::new(0.0, 0.0),
        Point2::new(spec.width as f64, spec.height as f64),
    ) else {
        return;
    };
    let d = ub - ua;
    let p0 = ua + d * t0;
    let p1 = ua + d * t1;
    let d = p1 - p0;

    let mut cx = p0.x.floor() as i64;
    let mut cy = p0.y.floor() as i64;
    let ex = p1.x.floor() as i64;
    let ey = p1.y.floor() as i64;

    let axis = |start: f64, delta: f64, cell: i64| -> (i64, f64, f64) {
        if delta > 0.0 {
            (1, ((cell + 1) as f64 - start) / delta, 1.0 / delta)
        } else if delta < 0.0 {
            (-1, (start - cell as f64) / -delta, -1.0 / delta)
        } else {
            (0, f64::INFINITY, f64::INFINITY)
        }
    };
    let (sx, mut tmx, tdx) = axis(p0.x, d.x, cx);
    let (sy, mut tmy, tdy) = axis(p0.y, d.y, cy);

    let mut mark = |x: i64, y: i64| {
        if spec.contains_cell(x, y) {
            visit(x as usize, y as usize);
        }
    };
    mark(cx, cy);
    let budget = (ex - cx).abs() + (ey - cy).abs() + 2;
    for _ in 0..budget {
        if cx == ex && cy == ey {
            break;
        }
        let t = tmx.min(tmy);
        if t >= 1.0 {
            break;
        }
        if tmx < tmy {
            cx += sx;
            tmx += tdx;
        } else if tmy < tmx {
            cy += sy;
            tmy += tdy;
        } else {
            cx += sx;
            cy += sy;
            tmx += tdx;
            tmy += tdy;
        }
        mark(cx, cy);
    }
    if cx != ex || cy != ey {
        mark(ex, ey);
    }
}

/// Binary raster: 1 on every cell crossed by a segment, 0 elsewhere.
/// Segments leaving the grid are clipped.
pub fn rasterize_segments(segments: &[Segment2D], spec: GridSpec) -> RasterGrid {
    let mut grid = RasterGrid::zeros(spec);
    for seg in segments {
        visit_supercover(seg, &spec, |i, j| grid.set(i, j, 1.0));
    }
    grid
}

fn orientation(p: Point2, q: Point2, r: Point2) -> i8 {
    let v = (q - p).cross(r - p);
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// `r` lies within the bounding box of `p q` (used for collinear triples).
fn within_box(p: Point2, q: Point2, r: Point2) -> bool {
    r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
}

/// True iff the closed segments share at least one point.
pub fn segments_intersect(s1: &Segment2D, s2: &Segment2D) -> bool {
    points_intersect(s1.a, s1.b, s2.a, s2.b)
}

/// [`segments_intersect`] on raw endpoints; `p1 == p2` is allowed.
pub fn points_intersect(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool {
    let o1 = orientation(p1, p2, q1);
    let o2 = orientation(p1, p2, q2);
    let o3 = orientation(q1, q2, p1);
    let o4 = orientation(q1, q2, p2);
    if o1 != o2 && o3 != o4 {
        // A zero-length p-segment makes o1 == o2 == 0, so this branch
        // never misfires on it.
        return true;
    }
    (o1 == 0 && within_box(p1, p2, q1))
        || (o2 == 0 && within_box(p1, p2, q2))
        || (o3 == 0 && within_box(q1, q2, p1))
        || (o4 == 0 && within_box(q1, q2, p2))
}
