//! Synthetic buildings, ray-cast scans, corridor walks and corrupted
//! odometry, so the whole pipeline can run without device recordings.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{mean_position, FilterConfig, Particle, ParticleFilter};
use crate::floorplan::{plan_grid_spec, Bounds, CollisionIndex, FloorPlan};
use crate::geometry::{alignment_angle, rasterize_segments, Angle, Point2, Segment2D};
use crate::odometry::OdometryStep;
use crate::scan::Observation;

pub const TRUTH_FORMAT: &str = "palms-truth/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    CorridorGrid,
    RoomsOffCorridor,
    /// A plan loaded from disk; not generated.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub generator: Generator,
    /// Building width and height, meters.
    pub extents: [f64; 2],
    pub corridor_width: f64,
    pub door_gap: f64,
    pub seed: u64,
    /// Floor-plan file for [`Generator::Custom`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_file: Option<String>,
}

impl WorldSpec {
    pub fn new(generator: Generator, width: f64, height: f64, seed: u64) -> Self {
        WorldSpec {
            generator,
            extents: [width, height],
            corridor_width: 2.0,
            door_gap: 1.0,
            seed,
            plan_file: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.extents;
        if !(w >= 12.0 && h >= 10.0 && w.is_finite() && h.is_finite()) {
            return Err(Error::Validation(format!("extents must be at least 12 x 10 m, got {w} x {h}")));
        }
        if !(self.corridor_width >= 1.0 && self.corridor_width <= 4.0) {
            return Err(Error::Validation("corridor_width must be in [1, 4] m".into()));
        }
        if !(self.door_gap >= 0.6 && self.door_gap <= 2.0) {
            return Err(Error::Validation("door_gap must be in [0.6, 2] m".into()));
        }
        Ok(())
    }
}

/// A generated building: the plan plus the corridor rectangles walks use.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub plan: FloorPlan,
    pub corridors: Vec<Bounds>,
    pub rooms: Vec<Bounds>,
}

impl Layout {
    /// Random point on a corridor's center line, at least `end_margin`
    /// from its ends.
    pub fn corridor_point(&self, rng: &mut ChaCha8Rng, end_margin: f64) -> Point2 {
        let c = self.corridors.choose(rng).expect("layout has corridors");
        let mid = c.center();
        if c.width() >= c.height() {
            let lo = c.min.x + end_margin;
            let hi = (c.max.x - end_margin).max(lo);
            Point2::new(rng.random_range(lo..=hi), mid.y)
        } else {
            let lo = c.min.y + end_margin;
            let hi = (c.max.y - end_margin).max(lo);
            Point2::new(mid.x, rng.random_range(lo..=hi))
        }
    }
}

const KEY_SCALE: f64 = 1e6;

/// Axis-aligned wall pieces grouped by supporting line, merged, with door
/// intervals cut out.
#[derive(Default)]
struct WallSet {
    /// (is_vertical, line coordinate key) → intervals along the line.
    lines: BTreeMap<(bool, i64), (f64, Vec<(f64, f64)>)>,
    doors: BTreeMap<(bool, i64), Vec<(f64, f64)>>,
}

impl WallSet {
    fn key(vertical: bool, coord: f64) -> (bool, i64) {
        (vertical, (coord * KEY_SCALE).round() as i64)
    }

    fn add(&mut self, vertical: bool, coord: f64, lo: f64, hi: f64) {
        let e = self.lines.entry(Self::key(vertical, coord)).or_insert((coord, Vec::new()));
        e.1.push((lo.min(hi), lo.max(hi)));
    }

    fn add_rect(&mut self, r: &Bounds) {
        self.add(false, r.min.y, r.min.x, r.max.x);
        self.add(false, r.max.y, r.min.x, r.max.x);
        self.add(true, r.min.x, r.min.y, r.max.y);
        self.add(true, r.max.x, r.min.y, r.max.y);
    }

    fn door(&mut self, vertical: bool, coord: f64, lo: f64, hi: f64) {
        self.doors.entry(Self::key(vertical, coord)).or_default().push((lo, hi));
    }

    fn build(&self) -> Vec<Segment2D> {
        let mut out = Vec::new();
        for (key, (coord, intervals)) in &self.lines {
            let mut iv = intervals.clone();
            iv.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut merged: Vec<(f64, f64)> = Vec::new();
            for (lo, hi) in iv {
                match merged.last_mut() {
                    Some(last) if lo <= last.1 + 1e-9 => last.1 = last.1.max(hi),
                    _ => merged.push((lo, hi)),
                }
            }
            let doors = self.doors.get(key).cloned().unwrap_or_default();
            for (lo, hi) in merged {
                let mut pieces = vec![(lo, hi)];
                for &(dlo, dhi) in &doors {
                    pieces = pieces
                        .into_iter()
                        .flat_map(|(a, b)| {
                            if dhi <= a || dlo >= b {
                                vec![(a, b)]
                            } else {
                                [(a, dlo), (dhi, b)].into_iter().filter(|(x, y)| y - x > 1e-6).collect()
                            }
                        })
                        .collect();
                }
                for (a, b) in pieces {
                    out.push(if key.0 {
                        Segment2D::from_coords(*coord, a, *coord, b)
                    } else {
                        Segment2D::from_coords(a, *coord, b, *coord)
                    });
                }
            }
        }
        out
    }
}

/// Clearance kept between a door and the corner of its wall, meters.
const DOOR_MARGIN: f64 = 0.3;

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

/// Places one door (sometimes two) on sides of `room` that face a
/// corridor. Returns false if no side has room for a door.
fn add_doors(walls: &mut WallSet, room: &Bounds, corridors: &[Bounds], gap: f64, rng: &mut ChaCha8Rng) -> bool {
    // (vertical, line coordinate, usable interval)
    let mut contacts: Vec<(bool, f64, f64, f64)> = Vec::new();
    for c in corridors {
        let ylo = room.min.y.max(c.min.y);
        let yhi = room.max.y.min(c.max.y);
        let xlo = room.min.x.max(c.min.x);
        let xhi = room.max.x.min(c.max.x);
        if near(c.max.x, room.min.x) && yhi > ylo {
            contacts.push((true, room.min.x, ylo, yhi));
        }
        if near(c.min.x, room.max.x) && yhi > ylo {
            contacts.push((true, room.max.x, ylo, yhi));
        }
        if near(c.max.y, room.min.y) && xhi > xlo {
            contacts.push((false, room.min.y, xlo, xhi));
        }
        if near(c.min.y, room.max.y) && xhi > xlo {
            contacts.push((false, room.max.y, xlo, xhi));
        }
    }
    contacts.retain(|&(_, _, lo, hi)| hi - lo >= gap + 2.0 * DOOR_MARGIN);
    if contacts.is_empty() {
        return false;
    }
    let n_doors = if contacts.len() > 1 && rng.random_bool(0.25) { 2 } else { 1 };
    for &(vertical, coord, lo, hi) in contacts.choose_multiple(rng, n_doors) {
        let c = rng.random_range(lo + DOOR_MARGIN + gap / 2.0..=hi - DOOR_MARGIN - gap / 2.0);
        walls.door(vertical, coord, c - gap / 2.0, c + gap / 2.0);
    }
    true
}

/// Cuts `[lo, hi]` into pieces between `min_len` and `max_len` long.
fn partition(lo: f64, hi: f64, min_len: f64, max_len: f64, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut a = lo;
    while hi - a > max_len {
        let room = hi - a - min_len;
        let len = rng.random_range(min_len..=max_len.min(room).max(min_len));
        out.push((a, a + len));
        a += len;
    }
    out.push((a, hi));
    out
}

/// Corridor positions along `[0, extent]`: `n` corridors of width `cw` at
/// jittered, irregular spacing, keeping every block at least `min_block`.
fn corridor_offsets(extent: f64, n: usize, cw: f64, min_block: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let spacing = extent / (n + 1) as f64;
    let mut xs = Vec::with_capacity(n);
    let mut prev_end = 0.0;
    for i in 0..n {
        let base = spacing * (i + 1) as f64 - cw / 2.0;
        let jitter = rng.random_range(-0.3..=0.3) * spacing;
        let remaining_after = (n - i) as f64 * min_block + (n - i - 1) as f64 * cw;
        let x = (base + jitter).max(prev_end + min_block).min(extent - cw - remaining_after);
        xs.push(x);
        prev_end = x + cw;
    }
    xs
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Bounds {
    Bounds::new(Point2::new(x0, y0), Point2::new(x1, y1))
}

fn corridor_grid_layout(spec: &WorldSpec, rng: &mut ChaCha8Rng) -> (Vec<Bounds>, Vec<Bounds>) {
    let [w, h] = spec.extents;
    let cw = spec.corridor_width;
    let nx = ((w / 15.0).round() as usize).max(1);
    let ny = ((h / 12.0).round() as usize).max(1);
    let xs = corridor_offsets(w, nx, cw, 3.5, rng);
    let ys = corridor_offsets(h, ny, cw, 3.5, rng);
    let mut corridors: Vec<Bounds> = xs.iter().map(|&x| rect(x, 0.0, x + cw, h)).collect();
    corridors.extend(ys.iter().map(|&y| rect(0.0, y, w, y + cw)));
    let spans = |cuts: &[f64], extent: f64| {
        let mut v = Vec::new();
        let mut a = 0.0;
        for &c in cuts {
            v.push((a, c));
            a = c + cw;
        }
        v.push((a, extent));
        v
    };
    let mut rooms = Vec::new();
    for &(x0, x1) in &spans(&xs, w) {
        for &(y0, y1) in &spans(&ys, h) {
            if x1 - x0 >= y1 - y0 {
                for (a, b) in partition(x0, x1, 3.5, 7.0, rng) {
                    rooms.push(rect(a, y0, b, y1));
                }
            } else {
                for (a, b) in partition(y0, y1, 3.5, 7.0, rng) {
                    rooms.push(rect(x0, a, x1, b));
                }
            }
        }
    }
    (corridors, rooms)
}

fn rooms_off_corridor_layout(spec: &WorldSpec, rng: &mut ChaCha8Rng) -> (Vec<Bounds>, Vec<Bounds>) {
    let [w, h] = spec.extents;
    let cw = spec.corridor_width;
    let yc = rng.random_range(0.35 * h..=(0.65 * h - cw).max(0.35 * h));
    // The main corridor may stop short of the east wall; an end room fills
    // the rest.
    let xe = if w > 20.0 && rng.random_bool(0.6) { w - rng.random_range(4.0..=7.0) } else { w };
    let mut corridors = vec![rect(0.0, yc, xe, yc + cw)];
    let xb = rng.random_range(0.25 * xe..=0.75 * xe - cw);
    corridors.push(rect(xb, yc + cw, xb + cw, h));
    let mut lower_cut = None;
    if rng.random_bool(0.5) {
        let candidates: Vec<f64> = (0..20)
            .map(|_| rng.random_range(0.15 * xe..=0.85 * xe - cw))
            .filter(|x| (x - xb).abs() > 6.0)
            .collect();
        if let Some(&x) = candidates.first() {
            corridors.push(rect(x, 0.0, x + cw, yc));
            lower_cut = Some(x);
        }
    }
    let mut rooms = Vec::new();
    let strip = |lo: f64, hi: f64, cut: Option<f64>| -> Vec<(f64, f64)> {
        match cut {
            Some(x) => vec![(lo, x), (x + cw, hi)],
            None => vec![(lo, hi)],
        }
    };
    for (a, b) in strip(0.0, xe, lower_cut) {
        for (x0, x1) in partition(a, b, 3.0, 6.5, rng) {
            rooms.push(rect(x0, 0.0, x1, yc));
        }
    }
    for (a, b) in strip(0.0, xe, Some(xb)) {
        for (x0, x1) in partition(a, b, 3.0, 6.5, rng) {
            rooms.push(rect(x0, yc + cw, x1, h));
        }
    }
    if xe < w {
        rooms.push(rect(xe, 0.0, w, h));
    }
    (corridors, rooms)
}

/// Builds the building for `spec`; deterministic per seed.
pub fn generate_layout(spec: &WorldSpec) -> Result<Layout> {
    spec.validate()?;
    let [w, h] = spec.extents;
    let bounds = rect(0.0, 0.0, w, h);
    for attempt in 0..16u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        let (corridors, rooms) = match spec.generator {
            Generator::CorridorGrid => corridor_grid_layout(spec, &mut rng),
            Generator::RoomsOffCorridor => rooms_off_corridor_layout(spec, &mut rng),
            Generator::Custom => {
                return Err(Error::Validation("custom worlds are loaded from a plan file, not generated".into()))
            }
        };
        let mut walls = WallSet::default();
        walls.add_rect(&bounds);
        let mut ok = true;
        for r in &rooms {
            walls.add_rect(r);
            ok &= add_doors(&mut walls, r, &corridors, spec.door_gap, &mut rng);
        }
        if !ok {
            continue;
        }
        let name = match spec.generator {
            Generator::CorridorGrid => "corridor_grid",
            _ => "rooms_off_corridor",
        };
        let plan = FloorPlan::new(format!("{name}-{}", spec.seed), walls.build(), bounds)?;
        if free_space_components(&plan, 0.1) == 1 {
            return Ok(Layout { plan, corridors, rooms });
        }
    }
    Err(Error::Validation("could not generate a connected layout".into()))
}

pub fn generate_world(spec: &WorldSpec) -> Result<FloorPlan> {
    if spec.generator == Generator::Custom {
        let path = spec
            .plan_file
            .as_deref()
            .ok_or_else(|| Error::Validation("custom world needs plan_file".into()))?;
        return FloorPlan::load(path);
    }
    generate_layout(spec).map(|l| l.plan)
}

/// Number of 4-connected free-cell components inside the plan bounds at the
/// given raster resolution.
pub fn free_space_components(plan: &FloorPlan, resolution: f64) -> usize {
    let spec = plan_grid_spec(&plan.bounds, resolution, 0).expect("positive resolution");
    let raster = rasterize_segments(&plan.walls, spec);
    let (w, h) = (spec.width, spec.height);
    let inside = |i: usize, j: usize| plan.bounds.contains(spec.cell_center(i as i64, j as i64));
    let mut seen = vec![false; w * h];
    let mut components = 0;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        let (si, sj) = (start % w, start / w);
        if seen[start] || raster.values[start] != 0.0 || !inside(si, sj) {
            continue;
        }
        components += 1;
        seen[start] = true;
        queue.push_back((si, sj));
        while let Some((i, j)) = queue.pop_front() {
            let nbrs = [
                (i.wrapping_sub(1), j),
                (i + 1, j),
                (i, j.wrapping_sub(1)),
                (i, j + 1),
            ];
            for (ni, nj) in nbrs {
                if ni >= w || nj >= h {
                    continue;
                }
                let k = nj * w + ni;
                if !seen[k] && raster.values[k] == 0.0 && inside(ni, nj) {
                    seen[k] = true;
                    queue.push_back((ni, nj));
                }
            }
        }
    }
    components
}

/// Distance along the ray `origin + t·dir` (unit `dir`) to the first wall,
/// with the wall's index.
pub fn ray_hit(walls: &[Segment2D], origin: Point2, dir: Point2) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (k, w) in walls.iter().enumerate() {
        let e = w.b - w.a;
        let denom = dir.cross(e);
        if denom.abs() < 1e-15 {
            continue;
        }
        let q = w.a - origin;
        let t = q.cross(e) / denom;
        let u = q.cross(dir) / denom;
        if t >= 0.0 && (-1e-12..=1.0 + 1e-12).contains(&u) && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, k));
        }
    }
    best
}

fn ray_free(walls: &[Segment2D], origin: Point2, dir: Point2) -> f64 {
    ray_hit(walls, origin, dir).map_or(f64::INFINITY, |h| h.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanParams {
    pub max_range: f64,
    pub n_rays: usize,
    /// Endpoint noise, meters (std per coordinate).
    pub endpoint_noise: f64,
    /// Probability of dropping each recovered segment.
    pub dropout: f64,
    pub min_segment_length: f64,
}

impl Default for ScanParams {
    fn default() -> Self {
        ScanParams {
            max_range: crate::scan::DEFAULT_MAX_RANGE,
            n_rays: 720,
            endpoint_noise: 0.0,
            dropout: 0.0,
            min_segment_length: 0.3,
        }
    }
}

/// Simulated 360° scan at `position`. Consecutive rays hitting the same
/// wall form one segment. The result is in the scan frame:
/// `local = R(heading) · (world - position)`.
pub fn raycast_scan(
    plan: &FloorPlan,
    position: Point2,
    heading: Angle,
    params: &ScanParams,
    rng: &mut ChaCha8Rng,
) -> Result<Observation> {
    if !plan.bounds.contains(position) || plan.wall_clearance(position) < 1e-6 {
        return Err(Error::PoseInWall { x: position.x, y: position.y });
    }
    let n = params.n_rays.max(3);
    let hits: Vec<Option<(usize, Point2)>> = (0..n)
        .map(|r| {
            let a = std::f64::consts::TAU * r as f64 / n as f64;
            let dir = Point2::new(a.cos(), a.sin());
            ray_hit(&plan.walls, position, dir)
                .filter(|(t, _)| *t <= params.max_range)
                .map(|(t, k)| (k, position + dir * t))
        })
        .collect();
    // Runs of equal wall ids, merging the run that wraps past ray 0.
    let mut runs: Vec<(usize, Point2, Point2)> = Vec::new();
    let mut prev: Option<usize> = None;
    for h in &hits {
        match (h, prev) {
            (Some((k, p)), Some(pk)) if *k == pk => runs.last_mut().unwrap().2 = *p,
            (Some((k, p)), _) => runs.push((*k, *p, *p)),
            (None, _) => {}
        }
        prev = h.map(|x| x.0);
    }
    if runs.len() > 1 {
        if let (Some((k0, _)), Some((kn, _))) = (hits[0], hits[n - 1]) {
            if k0 == kn {
                let first = runs.remove(0);
                runs.last_mut().unwrap().2 = first.2;
            }
        }
    }
    let mut segs = Vec::new();
    for (_, a, b) in runs {
        if params.dropout > 0.0 && rng.random_bool(params.dropout.min(1.0)) {
            continue;
        }
        let mut la = (a - position).rotated(heading);
        let mut lb = (b - position).rotated(heading);
        if params.endpoint_noise > 0.0 {
            let mut jitter = || Point2::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * params.endpoint_noise;
            la += jitter();
            lb += jitter();
        }
        if let Ok(s) = Segment2D::new(la, lb) {
            segs.push(s);
        }
    }
    Observation::from_raw(&segs, params.max_range, params.min_segment_length)
}

/// Alignment angle the pipeline should recover for a scan taken at
/// `heading`.
pub fn true_theta(heading: Angle) -> Angle {
    alignment_angle(heading, Angle::ZERO)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub t: f64,
    pub position: Point2,
    pub heading: Angle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrace {
    pub poses: Vec<Pose>,
    pub observation_point: Point2,
    pub true_theta: Angle,
}

impl TruthTrace {
    pub fn path_length(&self) -> f64 {
        self.poses.windows(2).map(|w| w[0].position.distance(w[1].position)).sum()
    }

    /// Path length walked up to each pose.
    pub fn cumulative_length(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.poses.len());
        out.push(0.0);
        for w in self.poses.windows(2) {
            acc += w[0].position.distance(w[1].position);
            out.push(acc);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# format: {TRUTH_FORMAT}\n# true_theta_deg: {}\nt,x,y,heading_deg\n",
            self.true_theta.signed_degrees()
        );
        for p in &self.poses {
            out.push_str(&format!("{},{},{},{}\n", p.t, p.position.x, p.position.y, p.heading.degrees()));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let first = lines.next().unwrap_or("");
        if first.trim().trim_start_matches('#').trim() != format!("format: {TRUTH_FORMAT}") {
            return Err(Error::Parse(format!("expected header 'format: {TRUTH_FORMAT}'")));
        }
        let mut theta = Angle::ZERO;
        let mut body = String::new();
        for line in lines {
            if let Some(v) = line.trim().strip_prefix("# true_theta_deg:") {
                theta = Angle::from_degrees(v.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?);
            } else if !line.trim_start().starts_with('#') {
                body.push_str(line);
                body.push('\n');
            }
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
        let mut poses = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let f = |k: usize| row[k].parse::<f64>().map_err(|e| Error::Parse(e.to_string()));
            poses.push(Pose {
                t: f(0)?,
                position: Point2::new(f(1)?, f(2)?),
                heading: Angle::from_degrees(f(3)?),
            });
        }
        let first = poses.first().ok_or_else(|| Error::Parse("truth trace has no poses".into()))?;
        Ok(TruthTrace {
            observation_point: first.position,
            poses,
            true_theta: theta,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_csv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkParams {
    /// Meters per second.
    pub speed: f64,
    /// Steps per second.
    pub step_rate: f64,
    /// Closest the walker gets to a wall ahead, meters.
    pub margin: f64,
    /// Chance of taking a side corridor at a junction.
    pub turn_probability: f64,
    /// Side openings at least this wide count as corridors, meters.
    pub min_opening: f64,
    /// Chance that a junction choice heads for the current destination
    /// instead of following `turn_probability`.
    pub goal_bias: f64,
}

impl Default for WalkParams {
    fn default() -> Self {
        WalkParams {
            speed: 1.2,
            step_rate: 10.0,
            margin: 0.35,
            turn_probability: 0.5,
            min_opening: 1.5,
            goal_bias: 0.8,
        }
    }
}

/// Side distance beyond which the walker sees an opening, meters.
const OPEN_SIDE: f64 = 2.5;

struct Walker<'a> {
    walls: &'a [Segment2D],
    index: CollisionIndex,
    dirs: [Point2; 4],
    p: WalkParams,
}

impl Walker<'_> {
    fn free(&self, at: Point2, k: usize) -> f64 {
        ray_free(self.walls, at, self.dirs[k % 4])
    }

    /// Extent of the side opening around `pos` along direction `k`, as
    /// offsets `(start, end)` relative to `pos`, or `None` if `pos` is not
    /// beside an opening.
    fn opening(&self, pos: Point2, k: usize, side: usize) -> Option<(f64, f64)> {
        let d = self.dirs[k];
        let open = |o: f64| self.free(pos + d * o, side) > OPEN_SIDE;
        if !open(0.0) {
            return None;
        }
        let step = 0.05;
        let mut start = 0.0;
        while start > -6.0 && open(start - step) {
            start -= step;
        }
        let ahead = self.free(pos, k);
        let mut end = 0.0;
        while end < 6.0f64.min(ahead) && open(end + step) {
            end += step;
        }
        Some((start, end))
    }

    /// Free distance ahead for a body `min_opening` wide: rays from both
    /// flanks catch door-sized gaps that the center ray slips through.
    fn passable_ahead(&self, pos: Point2, k: usize) -> f64 {
        let left = self.dirs[(k + 1) % 4];
        let half = self.p.min_opening / 2.0;
        let ol = half.min(0.9 * self.free(pos, k + 1));
        let or = half.min(0.9 * self.free(pos, k + 3));
        self.free(pos, k)
            .min(self.free(pos + left * ol, k))
            .min(self.free(pos - left * or, k))
    }
}

/// Corridor-following walk from `start`. At junctions the walker usually
/// takes the branch pointing toward a random destination, which is
/// replaced when reached; otherwise it turns with `turn_probability`.
/// Blocked, it turns into a side corridor or reverses.
pub fn generate_walk(plan: &FloorPlan, start: Point2, length: f64, seed: u64) -> Result<TruthTrace> {
    generate_walk_with(plan, start, length, &WalkParams::default(), seed)
}

pub fn generate_walk_with(plan: &FloorPlan, start: Point2, length: f64, params: &WalkParams, seed: u64) -> Result<TruthTrace> {
    if !plan.bounds.contains(start) || plan.wall_clearance(start) < params.margin.min(0.2) {
        return Err(Error::PoseInWall { x: start.x, y: start.y });
    }
    let po = plan.principal_orientation();
    let dirs = std::array::from_fn(|k| Point2::new(1.0, 0.0).rotated(po + Angle::from_degrees(90.0 * k as f64)));
    let walker = Walker {
        walls: &plan.walls,
        index: CollisionIndex::new(plan),
        dirs,
        p: *params,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = walker.p.speed / walker.p.step_rate;
    let dt = 1.0 / walker.p.step_rate;

    let open: Vec<usize> = (0..4).filter(|k| walker.passable_ahead(start, *k) > 1.5).collect();
    let mut k = match open.choose(&mut rng) {
        Some(k) => *k,
        None => (0..4)
            .max_by(|a, b| walker.passable_ahead(start, *a).total_cmp(&walker.passable_ahead(start, *b)))
            .unwrap(),
    };
    let mut pos = start;
    let mut t = 0.0;
    let mut walked = 0.0;
    let mut poses = vec![Pose { t, position: pos, heading: po + Angle::from_degrees(90.0 * k as f64) }];
    // Distance to travel before the next junction decision.
    let mut cooldown = 1.0;
    let mut pending: Option<(usize, f64)> = None;
    let mut stuck = 0;
    let b = plan.bounds;
    let far = 0.4 * (b.width().powi(2) + b.height().powi(2)).sqrt();
    let new_goal = |rng: &mut ChaCha8Rng, from: Point2| loop {
        let g = Point2::new(rng.random_range(b.min.x..=b.max.x), rng.random_range(b.min.y..=b.max.y));
        if g.distance(from) >= far {
            break g;
        }
    };
    let mut goal = new_goal(&mut rng, pos);
    let mut goal_walked = 0.0;
    // Prefers the direction most aligned with the destination.
    let toward = |cands: &[usize], pos: Point2, goal: Point2| -> usize {
        let g = goal - pos;
        *cands.iter().max_by(|a, b| walker.dirs[**a].dot(g).total_cmp(&walker.dirs[**b].dot(g))).unwrap()
    };

    while walked < length {
        if pos.distance(goal) < 4.0 || goal_walked > 2.0 * far {
            goal = new_goal(&mut rng, pos);
            goal_walked = 0.0;
        }
        if let Some((nk, remaining)) = pending {
            if remaining <= step / 2.0 {
                k = nk;
                pending = None;
                cooldown = 1.5;
            }
        }
        let d = walker.dirs[k];
        let left = walker.dirs[(k + 1) % 4];
        let ahead = walker.passable_ahead(pos, k);
        if ahead < walker.p.margin + step {
            // Misaligned with a corridor-wide gap ahead: sidestep toward its
            // middle instead of turning.
            if walker.free(pos, k) > ahead + 0.3 {
                let q = pos + d * (ahead + 0.05);
                let (gl, gr) = (walker.free(q, k + 1), walker.free(q, k + 3));
                if gl + gr >= walker.p.min_opening {
                    let shift = ((gl - gr) / 2.0).clamp(-step, step);
                    let next = pos + left * shift;
                    if shift.abs() > 1e-6 && !walker.index.path_hits_wall(pos, next) {
                        walked += shift.abs();
                        t += dt;
                        pos = next;
                        poses.push(Pose { t, position: pos, heading: po + Angle::from_degrees(90.0 * k as f64) });
                        continue;
                    }
                }
            }
            let sides: Vec<usize> = [(k + 1) % 4, (k + 3) % 4]
                .into_iter()
                .filter(|s| walker.opening(pos, k, *s).is_some_and(|(a, b)| b - a >= walker.p.min_opening))
                .collect();
            k = if sides.is_empty() {
                (k + 2) % 4
            } else if rng.random_bool(walker.p.goal_bias) {
                toward(&sides, pos, goal)
            } else {
                *sides.choose(&mut rng).unwrap()
            };
            pending = None;
            cooldown = 1.5;
            stuck += 1;
            if stuck > 8 {
                return Err(Error::Validation(format!("walker is trapped near {:.2},{:.2}", pos.x, pos.y)));
            }
            continue;
        }
        stuck = 0;

        let fl = walker.free(pos, (k + 1) % 4);
        let fr = walker.free(pos, (k + 3) % 4);
        let lateral = if fl < OPEN_SIDE && fr < OPEN_SIDE {
            (0.25 * (fl - fr) / 2.0).clamp(-0.03, 0.03)
        } else {
            0.0
        };

        if cooldown <= 0.0 && pending.is_none() {
            let mut sides = [(k + 1) % 4, (k + 3) % 4];
            if rng.random_bool(0.5) {
                sides.swap(0, 1);
            }
            let openings: Vec<(usize, f64, f64)> = sides
                .into_iter()
                .filter_map(|s| walker.opening(pos, k, s).map(|(a, b)| (s, a, b)))
                .filter(|(_, a, b)| b - a >= walker.p.min_opening)
                .collect();
            if !openings.is_empty() {
                cooldown = openings.iter().map(|o| o.2).fold(0.0, f64::max) + 0.5;
                let pick = if rng.random_bool(walker.p.goal_bias) {
                    let mut cands: Vec<usize> = openings.iter().map(|o| o.0).collect();
                    if ahead > 2.0 {
                        cands.insert(0, k);
                    }
                    let best = toward(&cands, pos, goal);
                    openings.iter().find(|o| o.0 == best)
                } else {
                    openings.first().filter(|_| rng.random_bool(walker.p.turn_probability))
                };
                if let Some(&(s, a, b)) = pick {
                    pending = Some((s, (a + b) / 2.0));
                }
            }
        }

        let mut next = pos + d * step + left * lateral;
        if walker.index.path_hits_wall(pos, next) || plan.wall_clearance(next) < 0.15 {
            next = pos + d * step;
            if walker.index.path_hits_wall(pos, next) || plan.wall_clearance(next) < 0.15 {
                k = (k + 2) % 4;
                pending = None;
                continue;
            }
        }
        let moved = pos.distance(next);
        walked += moved;
        goal_walked += moved;
        t += dt;
        pos = next;
        cooldown -= moved;
        if let Some((nk, remaining)) = pending {
            pending = Some((nk, remaining - moved));
        }
        poses.push(Pose { t, position: pos, heading: po + Angle::from_degrees(90.0 * k as f64) });
    }
    Ok(TruthTrace {
        poses,
        observation_point: start,
        true_theta: Angle::ZERO,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdometryNoise {
    /// Per-step displacement noise as a fraction of the step length (std).
    pub step_noise_frac: f64,
    /// Extra heading error accumulated linearly along the path, degrees.
    pub heading_drift_total_deg: f64,
}

impl Default for OdometryNoise {
    fn default() -> Self {
        OdometryNoise {
            step_noise_frac: 0.01,
            heading_drift_total_deg: 0.0,
        }
    }
}

/// Local-frame odometry for a truth trace: each world displacement is
/// rotated by the heading error (`drift_deg` plus the linear drift term at
/// that point of the path) and perturbed by step noise. Summing the deltas
/// from the start with no correction gives the truth rotated by the error.
pub fn corrupt_odometry(truth: &TruthTrace, drift_deg: f64, noise: &OdometryNoise, seed: u64) -> Vec<OdometryStep> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cum = truth.cumulative_length();
    let total = cum.last().copied().unwrap_or(0.0).max(1e-12);
    let error_at = |i: usize| drift_deg + noise.heading_drift_total_deg * cum[i] / total;
    truth
        .poses
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let world = w[1].position - w[0].position;
            let e = error_at(i);
            let mut local = world.rotated(Angle::from_degrees(e));
            if noise.step_noise_frac > 0.0 {
                let s = noise.step_noise_frac * world.norm();
                local += Point2::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * s;
            }
            let turn = (w[1].heading - w[0].heading).signed_degrees() + (error_at(i + 1) - e);
            OdometryStep::new(w[1].t, local, Angle::from_degrees(turn))
        })
        .collect()
}

/// Reference trajectory for a recorded trace: a particle filter seeded at
/// the known start pose with the known drift, reporting its mean each
/// step (including the start).
pub fn truth_from_recorded(
    plan: &FloorPlan,
    steps: &[OdometryStep],
    start: Point2,
    drift: Angle,
    cfg: &FilterConfig,
) -> Result<Vec<Point2>> {
    let particles = vec![Particle::new(start, drift, Some(0)); cfg.n_particles.max(1)];
    let mut f = ParticleFilter::new(particles, *cfg, ChaCha8Rng::seed_from_u64(cfg.rng_seed))?;
    let index = CollisionIndex::new(plan);
    let mut out = vec![start];
    for s in steps {
        f.step(s, &index)?;
        out.push(mean_position(&f.particles));
    }
    Ok(out)
}
