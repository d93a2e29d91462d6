//! Labeled particle filter. Particles carry a position, an angular drift
//! that rotates local odometry into the world frame, and the orientation
//! group they were seeded from. There is no measurement update: particles
//! whose motion crosses a wall die and are replaced by copies of survivors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floorplan::{Bounds, CollisionIndex};
use crate::geometry::{Angle, Point2};
use crate::heatmap::CandidateMask;
use crate::odometry::OdometryStep;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub n_particles: usize,
    /// Position noise added to a replacement, meters (std).
    pub resample_pos_noise: f64,
    /// Drift noise added to a replacement, degrees (std).
    pub resample_drift_noise: f64,
    /// Per-step position noise, meters (std per axis).
    pub step_pos_noise: f64,
    /// Per-step drift random walk, degrees (std).
    pub step_drift_noise: f64,
    pub rng_seed: u64,
    /// Split particles evenly over the non-empty masks instead of by area.
    pub equal_groups: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            n_particles: 2000,
            resample_pos_noise: 0.10,
            resample_drift_noise: 2.0,
            step_pos_noise: 0.02,
            step_drift_noise: 0.0,
            rng_seed: 0,
            equal_groups: false,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::Validation("n_particles must be >= 1".into()));
        }
        let noises = [
            self.resample_pos_noise,
            self.resample_drift_noise,
            self.step_pos_noise,
            self.step_drift_noise,
        ];
        if noises.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Validation("noise levels must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub position: Point2,
    drift: Angle,
    /// Orientation group; `None` for the unlabeled uniform baseline.
    pub label: Option<usize>,
    cos: f64,
    sin: f64,
}

impl Particle {
    pub fn new(position: Point2, drift: Angle, label: Option<usize>) -> Self {
        let (sin, cos) = drift.radians().sin_cos();
        Particle { position, drift, label, cos, sin }
    }

    pub fn drift(&self) -> Angle {
        self.drift
    }

    pub fn set_drift(&mut self, drift: Angle) {
        *self = Particle::new(self.position, drift, self.label);
    }

    /// Local odometry displacement expressed in the world frame.
    #[inline]
    pub fn world_delta(&self, local: Point2) -> Point2 {
        Point2::new(self.cos * local.x - self.sin * local.y, self.sin * local.x + self.cos * local.y)
    }
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        sigma * rng.sample::<f64, _>(StandardNormal)
    }
}

/// Particles spread at constant density over the union of all true mask
/// cells whose centers lie inside `bounds`. Group `k` gets drift
/// `theta + k · 360°/N` exactly.
pub fn init_palms(
    mask: &CandidateMask,
    theta: Angle,
    bounds: &Bounds,
    cfg: &FilterConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Particle>> {
    cfg.validate()?;
    let n_maps = mask.masks.len();
    let cells: Vec<Vec<(usize, usize)>> = mask
        .masks
        .iter()
        .map(|m| {
            m.true_cells()
                .filter(|&(i, j)| bounds.contains(m.spec.cell_center(i as i64, j as i64)))
                .collect()
        })
        .collect();
    let total: usize = cells.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::NoCandidates);
    }
    let drifts: Vec<Angle> = (0..n_maps)
        .map(|k| theta + Angle::fraction_of_turn(k, n_maps))
        .collect();
    let nonempty: Vec<usize> = (0..n_maps).filter(|k| !cells[*k].is_empty()).collect();
    let mut out = Vec::with_capacity(cfg.n_particles);
    for p in 0..cfg.n_particles {
        let (k, idx) = if cfg.equal_groups {
            let k = nonempty[p % nonempty.len()];
            (k, rng.random_range(0..cells[k].len()))
        } else {
            let mut r = rng.random_range(0..total);
            let mut k = 0;
            while r >= cells[k].len() {
                r -= cells[k].len();
                k += 1;
            }
            (k, r)
        };
        let spec = mask.masks[k].spec;
        let (i, j) = cells[k][idx];
        let corner = spec.origin + Point2::new(i as f64, j as f64) * spec.resolution;
        // Keep clear of the cell edges so the sample maps back to its cell.
        let u = |r: f64| 1e-6 + r * (1.0 - 2e-6);
        let pos = corner + Point2::new(u(rng.random()), u(rng.random())) * spec.resolution;
        let pos = Point2::new(pos.x.clamp(bounds.min.x, bounds.max.x), pos.y.clamp(bounds.min.y, bounds.max.y));
        out.push(Particle::new(pos, drifts[k], Some(k)));
    }
    Ok(out)
}

fn uniform_position(bounds: &Bounds, rng: &mut ChaCha8Rng) -> Point2 {
    Point2::new(
        bounds.min.x + rng.random::<f64>() * bounds.width(),
        bounds.min.y + rng.random::<f64>() * bounds.height(),
    )
}

/// Uniform positions over the plan bounds, uniform drift, unlabeled.
pub fn init_uniform(bounds: &Bounds, cfg: &FilterConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Particle>> {
    cfg.validate()?;
    Ok((0..cfg.n_particles)
        .map(|_| {
            let p = uniform_position(bounds, rng);
            Particle::new(p, Angle::from_radians(rng.random::<f64>() * std::f64::consts::TAU), None)
        })
        .collect())
}

/// Uniform positions, groups of equal size (±1) with drifts
/// `theta_est + k · 360°/N`.
pub fn init_uniform_ori(
    bounds: &Bounds,
    theta_est: Angle,
    n_orientations: usize,
    cfg: &FilterConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Particle>> {
    cfg.validate()?;
    if n_orientations == 0 {
        return Err(Error::Validation("n_orientations must be >= 1".into()));
    }
    Ok((0..cfg.n_particles)
        .map(|i| {
            let k = i % n_orientations;
            let p = uniform_position(bounds, rng);
            Particle::new(p, theta_est + Angle::fraction_of_turn(k, n_orientations), Some(k))
        })
        .collect())
}

/// Heading correction implied by the first `window` odometry steps, taking
/// the walker to start along one of the plan's principal directions.
pub fn estimate_theta(steps: &[OdometryStep], plan_principal: Angle, window: usize) -> Angle {
    match crate::odometry::net_heading(steps, window) {
        Some(local) => crate::geometry::alignment_angle(local, plan_principal),
        None => Angle::ZERO,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// `(dead, donor)` index pairs; the particle at `dead` is now a copy of
    /// the survivor that was at `donor`.
    pub replacements: Vec<(usize, usize)>,
}

impl StepReport {
    pub fn dead(&self) -> usize {
        self.replacements.len()
    }
}

/// A particle set with its own random stream.
#[derive(Debug, Clone)]
pub struct ParticleFilter {
    pub particles: Vec<Particle>,
    pub cfg: FilterConfig,
    pub rng: ChaCha8Rng,
    steps: usize,
    alive: Vec<bool>,
    survivors: Vec<usize>,
}

impl ParticleFilter {
    pub fn new(particles: Vec<Particle>, cfg: FilterConfig, rng: ChaCha8Rng) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::Validation("particle filter needs at least one particle".into()));
        }
        Ok(ParticleFilter {
            particles,
            cfg,
            rng,
            steps: 0,
            alive: Vec::new(),
            survivors: Vec::new(),
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    /// Moves every particle by its drift-rotated odometry delta. Particles
    /// whose path crosses a wall or leaves the plan die; each is replaced by
    /// a noisy copy of a uniformly drawn survivor.
    pub fn step(&mut self, odo: &OdometryStep, index: &CollisionIndex) -> Result<StepReport> {
        let cfg = self.cfg;
        let bounds = *index.bounds();
        self.alive.clear();
        self.survivors.clear();
        for (i, p) in self.particles.iter_mut().enumerate() {
            if cfg.step_drift_noise > 0.0 {
                let d = p.drift + Angle::from_degrees(gauss(&mut self.rng, cfg.step_drift_noise));
                p.set_drift(d);
            }
            let noise = Point2::new(gauss(&mut self.rng, cfg.step_pos_noise), gauss(&mut self.rng, cfg.step_pos_noise));
            let to = p.position + p.world_delta(odo.delta) + noise;
            let ok = bounds.contains(to) && !index.path_hits_wall(p.position, to);
            if ok {
                p.position = to;
                self.survivors.push(i);
            }
            self.alive.push(ok);
        }
        self.steps += 1;
        if self.survivors.is_empty() {
            return Err(Error::FilterCollapsed { step: self.steps });
        }
        let mut report = StepReport::default();
        for i in 0..self.particles.len() {
            if self.alive[i] {
                continue;
            }
            let donor = self.survivors[self.rng.random_range(0..self.survivors.len())];
            let src = self.particles[donor];
            let pos = respawn_position(src.position, cfg.resample_pos_noise, index, &mut self.rng);
            let drift = src.drift + Angle::from_degrees(gauss(&mut self.rng, cfg.resample_drift_noise));
            self.particles[i] = Particle::new(pos, drift, src.label);
            report.replacements.push((i, donor));
        }
        Ok(report)
    }
}

/// Noisy copy of a donor position that stays on the donor's side of every
/// wall; falls back to the donor position after a few tries.
fn respawn_position(donor: Point2, sigma: f64, index: &CollisionIndex, rng: &mut ChaCha8Rng) -> Point2 {
    if sigma == 0.0 {
        return donor;
    }
    for _ in 0..4 {
        let p = donor + Point2::new(gauss(rng, sigma), gauss(rng, sigma));
        if index.bounds().contains(p) && !index.path_hits_wall(donor, p) {
            return p;
        }
    }
    donor
}

pub fn mean_position(particles: &[Particle]) -> Point2 {
    let n = particles.len().max(1) as f64;
    particles.iter().fold(Point2::ORIGIN, |acc, p| acc + p.position) * (1.0 / n)
}
