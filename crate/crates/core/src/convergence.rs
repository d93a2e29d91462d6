//! Two-step convergence: first one orientation label must dominate the
//! particle set, then the dominant-label particles must form one dominant
//! mean-shift cluster. After that the cluster is re-estimated periodically
//! and its center is the predicted location.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{mean_position, Particle};
use crate::geometry::Point2;

/// Slack for inclusive share comparisons.
const SHARE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceParams {
    pub label_dominance: f64,
    pub cluster_dominance: f64,
    /// Flat mean-shift kernel radius, meters.
    pub meanshift_bandwidth: f64,
    /// Steps between cluster re-estimates once converged.
    pub cluster_update_period: usize,
    /// RMS spread below which the unlabeled baseline passes step 1, meters.
    pub uniform_dispersion_threshold: f64,
}

impl Default for ConvergenceParams {
    fn default() -> Self {
        ConvergenceParams {
            label_dominance: 0.80,
            cluster_dominance: 0.50,
            meanshift_bandwidth: 1.0,
            cluster_update_period: 20,
            uniform_dispersion_threshold: 5.0,
        }
    }
}

impl ConvergenceParams {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        if !frac(self.label_dominance) || !frac(self.cluster_dominance) {
            return Err(Error::Validation("dominance fractions must be in (0, 1]".into()));
        }
        if !(self.meanshift_bandwidth > 0.0 && self.meanshift_bandwidth.is_finite()) {
            return Err(Error::Validation("meanshift_bandwidth must be > 0".into()));
        }
        if self.cluster_update_period == 0 {
            return Err(Error::Validation("cluster_update_period must be >= 1".into()));
        }
        if !(self.uniform_dispersion_threshold >= 0.0) {
            return Err(Error::Validation("uniform_dispersion_threshold must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Searching,
    LabelDominant,
    Converged,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Searching => "searching",
            Phase::LabelDominant => "label_dominant",
            Phase::Converged => "converged",
        }
    }
}

fn share_reaches(count: usize, total: usize, fraction: f64) -> bool {
    count as f64 >= fraction * total as f64 - SHARE_EPS
}

/// Plurality label and its share; ties go to the lowest label. `None` when
/// no particle is labeled.
pub fn dominant_label(particles: &[Particle]) -> Option<(usize, f64)> {
    let mut counts: Vec<usize> = Vec::new();
    for p in particles {
        if let Some(k) = p.label {
            if k >= counts.len() {
                counts.resize(k + 1, 0);
            }
            counts[k] += 1;
        }
    }
    let (mut best, mut best_n) = (None, 0);
    for (k, &n) in counts.iter().enumerate() {
        if n > best_n {
            best = Some(k);
            best_n = n;
        }
    }
    best.map(|k| (k, best_n as f64 / particles.len() as f64))
}

/// Whether one label holds at least `label_dominance` of the particles.
pub fn check_step1(particles: &[Particle], params: &ConvergenceParams) -> (bool, Option<usize>) {
    match dominant_label(particles) {
        Some((k, share)) => {
            let n = (share * particles.len() as f64).round() as usize;
            if share_reaches(n, particles.len(), params.label_dominance) {
                (true, Some(k))
            } else {
                (false, None)
            }
        }
        None => (false, None),
    }
}

pub fn rms_dispersion(points: &[Point2]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let n = points.len() as f64;
    let c = points.iter().fold(Point2::ORIGIN, |a, p| a + *p) * (1.0 / n);
    (points.iter().map(|p| (*p - c).dot(*p - c)).sum::<f64>() / n).sqrt()
}

/// Step 1 for unlabeled particles: RMS distance from the centroid is within
/// the dispersion threshold.
pub fn check_step1_dispersion(particles: &[Particle], params: &ConvergenceParams) -> bool {
    let pts: Vec<Point2> = particles.iter().map(|p| p.position).collect();
    rms_dispersion(&pts) <= params.uniform_dispersion_threshold + SHARE_EPS
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanShift {
    /// Cluster id per input point; clusters are ordered by size, largest
    /// first.
    pub assignment: Vec<usize>,
    pub modes: Vec<Point2>,
    pub sizes: Vec<usize>,
}

const SHIFT_TOL: f64 = 0.01;
const SHIFT_MAX_ITER: usize = 100;

struct PointBins<'a> {
    points: &'a [Point2],
    origin: Point2,
    size: f64,
    bins: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a> PointBins<'a> {
    fn new(points: &'a [Point2], size: f64) -> Self {
        // Anchor at the data's lower corner so results move with the data.
        let origin = points.iter().fold(Point2::new(f64::INFINITY, f64::INFINITY), |m, p| {
            Point2::new(m.x.min(p.x), m.y.min(p.y))
        });
        let mut bins: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        let mut this = PointBins {
            points,
            origin,
            size,
            bins: HashMap::new(),
        };
        for (i, p) in points.iter().enumerate() {
            bins.entry(this.key(*p)).or_default().push(i);
        }
        this.bins = bins;
        this
    }

    fn key(&self, p: Point2) -> (i64, i64) {
        (((p.x - self.origin.x) / self.size).floor() as i64, ((p.y - self.origin.y) / self.size).floor() as i64)
    }

    /// Mean of the points within `radius` of `c`, and how many there are.
    fn local_mean(&self, c: Point2, radius: f64) -> (Point2, usize) {
        let (ki, kj) = self.key(c);
        let r2 = radius * radius;
        let (mut sum, mut n) = (Point2::ORIGIN, 0usize);
        for dj in -1..=1 {
            for di in -1..=1 {
                if let Some(ids) = self.bins.get(&(ki + di, kj + dj)) {
                    for &i in ids {
                        let d = self.points[i] - c;
                        if d.dot(d) <= r2 {
                            sum += self.points[i];
                            n += 1;
                        }
                    }
                }
            }
        }
        if n == 0 {
            (c, 0)
        } else {
            (sum * (1.0 / n as f64), n)
        }
    }
}

/// Flat-kernel mean shift. Seeds are the centroids of the occupied
/// bandwidth-sized bins; each seed climbs to its mode, modes closer than
/// half a bandwidth merge (the better-supported one wins), and every point
/// joins its nearest mode. A cluster's reported mode is the mean of its own
/// members within one bandwidth of the climbed mode.
pub fn mean_shift(points: &[Point2], bandwidth: f64) -> MeanShift {
    if points.is_empty() {
        return MeanShift {
            assignment: Vec::new(),
            modes: Vec::new(),
            sizes: Vec::new(),
        };
    }
    let bins = PointBins::new(points, bandwidth);
    let mut keys: Vec<&(i64, i64)> = bins.bins.keys().collect();
    keys.sort();
    let mut climbed: Vec<(Point2, usize, usize)> = keys
        .iter()
        .enumerate()
        .map(|(seed_idx, k)| {
            let ids = &bins.bins[*k];
            let mut c = ids.iter().fold(Point2::ORIGIN, |a, &i| a + points[i]) * (1.0 / ids.len() as f64);
            let mut support = 0;
            for _ in 0..SHIFT_MAX_ITER {
                let (m, n) = bins.local_mean(c, bandwidth);
                support = n;
                let moved = m.distance(c);
                c = m;
                if moved < SHIFT_TOL {
                    break;
                }
            }
            (c, support, seed_idx)
        })
        .collect();
    climbed.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let mut kept: Vec<Point2> = Vec::new();
    for (c, _, _) in &climbed {
        if kept.iter().all(|k| k.distance(*c) > bandwidth / 2.0) {
            kept.push(*c);
        }
    }
    let nearest: Vec<usize> = points
        .iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (i, k) in kept.iter().enumerate() {
                let d = k.distance(*p);
                if d < best.1 {
                    best = (i, d);
                }
            }
            best.0
        })
        .collect();
    let mut sizes = vec![0usize; kept.len()];
    let mut sums = vec![(Point2::ORIGIN, 0usize); kept.len()];
    let mut all = vec![Point2::ORIGIN; kept.len()];
    for (p, &c) in points.iter().zip(&nearest) {
        sizes[c] += 1;
        all[c] += *p;
        if p.distance(kept[c]) <= bandwidth {
            sums[c].0 += *p;
            sums[c].1 += 1;
        }
    }
    let centers: Vec<Point2> = (0..kept.len())
        .map(|c| match sums[c] {
            (s, n) if n > 0 => s * (1.0 / n as f64),
            _ => all[c] * (1.0 / sizes[c].max(1) as f64),
        })
        .collect();
    // Drop empty clusters and order by size (stable, so support order
    // breaks ties).
    let mut order: Vec<usize> = (0..kept.len()).filter(|c| sizes[*c] > 0).collect();
    order.sort_by(|a, b| sizes[*b].cmp(&sizes[*a]));
    let mut rank = vec![usize::MAX; kept.len()];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    MeanShift {
        assignment: nearest.iter().map(|c| rank[*c]).collect(),
        modes: order.iter().map(|c| centers[*c]).collect(),
        sizes: order.iter().map(|c| sizes[*c]).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterCheck {
    pub converged: bool,
    pub center: Point2,
    /// Largest cluster's share of the clustered particles.
    pub share: f64,
    /// Indices (into the particle slice) of the largest cluster.
    pub members: Vec<usize>,
}

/// Mean shift over the particles carrying `label` (all particles when
/// `label` is `None`); converged when the largest cluster holds at least
/// `cluster_dominance` of them. `None` if no particle qualifies.
pub fn check_step2(particles: &[Particle], label: Option<usize>, params: &ConvergenceParams) -> Option<ClusterCheck> {
    let ids: Vec<usize> = (0..particles.len())
        .filter(|&i| label.is_none() || particles[i].label == label)
        .collect();
    if ids.is_empty() {
        return None;
    }
    let pts: Vec<Point2> = ids.iter().map(|&i| particles[i].position).collect();
    let ms = mean_shift(&pts, params.meanshift_bandwidth);
    let members: Vec<usize> = ids
        .iter()
        .zip(&ms.assignment)
        .filter(|(_, c)| **c == 0)
        .map(|(i, _)| *i)
        .collect();
    Some(ClusterCheck {
        converged: share_reaches(ms.sizes[0], ids.len(), params.cluster_dominance),
        center: ms.modes[0],
        share: ms.sizes[0] as f64 / ids.len() as f64,
        members,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceState {
    pub phase: Phase,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub t1_step: Option<usize>,
    pub t2_step: Option<usize>,
    pub dominant_label: Option<usize>,
    pub dominant_cluster_center: Option<Point2>,
    pub steps_since_cluster_update: usize,
}

impl Default for ConvergenceState {
    fn default() -> Self {
        ConvergenceState {
            phase: Phase::Searching,
            t1: None,
            t2: None,
            t1_step: None,
            t2_step: None,
            dominant_label: None,
            dominant_cluster_center: None,
            steps_since_cluster_update: 0,
        }
    }
}

/// One step's view of the detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub phase: Phase,
    pub dominant_label: Option<usize>,
    pub dominant_share: Option<f64>,
    pub cluster_share: Option<f64>,
    pub pred: Point2,
}

/// Runs the latched two-step detector over a particle filter's life.
///
/// Labeled particle sets use label dominance for step 1; unlabeled ones use
/// the dispersion threshold and cluster all particles in step 2.
#[derive(Debug, Clone)]
pub struct ConvergenceTracker {
    pub params: ConvergenceParams,
    pub state: ConvergenceState,
    membership: Vec<bool>,
    cluster_share: Option<f64>,
}

impl ConvergenceTracker {
    pub fn new(params: ConvergenceParams) -> Self {
        ConvergenceTracker {
            params,
            state: ConvergenceState::default(),
            membership: Vec::new(),
            cluster_share: None,
        }
    }

    fn adopt(&mut self, check: &ClusterCheck, n: usize) {
        self.membership = vec![false; n];
        for &i in &check.members {
            self.membership[i] = true;
        }
        self.state.dominant_cluster_center = Some(check.center);
        self.state.steps_since_cluster_update = 0;
    }

    /// Feeds the particle set after step `step` (0 = initialization) at
    /// time `t`. `replacements` are the filter's `(dead, donor)` pairs for
    /// this step; a replacement inherits its donor's cluster membership.
    pub fn observe(&mut self, step: usize, t: f64, particles: &[Particle], replacements: &[(usize, usize)]) -> Snapshot {
        let p = self.params;
        if !self.membership.is_empty() {
            for &(dead, donor) in replacements {
                self.membership[dead] = self.membership[donor];
            }
        }
        let labeled = particles.iter().any(|q| q.label.is_some());
        let dom = dominant_label(particles);
        if labeled {
            if let Some((k, _)) = dom {
                if self.state.phase > Phase::Searching {
                    self.state.dominant_label = Some(k);
                }
            }
        }

        if self.state.phase == Phase::Searching {
            let passed = if labeled {
                let (ok, k) = check_step1(particles, &p);
                if ok {
                    self.state.dominant_label = k;
                }
                ok
            } else {
                check_step1_dispersion(particles, &p)
            };
            if passed {
                self.state.phase = Phase::LabelDominant;
                self.state.t1 = Some(t);
                self.state.t1_step = Some(step);
            }
        }

        let mut pred = None;
        match self.state.phase {
            Phase::Searching => {}
            Phase::LabelDominant => {
                if let Some(check) = check_step2(particles, self.state.dominant_label, &p) {
                    self.cluster_share = Some(check.share);
                    if check.converged {
                        self.state.phase = Phase::Converged;
                        self.state.t2 = Some(t);
                        self.state.t2_step = Some(step);
                        self.adopt(&check, particles.len());
                        pred = Some(check.center);
                    }
                }
            }
            Phase::Converged => {
                self.state.steps_since_cluster_update += 1;
                if self.state.steps_since_cluster_update >= p.cluster_update_period {
                    if let Some(check) = check_step2(particles, self.state.dominant_label, &p) {
                        self.cluster_share = Some(check.share);
                        self.adopt(&check, particles.len());
                        pred = Some(check.center);
                    }
                }
            }
        }

        let pred = pred.unwrap_or_else(|| self.predict(particles));
        Snapshot {
            step,
            t,
            phase: self.state.phase,
            dominant_label: self.state.dominant_label.or(dom.map(|d| d.0)),
            dominant_share: dom.map(|d| d.1),
            cluster_share: self.cluster_share,
            pred,
        }
    }

    fn label_mean(&self, particles: &[Particle]) -> Point2 {
        let sel: Vec<Particle> = particles
            .iter()
            .filter(|q| self.state.dominant_label.is_none() || q.label == self.state.dominant_label)
            .copied()
            .collect();
        if sel.is_empty() {
            mean_position(particles)
        } else {
            mean_position(&sel)
        }
    }

    /// Location estimate without re-clustering: all particles while
    /// searching, the dominant group after step 1, the carried-forward
    /// cluster members after step 2.
    pub fn predict(&self, particles: &[Particle]) -> Point2 {
        match self.state.phase {
            Phase::Searching => mean_position(particles),
            Phase::LabelDominant => self.label_mean(particles),
            Phase::Converged => {
                let (mut s, mut n) = (Point2::ORIGIN, 0usize);
                for (q, m) in particles.iter().zip(&self.membership) {
                    if *m {
                        s += q.position;
                        n += 1;
                    }
                }
                if n == 0 {
                    self.label_mean(particles)
                } else {
                    s * (1.0 / n as f64)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Angle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn labeled(counts: &[usize]) -> Vec<Particle> {
        counts
            .iter()
            .enumerate()
            .flat_map(|(k, &n)| (0..n).map(move |_| Particle::new(Point2::ORIGIN, Angle::ZERO, Some(k))))
            .collect()
    }

    fn blob(rng: &mut ChaCha8Rng, c: Point2, sigma: f64, n: usize) -> Vec<Point2> {
        (0..n)
            .map(|_| c + Point2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * sigma)
            .collect()
    }

    fn at(points: &[Point2], label: Option<usize>) -> Vec<Particle> {
        points.iter().map(|p| Particle::new(*p, Angle::ZERO, label)).collect()
    }

    #[test]
    fn step1_examples() {
        let p = ConvergenceParams::default();
        assert_eq!(check_step1(&labeled(&[85, 15, 0, 0]), &p), (true, Some(0)));
        assert_eq!(check_step1(&labeled(&[50, 50]), &p), (false, None));
        assert_eq!(check_step1(&labeled(&[80, 20]), &p), (true, Some(0)));
        assert_eq!(check_step1(&labeled(&[20, 80]), &p), (true, Some(1)));
        assert_eq!(check_step1(&labeled(&[79, 21]), &p), (false, None));
        // Ties at the threshold go to the lowest label.
        let half = ConvergenceParams { label_dominance: 0.5, ..p };
        assert_eq!(check_step1(&labeled(&[0, 50, 50]), &half), (true, Some(1)));
        assert_eq!(check_step1(&at(&[Point2::ORIGIN], None), &p), (false, None));
    }

    #[test]
    fn step1_dispersion_examples() {
        let p = ConvergenceParams::default();
        assert!(check_step1_dispersion(&at(&[Point2::new(3.0, 4.0); 10], None), &p));
        let ring: Vec<Point2> = (0..360)
            .map(|d| Point2::new(20.0, 0.0).rotated(Angle::from_degrees(d as f64)))
            .collect();
        assert!((rms_dispersion(&ring) - 20.0).abs() < 1e-9);
        assert!(!check_step1_dispersion(&at(&ring, None), &p));
        // Two points 10 m apart: RMS exactly 5.
        let pair = [Point2::new(0.0, 0.0), Point2::new(10.0, 0.0)];
        assert!(check_step1_dispersion(&at(&pair, None), &p));
    }

    #[test]
    fn mean_shift_single_blob_and_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = blob(&mut rng, Point2::new(5.0, -2.0), 0.05, 300);
        let ms = mean_shift(&pts, 1.0);
        assert_eq!(ms.sizes, vec![300]);
        let mean = pts.iter().fold(Point2::ORIGIN, |a, p| a + *p) * (1.0 / 300.0);
        assert!(ms.modes[0].distance(mean) < 0.05);
        let one = mean_shift(&[Point2::new(1.0, 2.0)], 1.0);
        assert_eq!(one.sizes, vec![1]);
        assert_eq!(one.modes, vec![Point2::new(1.0, 2.0)]);
    }

    #[test]
    fn mean_shift_separates_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pts = blob(&mut rng, Point2::new(0.0, 0.0), 0.2, 120);
        pts.extend(blob(&mut rng, Point2::new(10.0, 0.0), 0.2, 80));
        let ms = mean_shift(&pts, 1.0);
        assert_eq!(ms.sizes, vec![120, 80]);
        assert!(ms.assignment[..120].iter().all(|c| *c == 0));
        assert!(ms.assignment[120..].iter().all(|c| *c == 1));
    }

    #[test]
    fn step2_examples() {
        let p = ConvergenceParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = blob(&mut rng, Point2::new(2.0, 2.0), 0.1, 200);
        let c = check_step2(&at(&pts, Some(0)), Some(0), &p).unwrap();
        assert!(c.converged && c.share == 1.0);
        assert!(c.center.distance(Point2::new(2.0, 2.0)) < 0.05);

        // 45% / 45% / 10% scatter.
        let mut pts = blob(&mut rng, Point2::new(0.0, 0.0), 0.1, 90);
        pts.extend(blob(&mut rng, Point2::new(20.0, 0.0), 0.1, 90));
        pts.extend((0..20).map(|i| Point2::new(5.0 + 3.0 * (i % 5) as f64, 8.0 + 3.0 * (i / 5) as f64)));
        let c = check_step2(&at(&pts, Some(1)), Some(1), &p).unwrap();
        assert!(!c.converged);
        assert!((c.share - 0.45).abs() < 1e-12);

        // Exactly half in the largest cluster.
        let mut pts = blob(&mut rng, Point2::new(0.0, 0.0), 0.1, 50);
        pts.extend((0..50).map(|i| Point2::new(10.0 + 3.0 * (i % 10) as f64, 10.0 + 3.0 * (i / 10) as f64)));
        assert!(check_step2(&at(&pts, None), None, &p).unwrap().converged);

        // Only the dominant label is clustered.
        let mut ps = at(&blob(&mut rng, Point2::new(0.0, 0.0), 0.1, 10), Some(0));
        ps.extend(at(&[Point2::new(30.0, 30.0)], Some(1)));
        let c = check_step2(&ps, Some(1), &p).unwrap();
        assert_eq!(c.members, vec![10]);
        assert!(check_step2(&ps, Some(2), &p).is_none());
    }

    #[test]
    fn tracker_latches_and_carries_membership() {
        let p = ConvergenceParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = blob(&mut rng, Point2::new(1.0, 1.0), 0.1, 100);
        let mut ps = at(&pts, Some(2));
        let mut tr = ConvergenceTracker::new(p);
        let s = tr.observe(0, 0.0, &ps, &[]);
        assert_eq!(s.phase, Phase::Converged);
        assert_eq!(tr.state.t1, Some(0.0));
        assert_eq!(tr.state.t2, Some(0.0));
        let first = s.pred;
        // Static particles: constant prediction.
        for step in 1..=40 {
            assert!(tr.observe(step, step as f64, &ps, &[]).pred.distance(first) < 1e-12);
        }
        // Translating everything by (1, 0) shifts the prediction with it.
        for q in ps.iter_mut() {
            q.position += Point2::new(1.0, 0.0);
        }
        let s = tr.observe(41, 41.0, &ps, &[]);
        assert!(s.pred.distance(first + Point2::new(1.0, 0.0)) < 1e-9);
        // Scattering particles never un-converges.
        let scattered: Vec<Point2> = (0..100).map(|i| Point2::new(7.0 * i as f64, 0.0)).collect();
        let s = tr.observe(42, 42.0, &at(&scattered, Some(0)), &[]);
        assert_eq!(s.phase, Phase::Converged);
    }

    #[test]
    fn dominant_cluster_switches_only_at_update() {
        let p = ConvergenceParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pts = blob(&mut rng, Point2::new(0.0, 0.0), 0.1, 60);
        pts.extend(blob(&mut rng, Point2::new(10.0, 0.0), 0.1, 40));
        let mut ps = at(&pts, Some(0));
        let mut tr = ConvergenceTracker::new(p);
        let s = tr.observe(0, 0.0, &ps, &[]);
        assert!(s.pred.x.abs() < 0.1);
        // Particles of cluster A die and respawn in cluster B, step by step;
        // replacements inherit B membership, so the prediction stays near A
        // until the periodic update re-clusters.
        let mut step = 0;
        for dead in 0..30 {
            step += 1;
            ps[dead] = ps[60];
            let s = tr.observe(step, step as f64, &ps, &[(dead, 60)]);
            if step < 20 {
                assert!(s.pred.x.abs() < 0.1, "step {step}: {:?}", s.pred);
            } else if step == 20 {
                // 40 in A, 60 in B at the update.
                assert!((s.pred.x - 10.0).abs() < 0.1, "{:?}", s.pred);
            }
        }
    }

    #[test]
    fn unlabeled_tracker_uses_dispersion() {
        let p = ConvergenceParams::default();
        let spread: Vec<Point2> = (0..100).map(|i| Point2::new(i as f64, 0.0)).collect();
        let mut tr = ConvergenceTracker::new(p);
        assert_eq!(tr.observe(0, 0.0, &at(&spread, None), &[]).phase, Phase::Searching);
        let tight: Vec<Point2> = (0..100).map(|i| Point2::new(0.001 * i as f64, 0.0)).collect();
        let s = tr.observe(1, 0.1, &at(&tight, None), &[]);
        assert_eq!(s.phase, Phase::Converged);
        assert_eq!(s.dominant_label, None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn step1_ignores_order(mut labels in proptest::collection::vec(0usize..4, 1..200), seed: u64) {
                let p = ConvergenceParams::default();
                let a: Vec<Particle> = labels.iter().map(|k| Particle::new(Point2::ORIGIN, Angle::ZERO, Some(*k))).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for i in (1..labels.len()).rev() {
                    labels.swap(i, rng.random_range(0..=i));
                }
                let b: Vec<Particle> = labels.iter().map(|k| Particle::new(Point2::ORIGIN, Angle::ZERO, Some(*k))).collect();
                prop_assert_eq!(check_step1(&a, &p), check_step1(&b, &p));
            }

            #[test]
            fn mean_shift_is_translation_equivariant(
                pts in proptest::collection::vec((0.0f64..20.0, 0.0f64..20.0), 1..80),
                vx in -50.0f64..50.0, vy in -50.0f64..50.0,
            ) {
                // Quarter-meter lattice keeps differences exact under
                // translation; no lattice distance equals the 1.03 m
                // bandwidth, so no comparison sits on a rounding edge.
                let snap = |v: f64| (v * 4.0).round() / 4.0;
                let pts: Vec<Point2> = pts.iter().map(|(x, y)| Point2::new(snap(*x), snap(*y))).collect();
                let v = Point2::new(snap(vx), snap(vy));
                let a = mean_shift(&pts, 1.03);
                let moved: Vec<Point2> = pts.iter().map(|p| *p + v).collect();
                let b = mean_shift(&moved, 1.03);
                prop_assert_eq!(&a.sizes, &b.sizes);
                for (ma, mb) in a.modes.iter().zip(&b.modes) {
                    prop_assert!((*ma + v).distance(*mb) < 1e-9);
                }
            }

            #[test]
            fn dominant_center_within_member_hull(
                pts in proptest::collection::vec((0.0f64..15.0, 0.0f64..15.0), 1..120),
            ) {
                let p = ConvergenceParams::default();
                let ps: Vec<Particle> = pts.iter().map(|(x, y)| Particle::new(Point2::new(*x, *y), Angle::ZERO, None)).collect();
                let c = check_step2(&ps, None, &p).unwrap();
                prop_assert!(c.share > 0.0 && c.share <= 1.0);
                // Bounding box of the members contains the center.
                let xs = c.members.iter().map(|i| ps[*i].position.x);
                let ys = c.members.iter().map(|i| ps[*i].position.y);
                let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
                let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
                prop_assert!(c.center.x >= x0 - 1e-9 && c.center.x <= x1 + 1e-9);
                prop_assert!(c.center.y >= y0 - 1e-9 && c.center.y <= y1 + 1e-9);
            }
        }
    }
}
