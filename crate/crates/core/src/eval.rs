//! Monte Carlo harness: scenarios, single trials for each initialization
//! method, aggregate metrics, benchmark reports and scenario manifests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convergence::{ConvergenceParams, ConvergenceTracker, Phase, Snapshot};
use crate::error::{Error, Result};
use crate::export;
use crate::filter::{estimate_theta, init_palms, init_uniform, init_uniform_ori, FilterConfig, Particle, ParticleFilter};
use crate::floorplan::{rasterize_floorplan, CollisionIndex, FloorPlan};
use crate::geometry::{alignment_angle, principal_orientations, Angle, GridSpec, Point2, RasterGrid};
use crate::heatmap::{binarize_top_percent, compute_heatmaps, CandidateMask, HeatmapSet};
use crate::kernel::{build_kernels, KernelParams, ObservationKernel};
use crate::odometry::{self, OdometryStep};
use crate::scan::{load_observation, Observation, ProjectionParams};
use crate::synth::{self, Generator, Layout, OdometryNoise, ScanParams, TruthTrace, WalkParams, WorldSpec};

pub const MANIFEST_FORMAT: &str = "palms-manifest/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Palms,
    Uniform,
    UniformOri,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Palms, Method::Uniform, Method::UniformOri];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Palms => "palms",
            Method::Uniform => "uniform",
            Method::UniformOri => "uniform_ori",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "palms" => Ok(Method::Palms),
            "uniform" => Ok(Method::Uniform),
            "uniform_ori" | "uniform+ori" => Ok(Method::UniformOri),
            _ => Err(Error::Validation(format!("unknown method '{s}'"))),
        }
    }
}

/// Everything a run is configured by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub kernel: KernelParams,
    pub filter: FilterConfig,
    pub convergence: ConvergenceParams,
    /// Fraction of heatmap cells kept as candidates.
    pub top_fraction: f64,
    /// Odometry steps used to estimate the heading for the oriented
    /// uniform baseline.
    pub theta_window: usize,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            kernel: KernelParams::default(),
            filter: FilterConfig::default(),
            convergence: ConvergenceParams::default(),
            top_fraction: 0.01,
            theta_window: 10,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.filter.validate()?;
        self.convergence.validate()?;
        if !(self.top_fraction > 0.0 && self.top_fraction < 1.0) {
            return Err(Error::Validation("top_fraction must be in (0, 1)".into()));
        }
        if self.theta_window == 0 {
            return Err(Error::Validation("theta_window must be >= 1".into()));
        }
        Ok(())
    }
}

/// One observation point with its walk.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub plan: FloorPlan,
    pub observation: Observation,
    pub odometry: Vec<OdometryStep>,
    /// Positions aligned with the odometry: pose `i` is where the walker is
    /// after `i` steps.
    pub truth: Option<TruthTrace>,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        odometry::validate_trace(&self.odometry)?;
        if let Some(tr) = &self.truth {
            if tr.poses.len() != self.odometry.len() + 1 {
                return Err(Error::Validation(format!(
                    "scenario {}: truth has {} poses for {} odometry steps",
                    self.id,
                    tr.poses.len(),
                    self.odometry.len()
                )));
            }
        }
        Ok(())
    }

    pub fn start_time(&self) -> f64 {
        match &self.truth {
            Some(tr) => tr.poses[0].t,
            None => self.odometry.first().map_or(0.0, |s| s.t - 0.1),
        }
    }
}

/// Scan-derived pieces of the pipeline: alignment angle, kernels, heatmaps
/// and the candidate mask.
#[derive(Debug, Clone)]
pub struct PalmsPrep {
    pub theta: Angle,
    pub kernels: Vec<ObservationKernel>,
    pub heatmaps: HeatmapSet,
    pub mask: CandidateMask,
}

pub fn prepare_palms(plan: &FloorPlan, obs: &Observation, params: &PipelineParams) -> Result<PalmsPrep> {
    let kp = params.kernel;
    kp.validate()?;
    let theta = alignment_angle(principal_orientations(&obs.segments)?, plan.principal_orientation());
    let kernels = build_kernels(obs, theta, &kp)?;
    let raster = rasterize_floorplan(plan, kp.resolution, kp.kernel_radius_cells(obs.max_range))?;
    let mut heatmaps = compute_heatmaps(&raster, &kernels)?;
    heatmaps.params = Some(kp);
    let mask = binarize_top_percent(&heatmaps, params.top_fraction)?;
    Ok(PalmsPrep {
        theta,
        kernels,
        heatmaps,
        mask,
    })
}

/// Immutable per-scenario state shared by all its trials.
#[derive(Debug)]
pub struct PreparedScenario {
    pub scenario: Scenario,
    pub index: CollisionIndex,
    pub palms: std::result::Result<PalmsPrep, String>,
    pub theta_est: Angle,
    cumulative: Vec<f64>,
}

impl PreparedScenario {
    pub fn new(scenario: Scenario, params: &PipelineParams) -> Result<Self> {
        scenario.validate()?;
        let index = CollisionIndex::new(&scenario.plan);
        let palms = prepare_palms(&scenario.plan, &scenario.observation, params).map_err(|e| e.to_string());
        let theta_est = estimate_theta(&scenario.odometry, scenario.plan.principal_orientation(), params.theta_window);
        let cumulative = scenario.truth.as_ref().map(|t| t.cumulative_length()).unwrap_or_default();
        Ok(PreparedScenario {
            scenario,
            index,
            palms,
            theta_est,
            cumulative,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Converged,
    Collapsed,
    Timeout,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Converged => "converged",
            Outcome::Collapsed => "collapsed",
            Outcome::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub method: Method,
    pub scenario: String,
    pub seed: u64,
    /// Seconds since the start of the trace.
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    /// Ground-truth path length walked by t2, meters.
    pub dist_to_t2: Option<f64>,
    /// `(t, |P_pred - truth|)` from t2 on.
    pub post_errors: Vec<(f64, f64)>,
    pub outcome: Outcome,
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn rmse(&self) -> Option<f64> {
        if self.post_errors.is_empty() {
            return None;
        }
        let ss: f64 = self.post_errors.iter().map(|(_, e)| e * e).sum();
        Some((ss / self.post_errors.len() as f64).sqrt())
    }

    pub fn pct_below_1m(&self) -> Option<f64> {
        if self.post_errors.is_empty() {
            return None;
        }
        let n = self.post_errors.iter().filter(|(_, e)| *e < 1.0).count();
        Some(100.0 * n as f64 / self.post_errors.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRun {
    pub record: TrialRecord,
    pub timeline: Vec<TimelineRow>,
    /// Particle sets at initialization, t1, t2 and the end.
    pub snapshots: Vec<(String, Vec<Particle>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimelineRow {
    pub snapshot: Snapshot,
    pub err: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrialOptions {
    pub timeline: bool,
    pub snapshots: bool,
}

fn initial_particles(prep: &PreparedScenario, method: Method, params: &PipelineParams, rng: &mut ChaCha8Rng) -> Result<Vec<Particle>> {
    let bounds = &prep.scenario.plan.bounds;
    let cfg = &params.filter;
    match method {
        Method::Palms => match &prep.palms {
            Ok(p) => init_palms(&p.mask, p.theta, bounds, cfg, rng),
            Err(e) => Err(Error::Validation(e.clone())),
        },
        Method::Uniform => init_uniform(bounds, cfg, rng),
        Method::UniformOri => init_uniform_ori(bounds, prep.theta_est, params.kernel.n_orientations, cfg, rng),
    }
}

pub fn run_trial(prep: &PreparedScenario, method: Method, params: &PipelineParams, seed: u64) -> TrialRecord {
    run_trial_with(prep, method, params, seed, TrialOptions::default()).record
}

/// Full pipeline for one trial. Component failures end the trial with a
/// non-converged outcome instead of an error.
pub fn run_trial_with(prep: &PreparedScenario, method: Method, params: &PipelineParams, seed: u64, opts: TrialOptions) -> TrialRun {
    let sc = &prep.scenario;
    let t0 = sc.start_time();
    let mut record = TrialRecord {
        method,
        scenario: sc.id.clone(),
        seed,
        t1: None,
        t2: None,
        dist_to_t2: None,
        post_errors: Vec::new(),
        outcome: Outcome::Timeout,
        error: None,
    };
    let mut timeline = Vec::new();
    let mut snapshots = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let particles = match initial_particles(prep, method, params, &mut rng) {
        Ok(p) => p,
        Err(e) => {
            record.outcome = Outcome::Collapsed;
            record.error = Some(e.to_string());
            return TrialRun { record, timeline, snapshots };
        }
    };
    let mut filter = ParticleFilter::new(particles, params.filter, rng).expect("n_particles >= 1");
    let mut tracker = ConvergenceTracker::new(params.convergence);
    let truth_at = |i: usize| sc.truth.as_ref().map(|t| t.poses[i].position);

    let mut phase = Phase::Searching;
    let mut observe = |step: usize, t: f64, particles: &[Particle], repl: &[(usize, usize)], record: &mut TrialRecord| {
        let snap = tracker.observe(step, t, particles, repl);
        let err = truth_at(step).map(|p| p.distance(snap.pred));
        if snap.phase == Phase::Converged {
            if let Some(e) = err {
                record.post_errors.push((t - t0, e));
            }
        }
        if opts.timeline {
            timeline.push(TimelineRow { snapshot: snap, err });
        }
        snap
    };

    if opts.snapshots {
        snapshots.push(("t0".to_string(), filter.particles.clone()));
    }
    observe(0, t0, &filter.particles, &[], &mut record);
    for (i, odo) in sc.odometry.iter().enumerate() {
        let rep = match filter.step(odo, &prep.index) {
            Ok(rep) => rep,
            Err(e) => {
                record.outcome = Outcome::Collapsed;
                record.error = Some(e.to_string());
                break;
            }
        };
        let snap = observe(i + 1, odo.t, &filter.particles, &rep.replacements, &mut record);
        if opts.snapshots {
            if phase < Phase::LabelDominant && snap.phase >= Phase::LabelDominant {
                snapshots.push(("t1".to_string(), filter.particles.clone()));
            }
            if phase < Phase::Converged && snap.phase == Phase::Converged {
                snapshots.push(("t2".to_string(), filter.particles.clone()));
            }
        }
        phase = snap.phase;
    }
    if opts.snapshots {
        snapshots.push(("end".to_string(), filter.particles.clone()));
    }

    let st = &tracker.state;
    record.t1 = st.t1.map(|t| t - t0);
    record.t2 = st.t2.map(|t| t - t0);
    record.dist_to_t2 = st.t2_step.and_then(|k| prep.cumulative.get(k).copied());
    if record.outcome != Outcome::Collapsed {
        record.outcome = if st.t2.is_some() { Outcome::Converged } else { Outcome::Timeout };
    }
    if record.outcome != Outcome::Converged {
        record.post_errors.clear();
    }
    TrialRun { record, timeline, snapshots }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n_trials: usize,
    pub n_converged: usize,
    pub n_failed: usize,
    pub n_collapsed: usize,
    pub n_timeout: usize,
    pub mean_time_s: Option<f64>,
    pub mean_dist_m: Option<f64>,
    /// Pooled over every post-convergence sample.
    pub rmse_m: Option<f64>,
    pub pct_err_lt_1m: Option<f64>,
    pub mean_trial_rmse_m: Option<f64>,
    pub median_trial_rmse_m: Option<f64>,
}

impl MethodSummary {
    pub fn failure_rate(&self) -> f64 {
        self.n_failed as f64 / self.n_trials.max(1) as f64
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-method aggregates, in [`Method::ALL`] order, for the methods that
/// appear. Records are put in a canonical order first so the numbers do
/// not depend on how trials were scheduled.
pub fn summarize(records: &[TrialRecord]) -> Vec<MethodSummary> {
    let mut sorted: Vec<&TrialRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (a.method, &a.scenario, a.seed).cmp(&(b.method, &b.scenario, b.seed)));
    Method::ALL
        .iter()
        .filter_map(|&m| {
            let rs: Vec<&TrialRecord> = sorted.iter().copied().filter(|r| r.method == m).collect();
            if rs.is_empty() {
                return None;
            }
            let conv: Vec<&TrialRecord> = rs.iter().copied().filter(|r| r.outcome == Outcome::Converged).collect();
            let times: Vec<f64> = conv.iter().filter_map(|r| r.t2).collect();
            let dists: Vec<f64> = conv.iter().filter_map(|r| r.dist_to_t2).collect();
            let samples: Vec<f64> = conv.iter().flat_map(|r| r.post_errors.iter().map(|(_, e)| *e)).collect();
            let rmse = mean(&samples.iter().map(|e| e * e).collect::<Vec<_>>()).map(f64::sqrt);
            let pct = (!samples.is_empty())
                .then(|| 100.0 * samples.iter().filter(|e| **e < 1.0).count() as f64 / samples.len() as f64);
            let mut trial_rmse: Vec<f64> = conv.iter().filter_map(|r| r.rmse()).collect();
            let mean_trial = mean(&trial_rmse);
            trial_rmse.sort_by(f64::total_cmp);
            let median = (!trial_rmse.is_empty()).then(|| {
                let n = trial_rmse.len();
                if n % 2 == 1 {
                    trial_rmse[n / 2]
                } else {
                    (trial_rmse[n / 2 - 1] + trial_rmse[n / 2]) / 2.0
                }
            });
            let count = |o: Outcome| rs.iter().filter(|r| r.outcome == o).count();
            Some(MethodSummary {
                method: m,
                n_trials: rs.len(),
                n_converged: conv.len(),
                n_failed: rs.len() - conv.len(),
                n_collapsed: count(Outcome::Collapsed),
                n_timeout: count(Outcome::Timeout),
                mean_time_s: mean(&times),
                mean_dist_m: mean(&dists),
                rmse_m: rmse,
                pct_err_lt_1m: pct,
                mean_trial_rmse_m: mean_trial,
                median_trial_rmse_m: median,
            })
        })
        .collect()
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const SEED_DERIVATION: &str =
    "trial_seed = splitmix64(splitmix64(master_seed ^ splitmix64(scenario_index)) + trial_index); shared by all methods";

/// Seed of trial `trial` on scenario `scenario`; every method sees the same
/// seeds.
pub fn trial_seed(master: u64, scenario: usize, trial: usize) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(scenario as u64)).wrapping_add(trial as u64))
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub master_seed: u64,
    pub seed_derivation: &'static str,
    pub trials_per_scenario: usize,
    pub methods: Vec<Method>,
    pub scenarios: Vec<String>,
    pub params: PipelineParams,
    pub distance_basis: &'static str,
    pub summaries: Vec<MethodSummary>,
    #[serde(skip)]
    pub records: Vec<TrialRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct BenchOptions {
    /// Where to write records, summaries and snapshots.
    pub out_dir: Option<PathBuf>,
    /// Write particle snapshots for trial 0 of every scenario and method.
    pub snapshots: bool,
}

/// Runs `trials_per_scenario` trials of every method on every scenario,
/// in parallel, and aggregates them.
pub fn run_benchmark(
    scenarios: Vec<Scenario>,
    methods: &[Method],
    trials_per_scenario: usize,
    params: &PipelineParams,
    master_seed: u64,
    opts: &BenchOptions,
) -> Result<BenchReport> {
    params.validate()?;
    let prepared: Vec<PreparedScenario> = scenarios
        .into_par_iter()
        .map(|s| PreparedScenario::new(s, params))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, Method, usize)> = (0..prepared.len())
        .flat_map(|s| methods.iter().flat_map(move |&m| (0..trials_per_scenario).map(move |t| (s, m, t))))
        .collect();
    let runs: Vec<TrialRun> = jobs
        .par_iter()
        .map(|&(s, m, t)| {
            let trial_opts = TrialOptions {
                timeline: false,
                snapshots: opts.snapshots && t == 0,
            };
            run_trial_with(&prepared[s], m, params, trial_seed(master_seed, s, t), trial_opts)
        })
        .collect();
    let records: Vec<TrialRecord> = runs.iter().map(|r| r.record.clone()).collect();
    let report = BenchReport {
        master_seed,
        seed_derivation: SEED_DERIVATION,
        trials_per_scenario,
        methods: methods.to_vec(),
        scenarios: prepared.iter().map(|p| p.scenario.id.clone()).collect(),
        params: *params,
        distance_basis: "ground-truth path length",
        summaries: summarize(&records),
        records,
    };
    if let Some(dir) = &opts.out_dir {
        write_report(dir, &report)?;
        if opts.snapshots {
            for (run, &(s, _, _)) in runs.iter().zip(&jobs) {
                for (name, ps) in &run.snapshots {
                    let path = dir.join(format!("snap_{}_{}_{name}.pgm", run.record.scenario, run.record.method.as_str()));
                    export::write_minmax_pgm(&path, &render_particles(&prepared[s].scenario.plan, ps, 0.1)?)?;
                }
            }
        }
    }
    Ok(report)
}

/// Walls at 1.0, particles at 0.5 on a plan-sized raster.
pub fn render_particles(plan: &FloorPlan, particles: &[Particle], resolution: f64) -> Result<RasterGrid> {
    let mut g = rasterize_floorplan(plan, resolution, 0)?;
    for p in particles {
        let (i, j) = g.spec.cell_of(p.position);
        if g.spec.contains_cell(i, j) && g.get(i as usize, j as usize) == 0.0 {
            g.set(i as usize, j as usize, 0.5);
        }
    }
    Ok(g)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

pub fn records_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from("method,scenario,seed,outcome,t1_s,t2_s,dist_to_t2_m,n_post,trial_rmse_m,pct_err_lt_1m,error\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.method.as_str(),
            r.scenario,
            r.seed,
            r.outcome.as_str(),
            opt(r.t1),
            opt(r.t2),
            opt(r.dist_to_t2),
            r.post_errors.len(),
            opt(r.rmse()),
            opt(r.pct_below_1m()),
            r.error.as_deref().unwrap_or("").replace(',', ";"),
        );
    }
    out
}

pub fn summary_csv(summaries: &[MethodSummary]) -> String {
    let mut out = String::from(
        "method,n_trials,n_converged,n_failed,n_collapsed,n_timeout,mean_time_s,mean_dist_m,rmse_m,pct_err_lt_1m,mean_trial_rmse_m,median_trial_rmse_m\n",
    );
    for s in summaries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            s.method.as_str(),
            s.n_trials,
            s.n_converged,
            s.n_failed,
            s.n_collapsed,
            s.n_timeout,
            opt(s.mean_time_s),
            opt(s.mean_dist_m),
            opt(s.rmse_m),
            opt(s.pct_err_lt_1m),
            opt(s.mean_trial_rmse_m),
            opt(s.median_trial_rmse_m),
        );
    }
    out
}

/// Published real-building numbers (time s, distance m, RMSE m, % < 1 m),
/// shown beside synthetic results for orientation only.
pub const REFERENCE_TABLE: [(Method, f64, f64, f64, f64); 3] = [
    (Method::Uniform, 75.94, 129.87, 31.52, 16.0),
    (Method::UniformOri, 69.18, 121.86, 26.03, 28.0),
    (Method::Palms, 59.14, 110.28, 4.69, 78.0),
];

pub fn summary_table(summaries: &[MethodSummary]) -> String {
    let f = |v: Option<f64>, w: usize, p: usize| v.map_or(format!("{:>w$}", "-"), |x| format!("{x:>w$.p$}"));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>8} {:>9} {:>9} {:>9} {:>7}   {:>20}",
        "method", "time_s", "dist_m", "rmse_m", "%<1m", "failed", "reference"
    );
    for s in summaries {
        let r = REFERENCE_TABLE.iter().find(|r| r.0 == s.method).unwrap();
        let _ = writeln!(
            out,
            "{:<12} {} {} {} {} {:>3}/{:<3}   {:.2}/{:.2}/{:.2}/{:.0}%",
            s.method.as_str(),
            f(s.mean_time_s, 8, 2),
            f(s.mean_dist_m, 9, 2),
            f(s.rmse_m, 9, 2),
            f(s.pct_err_lt_1m, 9, 1),
            s.n_failed,
            s.n_trials,
            r.1,
            r.2,
            r.3,
            r.4
        );
    }
    out.push_str("reference: published real-building results (time/dist/rmse/%<1m); not comparable in absolute terms\n");
    out
}

pub fn write_report(dir: &Path, report: &BenchReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("records.csv", records_csv(&report.records))?;
    write("summary.csv", summary_csv(&report.summaries))?;
    let mut txt = format!(
        "master_seed: {}\nseeds: {}\ntrials per scenario: {}\nscenarios: {}\ndistance: {}\n\n",
        report.master_seed,
        report.seed_derivation,
        report.trials_per_scenario,
        report.scenarios.len(),
        report.distance_basis
    );
    txt.push_str(&summary_table(&report.summaries));
    write("summary.txt", txt)?;
    write("report.json", serde_json::to_string_pretty(report)?)
}

pub fn timeline_csv(rows: &[TimelineRow]) -> String {
    let mut out = String::from("step,t_seconds,phase,dominant_label,dominant_share,cluster_share,pred_x,pred_y,err_m\n");
    for r in rows {
        let s = &r.snapshot;
        let _ = writeln!(
            out,
            "{},{:.3},{},{},{},{},{:.4},{:.4},{}",
            s.step,
            s.t,
            s.phase.as_str(),
            s.dominant_label.map_or(String::new(), |k| k.to_string()),
            opt(s.dominant_share),
            opt(s.cluster_share),
            s.pred.x,
            s.pred.y,
            opt(r.err),
        );
    }
    out
}

// ---------------------------------------------------------------------------
// Manifests

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub plan: String,
    pub scan: String,
    pub odometry: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_gt: Option<Point2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_theta_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan_heading_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading_drift_total_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub scenarios: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Parse(format!("expected format '{MANIFEST_FORMAT}', got '{}'", m.format)));
        }
        Ok(m)
    }

    /// Reads every scenario; relative paths resolve against `base`.
    pub fn scenarios(&self, base: &Path) -> Result<Vec<Scenario>> {
        let resolve = |p: &str| base.join(p);
        self.scenarios
            .iter()
            .map(|e| {
                let plan = FloorPlan::load(resolve(&e.plan))?;
                let scan_path = resolve(&e.scan);
                let text = std::fs::read_to_string(&scan_path).map_err(|err| Error::io(&scan_path, err))?;
                let observation = load_observation(&text, &ProjectionParams::default())?;
                let odometry = odometry::load(resolve(&e.odometry))?;
                let truth = e.truth.as_deref().map(|t| TruthTrace::load(resolve(t))).transpose()?;
                let sc = Scenario {
                    id: e.id.clone(),
                    plan,
                    observation,
                    odometry,
                    truth,
                    seed: e.seed,
                };
                sc.validate()?;
                Ok(sc)
            })
            .collect()
    }
}

/// Generation record for a synthetic scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScenario {
    pub scenario: Scenario,
    pub scan_heading: Angle,
    pub drift_deg: f64,
    pub heading_drift_total_deg: f64,
}

/// Writes plan, scan, odometry and truth files for every scenario plus a
/// `manifest.json`; returns the manifest path.
pub fn write_scenarios(dir: &Path, scenarios: &[SynthScenario]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    let mut written_plans: Vec<(String, String)> = Vec::new();
    for s in scenarios {
        let sc = &s.scenario;
        let plan_file = match written_plans.iter().find(|(n, _)| *n == sc.plan.name) {
            Some((_, f)) => f.clone(),
            None => {
                let f = format!("{}.plan.json", sc.plan.name);
                sc.plan.save(dir.join(&f))?;
                written_plans.push((sc.plan.name.clone(), f.clone()));
                f
            }
        };
        let scan_file = format!("{}.scan.json", sc.id);
        sc.observation.save(dir.join(&scan_file))?;
        let odo_file = format!("{}.odo.csv", sc.id);
        odometry::save(dir.join(&odo_file), &sc.odometry)?;
        let truth_file = match &sc.truth {
            Some(t) => {
                let f = format!("{}.truth.csv", sc.id);
                t.save(dir.join(&f))?;
                Some(f)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            id: sc.id.clone(),
            plan: plan_file,
            scan: scan_file,
            odometry: odo_file,
            truth: truth_file,
            seed: sc.seed,
            p_gt: sc.truth.as_ref().map(|t| t.observation_point),
            true_theta_deg: sc.truth.as_ref().map(|t| t.true_theta.signed_degrees()),
            scan_heading_deg: Some(s.scan_heading.degrees()),
            drift_deg: Some(s.drift_deg),
            heading_drift_total_deg: Some(s.heading_drift_total_deg),
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        scenarios: entries,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Synthetic benchmark suite description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSpec {
    pub worlds: Vec<WorldSpec>,
    pub starts_per_world: usize,
    pub paths_per_start: usize,
    pub path_length: f64,
    /// Range of the extra heading drift accumulated over a path, degrees;
    /// the sign is random.
    pub drift_range_deg: [f64; 2],
    pub odometry_step_noise: f64,
    pub scan: ScanParams,
    pub walk: WalkParams,
    pub seed: u64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec {
            worlds: vec![
                WorldSpec::new(Generator::CorridorGrid, 50.0, 32.0, 1),
                WorldSpec::new(Generator::RoomsOffCorridor, 56.0, 24.0, 2),
            ],
            starts_per_world: 3,
            paths_per_start: 2,
            path_length: 147.0,
            drift_range_deg: [2.0, 10.0],
            odometry_step_noise: 0.01,
            scan: ScanParams::default(),
            walk: WalkParams::default(),
            seed: 0,
        }
    }
}

/// One synthetic scenario: scan at `start` with `scan_heading`, a walk of
/// `length` meters, and odometry in the scan frame drifting by up to
/// `heading_drift_total_deg` over the path.
pub fn synth_scenario(
    id: &str,
    layout: &Layout,
    start: Point2,
    scan_heading: Angle,
    length: f64,
    noise: &OdometryNoise,
    scan: &ScanParams,
    walk: &WalkParams,
    seed: u64,
) -> Result<SynthScenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let observation = synth::raycast_scan(&layout.plan, start, scan_heading, scan, &mut rng)?;
    let mut truth = synth::generate_walk_with(&layout.plan, start, length, walk, splitmix64(seed))?;
    truth.true_theta = synth::true_theta(scan_heading);
    let drift_deg = scan_heading.degrees();
    let odometry = synth::corrupt_odometry(&truth, drift_deg, noise, splitmix64(seed ^ 0x0D0));
    Ok(SynthScenario {
        scenario: Scenario {
            id: id.to_string(),
            plan: layout.plan.clone(),
            observation,
            odometry,
            truth: Some(truth),
            seed,
        },
        scan_heading,
        drift_deg,
        heading_drift_total_deg: noise.heading_drift_total_deg,
    })
}

pub fn build_suite(spec: &SuiteSpec) -> Result<Vec<SynthScenario>> {
    let mut out = Vec::new();
    for (wi, world) in spec.worlds.iter().enumerate() {
        let layout = synth::generate_layout(world)?;
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(spec.seed ^ splitmix64(wi as u64)));
        let mut made = 0;
        let mut tries = 0;
        while made < spec.starts_per_world {
            tries += 1;
            if tries > 50 * spec.starts_per_world {
                return Err(Error::Validation(format!("world {wi}: could not place observation points")));
            }
            let start = layout.corridor_point(&mut rng, 2.0);
            let heading = Angle::from_degrees(rng.random_range(0.0..360.0));
            let mut batch = Vec::new();
            for path in 0..spec.paths_per_start {
                let [lo, hi] = spec.drift_range_deg;
                let mag = rng.random_range(lo..=hi);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let noise = OdometryNoise {
                    step_noise_frac: spec.odometry_step_noise,
                    heading_drift_total_deg: sign * mag,
                };
                let id = format!("w{wi}s{made}p{path}");
                match synth_scenario(&id, &layout, start, heading, spec.path_length, &noise, &spec.scan, &spec.walk, rng.random()) {
                    Ok(s) => batch.push(s),
                    Err(_) => break,
                }
            }
            if batch.len() == spec.paths_per_start {
                out.extend(batch);
                made += 1;
            }
        }
    }
    Ok(out)
}

/// Spec of the grid used by particle snapshot images.
pub fn snapshot_spec(plan: &FloorPlan, resolution: f64) -> Result<GridSpec> {
    crate::floorplan::plan_grid_spec(&plan.bounds, resolution, 0)
}
