use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use palms::convergence::ConvergenceParams;
use palms::eval::{self, BenchOptions, Manifest, Method, PipelineParams, PreparedScenario, Scenario, SuiteSpec, TrialOptions};
use palms::export;
use palms::filter::FilterConfig;
use palms::floorplan::FloorPlan;
use palms::heatmap::{export_heatmaps, HeatmapReport};
use palms::kernel::KernelParams;
use palms::odometry;
use palms::scan::{load_observation, Observation, ProjectionParams};
use palms::synth::TruthTrace;

#[derive(Parser)]
#[command(name = "palms", version, about = "Global localization of a single scan on a floor plan")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan + plan: per-orientation heatmaps, candidate masks and threshold report.
    Heatmap(HeatmapArgs),
    /// Scan + plan + odometry: convergence timeline and predicted positions.
    Localize(LocalizeArgs),
    /// Manifest: Monte Carlo trials of each method, records and summary.
    Bench(BenchArgs),
    /// Suite spec: synthetic worlds, scans, walks and a manifest.
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct KernelArgs {
    /// Weight of the constrained-empty-space penalty.
    #[arg(long, default_value_t = KernelParams::default().alpha)]
    alpha: f64,
    /// Std of the wall-layer blur, meters.
    #[arg(long, default_value_t = KernelParams::default().gaussian_sigma)]
    gaussian_sigma: f64,
    /// Scale of the empty-space triangles about the observation point.
    #[arg(long, default_value_t = KernelParams::default().ces_shrink)]
    ces_shrink: f64,
    /// Raster cell size, meters.
    #[arg(long, default_value_t = KernelParams::default().resolution)]
    resolution: f64,
    #[arg(long, default_value_t = KernelParams::default().n_orientations)]
    n_orientations: usize,
    /// Fraction of heatmap cells kept as candidates.
    #[arg(long, default_value_t = PipelineParams::default().top_fraction)]
    top_fraction: f64,
}

#[derive(Args, Clone)]
struct FilterArgs {
    #[arg(long, default_value_t = FilterConfig::default().n_particles)]
    n_particles: usize,
    /// Replacement position noise, meters.
    #[arg(long, default_value_t = FilterConfig::default().resample_pos_noise)]
    resample_pos_noise: f64,
    /// Replacement drift noise, degrees.
    #[arg(long, default_value_t = FilterConfig::default().resample_drift_noise)]
    resample_drift_noise: f64,
    /// Per-step position noise, meters.
    #[arg(long, default_value_t = FilterConfig::default().step_pos_noise)]
    step_pos_noise: f64,
    /// Per-step drift random walk, degrees.
    #[arg(long, default_value_t = FilterConfig::default().step_drift_noise)]
    step_drift_noise: f64,
    /// Filter seed; `localize` uses it as the trial seed.
    #[arg(long, default_value_t = FilterConfig::default().rng_seed)]
    rng_seed: u64,
    /// Split particles evenly across orientations instead of by mask area.
    #[arg(long)]
    equal_groups: bool,
    /// Odometry steps used to estimate the heading of the oriented baseline.
    #[arg(long, default_value_t = PipelineParams::default().theta_window)]
    theta_window: usize,
}

#[derive(Args, Clone)]
struct ConvergenceArgs {
    #[arg(long, default_value_t = ConvergenceParams::default().label_dominance)]
    label_dominance: f64,
    #[arg(long, default_value_t = ConvergenceParams::default().cluster_dominance)]
    cluster_dominance: f64,
    /// Mean-shift radius, meters.
    #[arg(long, default_value_t = ConvergenceParams::default().meanshift_bandwidth)]
    meanshift_bandwidth: f64,
    /// Steps between cluster re-estimates after convergence.
    #[arg(long, default_value_t = ConvergenceParams::default().cluster_update_period)]
    cluster_update_period: usize,
    /// RMS spread that passes step 1 for unlabeled particles, meters.
    #[arg(long, default_value_t = ConvergenceParams::default().uniform_dispersion_threshold)]
    uniform_dispersion_threshold: f64,
}

#[derive(Args, Clone)]
struct ProjectionArgs {
    /// Patches tilted more than this from vertical are ignored, degrees.
    #[arg(long, default_value_t = ProjectionParams::default().vertical_tolerance_deg)]
    vertical_tolerance_deg: f64,
    /// Shorter projected segments are dropped, meters.
    #[arg(long, default_value_t = ProjectionParams::default().min_segment_length)]
    min_segment_length: f64,
}

impl ProjectionArgs {
    /// The sensor range comes from the scan document itself.
    fn params(&self) -> ProjectionParams {
        ProjectionParams {
            vertical_tolerance_deg: self.vertical_tolerance_deg,
            min_segment_length: self.min_segment_length,
            ..Default::default()
        }
    }

    fn applied(&self, obs: &Observation) -> ProjectionParams {
        ProjectionParams {
            max_range: obs.max_range,
            ..self.params()
        }
    }
}

fn pipeline_params(k: &KernelArgs, f: &FilterArgs, c: &ConvergenceArgs) -> Result<PipelineParams> {
    let p = PipelineParams {
        kernel: KernelParams {
            alpha: k.alpha,
            gaussian_sigma: k.gaussian_sigma,
            ces_shrink: k.ces_shrink,
            resolution: k.resolution,
            n_orientations: k.n_orientations,
        },
        filter: FilterConfig {
            n_particles: f.n_particles,
            resample_pos_noise: f.resample_pos_noise,
            resample_drift_noise: f.resample_drift_noise,
            step_pos_noise: f.step_pos_noise,
            step_drift_noise: f.step_drift_noise,
            rng_seed: f.rng_seed,
            equal_groups: f.equal_groups,
        },
        convergence: ConvergenceParams {
            label_dominance: c.label_dominance,
            cluster_dominance: c.cluster_dominance,
            meanshift_bandwidth: c.meanshift_bandwidth,
            cluster_update_period: c.cluster_update_period,
            uniform_dispersion_threshold: c.uniform_dispersion_threshold,
        },
        top_fraction: k.top_fraction,
        theta_window: f.theta_window,
    };
    p.validate()?;
    Ok(p)
}

#[derive(Args)]
struct HeatmapArgs {
    /// Floor plan (palms-floorplan/1 JSON).
    #[arg(long)]
    plan: PathBuf,
    /// Scan (palms-scan/1 JSON).
    #[arg(long)]
    scan: PathBuf,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    projection: ProjectionArgs,
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    scan: PathBuf,
    /// Odometry (palms-odo/1 CSV).
    #[arg(long)]
    odometry: PathBuf,
    /// Ground truth (palms-truth/1 CSV); adds per-step errors.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// palms, uniform or uniform_ori.
    #[arg(long, default_value = "palms", value_parser = parse_method)]
    method: Method,
    #[arg(long, short)]
    out: PathBuf,
    /// Also write particle images at initialization, t1, t2 and the end.
    #[arg(long)]
    snapshots: bool,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    filter: FilterArgs,
    #[command(flatten)]
    convergence: ConvergenceArgs,
    #[command(flatten)]
    projection: ProjectionArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Scenario manifest (palms-manifest/1 JSON).
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_value = "palms,uniform_ori,uniform", value_parser = parse_method)]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 0)]
    master_seed: u64,
    /// Particle images for the first trial of every scenario and method.
    #[arg(long)]
    snapshots: bool,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    filter: FilterArgs,
    #[command(flatten)]
    convergence: ConvergenceArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// Suite spec JSON; fields left out take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    /// Overrides the spec seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the spec path length, meters.
    #[arg(long)]
    path_length: Option<f64>,
    #[arg(long)]
    starts_per_world: Option<usize>,
    #[arg(long)]
    paths_per_start: Option<usize>,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::parse(s).map_err(|e| e.to_string())
}

fn read_scan(path: &Path, proj: &ProjectionArgs) -> Result<Observation> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    load_observation(&text, &proj.params()).with_context(|| format!("loading scan {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct HeatmapOutput {
    heatmaps: HeatmapReport,
    params: PipelineParams,
    projection: ProjectionParams,
}

fn heatmap(a: HeatmapArgs) -> Result<()> {
    let params = pipeline_params(
        &a.kernel,
        &FilterArgs::defaults(),
        &ConvergenceArgs::defaults(),
    )?;
    let plan = FloorPlan::load(&a.plan)?;
    let obs = read_scan(&a.scan, &a.projection)?;
    let prep = eval::prepare_palms(&plan, &obs, &params)?;
    let report = export_heatmaps(&a.out, &prep.heatmaps, &prep.mask)?;
    for k in &prep.kernels {
        export::write_kernel_pgm(&a.out.join(format!("kernel_{}.pgm", k.orientation_index)), &k.grid, k.alpha)?;
    }
    println!(
        "theta {:.2} deg, threshold {:.4}, candidate cells {:?}",
        report.theta_deg, report.threshold_value, report.mask_cell_counts
    );
    write_json(
        &a.out.join("report.json"),
        &HeatmapOutput {
            heatmaps: report,
            params,
            projection: a.projection.applied(&obs),
        },
    )
}

#[derive(Serialize)]
struct LocalizeOutput {
    method: Method,
    seed: u64,
    outcome: eval::Outcome,
    error: Option<String>,
    t1: Option<f64>,
    t2: Option<f64>,
    dist_to_t2: Option<f64>,
    /// Last predicted position.
    p_pred: Option<[f64; 2]>,
    rmse_m: Option<f64>,
    pct_err_lt_1m: Option<f64>,
    steps: usize,
    params: PipelineParams,
    projection: ProjectionParams,
}

fn localize(a: LocalizeArgs) -> Result<()> {
    let params = pipeline_params(&a.kernel, &a.filter, &a.convergence)?;
    let plan = FloorPlan::load(&a.plan)?;
    let observation = read_scan(&a.scan, &a.projection)?;
    let odometry = odometry::load(&a.odometry)?;
    let truth = a.truth.as_deref().map(TruthTrace::load).transpose()?;
    let scenario = Scenario {
        id: a.scan.file_stem().map_or("scan".into(), |s| s.to_string_lossy().into_owned()),
        plan,
        observation,
        odometry,
        truth,
        seed: params.filter.rng_seed,
    };
    let prep = PreparedScenario::new(scenario, &params)?;
    if a.method == Method::Palms {
        if let Err(e) = &prep.palms {
            bail!("heatmap stage failed: {e}");
        }
    }
    let opts = TrialOptions {
        timeline: true,
        snapshots: a.snapshots,
    };
    let run = eval::run_trial_with(&prep, a.method, &params, params.filter.rng_seed, opts);
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("timeline.csv"), eval::timeline_csv(&run.timeline))?;
    for (name, ps) in &run.snapshots {
        let grid = eval::render_particles(&prep.scenario.plan, ps, 0.1)?;
        export::write_minmax_pgm(&a.out.join(format!("snap_{name}.pgm")), &grid)?;
    }
    let r = &run.record;
    let out = LocalizeOutput {
        method: a.method,
        seed: r.seed,
        outcome: r.outcome,
        error: r.error.clone(),
        t1: r.t1,
        t2: r.t2,
        dist_to_t2: r.dist_to_t2,
        p_pred: run.timeline.last().filter(|_| r.t2.is_some()).map(|row| [row.snapshot.pred.x, row.snapshot.pred.y]),
        rmse_m: r.rmse(),
        pct_err_lt_1m: r.pct_below_1m(),
        steps: run.timeline.len().saturating_sub(1),
        params,
        projection: a.projection.applied(&prep.scenario.observation),
    };
    println!(
        "{}: {} t2 {} pred {}",
        a.method.as_str(),
        r.outcome.as_str(),
        r.t2.map_or("-".into(), |t| format!("{t:.1}s")),
        out.p_pred.map_or("-".into(), |p| format!("({:.2}, {:.2})", p[0], p[1]))
    );
    write_json(&a.out.join("localize.json"), &out)
}

fn bench(a: BenchArgs) -> Result<()> {
    let params = pipeline_params(&a.kernel, &a.filter, &a.convergence)?;
    if a.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(a.threads).build_global()?;
    }
    let manifest = Manifest::load(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let scenarios = manifest.scenarios(base)?;
    let opts = BenchOptions {
        out_dir: Some(a.out.clone()),
        snapshots: a.snapshots,
    };
    let report = eval::run_benchmark(scenarios, &a.methods, a.trials, &params, a.master_seed, &opts)?;
    print!("{}", eval::summary_table(&report.summaries));
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec: SuiteSpec = match &a.spec {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => SuiteSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(l) = a.path_length {
        spec.path_length = l;
    }
    if let Some(n) = a.starts_per_world {
        spec.starts_per_world = n;
    }
    if let Some(n) = a.paths_per_start {
        spec.paths_per_start = n;
    }
    let suite = eval::build_suite(&spec)?;
    let manifest = eval::write_scenarios(&a.out, &suite)?;
    write_json(&a.out.join("suite.json"), &spec)?;
    println!("{} scenarios, manifest {}", suite.len(), manifest.display());
    Ok(())
}

impl FilterArgs {
    fn defaults() -> Self {
        let d = FilterConfig::default();
        FilterArgs {
            n_particles: d.n_particles,
            resample_pos_noise: d.resample_pos_noise,
            resample_drift_noise: d.resample_drift_noise,
            step_pos_noise: d.step_pos_noise,
            step_drift_noise: d.step_drift_noise,
            rng_seed: d.rng_seed,
            equal_groups: d.equal_groups,
            theta_window: PipelineParams::default().theta_window,
        }
    }
}

impl ConvergenceArgs {
    fn defaults() -> Self {
        let d = ConvergenceParams::default();
        ConvergenceArgs {
            label_dominance: d.label_dominance,
            cluster_dominance: d.cluster_dominance,
            meanshift_bandwidth: d.meanshift_bandwidth,
            cluster_update_period: d.cluster_update_period,
            uniform_dispersion_threshold: d.uniform_dispersion_threshold,
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Heatmap(a) => heatmap(a),
        Command::Localize(a) => localize(a),
        Command::Bench(a) => bench(a),
        Command::Synth(a) => synth(a),
    }
}
