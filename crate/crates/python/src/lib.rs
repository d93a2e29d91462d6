//! Python bindings. Parameters cross the boundary as keyword overrides on
//! `Params`; results come back as plain lists and dicts.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyList, PyString};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use palms::convergence;
use palms::eval::{self, Method, PipelineParams};
use palms::filter::{self, Particle};
use palms::floorplan::{self, CollisionIndex};
use palms::geometry::{Angle, Point2, Segment2D};
use palms::odometry::{self, OdometryStep};
use palms::scan::{load_observation, ProjectionParams};
use palms::synth;

fn to_py(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn core_err(e: palms::Error) -> PyErr {
    match e {
        palms::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => to_py(e),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => PyBool::new(py, *b).to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (_, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => PyFloat::new(py, n.as_f64().unwrap_or(f64::NAN)).into_any(),
        },
        Value::String(s) => PyString::new(py, s).into_any(),
        Value::Array(a) => PyList::new(py, a.iter().map(|x| json_to_py(py, x)).collect::<PyResult<Vec<_>>>()?)?.into_any(),
        Value::Object(m) => {
            let d = PyDict::new(py);
            for (k, x) in m {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn py_scalar(v: &Bound<'_, PyAny>) -> PyResult<Value> {
    if v.is_instance_of::<PyBool>() {
        Ok(Value::Bool(v.extract()?))
    } else if v.is_instance_of::<PyInt>() {
        Ok(Value::from(v.extract::<i64>()?))
    } else {
        let f: f64 = v.extract()?;
        serde_json::Number::from_f64(f).map(Value::Number).ok_or_else(|| to_py("parameters must be finite"))
    }
}

fn serialized<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    json_to_py(py, &serde_json::to_value(v).map_err(to_py)?)
}

/// Every tunable of the pipeline. Keyword arguments override defaults by
/// field name, e.g. `Params(alpha=0.5, n_particles=500)`.
#[pyclass(module = "palms", from_py_object)]
#[derive(Clone)]
struct Params {
    inner: PipelineParams,
}

const SECTIONS: [&str; 3] = ["kernel", "filter", "convergence"];

#[pymethods]
impl Params {
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut tree = serde_json::to_value(PipelineParams::default()).map_err(to_py)?;
        if let Some(kw) = overrides {
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                let value = py_scalar(&v)?;
                let slot = if tree.get(&key).is_some_and(|x| !x.is_object()) {
                    tree.get_mut(&key)
                } else {
                    SECTIONS
                        .iter()
                        .find(|s| tree[**s].get(&key).is_some())
                        .and_then(|s| tree[*s].get_mut(&key))
                };
                *slot.ok_or_else(|| to_py(format!("unknown parameter '{key}'")))? = value;
            }
        }
        let inner: PipelineParams = serde_json::from_value(tree).map_err(to_py)?;
        inner.validate().map_err(core_err)?;
        Ok(Params { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: PipelineParams = serde_json::from_str(text).map_err(to_py)?;
        inner.validate().map_err(core_err)?;
        Ok(Params { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(to_py)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialized(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Params({:?})", self.inner)
    }
}

fn params_or_default(p: Option<Params>) -> PipelineParams {
    p.map(|p| p.inner).unwrap_or_default()
}

type Quad = (f64, f64, f64, f64);

fn segments_from(quads: Vec<Quad>) -> PyResult<Vec<Segment2D>> {
    quads
        .into_iter()
        .map(|(ax, ay, bx, by)| Segment2D::new(Point2::new(ax, ay), Point2::new(bx, by)).map_err(core_err))
        .collect()
}

fn quads(segments: &[Segment2D]) -> Vec<Quad> {
    segments.iter().map(|s| (s.a.x, s.a.y, s.b.x, s.b.y)).collect()
}

/// Building walls in meters.
#[pyclass(module = "palms", from_py_object)]
#[derive(Clone)]
struct FloorPlan {
    inner: floorplan::FloorPlan,
}

#[pymethods]
impl FloorPlan {
    /// Plan from `(ax, ay, bx, by)` wall segments; bounds are their extent.
    #[new]
    #[pyo3(signature = (walls, name = "plan"))]
    fn new(walls: Vec<Quad>, name: &str) -> PyResult<Self> {
        let inner = floorplan::FloorPlan::from_walls(name, segments_from(walls)?).map_err(core_err)?;
        Ok(FloorPlan { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(FloorPlan {
            inner: floorplan::FloorPlan::load(path).map_err(core_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(FloorPlan {
            inner: floorplan::FloorPlan::from_json(text).map_err(core_err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(core_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn walls(&self) -> Vec<Quad> {
        quads(&self.inner.walls)
    }

    /// `(min_x, min_y, max_x, max_y)`.
    #[getter]
    fn bounds(&self) -> Quad {
        let b = self.inner.bounds;
        (b.min.x, b.min.y, b.max.x, b.max.y)
    }

    /// Dominant wall direction modulo 90°, degrees.
    fn principal_orientation_deg(&self) -> f64 {
        self.inner.principal_orientation().degrees()
    }

    /// Whether the straight move between two points crosses a wall.
    fn blocked(&self, from_xy: (f64, f64), to_xy: (f64, f64)) -> bool {
        let index = CollisionIndex::new(&self.inner);
        index.path_hits_wall(Point2::new(from_xy.0, from_xy.1), Point2::new(to_xy.0, to_xy.1))
    }

    fn __repr__(&self) -> String {
        format!("FloorPlan('{}', {} walls)", self.inner.name, self.inner.walls.len())
    }
}

/// Wall segments seen from one point, in the scan's own frame.
#[pyclass(module = "palms", from_py_object)]
#[derive(Clone)]
struct Observation {
    inner: palms::scan::Observation,
}

#[pymethods]
impl Observation {
    #[new]
    #[pyo3(signature = (segments, max_range = palms::scan::DEFAULT_MAX_RANGE))]
    fn new(segments: Vec<Quad>, max_range: f64) -> PyResult<Self> {
        let inner = palms::scan::Observation::from_raw(&segments_from(segments)?, max_range, 0.0).map_err(core_err)?;
        Ok(Observation { inner })
    }

    /// Reads a scan document; patch lists are projected with default settings.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| PyOSError::new_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Observation {
            inner: load_observation(text, &ProjectionParams::default()).map_err(core_err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn segments(&self) -> Vec<Quad> {
        quads(&self.inner.segments)
    }

    #[getter]
    fn max_range(&self) -> f64 {
        self.inner.max_range
    }

    /// Rotation that aligns the scan's principal direction with the plan's.
    fn alignment_deg(&self, plan: &FloorPlan) -> PyResult<f64> {
        let po = palms::geometry::principal_orientations(&self.inner.segments).map_err(core_err)?;
        Ok(palms::geometry::alignment_angle(po, plan.inner.principal_orientation()).degrees())
    }
}

/// Per-orientation heatmaps and candidate masks for one scan.
#[pyclass(module = "palms")]
struct Heatmaps {
    prep: eval::PalmsPrep,
}

#[pymethods]
impl Heatmaps {
    #[getter]
    fn theta_deg(&self) -> f64 {
        self.prep.theta.degrees()
    }

    #[getter]
    fn rotations_deg(&self) -> Vec<f64> {
        self.prep.heatmaps.rotations.iter().map(|r| r.degrees()).collect()
    }

    /// `(width, height)` in cells.
    #[getter]
    fn shape(&self) -> (usize, usize) {
        let s = self.prep.heatmaps.spec();
        (s.width, s.height)
    }

    /// `(origin_x, origin_y, resolution)` of the grid.
    #[getter]
    fn grid(&self) -> (f64, f64, f64) {
        let s = self.prep.heatmaps.spec();
        (s.origin.x, s.origin.y, s.resolution)
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.prep.mask.threshold_value
    }

    #[getter]
    fn mask_counts(&self) -> Vec<usize> {
        self.prep.mask.counts()
    }

    /// Scores of orientation `k`, row-major (`j * width + i`).
    fn scores(&self, k: usize) -> PyResult<Vec<f64>> {
        let m = self.prep.heatmaps.maps.get(k).ok_or_else(|| to_py("orientation out of range"))?;
        Ok(m.values.clone())
    }

    /// Candidate mask of orientation `k`, row-major.
    fn mask(&self, k: usize) -> PyResult<Vec<bool>> {
        let m = self.prep.mask.masks.get(k).ok_or_else(|| to_py("orientation out of range"))?;
        let (w, h) = (m.spec.width, m.spec.height);
        Ok((0..h).flat_map(|j| (0..w).map(move |i| (i, j))).map(|(i, j)| m.get(i, j)).collect())
    }

    /// Writes PGM heatmaps, PBM masks and a JSON sidecar into `dir`.
    fn export<'py>(&self, py: Python<'py>, dir: PathBuf) -> PyResult<Bound<'py, PyAny>> {
        let report = palms::heatmap::export_heatmaps(&dir, &self.prep.heatmaps, &self.prep.mask).map_err(core_err)?;
        serialized(py, &report)
    }
}

#[pyfunction]
#[pyo3(signature = (plan, observation, params = None))]
fn heatmaps(py: Python<'_>, plan: &FloorPlan, observation: &Observation, params: Option<Params>) -> PyResult<Heatmaps> {
    let p = params_or_default(params);
    let prep = py.detach(|| eval::prepare_palms(&plan.inner, &observation.inner, &p)).map_err(core_err)?;
    Ok(Heatmaps { prep })
}

type OdoRow = (f64, f64, f64, f64);

fn odometry_from(rows: Vec<OdoRow>) -> Vec<OdometryStep> {
    rows.into_iter()
        .map(|(t, dx, dy, dh)| OdometryStep::new(t, Point2::new(dx, dy), Angle::from_degrees(dh)))
        .collect()
}

/// Odometry file as `(t, dx, dy, dheading_deg)` rows.
#[pyfunction]
fn load_odometry(path: PathBuf) -> PyResult<Vec<OdoRow>> {
    let steps = odometry::load(path).map_err(core_err)?;
    Ok(steps.iter().map(|s| (s.t, s.delta.x, s.delta.y, s.heading_delta.signed_degrees())).collect())
}

#[pyfunction]
fn save_odometry(path: PathBuf, rows: Vec<OdoRow>) -> PyResult<()> {
    odometry::save(path, &odometry_from(rows)).map_err(core_err)
}

/// A scan with its walk: plan, observation, odometry and optional truth.
#[pyclass(module = "palms", from_py_object)]
#[derive(Clone)]
struct Scenario {
    inner: eval::Scenario,
}

#[pymethods]
impl Scenario {
    /// `truth` is a palms-truth/1 file; it enables per-step errors.
    #[new]
    #[pyo3(signature = (plan, observation, odometry, truth = None, id = "scenario"))]
    fn new(plan: &FloorPlan, observation: &Observation, odometry: Vec<OdoRow>, truth: Option<PathBuf>, id: &str) -> PyResult<Self> {
        let truth = truth.map(synth::TruthTrace::load).transpose().map_err(core_err)?;
        let inner = eval::Scenario {
            id: id.to_string(),
            plan: plan.inner.clone(),
            observation: observation.inner.clone(),
            odometry: odometry_from(odometry),
            truth,
            seed: 0,
        };
        inner.validate().map_err(core_err)?;
        Ok(Scenario { inner })
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn n_steps(&self) -> usize {
        self.inner.odometry.len()
    }

    /// Ground-truth positions, one per pose, if known.
    #[getter]
    fn truth(&self) -> Option<Vec<(f64, f64)>> {
        self.inner
            .truth
            .as_ref()
            .map(|t| t.poses.iter().map(|p| (p.position.x, p.position.y)).collect())
    }
}

/// Scenarios listed in a manifest; relative paths resolve against it.
#[pyfunction]
fn load_manifest(path: PathBuf) -> PyResult<Vec<Scenario>> {
    let m = eval::Manifest::load(&path).map_err(core_err)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let list = m.scenarios(base).map_err(core_err)?;
    Ok(list.into_iter().map(|inner| Scenario { inner }).collect())
}

/// Result of one localization run.
#[pyclass(module = "palms")]
struct Trial {
    run: eval::TrialRun,
}

#[pymethods]
impl Trial {
    #[getter]
    fn outcome(&self) -> &'static str {
        self.run.record.outcome.as_str()
    }

    #[getter]
    fn t1(&self) -> Option<f64> {
        self.run.record.t1
    }

    #[getter]
    fn t2(&self) -> Option<f64> {
        self.run.record.t2
    }

    #[getter]
    fn dist_to_t2(&self) -> Option<f64> {
        self.run.record.dist_to_t2
    }

    /// `(t, error_m)` after convergence.
    #[getter]
    fn post_errors(&self) -> Vec<(f64, f64)> {
        self.run.record.post_errors.clone()
    }

    #[getter]
    fn error(&self) -> Option<String> {
        self.run.record.error.clone()
    }

    fn rmse(&self) -> Option<f64> {
        self.run.record.rmse()
    }

    fn pct_below_1m(&self) -> Option<f64> {
        self.run.record.pct_below_1m()
    }

    /// Predicted positions per step.
    fn predictions(&self) -> Vec<(f64, f64)> {
        self.run.timeline.iter().map(|r| (r.snapshot.pred.x, r.snapshot.pred.y)).collect()
    }

    /// One dict per step: step, t, phase, dominant_label, shares, pred, err.
    fn timeline<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialized(py, &self.run.timeline)
    }

    fn timeline_csv(&self) -> String {
        eval::timeline_csv(&self.run.timeline)
    }

    fn __repr__(&self) -> String {
        let r = &self.run.record;
        let t2 = r.t2.map_or("None".into(), |t| format!("{t:.1}"));
        format!("Trial({}, {}, t2={t2})", r.method.as_str(), r.outcome.as_str())
    }
}

fn method_from(s: &str) -> PyResult<Method> {
    Method::parse(s).map_err(core_err)
}

/// Runs the whole pipeline on a scenario. `method` is palms, uniform or
/// uniform_ori.
#[pyfunction]
#[pyo3(signature = (scenario, method = "palms", params = None, seed = 0))]
fn localize(py: Python<'_>, scenario: &Scenario, method: &str, params: Option<Params>, seed: u64) -> PyResult<Trial> {
    let m = method_from(method)?;
    let p = params_or_default(params);
    p.validate().map_err(core_err)?;
    let sc = scenario.inner.clone();
    let run = py.detach(move || -> palms::Result<eval::TrialRun> {
        let prep = eval::PreparedScenario::new(sc, &p)?;
        let opts = eval::TrialOptions {
            timeline: true,
            snapshots: false,
        };
        Ok(eval::run_trial_with(&prep, m, &p, seed, opts))
    });
    Ok(Trial { run: run.map_err(core_err)? })
}

type ParticleRow = (f64, f64, f64, Option<usize>);

/// Step-by-step access to the particle filter.
#[pyclass(module = "palms")]
struct ParticleFilter {
    inner: filter::ParticleFilter,
    index: CollisionIndex,
}

#[pymethods]
impl ParticleFilter {
    /// Particles as `(x, y, drift_deg, label)` rows.
    #[new]
    #[pyo3(signature = (plan, particles, params = None, seed = 0))]
    fn new(plan: &FloorPlan, particles: Vec<ParticleRow>, params: Option<Params>, seed: u64) -> PyResult<Self> {
        let cfg = params_or_default(params).filter;
        let ps = particles
            .into_iter()
            .map(|(x, y, d, l)| Particle::new(Point2::new(x, y), Angle::from_degrees(d), l))
            .collect();
        let inner = filter::ParticleFilter::new(ps, cfg, ChaCha8Rng::seed_from_u64(seed)).map_err(core_err)?;
        Ok(ParticleFilter {
            inner,
            index: CollisionIndex::new(&plan.inner),
        })
    }

    /// Seeded from the candidate masks, one label per orientation.
    #[staticmethod]
    #[pyo3(signature = (plan, heatmaps, params = None, seed = 0))]
    fn from_heatmaps(plan: &FloorPlan, heatmaps: &Heatmaps, params: Option<Params>, seed: u64) -> PyResult<Self> {
        let cfg = params_or_default(params).filter;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps = filter::init_palms(&heatmaps.prep.mask, heatmaps.prep.theta, &plan.inner.bounds, &cfg, &mut rng).map_err(core_err)?;
        let inner = filter::ParticleFilter::new(ps, cfg, rng).map_err(core_err)?;
        Ok(ParticleFilter {
            inner,
            index: CollisionIndex::new(&plan.inner),
        })
    }

    /// Uniform over the plan with uniformly random drift, unlabeled.
    #[staticmethod]
    #[pyo3(signature = (plan, params = None, seed = 0))]
    fn uniform(plan: &FloorPlan, params: Option<Params>, seed: u64) -> PyResult<Self> {
        let cfg = params_or_default(params).filter;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps = filter::init_uniform(&plan.inner.bounds, &cfg, &mut rng).map_err(core_err)?;
        let inner = filter::ParticleFilter::new(ps, cfg, rng).map_err(core_err)?;
        Ok(ParticleFilter {
            inner,
            index: CollisionIndex::new(&plan.inner),
        })
    }

    /// Applies one odometry step; returns how many particles were replaced.
    fn step(&mut self, t: f64, dx: f64, dy: f64, dheading_deg: f64) -> PyResult<usize> {
        let odo = OdometryStep::new(t, Point2::new(dx, dy), Angle::from_degrees(dheading_deg));
        Ok(self.inner.step(&odo, &self.index).map_err(core_err)?.dead())
    }

    #[getter]
    fn steps_taken(&self) -> usize {
        self.inner.steps_taken()
    }

    fn particles(&self) -> Vec<ParticleRow> {
        self.inner
            .particles
            .iter()
            .map(|p| (p.position.x, p.position.y, p.drift().degrees(), p.label))
            .collect()
    }

    fn mean_position(&self) -> (f64, f64) {
        let m = filter::mean_position(&self.inner.particles);
        (m.x, m.y)
    }

    fn __len__(&self) -> usize {
        self.inner.particles.len()
    }
}

/// Flat-kernel mean shift. Returns `(assignment, modes, sizes)` with
/// clusters ordered largest first.
#[pyfunction]
fn mean_shift(points: Vec<(f64, f64)>, bandwidth: f64) -> PyResult<(Vec<usize>, Vec<(f64, f64)>, Vec<usize>)> {
    if !(bandwidth > 0.0) {
        return Err(to_py("bandwidth must be > 0"));
    }
    let pts: Vec<Point2> = points.iter().map(|&(x, y)| Point2::new(x, y)).collect();
    let ms = convergence::mean_shift(&pts, bandwidth);
    Ok((ms.assignment, ms.modes.iter().map(|p| (p.x, p.y)).collect(), ms.sizes))
}

/// Writes a synthetic suite (plans, scans, odometry, truth, manifest) into
/// `out_dir`; `spec` is suite-spec JSON. Returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, spec = None))]
fn synth_suite(py: Python<'_>, out_dir: PathBuf, spec: Option<&str>) -> PyResult<PathBuf> {
    let spec: eval::SuiteSpec = match spec {
        Some(s) => serde_json::from_str(s).map_err(to_py)?,
        None => eval::SuiteSpec::default(),
    };
    py.detach(|| {
        let suite = eval::build_suite(&spec)?;
        eval::write_scenarios(&out_dir, &suite)
    })
    .map_err(core_err)
}

/// Monte Carlo benchmark over a manifest. Returns the report (parameters,
/// seeds and per-method summaries) as a dict.
#[pyfunction]
#[pyo3(signature = (manifest, trials = 100, methods = None, params = None, master_seed = 0, out_dir = None))]
fn benchmark<'py>(
    py: Python<'py>,
    manifest: PathBuf,
    trials: usize,
    methods: Option<Vec<String>>,
    params: Option<Params>,
    master_seed: u64,
    out_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let methods = match methods {
        Some(ms) => ms.iter().map(|m| method_from(m)).collect::<PyResult<Vec<_>>>()?,
        None => Method::ALL.to_vec(),
    };
    let scenarios = load_manifest(manifest)?.into_iter().map(|s| s.inner).collect();
    let p = params_or_default(params);
    let opts = eval::BenchOptions {
        out_dir,
        snapshots: false,
    };
    let report = py
        .detach(|| eval::run_benchmark(scenarios, &methods, trials, &p, master_seed, &opts))
        .map_err(core_err)?;
    serialized(py, &report)
}

#[pymodule]
#[pyo3(name = "palms")]
fn palms_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Params>()?;
    m.add_class::<FloorPlan>()?;
    m.add_class::<Observation>()?;
    m.add_class::<Heatmaps>()?;
    m.add_class::<Scenario>()?;
    m.add_class::<Trial>()?;
    m.add_class::<ParticleFilter>()?;
    m.add_function(wrap_pyfunction!(heatmaps, m)?)?;
    m.add_function(wrap_pyfunction!(load_odometry, m)?)?;
    m.add_function(wrap_pyfunction!(save_odometry, m)?)?;
    m.add_function(wrap_pyfunction!(load_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(localize, m)?)?;
    m.add_function(wrap_pyfunction!(mean_shift, m)?)?;
    m.add_function(wrap_pyfunction!(synth_suite, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark, m)?)?;
    Ok(())
}
