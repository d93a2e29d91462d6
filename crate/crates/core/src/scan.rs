//! Observed wall segments around the observation point.
//!
//! A scan arrives either as vertical planar patches from a 360° plane
//! detection pass (3-D poses) or as already-projected 2-D segments. Both end
//! up as an [`Observation`]: segments in the scan's local frame with the
//! observation point at the origin.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point2, Segment2D};

pub const SCAN_FORMAT: &str = "palms-scan/1";

/// Sensor range cap, meters.
pub const DEFAULT_MAX_RANGE: f64 = 5.0;

/// Endpoints may sit this far beyond `max_range` (patch extents overshoot).
pub const RANGE_SLACK: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub segments: Vec<Segment2D>,
    pub max_range: f64,
}

impl Observation {
    pub fn new(segments: Vec<Segment2D>, max_range: f64) -> Result<Self> {
        if !(max_range > 0.0 && max_range.is_finite()) {
            return Err(Error::Validation(format!("max_range must be > 0, got {max_range}")));
        }
        if segments.is_empty() {
            return Err(Error::NoVerticalPatches { rejected: 0 });
        }
        let limit = max_range + RANGE_SLACK + 1e-9;
        for (i, s) in segments.iter().enumerate() {
            if s.a.norm() > limit || s.b.norm() > limit {
                return Err(Error::Validation(format!(
                    "segment {i} reaches beyond max_range + {RANGE_SLACK} m"
                )));
            }
        }
        Ok(Observation { segments, max_range })
    }

    /// Clips every segment to the sensor disk, drops pieces shorter than
    /// `min_length`, and validates what is left.
    pub fn from_raw(segments: &[Segment2D], max_range: f64, min_length: f64) -> Result<Self> {
        let kept: Vec<Segment2D> = segments
            .iter()
            .filter_map(|s| clip_to_range(s, max_range))
            .filter(|s| s.length() >= min_length)
            .collect();
        let rejected = segments.len() - kept.len();
        if kept.is_empty() {
            return Err(Error::NoVerticalPatches { rejected });
        }
        Observation::new(kept, max_range)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        ScanDoc::from_json(text)?.into_observation(&ProjectionParams::default())
    }

    pub fn to_json(&self) -> String {
        let doc = ScanDoc {
            format: SCAN_FORMAT.into(),
            units: "meters".into(),
            max_range: self.max_range,
            patches: None,
            segments: Some(self.segments.clone()),
        };
        serde_json::to_string_pretty(&doc).expect("scan serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Observation::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Keeps segments that fit the slack disk; anything reaching past it is cut
/// back to the `max_range` disk.
fn clip_to_range(s: &Segment2D, max_range: f64) -> Option<Segment2D> {
    let slack = max_range + RANGE_SLACK;
    if s.a.norm() <= slack && s.b.norm() <= slack {
        return Some(*s);
    }
    // |a + t d|^2 = r^2
    let d = s.b - s.a;
    let (qa, qb, qc) = (d.dot(d), 2.0 * s.a.dot(d), s.a.dot(s.a) - max_range * max_range);
    let disc = qb * qb - 4.0 * qa * qc;
    if disc <= 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = ((-qb - sq) / (2.0 * qa)).max(0.0);
    let t1 = ((-qb + sq) / (2.0 * qa)).min(1.0);
    if t1 <= t0 {
        return None;
    }
    Segment2D::new(s.point_at(t0), s.point_at(t1)).ok()
}

/// A planar patch reported by plane detection, in meters; `z` is up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPatch {
    pub center: [f64; 3],
    /// Width (horizontal in-plane extent) and height.
    pub extent: [f64; 2],
    pub normal: [f64; 3],
}

impl PlanarPatch {
    pub fn validate(&self) -> Result<()> {
        let n = self.normal;
        let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!("patch normal has norm {norm}")));
        }
        if !(self.extent[0] > 0.0 && self.extent[1] > 0.0) {
            return Err(Error::Validation("patch extent must be positive".into()));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::Validation("non-finite patch center".into()));
        }
        Ok(())
    }

    /// Plane is vertical when its normal lies within `tol_deg` of horizontal.
    pub fn is_vertical(&self, tol_deg: f64) -> bool {
        self.normal[2].abs() <= tol_deg.to_radians().sin()
    }

    /// Ground-plane footprint: the horizontal midline through the center.
    pub fn footprint(&self) -> Option<Segment2D> {
        let (nx, ny) = (self.normal[0], self.normal[1]);
        let h = nx.hypot(ny);
        if h == 0.0 {
            return None;
        }
        let dir = Point2::new(ny / h, -nx / h);
        let c = Point2::new(self.center[0], self.center[1]);
        let half = dir * (self.extent[0] / 2.0);
        Segment2D::new(c - half, c + half).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub vertical_tolerance_deg: f64,
    /// Shorter projected segments are treated as clutter and dropped.
    pub min_segment_length: f64,
    pub max_range: f64,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        ProjectionParams {
            vertical_tolerance_deg: 10.0,
            min_segment_length: 0.3,
            max_range: DEFAULT_MAX_RANGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub observation: Observation,
    /// Patches dropped because they were not vertical.
    pub non_vertical: usize,
    /// Vertical patches dropped by the range or length filters.
    pub filtered: usize,
}

pub fn project_patches(patches: &[PlanarPatch], params: &ProjectionParams) -> Result<Projection> {
    if patches.is_empty() {
        return Err(Error::NoVerticalPatches { rejected: 0 });
    }
    for p in patches {
        p.validate()?;
    }
    let vertical: Vec<Segment2D> = patches
        .iter()
        .filter(|p| p.is_vertical(params.vertical_tolerance_deg))
        .filter_map(PlanarPatch::footprint)
        .collect();
    let non_vertical = patches.len() - vertical.len();
    let observation = Observation::from_raw(&vertical, params.max_range, params.min_segment_length)
        .map_err(|e| match e {
            Error::NoVerticalPatches { .. } => Error::NoVerticalPatches {
                rejected: patches.len(),
            },
            other => other,
        })?;
    let filtered = vertical.len() - observation.segments.len();
    Ok(Projection {
        observation,
        non_vertical,
        filtered,
    })
}

#[derive(Serialize, Deserialize)]
struct ScanDoc {
    format: String,
    units: String,
    max_range: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    patches: Option<Vec<PlanarPatch>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    segments: Option<Vec<Segment2D>>,
}

impl ScanDoc {
    fn from_json(text: &str) -> Result<Self> {
        let doc: ScanDoc = serde_json::from_str(text)?;
        if doc.format != SCAN_FORMAT {
            return Err(Error::Parse(format!("unsupported format tag {:?}", doc.format)));
        }
        if doc.units != "meters" {
            return Err(Error::Parse(format!("unsupported units {:?}", doc.units)));
        }
        Ok(doc)
    }

    fn into_observation(self, params: &ProjectionParams) -> Result<Observation> {
        match (self.patches, self.segments) {
            (Some(patches), None) => {
                let params = ProjectionParams {
                    max_range: self.max_range,
                    ..*params
                };
                Ok(project_patches(&patches, &params)?.observation)
            }
            (None, Some(segments)) => Observation::from_raw(&segments, self.max_range, 0.0),
            _ => Err(Error::Parse(
                "scan must contain exactly one of `patches` or `segments`".into(),
            )),
        }
    }
}

/// Loads a scan document, projecting patches with the given parameters.
pub fn load_observation(text: &str, params: &ProjectionParams) -> Result<Observation> {
    ScanDoc::from_json(text)?.into_observation(params)
}
