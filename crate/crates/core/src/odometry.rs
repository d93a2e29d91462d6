//! Dead-reckoning steps and their delimited-text trace format.
//!
//! ```text
//! # format: palms-odo/1
//! t,dx,dy,dheading_deg
//! 0.1,0.12,0.0,0.0
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Angle, Point2};

pub const ODOMETRY_FORMAT: &str = "palms-odo/1";

/// Largest displacement accepted for a single step, meters.
pub const MAX_STEP_LENGTH: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryStep {
    /// Timestamp at the end of the step, seconds.
    pub t: f64,
    /// Displacement in the tracker's local frame.
    pub delta: Point2,
    pub heading_delta: Angle,
}

impl OdometryStep {
    pub fn new(t: f64, delta: Point2, heading_delta: Angle) -> Self {
        OdometryStep { t, delta, heading_delta }
    }
}

pub fn validate_trace(steps: &[OdometryStep]) -> Result<()> {
    let mut prev = f64::NEG_INFINITY;
    for (i, s) in steps.iter().enumerate() {
        if !s.t.is_finite() || !s.delta.is_finite() {
            return Err(Error::Validation(format!("odometry step {i} is not finite")));
        }
        if s.t <= prev {
            return Err(Error::Validation(format!("odometry step {i}: time is not strictly increasing")));
        }
        if s.delta.norm() >= MAX_STEP_LENGTH {
            return Err(Error::Validation(format!(
                "odometry step {i}: displacement {:.3} m exceeds {MAX_STEP_LENGTH} m",
                s.delta.norm()
            )));
        }
        prev = s.t;
    }
    Ok(())
}

/// Net heading of the summed local displacements over the first `window`
/// steps, or `None` if they cancel out.
pub fn net_heading(steps: &[OdometryStep], window: usize) -> Option<Angle> {
    let sum = steps
        .iter()
        .take(window)
        .fold(Point2::ORIGIN, |acc, s| acc + s.delta);
    (sum.norm() > 1e-9).then(|| Angle::from_radians(sum.y.atan2(sum.x)))
}

pub fn to_csv(steps: &[OdometryStep]) -> String {
    let mut out = format!("# format: {ODOMETRY_FORMAT}\nt,dx,dy,dheading_deg\n");
    for s in steps {
        out.push_str(&format!(
            "{},{},{},{}\n",
            s.t,
            s.delta.x,
            s.delta.y,
            s.heading_delta.signed_degrees()
        ));
    }
    out
}

pub fn from_csv(text: &str) -> Result<Vec<OdometryStep>> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let tag = first.trim().trim_start_matches('#').trim();
    if tag != format!("format: {ODOMETRY_FORMAT}") {
        return Err(Error::Parse(format!("expected header 'format: {ODOMETRY_FORMAT}', got '{}'", first.trim())));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(rest.as_bytes());
    let headers = rdr.headers()?.clone();
    let want = ["t", "dx", "dy", "dheading_deg"];
    if headers.len() != 4 || headers.iter().zip(want).any(|(h, w)| h != w) {
        return Err(Error::Parse(format!("odometry columns must be {}", want.join(","))));
    }
    let mut steps = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let f = |k: usize| -> Result<f64> {
            row[k]
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", row.position().map_or(0, |p| p.line() + 1))))
        };
        steps.push(OdometryStep::new(f(0)?, Point2::new(f(1)?, f(2)?), Angle::from_degrees(f(3)?)));
    }
    validate_trace(&steps)?;
    Ok(steps)
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<OdometryStep>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_csv(&text)
}

pub fn save(path: impl AsRef<Path>, steps: &[OdometryStep]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_csv(steps)).map_err(|e| Error::io(path, e))
}
