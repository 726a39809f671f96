//! Wall and column detectors operating on one flattened frame.
//!
//! Four interchangeable back-ends produce a [`RawDetection`] in sensor-frame
//! metres: density-clustered sequential RANSAC on the point set, a
//! progressive probabilistic Hough transform and a gradient region-growing
//! segment detector on the raster, and an adapter for externally produced
//! oriented bounding boxes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geom::{Point2, Segment2};

pub mod hough;
pub mod lsd;
pub mod obb;
pub mod ransac;

pub use hough::{detect_hough, HoughConfig};
pub use lsd::{detect_lsd, detect_lsd_regions, LsdConfig, LsdRegion};
pub use obb::{ingest_obb, obb_to_features, ObbClass, ObbFile, ObbRecord};
pub use ransac::{detect_ransac, RansacConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Ransac,
    Hough,
    Lsd,
    Obb,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 4] = [
        DetectorKind::Ransac,
        DetectorKind::Hough,
        DetectorKind::Lsd,
        DetectorKind::Obb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Ransac => "ransac",
            DetectorKind::Hough => "hough",
            DetectorKind::Lsd => "lsd",
            DetectorKind::Obb => "obb",
        }
    }

    /// Edge-tracing detectors report both faces of a wall band.
    pub fn yields_envelopes(self) -> bool {
        matches!(self, DetectorKind::Hough | DetectorKind::Lsd)
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        DetectorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown detector `{s}`; valid names: ransac, hough, lsd, obb"
                ))
            })
    }
}

/// A column footprint. Serialises as `{x, y, r}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ColumnWire", into = "ColumnWire")]
pub struct Column {
    pub center: Point2,
    pub radius: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ColumnWire {
    x: f64,
    y: f64,
    r: f64,
}

impl From<ColumnWire> for Column {
    fn from(w: ColumnWire) -> Self {
        Column {
            center: Point2::new(w.x, w.y),
            radius: w.r,
        }
    }
}

impl From<Column> for ColumnWire {
    fn from(c: Column) -> Self {
        ColumnWire {
            x: c.center.x,
            y: c.center.y,
            r: c.radius,
        }
    }
}

/// Output of one detector run on one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub segments: Vec<Segment2>,
    pub columns: Vec<Column>,
    pub detector: DetectorKind,
    pub frame_ts: f64,
    /// Candidates dropped for being too short; kept for diagnostics.
    #[serde(default)]
    pub rejected: Vec<Segment2>,
}

impl RawDetection {
    pub fn empty(detector: DetectorKind, frame_ts: f64) -> Self {
        Self {
            segments: Vec::new(),
            columns: Vec::new(),
            detector,
            frame_ts,
            rejected: Vec::new(),
        }
    }
}

pub(crate) fn positive(name: &str, v: f64) -> Result<(), Error> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}
