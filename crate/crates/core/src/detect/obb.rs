//! Oriented-bounding-box detections produced outside the pipeline.
//!
//! Two file formats are accepted:
//!
//! * JSON Lines: a header line `{"scale": .., "size": ..}` carrying the
//!   raster georeference, then one object per detection
//!   `{"cls", "cx", "cy", "w", "h", "angle_rad", "conf"}` with an optional
//!   `"frame"` index. `w`/`h` are full box extents in pixels; `angle_rad` is
//!   the direction of the `w` side in image coordinates (`u` right,
//!   `v` down).
//! * YOLO-OBB text: `class x1 y1 x2 y2 x3 y3 x4 y4` with corners normalised
//!   by the raster size, optionally followed by a confidence.
//!
//! Pixel coordinates follow [`Georef::pixel_to_world`].

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{Column, DetectorKind, RawDetection};
use crate::bev::Georef;
use crate::error::{Error, Result};
use crate::geom::{Point2, Segment2};

pub const DEFAULT_CONFIDENCE_FLOOR: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObbClass {
    Wall = 0,
    Column = 1,
}

impl ObbClass {
    pub fn from_id(id: i64) -> Option<Self> {
        match id {
            0 => Some(ObbClass::Wall),
            1 => Some(ObbClass::Column),
            _ => None,
        }
    }
}

/// One oriented box in pixel units, canonicalised so that
/// `half_w >= half_h` and `angle in (-pi/2, pi/2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObbRecord {
    pub class: ObbClass,
    pub center: Point2,
    pub half_w: f64,
    pub half_h: f64,
    pub angle: f64,
    pub confidence: f64,
    pub frame: u32,
}

impl ObbRecord {
    pub fn new(
        class: ObbClass,
        center: Point2,
        half_w: f64,
        half_h: f64,
        angle: f64,
        confidence: f64,
    ) -> Result<Self> {
        if !(center.is_finite() && angle.is_finite() && half_w.is_finite() && half_h.is_finite()) {
            return Err(Error::Validation("non-finite OBB parameters".into()));
        }
        if half_w <= 0.0 || half_h <= 0.0 {
            return Err(Error::Validation("OBB extents must be positive".into()));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Validation(format!("confidence {confidence} outside [0, 1]")));
        }
        let (mut hw, mut hh, mut a) = (half_w, half_h, angle);
        if hw < hh {
            std::mem::swap(&mut hw, &mut hh);
            a += FRAC_PI_2;
        }
        Ok(Self {
            class,
            center,
            half_w: hw,
            half_h: hh,
            angle: fold_half_turn(a),
            confidence,
            frame: 0,
        })
    }

    /// Corners in pixel coordinates, counter-clockwise on screen starting
    /// from `+w/+h`.
    pub fn corners(&self) -> [Point2; 4] {
        let u = Point2::from_angle(self.angle);
        let v = u.perp();
        let (a, b) = (u * self.half_w, v * self.half_h);
        let c = self.center;
        [c + a + b, c - a + b, c - a - b, c + a - b]
    }

    fn from_corners(class: ObbClass, pts: [Point2; 4], confidence: f64) -> Result<Self> {
        let center = pts.iter().fold(Point2::ORIGIN, |a, p| a + *p) * 0.25;
        let e1 = pts[1] - pts[0];
        let e2 = pts[2] - pts[1];
        let angle = e1.y.atan2(e1.x);
        Self::new(class, center, 0.5 * e1.norm(), 0.5 * e2.norm(), angle, confidence)
    }
}

fn fold_half_turn(a: f64) -> f64 {
    let mut a = a.rem_euclid(PI);
    if a > FRAC_PI_2 {
        a -= PI;
    }
    a
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    cls: i64,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    angle_rad: f64,
    conf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonHeader {
    scale: f64,
    size: usize,
}

/// Parsed contents of an OBB file.
#[derive(Debug, Clone, PartialEq)]
pub struct ObbFile {
    pub georef: Option<Georef>,
    pub records: Vec<ObbRecord>,
    /// Lines with a class other than wall or column.
    pub skipped_unknown: usize,
}

impl ObbFile {
    pub fn for_frame(&self, frame: u32) -> Vec<ObbRecord> {
        self.records.iter().filter(|r| r.frame == frame).copied().collect()
    }
}

/// Reads either format, detected from the first non-blank character.
pub fn ingest_obb(path: &Path) -> Result<ObbFile> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_obb(std::io::BufReader::new(f))
}

pub fn parse_obb<R: BufRead>(r: R) -> Result<ObbFile> {
    let mut out = ObbFile {
        georef: None,
        records: Vec::new(),
        skipped_unknown: 0,
    };
    for (i, line) in r.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let parsed = if t.starts_with('{') {
            parse_json_line(t, &mut out)
        } else {
            parse_yolo_line(t, &mut out)
        };
        parsed.map_err(|msg| Error::Parse { line: lineno, msg })?;
    }
    if out.skipped_unknown > 0 {
        warn!("skipped {} OBB records with unknown class", out.skipped_unknown);
    }
    Ok(out)
}

fn parse_json_line(t: &str, out: &mut ObbFile) -> std::result::Result<(), String> {
    let value: serde_json::Value = serde_json::from_str(t).map_err(|e| e.to_string())?;
    if value.get("cls").is_none() {
        let h: JsonHeader = serde_json::from_value(value).map_err(|e| e.to_string())?;
        out.georef = Some(Georef::new(h.scale, h.size).map_err(|e| e.to_string())?);
        return Ok(());
    }
    let rec: JsonRecord = serde_json::from_value(value).map_err(|e| e.to_string())?;
    let Some(class) = ObbClass::from_id(rec.cls) else {
        out.skipped_unknown += 1;
        return Ok(());
    };
    let mut r = ObbRecord::new(
        class,
        Point2::new(rec.cx, rec.cy),
        0.5 * rec.w,
        0.5 * rec.h,
        rec.angle_rad,
        rec.conf,
    )
    .map_err(|e| e.to_string())?;
    r.frame = rec.frame.unwrap_or(0);
    out.records.push(r);
    Ok(())
}

fn parse_yolo_line(t: &str, out: &mut ObbFile) -> std::result::Result<(), String> {
    let Some(size) = out.georef.map(|g| g.size as f64) else {
        return Err("YOLO-OBB corners need a georeference header line first".into());
    };
    let fields: Vec<&str> = t.split_whitespace().collect();
    if fields.len() != 9 && fields.len() != 10 {
        return Err(format!("expected 9 or 10 fields, found {}", fields.len()));
    }
    let cls: i64 = fields[0].parse().map_err(|_| format!("bad class `{}`", fields[0]))?;
    let nums: Vec<f64> = fields[1..]
        .iter()
        .map(|f| f.parse::<f64>().map_err(|_| format!("bad number `{f}`")))
        .collect::<std::result::Result<_, _>>()?;
    let Some(class) = ObbClass::from_id(cls) else {
        out.skipped_unknown += 1;
        return Ok(());
    };
    let pts = [0, 1, 2, 3].map(|k| Point2::new(nums[2 * k] * size, nums[2 * k + 1] * size));
    let conf = nums.get(8).copied().unwrap_or(1.0);
    out.records
        .push(ObbRecord::from_corners(class, pts, conf).map_err(|e| e.to_string())?);
    Ok(())
}

/// Serialises records to the JSON Lines format, header first.
pub fn write_obb_jsonl(georef: &Georef, records: &[ObbRecord]) -> String {
    let mut s = serde_json::to_string(&JsonHeader {
        scale: georef.scale,
        size: georef.size,
    })
    .unwrap();
    s.push('\n');
    for r in records {
        let rec = JsonRecord {
            cls: r.class as i64,
            cx: r.center.x,
            cy: r.center.y,
            w: 2.0 * r.half_w,
            h: 2.0 * r.half_h,
            angle_rad: r.angle,
            conf: r.confidence,
            frame: (r.frame != 0).then_some(r.frame),
        };
        s.push_str(&serde_json::to_string(&rec).unwrap());
        s.push('\n');
    }
    s
}

/// Serialises records as YOLO-OBB normalised corners (no header).
pub fn write_yolo_obb(georef: &Georef, records: &[ObbRecord]) -> String {
    let size = georef.size as f64;
    let mut s = String::new();
    for r in records {
        let _ = write!(s, "{}", r.class as i64);
        for c in r.corners() {
            let _ = write!(s, " {:.6} {:.6}", c.x / size, c.y / size);
        }
        s.push('\n');
    }
    s
}

/// Converts boxes to metric features: walls become their major axis,
/// columns a disc of radius `(half_w + half_h) / 2`. Boxes below
/// `confidence_floor` are dropped.
pub fn obb_to_features(
    records: &[ObbRecord],
    georef: &Georef,
    confidence_floor: f64,
    frame_ts: f64,
) -> RawDetection {
    let mut out = RawDetection::empty(DetectorKind::Obb, frame_ts);
    for r in records.iter().filter(|r| r.confidence >= confidence_floor) {
        match r.class {
            ObbClass::Wall => {
                let u = Point2::from_angle(r.angle) * r.half_w;
                let a = georef.pixel_to_world(r.center.x - u.x, r.center.y - u.y);
                let b = georef.pixel_to_world(r.center.x + u.x, r.center.y + u.y);
                if let Ok(seg) = Segment2::new(a, b) {
                    out.segments.push(seg);
                }
            }
            ObbClass::Column => out.columns.push(Column {
                center: georef.pixel_to_world(r.center.x, r.center.y),
                radius: 0.5 * (r.half_w + r.half_h) * georef.scale,
            }),
        }
    }
    out
}
