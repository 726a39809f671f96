//! Oriented-box training labels derived from world geometry, plus
//! procedural speckle noise for the matching BEV images.
//!
//! A wall label covers the part of its centreline inside the raster. Its
//! half height is half the wall thickness widened by two ranging sigmas,
//! the spread the rasterised band actually shows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FloorplanWorld, SensorModel};
use crate::bev::{BevImage, Georef};
use crate::detect::{ObbClass, ObbRecord};
use crate::geom::{Point2, Pose2, Segment2};

/// Liang-Barsky clip of `s` to the square `[-h, h)^2`.
fn clip_to_square(s: Segment2, h: f64) -> Option<Segment2> {
    let d = s.p2 - s.p1;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-d.x, s.p1.x + h), (d.x, h - s.p1.x), (-d.y, s.p1.y + h), (d.y, h - s.p1.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t1 > t0).then(|| Segment2 {
        p1: s.p1 + d * t0,
        p2: s.p1 + d * t1,
    })
}

/// Labels for everything within the raster and sensor range as seen from
/// `pose`, in pixel coordinates of `georef`.
pub fn export_obb_labels(world: &FloorplanWorld, sensor: &SensorModel, pose: &Pose2, georef: &Georef) -> Vec<ObbRecord> {
    let inv = pose.inverse();
    let h = georef.half_range() - 0.5 * georef.scale;
    let mut out = Vec::new();
    for w in &world.walls {
        let local = Segment2 {
            p1: inv.apply(w.start),
            p2: inv.apply(w.end),
        };
        let Some(c) = clip_to_square(local, h) else { continue };
        if c.length() < georef.scale || c.distance_to_point(Point2::ORIGIN) > sensor.max_range {
            continue;
        }
        let (u1, v1) = georef.world_to_pixel_f(c.p1);
        let (u2, v2) = georef.world_to_pixel_f(c.p2);
        let half_h = (0.5 * w.thickness + 2.0 * sensor.sigma_r) / georef.scale;
        if let Ok(r) = ObbRecord::new(
            ObbClass::Wall,
            Point2::new(0.5 * (u1 + u2), 0.5 * (v1 + v2)),
            0.5 * c.length() / georef.scale,
            half_h,
            (v2 - v1).atan2(u2 - u1),
            1.0,
        ) {
            out.push(r);
        }
    }
    for col in &world.columns {
        let p = inv.apply(col.center);
        if p.x.abs() > h || p.y.abs() > h || p.norm() > sensor.max_range {
            continue;
        }
        let (u, v) = georef.world_to_pixel_f(p);
        let r = col.radius / georef.scale;
        if let Ok(rec) = ObbRecord::new(ObbClass::Column, Point2::new(u, v), r, r, 0.0, 1.0) {
            out.push(rec);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeckleMode {
    /// Patches anywhere in the occupied bounding box.
    Global,
    /// Patches centred on wall labels.
    OnWalls,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeckleConfig {
    pub patches: usize,
    /// Patch side in pixels.
    pub size: usize,
    /// Fraction of patch pixels switched on.
    pub density: f64,
    pub mode: SpeckleMode,
    pub seed: u64,
}

impl Default for SpeckleConfig {
    fn default() -> Self {
        Self {
            patches: 40,
            size: 24,
            density: 0.08,
            mode: SpeckleMode::Global,
            seed: 0,
        }
    }
}

/// Copy of `img` with random speckle patches. `labels` locate the walls
/// for [`SpeckleMode::OnWalls`]; they are not modified.
pub fn inject_speckle(img: &BevImage, labels: &[ObbRecord], cfg: &SpeckleConfig) -> BevImage {
    let mut out = img.clone();
    let n = img.width() as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let walls: Vec<&ObbRecord> = labels.iter().filter(|r| r.class == ObbClass::Wall).collect();
    let (c0, r0, c1, r1) = img.bounding_box().unwrap_or((0, 0, img.width() - 1, img.height() - 1));
    for _ in 0..cfg.patches {
        let (cx, cy) = match cfg.mode {
            SpeckleMode::OnWalls if !walls.is_empty() => {
                let w = walls[rng.random_range(0..walls.len())];
                let t = rng.random_range(-1.0..=1.0) * w.half_w;
                let p = w.center + Point2::from_angle(w.angle) * t;
                (p.x as i64, p.y as i64)
            }
            _ => (rng.random_range(c0..=c1) as i64, rng.random_range(r0..=r1) as i64),
        };
        let half = cfg.size as i64 / 2;
        for y in cy - half..cy + half {
            for x in cx - half..cx + half {
                if (0..n).contains(&x) && (0..n).contains(&y) && rng.random::<f64>() < cfg.density {
                    out.set(x as usize, y as usize, true);
                }
            }
        }
    }
    out
}
