//! Synthetic floorplans and a 2D ray-cast multi-channel LiDAR.
//!
//! Walls are vertical extrusions of a centreline band, columns are
//! cylinders and clutter items are oriented boxes. Each azimuth is cast
//! once in 2D; each channel then takes the first obstacle whose height is
//! above the beam at that distance, or the floor/ceiling. Glass walls drop
//! beams with their own probability and can optionally return a mirrored
//! ghost instead.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bev::LidarFrame;
use crate::detect::Column;
use crate::error::{Error, Result};
use crate::geom::{Point2, Pose2, Segment2};
use crate::pipeline::{FrameInput, SensorData};

mod labels;
mod scenario;

pub use labels::{export_obb_labels, inject_speckle, SpeckleConfig, SpeckleMode};
pub use scenario::{make_scenario, ScenarioKind, ScenarioOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallSpec {
    pub start: Point2,
    pub end: Point2,
    pub thickness: f64,
    pub height: f64,
}

impl WallSpec {
    pub fn centerline(&self) -> Segment2 {
        Segment2 {
            p1: self.start,
            p2: self.end,
        }
    }

    /// The solid band, with square caps of half the thickness.
    pub fn band(&self) -> OrientedRect {
        let d = self.end - self.start;
        let len = d.norm();
        OrientedRect {
            center: self.start.midpoint(self.end),
            angle: d.y.atan2(d.x),
            half_extents: [0.5 * len + 0.5 * self.thickness, 0.5 * self.thickness],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub center: Point2,
    pub radius: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrientedRect {
    pub center: Point2,
    /// Direction of the first half-extent axis.
    pub angle: f64,
    pub half_extents: [f64; 2],
}

impl OrientedRect {
    pub fn area(&self) -> f64 {
        4.0 * self.half_extents[0] * self.half_extents[1]
    }

    fn axes(&self) -> (Point2, Point2) {
        let u = Point2::from_angle(self.angle);
        (u, u.perp())
    }

    pub fn contains(&self, p: Point2) -> bool {
        let (u, v) = self.axes();
        let d = p - self.center;
        d.dot(u).abs() <= self.half_extents[0] && d.dot(v).abs() <= self.half_extents[1]
    }

    /// Entry distance along a unit ray starting outside, with the outward
    /// normal of the face hit.
    fn ray_entry(&self, o: Point2, dir: Point2) -> Option<(f64, Point2)> {
        let (u, v) = self.axes();
        let rel = o - self.center;
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut normal = Point2::ORIGIN;
        for (axis, h) in [(u, self.half_extents[0]), (v, self.half_extents[1])] {
            let p = rel.dot(axis);
            let q = dir.dot(axis);
            if q.abs() < 1e-15 {
                if p.abs() > h {
                    return None;
                }
                continue;
            }
            let (mut a, mut b) = ((-h - p) / q, (h - p) / q);
            let mut n = -axis;
            if a > b {
                std::mem::swap(&mut a, &mut b);
                n = axis;
            }
            if a > t0 {
                t0 = a;
                normal = n;
            }
            t1 = t1.min(b);
        }
        (t0 <= t1 && t0 > 0.0).then_some((t0, normal))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClutterSpec {
    pub rect: OrientedRect,
    pub height: f64,
    /// Time window `[from, until]` in seconds during which the item exists;
    /// always present when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<[f64; 2]>,
}

impl ClutterSpec {
    pub fn present_at(&self, t: f64) -> bool {
        self.active.is_none_or(|[a, b]| a <= t && t <= b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlassSpec {
    /// Index into `walls`.
    pub wall: usize,
    pub dropout: f64,
}

fn default_ceiling() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloorplanWorld {
    pub walls: Vec<WallSpec>,
    #[serde(default)]
    pub columns: Vec<ColumnSpec>,
    #[serde(default)]
    pub clutter: Vec<ClutterSpec>,
    #[serde(default)]
    pub glass: Vec<GlassSpec>,
    /// Dropped glass beams return a specular ghost instead of nothing.
    #[serde(default)]
    pub ghost_reflections: bool,
    #[serde(default = "default_ceiling")]
    pub ceiling_height: f64,
}

impl FloorplanWorld {
    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.walls.iter().enumerate() {
            if !(w.thickness > 0.0 && w.height > 0.0) || w.start.distance(w.end) == 0.0 {
                return Err(Error::Validation(format!("wall {i}: needs positive thickness, height and length")));
            }
        }
        if let Some(c) = self.columns.iter().find(|c| !(c.radius > 0.0 && c.height > 0.0)) {
            return Err(Error::Validation(format!("column at {:?} needs positive radius and height", c.center)));
        }
        for g in &self.glass {
            if g.wall >= self.walls.len() || !(0.0..=1.0).contains(&g.dropout) {
                return Err(Error::Validation(format!(
                    "glass entry for wall {} must reference a wall and have dropout in [0, 1]",
                    g.wall
                )));
            }
        }
        if !(self.ceiling_height > 0.0) {
            return Err(Error::Validation("ceiling height must be positive".into()));
        }
        Ok(())
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            frame_id: String::new(),
            walls: self.walls.iter().map(WallSpec::centerline).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    center: c.center,
                    radius: c.radius,
                })
                .collect(),
        }
    }

    fn glass_dropout(&self, wall: usize) -> Option<f64> {
        self.glass.iter().find(|g| g.wall == wall).map(|g| g.dropout)
    }

    /// True when `p` lies inside any solid present at time `t`.
    pub fn is_solid(&self, p: Point2, t: f64) -> bool {
        self.walls.iter().any(|w| w.band().contains(p))
            || self.columns.iter().any(|c| c.center.distance(p) <= c.radius)
            || self.clutter.iter().any(|c| c.present_at(t) && c.rect.contains(p))
    }
}

/// Wall centrelines and column discs in the world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    /// Identifies the world the coordinates refer to.
    #[serde(default)]
    pub frame_id: String,
    pub walls: Vec<Segment2>,
    pub columns: Vec<Column>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorModel {
    /// Channel elevations in radians, increasing.
    pub elevations: Vec<f64>,
    pub azimuth_steps: usize,
    pub max_range: f64,
    pub sigma_r: f64,
    pub dropout_p: f64,
    /// Mounting height above the floor.
    pub height: f64,
    pub seed: u64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self::uniform(32, 22.5f64.to_radians(), 1024)
    }
}

impl SensorModel {
    /// `channels` elevations evenly spread over `[-half_fov, half_fov]`.
    pub fn uniform(channels: usize, half_fov: f64, azimuth_steps: usize) -> Self {
        let elevations = if channels == 1 {
            vec![0.0]
        } else {
            (0..channels)
                .map(|i| -half_fov + 2.0 * half_fov * i as f64 / (channels - 1) as f64)
                .collect()
        };
        Self {
            elevations,
            azimuth_steps,
            max_range: 45.0,
            sigma_r: 0.02,
            dropout_p: 0.0,
            height: 0.6,
            seed: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.elevations.len()
    }

    pub fn azimuths(&self) -> Vec<f64> {
        let n = self.azimuth_steps as f64;
        (0..self.azimuth_steps)
            .map(|k| k as f64 * std::f64::consts::TAU / n)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.elevations.is_empty() || self.azimuth_steps == 0 {
            return Err(Error::Config("sensor needs at least one channel and one azimuth step".into()));
        }
        if !(self.sigma_r >= 0.0) || !(0.0..=1.0).contains(&self.dropout_p) || !(self.max_range > 0.0) {
            return Err(Error::Config(
                "sensor needs sigma_r >= 0, dropout_p in [0, 1] and max_range > 0".into(),
            ));
        }
        if self
            .elevations
            .iter()
            .any(|e| !(e.abs() < std::f64::consts::FRAC_PI_2))
        {
            return Err(Error::Config("elevations must lie strictly inside (-90, 90) degrees".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    dist: f64,
    height: f64,
    glass: Option<f64>,
    wall: Option<usize>,
    normal: Point2,
}

/// Sorted obstacle entries along a ray. `skip_wall` excludes the wall a
/// reflected ray starts on.
fn cast(world: &FloorplanWorld, o: Point2, dir: Point2, t: f64, skip_wall: Option<usize>) -> Vec<Hit> {
    let mut hits = Vec::new();
    for (i, w) in world.walls.iter().enumerate() {
        if Some(i) == skip_wall {
            continue;
        }
        if let Some((dist, normal)) = w.band().ray_entry(o, dir) {
            hits.push(Hit {
                dist,
                height: w.height,
                glass: world.glass_dropout(i),
                wall: Some(i),
                normal,
            });
        }
    }
    for c in &world.columns {
        let rel = o - c.center;
        let b = rel.dot(dir);
        let disc = b * b - (rel.dot(rel) - c.radius * c.radius);
        if disc >= 0.0 {
            let dist = -b - disc.sqrt();
            if dist > 0.0 {
                let normal = (o + dir * dist - c.center) * (1.0 / c.radius);
                hits.push(Hit {
                    dist,
                    height: c.height,
                    glass: None,
                    wall: None,
                    normal,
                });
            }
        }
    }
    for c in world.clutter.iter().filter(|c| c.present_at(t)) {
        if let Some((dist, normal)) = c.rect.ray_entry(o, dir) {
            hits.push(Hit {
                dist,
                height: c.height,
                glass: None,
                wall: None,
                normal,
            });
        }
    }
    hits.sort_by(|a, b| a.dist.total_cmp(&b.dist));
    hits
}

/// Horizontal distance to the first surface the beam meets, or `None`.
/// `offset` is horizontal path length already travelled (reflections).
fn first_return(hits: &[Hit], tan_el: f64, sensor_h: f64, ceiling: f64, offset: f64) -> Option<(f64, usize)> {
    let plane = if tan_el < 0.0 {
        Some(sensor_h / -tan_el)
    } else if tan_el > 0.0 {
        Some((ceiling - sensor_h) / tan_el)
    } else {
        None
    };
    for (k, h) in hits.iter().enumerate() {
        let d = offset + h.dist;
        if plane.is_some_and(|p| p <= d) {
            break;
        }
        if sensor_h + d * tan_el <= h.height {
            return Some((h.dist, k));
        }
    }
    plane.filter(|p| *p > offset).map(|p| (p - offset, usize::MAX))
}

fn frame_rng(seed: u64, timestamp: f64) -> ChaCha8Rng {
    let mut s = seed ^ timestamp.to_bits().rotate_left(17);
    // SplitMix64 finaliser so nearby timestamps give unrelated streams.
    s = (s ^ (s >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    s = (s ^ (s >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(s ^ (s >> 31))
}

/// Simulates one sweep from `pose` at time `timestamp`. Output ranges are
/// slant ranges in the sensor frame; zero marks no return.
pub fn simulate_frame(world: &FloorplanWorld, sensor: &SensorModel, pose: &Pose2, timestamp: f64) -> Result<LidarFrame> {
    sensor.validate()?;
    world.validate()?;
    let o = pose.position();
    if world.is_solid(o, timestamp) {
        return Err(Error::PoseInSolid { x: o.x, y: o.y });
    }
    let azimuths = sensor.azimuths();
    let steps = azimuths.len();
    let mut frame = LidarFrame::empty(sensor.elevations.clone(), azimuths.clone(), timestamp);
    let mut rng = frame_rng(sensor.seed, timestamp);
    let noise = Normal::new(0.0, sensor.sigma_r.max(0.0)).unwrap();
    let trig: Vec<(f64, f64)> = sensor.elevations.iter().map(|e| (e.tan(), e.cos())).collect();

    for (a, az) in azimuths.iter().enumerate() {
        let dir = Point2::from_angle(pose.theta + az);
        let hits = cast(world, o, dir, timestamp, None);
        for (c, &(tan_el, cos_el)) in trig.iter().enumerate() {
            let u_drop: f64 = rng.random();
            let u_glass: f64 = rng.random();
            let n = if sensor.sigma_r > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let Some((mut d, k)) = first_return(&hits, tan_el, sensor.height, world.ceiling_height, 0.0) else {
                continue;
            };
            if let Some(p) = hits.get(k).and_then(|h| h.glass) {
                if u_glass < p {
                    if !world.ghost_reflections {
                        continue;
                    }
                    let h = hits[k];
                    let at = o + dir * h.dist;
                    let r = dir - h.normal * (2.0 * dir.dot(h.normal));
                    let bounce = cast(world, at, r, timestamp, h.wall);
                    match first_return(&bounce, tan_el, sensor.height, world.ceiling_height, h.dist) {
                        Some((d2, _)) => d = h.dist + d2,
                        None => continue,
                    }
                }
            }
            let mut range = d / cos_el + n;
            if u_drop < sensor.dropout_p || range > sensor.max_range || range <= 0.0 {
                range = 0.0;
            }
            frame.ranges[c * steps + a] = range;
        }
    }
    Ok(frame)
}

/// Timestamped poses; `frame_id` names the world they live in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    #[serde(default)]
    pub frame_id: String,
    pub poses: Vec<StampedPose>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TrajectoryWire {
    Full(Trajectory),
    Bare(Vec<StampedPose>),
}

impl Trajectory {
    /// Accepts either the full object or a bare list of stamped poses.
    pub fn from_json(text: &str) -> Result<Self> {
        let t = match serde_json::from_str(text)? {
            TrajectoryWire::Full(t) => t,
            TrajectoryWire::Bare(poses) => Trajectory {
                frame_id: String::new(),
                poses,
            },
        };
        if t.poses.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::Validation("trajectory timestamps must increase strictly".into()));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StampedPose {
    pub t: f64,
    pub pose: Pose2,
}

/// Simulates every pose of `trajectory`. With `labels`, each input also
/// carries the oriented-box labels for that pose, for the OBB detector.
pub fn simulate_sequence(
    world: &FloorplanWorld,
    sensor: &SensorModel,
    trajectory: &Trajectory,
    labels: Option<&crate::bev::Georef>,
) -> Result<Vec<FrameInput>> {
    trajectory
        .poses
        .iter()
        .map(|p| {
            Ok(FrameInput {
                frame: SensorData::Sweep(simulate_frame(world, sensor, &p.pose, p.t)?),
                pose: p.pose,
                obb: labels.map(|g| export_obb_labels(world, sensor, &p.pose, g)),
            })
        })
        .collect()
}
