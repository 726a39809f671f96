//! Procedural test scenes: a large garage with a column grid, a long
//! corridor with a glass section, a cluttered lab, and a hallway of small
//! thin-walled rooms. Seeds jitter positions only; the layout is fixed.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    ClutterSpec, ColumnSpec, FloorplanWorld, GlassSpec, GroundTruth, OrientedRect, StampedPose, Trajectory, WallSpec,
};
use crate::error::Error;
use crate::geom::{Point2, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Garage,
    Corridor,
    Lab,
    Hallway,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Garage,
        ScenarioKind::Corridor,
        ScenarioKind::Lab,
        ScenarioKind::Hallway,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Garage => "garage",
            ScenarioKind::Corridor => "corridor",
            ScenarioKind::Lab => "lab",
            ScenarioKind::Hallway => "hallway",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        ScenarioKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown scenario `{s}`; valid names: garage, corridor, lab, hallway"
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioOptions {
    pub frames: usize,
    /// Seconds between frames.
    pub period: f64,
    /// Mirror ghosts behind glass (corridor, lab).
    pub glass_ghost: bool,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            frames: 20,
            period: 0.1,
            glass_ghost: false,
        }
    }
}

const HEIGHT: f64 = 3.0;

fn wall(x1: f64, y1: f64, x2: f64, y2: f64, thickness: f64) -> WallSpec {
    WallSpec {
        start: Point2::new(x1, y1),
        end: Point2::new(x2, y2),
        thickness,
        height: HEIGHT,
    }
}

fn boxed(cx: f64, cy: f64, w: f64, h: f64, height: f64) -> ClutterSpec {
    ClutterSpec {
        rect: OrientedRect {
            center: Point2::new(cx, cy),
            angle: 0.0,
            half_extents: [0.5 * w, 0.5 * h],
        },
        height,
        active: None,
    }
}

/// Closed axis-aligned rectangle of walls, counter-clockwise from the
/// bottom-left corner.
fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64, t: f64) -> [WallSpec; 4] {
    [
        wall(x0, y0, x1, y0, t),
        wall(x1, y0, x1, y1, t),
        wall(x1, y1, x0, y1, t),
        wall(x0, y1, x0, y0, t),
    ]
}

fn jitter(rng: &mut ChaCha8Rng, a: f64) -> f64 {
    rng.random_range(-a..=a)
}

/// Straight pass from `a` to `b` with a slow heading sway.
fn line_path(a: Point2, b: Point2, opts: &ScenarioOptions, rng: &mut ChaCha8Rng) -> Vec<StampedPose> {
    let n = opts.frames;
    let heading = (b - a).y.atan2((b - a).x);
    let phase = jitter(rng, 1.0);
    (0..n)
        .map(|i| {
            let s = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
            let p = a + (b - a) * s;
            StampedPose {
                t: i as f64 * opts.period,
                pose: Pose2::new(p.x, p.y, heading + 0.1 * (phase + 3.0 * s).sin()),
            }
        })
        .collect()
}

/// Builds a scene, its ground truth and a trajectory through free space.
pub fn make_scenario(kind: ScenarioKind, seed: u64, opts: &ScenarioOptions) -> (FloorplanWorld, GroundTruth, Trajectory) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0000 ^ kind as u64);
    let (world, poses) = match kind {
        ScenarioKind::Garage => garage(&mut rng, opts),
        ScenarioKind::Corridor => corridor(&mut rng, opts),
        ScenarioKind::Lab => lab(&mut rng, opts),
        ScenarioKind::Hallway => hallway(&mut rng, opts),
    };
    let frame_id = format!("{}-{}", kind.name(), seed);
    let mut gt = world.ground_truth();
    gt.frame_id = frame_id.clone();
    (world, gt, Trajectory { frame_id, poses })
}

fn garage(rng: &mut ChaCha8Rng, opts: &ScenarioOptions) -> (FloorplanWorld, Vec<StampedPose>) {
    let hw = 15.0 + jitter(rng, 1.0);
    let hh = 10.0 + jitter(rng, 0.5);
    let walls = rectangle(-hw, -hh, hw, hh, 0.1).to_vec();
    let mut columns = Vec::new();
    for cx in [-9.0, -3.0, 3.0, 9.0] {
        for cy in [-5.0, 5.0] {
            columns.push(ColumnSpec {
                center: Point2::new(cx + jitter(rng, 0.3), cy + jitter(rng, 0.3)),
                radius: 0.25,
                height: HEIGHT,
            });
        }
    }
    let clutter = vec![
        boxed(-6.0 + jitter(rng, 1.0), -hh + 1.5, 1.2, 0.8, 1.2),
        boxed(6.0 + jitter(rng, 1.0), hh - 1.5, 1.2, 0.8, 1.2),
    ];
    let y = jitter(rng, 0.5);
    let poses = line_path(Point2::new(-8.0, y), Point2::new(8.0, -y), opts, rng);
    (
        FloorplanWorld {
            walls,
            columns,
            clutter,
            glass: vec![],
            ghost_reflections: false,
            ceiling_height: HEIGHT,
        },
        poses,
    )
}

fn corridor(rng: &mut ChaCha8Rng, opts: &ScenarioOptions) -> (FloorplanWorld, Vec<StampedPose>) {
    let hl = 20.0;
    let hw = 1.25 + jitter(rng, 0.1);
    let g0 = -5.0 + jitter(rng, 1.0);
    let g1 = g0 + 10.0;
    let t = 0.1;
    let walls = vec![
        wall(-hl, -hw, hl, -hw, t),
        wall(hl, -hw, hl, hw, t),
        wall(hl, hw, g1, hw, t),
        wall(g1, hw, g0, hw, t),
        wall(g0, hw, -hl, hw, t),
        wall(-hl, hw, -hl, -hw, t),
    ];
    let poses = line_path(Point2::new(-15.0, -0.2), Point2::new(15.0, 0.2), opts, rng);
    (
        FloorplanWorld {
            walls,
            columns: vec![],
            clutter: vec![],
            glass: vec![GlassSpec { wall: 3, dropout: 0.6 }],
            ghost_reflections: opts.glass_ghost,
            ceiling_height: HEIGHT,
        },
        poses,
    )
}

fn lab(rng: &mut ChaCha8Rng, opts: &ScenarioOptions) -> (FloorplanWorld, Vec<StampedPose>) {
    let walls = rectangle(-5.0, -4.0, 5.0, 4.0, 0.1).to_vec();
    let mut clutter = Vec::new();
    for cy in [2.3, -2.3] {
        for cx in [-3.3, 0.0, 3.3] {
            clutter.push(boxed(cx + jitter(rng, 0.05), cy + jitter(rng, 0.1), 2.6, 1.0, 0.9));
        }
    }
    clutter.push(boxed(-3.3 + jitter(rng, 0.3), 3.55, 1.4, 0.6, 2.0));
    clutter.push(boxed(3.3 + jitter(rng, 0.3), -3.55, 1.4, 0.6, 2.0));
    let poses = line_path(Point2::new(-3.5, 0.0), Point2::new(3.5, 0.0), opts, rng);
    (
        FloorplanWorld {
            walls,
            columns: vec![],
            clutter,
            glass: vec![GlassSpec { wall: 1, dropout: 0.85 }],
            ghost_reflections: opts.glass_ghost,
            ceiling_height: HEIGHT,
        },
        poses,
    )
}

fn hallway(rng: &mut ChaCha8Rng, opts: &ScenarioOptions) -> (FloorplanWorld, Vec<StampedPose>) {
    let t = 0.08;
    let (x0, x1, y0, y1, y2) = (-6.0, 6.0, -1.0, 1.0, 4.5);
    let mut walls = vec![
        wall(x0, y0, x1, y0, t),
        wall(x1, y0, x1, y2, t),
        wall(x1, y2, x0, y2, t),
        wall(x0, y2, x0, y0, t),
    ];
    // Three 4 m rooms along the north side, each with a 0.9 m door.
    for k in 0..3 {
        let a = x0 + 4.0 * k as f64;
        let b = a + 4.0;
        let door = a + 1.5 + jitter(rng, 0.8);
        walls.push(wall(a, y1, door, y1, t));
        walls.push(wall(door + 0.9, y1, b, y1, t));
        if k > 0 {
            walls.push(wall(a, y1, a, y2, t));
        }
    }
    let poses = line_path(Point2::new(-5.0, 0.0), Point2::new(5.0, 0.0), opts, rng);
    (
        FloorplanWorld {
            walls,
            columns: vec![],
            clutter: vec![],
            glass: vec![],
            ghost_reflections: false,
            ceiling_height: HEIGHT,
        },
        poses,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_worlds() {
        for k in ScenarioKind::ALL {
            let o = ScenarioOptions::default();
            assert_eq!(make_scenario(k, 3, &o), make_scenario(k, 3, &o));
        }
    }

    #[test]
    fn lab_clutter_coverage() {
        let (w, _, _) = make_scenario(ScenarioKind::Lab, 1, &ScenarioOptions::default());
        let area: f64 = w.clutter.iter().map(|c| c.rect.area()).sum();
        assert!(area / 80.0 >= 0.2, "{}", area / 80.0);
    }

    #[test]
    fn trajectories_in_free_space() {
        for k in ScenarioKind::ALL {
            for seed in 0..5 {
                let (w, gt, tr) = make_scenario(k, seed, &ScenarioOptions::default());
                assert_eq!(gt.walls.len(), w.walls.len());
                for p in &tr.poses {
                    assert!(!w.is_solid(p.pose.position(), p.t), "{k} {seed}");
                }
            }
        }
    }

    #[test]
    fn names_roundtrip() {
        for k in ScenarioKind::ALL {
            assert_eq!(k.name().parse::<ScenarioKind>().unwrap(), k);
        }
        assert!("mall".parse::<ScenarioKind>().is_err());
    }
}
