//! Per-frame fusion of raw detections into one line per physical wall.
//!
//! Steps: collapse double-edge envelopes (edge-tracing detectors only),
//! convert to polar form, drop short pieces, cluster with a normalised
//! three-component distance, and consolidate each cluster.

use serde::{Deserialize, Serialize};

use crate::dbscan::{dbscan_with, members, Labels};
use crate::detect::{Column, DetectorKind, RawDetection};
use crate::error::{Error, Result};
use crate::geom::{axial_angle_diff, segment_to_polar, wrap_2pi, Point2, PolarSegment, Segment2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionThresholds {
    pub tau_len: f64,
    pub tau_d: f64,
    pub tau_theta: f64,
    pub tau_o: f64,
    pub envelope_max_gap: f64,
    /// Weight the fused `rho` and `alpha` by member length.
    pub length_weighted: bool,
}

impl Default for FusionThresholds {
    fn default() -> Self {
        Self {
            tau_len: 0.5,
            tau_d: 0.3,
            tau_theta: 5f64.to_radians(),
            tau_o: 0.5,
            envelope_max_gap: 0.4,
            length_weighted: false,
        }
    }
}

impl FusionThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fusion.tau_len", self.tau_len),
            ("fusion.tau_d", self.tau_d),
            ("fusion.tau_theta", self.tau_theta),
            ("fusion.tau_o", self.tau_o),
            ("fusion.envelope_max_gap", self.envelope_max_gap),
        ] {
            crate::detect::positive(name, v)?;
        }
        Ok(())
    }
}

/// Fused walls of one frame, in the frame the detections were given in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalWallSet {
    pub walls: Vec<PolarSegment>,
    pub columns: Vec<Column>,
    pub frame_ts: f64,
    pub source: DetectorKind,
}

/// The three raw components of the pair distance, in metres and radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairComponents {
    pub dist: f64,
    pub angle: f64,
    pub gap: f64,
}

impl PairComponents {
    pub fn normalised(&self, t: &FusionThresholds) -> f64 {
        (self.dist / t.tau_d).max(self.angle / t.tau_theta).max(self.gap / t.tau_o)
    }
}

pub fn pair_components(a: &PolarSegment, b: &PolarSegment) -> PairComponents {
    let (a1, a2) = a.endpoints();
    let (b1, b2) = b.endpoints();
    let dist = [
        b.signed_distance(a1).abs(),
        b.signed_distance(a2).abs(),
        a.signed_distance(b1).abs(),
        a.signed_distance(b2).abs(),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    let angle = axial_angle_diff(a.direction_angle(), b.direction_angle());
    PairComponents {
        dist,
        angle,
        gap: interval_gap(a, b),
    }
}

/// `max(dd / tau_d, dtheta / tau_theta, do / tau_o)`. A value below one
/// means every component is inside its threshold.
pub fn pair_distance(a: &PolarSegment, b: &PolarSegment, t: &FusionThresholds) -> f64 {
    pair_components(a, b).normalised(t)
}

/// Unit bisector of the two tangents after orienting them alike.
fn bisector(a: &PolarSegment, b: &PolarSegment) -> Point2 {
    let ta = a.tangent();
    let mut tb = b.tangent();
    if ta.dot(tb) < 0.0 {
        tb = -tb;
    }
    let s = ta + tb;
    s * (1.0 / s.norm())
}

fn interval(s: &PolarSegment, dir: Point2) -> (f64, f64) {
    let (p, q) = s.endpoints();
    let (u, v) = (p.dot(dir), q.dot(dir));
    (u.min(v), u.max(v))
}

/// Gap between the projected extents on the bisector; zero when they overlap.
fn interval_gap(a: &PolarSegment, b: &PolarSegment) -> f64 {
    let dir = bisector(a, b);
    let (a0, a1) = interval(a, dir);
    let (b0, b1) = interval(b, dir);
    (a0.max(b0) - a1.min(b1)).max(0.0)
}

/// Length of the common part of the projected extents (negative: gap).
fn interval_overlap(a: &PolarSegment, b: &PolarSegment) -> f64 {
    let dir = bisector(a, b);
    let (a0, a1) = interval(a, dir);
    let (b0, b1) = interval(b, dir);
    a1.min(b1) - a0.max(b0)
}

/// Replaces near-parallel, overlapping pairs closer than
/// `envelope_max_gap` by their midline. Pairs are taken greedily by
/// smallest separation and each segment joins at most one pair. Output
/// order: midlines in pairing order, then the unpaired segments in input
/// order.
pub fn merge_envelopes(segments: &[Segment2], t: &FusionThresholds) -> Vec<Segment2> {
    let polar: Vec<Option<PolarSegment>> = segments.iter().map(|s| segment_to_polar(s).ok()).collect();
    let mut cands = Vec::new();
    for i in 0..segments.len() {
        let Some(a) = polar[i] else { continue };
        for j in i + 1..segments.len() {
            let Some(b) = polar[j] else { continue };
            if axial_angle_diff(a.direction_angle(), b.direction_angle()) > t.tau_theta {
                continue;
            }
            let sep = separation(&a, &b);
            if sep <= t.envelope_max_gap && interval_overlap(&a, &b) > 0.0 {
                cands.push((sep, i, j));
            }
        }
    }
    cands.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut used = vec![false; segments.len()];
    let mut out = Vec::new();
    for (_, i, j) in cands {
        if used[i] || used[j] {
            continue;
        }
        used[i] = true;
        used[j] = true;
        out.push(midline(&polar[i].unwrap(), &polar[j].unwrap()).to_segment());
    }
    out.extend((0..segments.len()).filter(|&i| !used[i]).map(|i| segments[i]));
    out
}

/// Mean distance of each midpoint from the other line.
fn separation(a: &PolarSegment, b: &PolarSegment) -> f64 {
    0.5 * (b.signed_distance(a.midpoint()).abs() + a.signed_distance(b.midpoint()).abs())
}

fn midline(a: &PolarSegment, b: &PolarSegment) -> PolarSegment {
    let b = b.aligned_to(a.alpha);
    let alpha = circular_mean([(a.alpha, 1.0), (b.alpha, 1.0)]);
    let rho = 0.5 * (a.rho + b.rho);
    with_extent(rho, alpha, [a, &b])
}

fn circular_mean(angles: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for (a, w) in angles {
        let (sa, ca) = a.sin_cos();
        s += w * sa;
        c += w * ca;
    }
    wrap_2pi(s.atan2(c))
}

/// Line `(rho, alpha)` spanning every endpoint of `members` projected on it.
fn with_extent<'a>(rho: f64, alpha: f64, members: impl IntoIterator<Item = &'a PolarSegment>) -> PolarSegment {
    let mut line = PolarSegment {
        rho,
        alpha,
        d1: f64::INFINITY,
        d2: f64::NEG_INFINITY,
    };
    for m in members {
        let (p, q) = m.endpoints();
        for d in [line.project(p), line.project(q)] {
            line.d1 = line.d1.min(d);
            line.d2 = line.d2.max(d);
        }
    }
    line.canonical()
}

/// Pairwise normalised distances.
pub fn distance_matrix(walls: &[PolarSegment], t: &FusionThresholds) -> Vec<Vec<f64>> {
    let n = walls.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = pair_distance(&walls[i], &walls[j], t);
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    m
}

/// DBSCAN with `eps = 1` and `min_samples = 1` on the normalised distance.
/// Every wall gets a label; clusters are numbered by their lowest-index
/// member.
pub fn cluster_segments(walls: &[PolarSegment], t: &FusionThresholds) -> Labels {
    let m = distance_matrix(walls, t);
    let n = walls.len();
    dbscan_with(n, 1, |i| (0..n).filter(|&j| i == j || m[i][j] <= 1.0).collect())
}

/// Consolidates one cluster. Members are aligned to the first one's
/// normal, then `rho` is averaged, `alpha` circularly averaged, and the
/// extent spans every member endpoint.
pub fn fuse_cluster(members: &[PolarSegment], length_weighted: bool) -> Result<PolarSegment> {
    let Some(seed) = members.first() else {
        return Err(Error::Degenerate("empty cluster".into()));
    };
    if members.len() == 1 {
        return Ok(*seed);
    }
    let aligned: Vec<PolarSegment> = members.iter().map(|m| m.aligned_to(seed.alpha)).collect();
    let w = |m: &PolarSegment| if length_weighted { m.length() } else { 1.0 };
    let wsum: f64 = aligned.iter().map(w).sum();
    let rho = aligned.iter().map(|m| w(m) * m.rho).sum::<f64>() / wsum;
    let alpha = circular_mean(aligned.iter().map(|m| (m.alpha, w(m))));
    Ok(with_extent(rho, alpha, &aligned))
}

/// Full per-frame fusion.
pub fn fuse_local(det: &RawDetection, t: &FusionThresholds) -> Result<LocalWallSet> {
    t.validate()?;
    let segs = if det.detector.yields_envelopes() {
        merge_envelopes(&det.segments, t)
    } else {
        det.segments.clone()
    };
    let walls: Vec<PolarSegment> = segs
        .iter()
        .filter_map(|s| segment_to_polar(s).ok())
        .filter(|p| p.length() >= t.tau_len)
        .collect();
    let labels = cluster_segments(&walls, t);
    let mut fused = Vec::new();
    for idx in members(&labels) {
        let ms: Vec<PolarSegment> = idx.iter().map(|&i| walls[i]).collect();
        let f = fuse_cluster(&ms, t.length_weighted)?;
        if f.length() >= t.tau_len {
            fused.push(f);
        }
    }
    Ok(LocalWallSet {
        walls: fused,
        columns: det.columns.clone(),
        frame_ts: det.frame_ts,
        source: det.detector,
    })
}
