//! Rectilinear clean-up of the confirmed map: estimate one dominant axis,
//! snap near-axis walls onto it, then join perpendicular wall ends at their
//! exact intersections and extract closed loops.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::detect::positive;
use crate::error::{Error, Result};
use crate::fuse_global::ColumnRecord;
use crate::geom::{axial_angle_diff, wrap_2pi, wrap_pi, Point2, PolarSegment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManhattanConfig {
    pub enabled: bool,
    /// Maximum deviation from an axis for a wall to be snapped.
    pub tol: f64,
    pub merge_radius: f64,
    /// Fuse parallel snapped walls on the same line whose ends lie within
    /// `merge_radius` of each other before closing corners.
    pub merge_collinear: bool,
    /// Reject the map when more than this share of wall length lies
    /// outside `tol` of the dominant axes.
    pub max_off_axis_share: f64,
}

impl Default for ManhattanConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            tol: 7f64.to_radians(),
            merge_radius: 0.3,
            merge_collinear: true,
            max_off_axis_share: 0.5,
        }
    }
}

impl ManhattanConfig {
    pub fn validate(&self) -> Result<()> {
        positive("manhattan.tol", self.tol)?;
        positive("manhattan.merge_radius", self.merge_radius)?;
        positive("manhattan.max_off_axis_share", self.max_off_axis_share)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominantFrame {
    /// Primary axis direction in `[0, pi/2)`.
    pub axis_angle: f64,
    /// Total wall length behind the estimate.
    pub support: f64,
}

impl DominantFrame {
    /// The four exact normal angles of the frame, `wrap_2pi(axis + k pi/2)`.
    pub fn normals(&self) -> [f64; 4] {
        [0.0, 1.0, 2.0, 3.0].map(|k| wrap_2pi(self.axis_angle + k * FRAC_PI_2))
    }

    /// Angular distance of a wall direction from the nearest axis.
    pub fn residual(&self, direction: f64) -> f64 {
        let r = (direction - self.axis_angle).rem_euclid(FRAC_PI_2);
        r.min(FRAC_PI_2 - r)
    }
}

/// Length-weighted mean of directions modulo 90 degrees, computed on
/// quadrupled angles.
pub fn estimate_dominant(walls: &[PolarSegment]) -> Result<DominantFrame> {
    let (mut s, mut c, mut support) = (0.0, 0.0, 0.0);
    for w in walls {
        let l = w.length();
        let (s4, c4) = (4.0 * w.direction_angle()).sin_cos();
        s += l * s4;
        c += l * c4;
        support += l;
    }
    if walls.is_empty() || support == 0.0 {
        return Err(Error::NoDominantFrame("no confirmed walls".into()));
    }
    if s.hypot(c) <= 1e-12 * support {
        return Err(Error::NoDominantFrame("wall directions cancel out".into()));
    }
    let mut axis = (s.atan2(c) / 4.0).rem_euclid(FRAC_PI_2);
    if axis >= FRAC_PI_2 {
        axis = 0.0;
    }
    Ok(DominantFrame {
        axis_angle: axis,
        support,
    })
}

/// Rotates walls within `tol` of an axis onto it about their midpoint,
/// keeping their length. Other walls pass through. Snapping an already
/// snapped wall returns it bit-for-bit.
pub fn snap_orthogonal(walls: &[PolarSegment], frame: &DominantFrame, tol: f64) -> Vec<PolarSegment> {
    let normals = frame.normals();
    walls
        .iter()
        .map(|w| {
            if frame.residual(w.direction_angle()) > tol || normals.contains(&w.alpha) {
                return *w;
            }
            let k = (0..4)
                .min_by(|&a, &b| {
                    wrap_pi(w.alpha - normals[a])
                        .abs()
                        .total_cmp(&wrap_pi(w.alpha - normals[b]).abs())
                })
                .unwrap();
            let mid = w.midpoint();
            let half = 0.5 * w.length();
            let mut s = place(normals[k], mid, half);
            if s.rho < 0.0 {
                s = place(normals[(k + 2) % 4], mid, half);
            }
            s
        })
        .collect()
}

fn place(alpha: f64, mid: Point2, half: f64) -> PolarSegment {
    let probe = PolarSegment {
        rho: 0.0,
        alpha,
        d1: 0.0,
        d2: 0.0,
    };
    let dm = probe.project(mid);
    PolarSegment {
        rho: mid.dot(probe.normal()),
        alpha,
        d1: dm - half,
        d2: dm + half,
    }
}

/// Repeatedly joins the closest pair of exactly parallel walls whose lines
/// are within `radius` of each other and whose extents overlap or leave a
/// gap of at most `radius`. The joined wall takes the length-weighted offset
/// and the union of both extents.
pub fn merge_collinear(walls: &[PolarSegment], radius: f64) -> Vec<PolarSegment> {
    let mut out = walls.to_vec();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..out.len() {
            for j in i + 1..out.len() {
                let (a, b) = (&out[i], &out[j]);
                if a.direction_angle() != b.direction_angle() {
                    continue;
                }
                if a.signed_distance(b.midpoint()).abs() > radius {
                    continue;
                }
                let b = b.aligned_to(a.alpha);
                let gap = (b.d1 - a.d2).max(a.d1 - b.d2).max(0.0);
                if gap <= radius && best.is_none_or(|(g, _, _)| gap < g) {
                    best = Some((gap, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        let (a, b) = (out[i], out[j].aligned_to(out[i].alpha));
        let (la, lb) = (a.length(), b.length());
        let n = a.normal();
        let rho = (la * a.rho + lb * b.midpoint().dot(n)) / (la + lb);
        let mut m = PolarSegment {
            rho,
            alpha: a.alpha,
            d1: a.d1.min(b.d1),
            d2: a.d2.max(b.d2),
        };
        m = m.canonical();
        out[i] = m;
        out.remove(j);
    }
    out
}

/// Wall in a floorplan with the corners its ends are attached to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorplanWall {
    #[serde(flatten)]
    pub segment: PolarSegment,
    /// Corner at the `d1` end.
    pub start: Option<usize>,
    /// Corner at the `d2` end.
    pub end: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Floorplan {
    pub frame: DominantFrame,
    pub walls: Vec<FloorplanWall>,
    pub corners: Vec<Point2>,
    /// Closed cycles of corner indices, counter-clockwise.
    pub loops: Vec<Vec<usize>>,
    pub columns: Vec<ColumnRecord>,
}

fn intersect(a: &PolarSegment, b: &PolarSegment) -> Option<Point2> {
    let (na, nb) = (a.normal(), b.normal());
    let det = na.cross(nb);
    if det.abs() < 1e-12 {
        return None;
    }
    Some(Point2::new(
        (a.rho * nb.y - b.rho * na.y) / det,
        (na.x * b.rho - nb.x * a.rho) / det,
    ))
}

/// Joins perpendicular wall ends lying within `merge_radius` of their
/// lines' intersection, moves both ends onto it and extracts loops.
pub fn close_corners(walls: &[PolarSegment], merge_radius: f64) -> (Vec<FloorplanWall>, Vec<Point2>, Vec<Vec<usize>>) {
    let n = walls.len();
    // (cost, wall i, end of i, wall j, end of j, point)
    let mut cands = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&walls[i], &walls[j]);
            if axial_angle_diff(a.direction_angle(), b.direction_angle()) < FRAC_PI_2 - 1e-6 {
                continue;
            }
            let Some(x) = intersect(a, b) else { continue };
            let (ea, da) = nearest_end(a, x);
            let (eb, db) = nearest_end(b, x);
            if da <= merge_radius && db <= merge_radius {
                cands.push((da.max(db), i, ea, j, eb, x));
            }
        }
    }
    cands.sort_by(|p, q| p.0.total_cmp(&q.0).then((p.1, p.3).cmp(&(q.1, q.3))));

    let mut ends: Vec<[Option<usize>; 2]> = vec![[None, None]; n];
    let mut corners: Vec<Point2> = Vec::new();
    for (_, i, ea, j, eb, x) in cands {
        if ends[i][ea].is_some() || ends[j][eb].is_some() {
            continue;
        }
        let c = match corners.iter().position(|p| p.distance(x) <= 1e-9) {
            Some(c) => c,
            None => {
                corners.push(x);
                corners.len() - 1
            }
        };
        ends[i][ea] = Some(c);
        ends[j][eb] = Some(c);
    }

    let out: Vec<FloorplanWall> = walls
        .iter()
        .zip(&ends)
        .map(|(w, e)| {
            let mut s = *w;
            if let Some(c) = e[0] {
                s.d1 = s.project(corners[c]);
            }
            if let Some(c) = e[1] {
                s.d2 = s.project(corners[c]);
            }
            if s.d1 > s.d2 {
                std::mem::swap(&mut s.d1, &mut s.d2);
            }
            FloorplanWall {
                segment: s,
                start: e[0],
                end: e[1],
            }
        })
        .collect();
    let loops = extract_loops(&out, &corners);
    (out, corners, loops)
}

fn nearest_end(s: &PolarSegment, x: Point2) -> (usize, f64) {
    let (p, q) = s.endpoints();
    let (dp, dq) = (p.distance(x), q.distance(x));
    if dp <= dq {
        (0, dp)
    } else {
        (1, dq)
    }
}

/// Bounded faces of the corner graph after pruning dangling edges.
fn extract_loops(walls: &[FloorplanWall], corners: &[Point2]) -> Vec<Vec<usize>> {
    let m = corners.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); m];
    for w in walls {
        if let (Some(a), Some(b)) = (w.start, w.end) {
            if a != b && !adj[a].contains(&b) {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
    }
    loop {
        let Some(v) = (0..m).find(|&v| adj[v].len() == 1) else { break };
        let u = adj[v][0];
        adj[v].clear();
        adj[u].retain(|&k| k != v);
    }
    for (v, nb) in adj.iter_mut().enumerate() {
        let c = corners[v];
        nb.sort_by(|&a, &b| {
            let (pa, pb) = (corners[a] - c, corners[b] - c);
            pa.y.atan2(pa.x).total_cmp(&pb.y.atan2(pb.x))
        });
    }
    let mut used = std::collections::HashSet::new();
    let mut loops = Vec::new();
    for u0 in 0..m {
        for &v0 in &adj[u0] {
            if used.contains(&(u0, v0)) {
                continue;
            }
            let mut face = Vec::new();
            let (mut u, mut v) = (u0, v0);
            while used.insert((u, v)) {
                face.push(u);
                // Next neighbour clockwise from the way back keeps the face
                // on the left.
                let nb = &adj[v];
                let back = nb.iter().position(|&k| k == u).unwrap();
                let w = nb[(back + nb.len() - 1) % nb.len()];
                u = v;
                v = w;
            }
            if signed_area(&face, corners) > 1e-12 {
                loops.push(rotate_to_min(face));
            }
        }
    }
    loops.sort();
    loops
}

fn signed_area(face: &[usize], corners: &[Point2]) -> f64 {
    let n = face.len();
    (0..n)
        .map(|i| corners[face[i]].cross(corners[face[(i + 1) % n]]))
        .sum::<f64>()
        * 0.5
}

fn rotate_to_min(mut face: Vec<usize>) -> Vec<usize> {
    let k = (0..face.len()).min_by_key(|&i| face[i]).unwrap_or(0);
    face.rotate_left(k);
    face
}

/// Full optimisation of a confirmed wall set.
pub fn build_floorplan(walls: &[PolarSegment], columns: &[ColumnRecord], cfg: &ManhattanConfig) -> Result<Floorplan> {
    cfg.validate()?;
    let frame = estimate_dominant(walls)?;
    let off: f64 = walls
        .iter()
        .filter(|w| frame.residual(w.direction_angle()) > cfg.tol)
        .map(|w| w.length())
        .sum();
    if off > cfg.max_off_axis_share * frame.support {
        return Err(Error::NoDominantFrame(format!(
            "{:.0}% of wall length is more than {:.1} deg off the dominant axes; mixed orientations are not supported",
            100.0 * off / frame.support,
            cfg.tol.to_degrees()
        )));
    }
    let mut snapped = snap_orthogonal(walls, &frame, cfg.tol);
    if cfg.merge_collinear {
        snapped = merge_collinear(&snapped, cfg.merge_radius);
    }
    let (walls, corners, loops) = close_corners(&snapped, cfg.merge_radius);
    Ok(Floorplan {
        frame,
        walls,
        corners,
        loops,
        columns: columns.to_vec(),
    })
}

impl Floorplan {
    /// Loop edges as corner pairs.
    pub fn loop_edges(&self, k: usize) -> Vec<(Point2, Point2)> {
        let l = &self.loops[k];
        (0..l.len())
            .map(|i| (self.corners[l[i]], self.corners[l[(i + 1) % l.len()]]))
            .collect()
    }
}

/// Direction angle of `b - a` folded into `[0, pi)`.
pub fn edge_direction(a: Point2, b: Point2) -> f64 {
    let d = b - a;
    d.y.atan2(d.x).rem_euclid(PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{segment_to_polar, Segment2};

    fn polar(x1: f64, y1: f64, x2: f64, y2: f64) -> PolarSegment {
        segment_to_polar(&Segment2::new(Point2::new(x1, y1), Point2::new(x2, y2)).unwrap()).unwrap()
    }

    fn at_angle(deg: f64, len: f64) -> PolarSegment {
        let a = deg.to_radians();
        let p = Point2::new(3.0, 1.0);
        let q = p + Point2::from_angle(a) * len;
        polar(p.x, p.y, q.x, q.y)
    }

    #[test]
    fn axes_of_simple_sets() {
        let f = estimate_dominant(&[at_angle(0.0, 2.0), at_angle(90.0, 1.0)]).unwrap();
        assert!(f.axis_angle.abs() < 1e-12 || (f.axis_angle - FRAC_PI_2).abs() < 1e-12);
        let f = estimate_dominant(&[at_angle(30.0, 2.0), at_angle(120.0, 1.0)]).unwrap();
        assert!((f.axis_angle - 30f64.to_radians()).abs() < 1e-12);
        assert!(estimate_dominant(&[]).is_err());
    }

    #[test]
    fn snap_near_vertical() {
        let frame = DominantFrame { axis_angle: 0.0, support: 1.0 };
        let w = at_angle(89.2, 3.0);
        let s = snap_orthogonal(&[w], &frame, 2f64.to_radians())[0];
        assert!(axial_angle_diff(s.direction_angle(), FRAC_PI_2) < 1e-15);
        assert!(s.midpoint().distance(w.midpoint()) < 1e-12);
        assert!((s.length() - w.length()).abs() < 1e-12);
        let d = at_angle(45.0, 3.0);
        assert_eq!(snap_orthogonal(&[d], &frame, 2f64.to_radians())[0], d);
        let again = snap_orthogonal(&[s], &frame, 2f64.to_radians())[0];
        assert_eq!(again, s);
    }

    #[test]
    fn rectangle_closes() {
        let walls = [
            polar(0.05, 0.0, 3.95, 0.0),
            polar(4.0, 0.05, 4.0, 2.95),
            polar(3.95, 3.0, 0.05, 3.0),
            polar(0.0, 2.95, 0.0, 0.05),
        ];
        let fp = build_floorplan(&walls, &[], &ManhattanConfig::default()).unwrap();
        assert_eq!(fp.corners.len(), 4);
        assert_eq!(fp.loops.len(), 1);
        assert_eq!(fp.loops[0].len(), 4);
        for v in [(0.0, 0.0), (4.0, 0.0), (4.0, 3.0), (0.0, 3.0)] {
            let v = Point2::new(v.0, v.1);
            assert!(fp.corners.iter().any(|c| c.distance(v) < 1e-12));
        }
    }

    #[test]
    fn two_rooms_two_loops() {
        let mut walls = Vec::new();
        for ox in [0.0, 10.0] {
            walls.extend([
                polar(ox + 0.1, 0.0, ox + 2.9, 0.0),
                polar(ox + 3.0, 0.1, ox + 3.0, 1.9),
                polar(ox + 2.9, 2.0, ox + 0.1, 2.0),
                polar(ox, 1.9, ox, 0.1),
            ]);
        }
        let fp = build_floorplan(&walls, &[], &ManhattanConfig::default()).unwrap();
        assert_eq!(fp.loops.len(), 2);
        assert_eq!(fp.corners.len(), 8);
    }

    #[test]
    fn collinear_pieces_join() {
        let walls = [
            polar(0.0, 1.0, 2.0, 1.0),
            polar(1.5, 1.02, 3.0, 1.02),
            polar(3.2, 1.0, 5.0, 1.0),
            polar(6.0, 1.0, 7.0, 1.0),
            polar(0.0, 1.5, 2.0, 1.5),
        ];
        let m = merge_collinear(&walls, 0.3);
        assert_eq!(m.len(), 3);
        let (p, q) = m[0].endpoints();
        let xs = (p.x.min(q.x), p.x.max(q.x));
        assert!((xs.0 - 0.0).abs() < 1e-9 && (xs.1 - 5.0).abs() < 1e-9, "{xs:?}");
        assert!(m[0].rho > 1.0 && m[0].rho < 1.02);
    }

    #[test]
    fn mixed_orientations_rejected() {
        let bimodal = [at_angle(0.0, 2.0), at_angle(90.0, 2.0), at_angle(40.0, 2.0), at_angle(130.0, 2.0)];
        assert!(matches!(
            build_floorplan(&bimodal, &[], &ManhattanConfig::default()),
            Err(Error::NoDominantFrame(_))
        ));
    }
}
