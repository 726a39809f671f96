//! Density-clustered sequential RANSAC on the flattened point set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{positive, DetectorKind, RawDetection};
use crate::dbscan::{dbscan_points, members};
use crate::error::Result;
use crate::geom::{Point2, Segment2};

/// Success probability the adaptive iteration count aims for.
const CONFIDENCE: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacConfig {
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub ransac_min_inliers: usize,
    /// Inlier band half-width. Defaults to 3 sigma of a 2 cm ranging error.
    pub residual_threshold: f64,
    pub max_iterations: usize,
    pub min_segment_len: f64,
    /// Inliers separated by more than this along the fitted line are split
    /// into separate segments.
    pub max_gap: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            dbscan_eps: 0.3,
            dbscan_min_pts: 4,
            ransac_min_inliers: 15,
            residual_threshold: 0.06,
            max_iterations: 500,
            min_segment_len: 0.5,
            max_gap: 1.0,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        positive("ransac.dbscan_eps", self.dbscan_eps)?;
        positive("ransac.residual_threshold", self.residual_threshold)?;
        positive("ransac.min_segment_len", self.min_segment_len)?;
        positive("ransac.max_gap", self.max_gap)?;
        for (name, v) in [
            ("ransac.dbscan_min_pts", self.dbscan_min_pts),
            ("ransac.ransac_min_inliers", self.ransac_min_inliers),
            ("ransac.max_iterations", self.max_iterations),
        ] {
            positive(name, v as f64)?;
        }
        Ok(())
    }
}

/// A line through `point` with unit `direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FittedLine {
    pub point: Point2,
    pub direction: Point2,
}

impl FittedLine {
    pub fn normal(&self) -> Point2 {
        self.direction.perp()
    }

    pub fn residual(&self, p: Point2) -> f64 {
        (p - self.point).dot(self.normal()).abs()
    }

    pub fn coordinate(&self, p: Point2) -> f64 {
        (p - self.point).dot(self.direction)
    }

    pub fn at(&self, t: f64) -> Point2 {
        self.point + self.direction * t
    }
}

/// Total-least-squares line through a point set (principal axis of the
/// scatter matrix). Returns `None` for fewer than two distinct points.
pub fn fit_line_tls(points: &[Point2]) -> Option<FittedLine> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let c = points.iter().fold(Point2::ORIGIN, |a, p| a + *p) * (1.0 / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = *p - c;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    if sxx + syy == 0.0 {
        return None;
    }
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    Some(FittedLine {
        point: c,
        direction: Point2::from_angle(angle),
    })
}

/// Clusters with DBSCAN, then peels lines off each cluster with sequential
/// RANSAC until fewer than `ransac_min_inliers` points remain supported.
pub fn detect_ransac(points: &[Point2], cfg: &RansacConfig, frame_ts: f64) -> Result<RawDetection> {
    cfg.validate()?;
    let mut out = RawDetection::empty(DetectorKind::Ransac, frame_ts);
    if points.is_empty() {
        return Ok(out);
    }
    let labels = dbscan_points(points, cfg.dbscan_eps, cfg.dbscan_min_pts);
    for (k, idx) in members(&labels).into_iter().enumerate() {
        let cluster: Vec<Point2> = idx.iter().map(|&i| points[i]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        extract_lines(cluster, cfg, &mut rng, &mut out);
    }
    Ok(out)
}

fn extract_lines(mut pts: Vec<Point2>, cfg: &RansacConfig, rng: &mut ChaCha8Rng, out: &mut RawDetection) {
    let thr = cfg.residual_threshold;
    while pts.len() >= cfg.ransac_min_inliers.max(2) {
        let Some(best) = best_model(&pts, cfg, rng) else {
            break;
        };
        let mut inliers: Vec<usize> = inlier_indices(&pts, &best, thr);
        if inliers.len() < cfg.ransac_min_inliers {
            break;
        }
        // Two refit passes: the first moves the line onto the inlier
        // centroid, the second settles the membership.
        let mut line = best;
        for _ in 0..2 {
            let sel: Vec<Point2> = inliers.iter().map(|&i| pts[i]).collect();
            if let Some(l) = fit_line_tls(&sel) {
                line = l;
            }
            let again = inlier_indices(&pts, &line, thr);
            if again.len() >= inliers.len() {
                inliers = again;
            }
        }

        let mut ts: Vec<f64> = inliers.iter().map(|&i| line.coordinate(pts[i])).collect();
        ts.sort_by(f64::total_cmp);
        let mut start = ts[0];
        for w in 0..ts.len() {
            let end_of_run = w + 1 == ts.len() || ts[w + 1] - ts[w] > cfg.max_gap;
            if end_of_run {
                let end = ts[w];
                if end > start {
                    let seg = Segment2 {
                        p1: line.at(start),
                        p2: line.at(end),
                    };
                    if seg.length() >= cfg.min_segment_len {
                        out.segments.push(seg);
                    } else {
                        out.rejected.push(seg);
                    }
                }
                if w + 1 < ts.len() {
                    start = ts[w + 1];
                }
            }
        }

        let mut keep = vec![true; pts.len()];
        for &i in &inliers {
            keep[i] = false;
        }
        let mut it = keep.iter();
        pts.retain(|_| *it.next().unwrap());
    }
}

fn inlier_indices(pts: &[Point2], line: &FittedLine, thr: f64) -> Vec<usize> {
    (0..pts.len()).filter(|&i| line.residual(pts[i]) <= thr).collect()
}

fn best_model(pts: &[Point2], cfg: &RansacConfig, rng: &mut ChaCha8Rng) -> Option<FittedLine> {
    let n = pts.len();
    let mut best: Option<(usize, FittedLine)> = None;
    let mut needed = cfg.max_iterations;
    let mut iter = 0;
    while iter < needed.min(cfg.max_iterations) {
        iter += 1;
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let d = pts[j] - pts[i];
        let len = d.norm();
        if len == 0.0 {
            continue;
        }
        let line = FittedLine {
            point: pts[i],
            direction: d * (1.0 / len),
        };
        let count = pts
            .iter()
            .filter(|p| line.residual(**p) <= cfg.residual_threshold)
            .count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, line));
            let w = count as f64 / n as f64;
            let p_good = w * w;
            needed = if p_good >= 1.0 {
                0
            } else {
                ((1.0 - CONFIDENCE).ln() / (1.0 - p_good).ln()).ceil() as usize
            };
        }
    }
    best.map(|(_, l)| l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn empty_input() {
        let d = detect_ransac(&[], &RansacConfig::default(), 1.0).unwrap();
        assert!(d.segments.is_empty());
        assert_eq!(d.frame_ts, 1.0);
    }

    #[test]
    fn noise_free_collinear_has_zero_residual() {
        let pts: Vec<Point2> = (0..50).map(|i| Point2::new(i as f64 * 0.1, 0.5 * i as f64 * 0.1 + 1.0)).collect();
        let d = detect_ransac(&pts, &RansacConfig::default(), 0.0).unwrap();
        assert_eq!(d.segments.len(), 1);
        let line = fit_line_tls(&[d.segments[0].p1, d.segments[0].p2]).unwrap();
        for p in &pts {
            assert!(line.residual(*p) < 1e-12);
        }
    }

    #[test]
    fn two_perpendicular_lines_one_cluster() {
        let mut pts = Vec::new();
        for i in 0..=60 {
            pts.push(Point2::new(i as f64 * 0.05, 0.0));
        }
        for i in 1..=40 {
            pts.push(Point2::new(0.0, i as f64 * 0.05));
        }
        let cfg = RansacConfig::default();
        assert_eq!(crate::dbscan::cluster_count(&dbscan_points(&pts, cfg.dbscan_eps, cfg.dbscan_min_pts)), 1);
        let d = detect_ransac(&pts, &cfg, 0.0).unwrap();
        assert_eq!(d.segments.len(), 2);
        let mut horiz = 0;
        let mut vert = 0;
        for s in &d.segments {
            // Corner points inside the inlier band tilt the refit slightly.
            if s.p1.y.abs() < 0.01 && s.p2.y.abs() < 0.01 {
                horiz += 1;
            } else if s.p1.x.abs() < 0.01 && s.p2.x.abs() < 0.01 {
                vert += 1;
            }
        }
        assert_eq!((horiz, vert), (1, 1), "{:?}", d.segments);
        let total: f64 = d.segments.iter().map(|s| s.length()).sum();
        assert!((4.85..=5.0).contains(&total), "{total}");
    }

    #[test]
    fn seeded_is_reproducible() {
        let noise = Normal::new(0.0, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point2> = (0..300)
            .map(|i| {
                let t = i as f64 * 0.03;
                if i % 2 == 0 {
                    Point2::new(t, noise.sample(&mut rng))
                } else {
                    Point2::new(noise.sample(&mut rng), t)
                }
            })
            .collect();
        let cfg = RansacConfig::default();
        assert_eq!(detect_ransac(&pts, &cfg, 0.0).unwrap(), detect_ransac(&pts, &cfg, 0.0).unwrap());
    }

    #[test]
    fn gaps_split_segments() {
        let mut pts: Vec<Point2> = (0..30).map(|i| Point2::new(i as f64 * 0.05, 0.0)).collect();
        pts.extend((0..30).map(|i| Point2::new(3.0 + i as f64 * 0.05, 0.0)));
        let cfg = RansacConfig { dbscan_eps: 2.0, ..Default::default() };
        let d = detect_ransac(&pts, &cfg, 0.0).unwrap();
        assert_eq!(d.segments.len(), 2);
    }
}
