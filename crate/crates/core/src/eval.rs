//! Length-weighted accuracy of a wall map against ground-truth centrelines.
//!
//! A detection matches the nearest ground-truth wall whose line passes
//! within `max_perp_dist` of the detection midpoint, whose direction is
//! within `max_angle`, and whose extent it overlaps. Matched length is the
//! detection projected onto that wall and clipped to its extent; per wall
//! the matched intervals are unioned so overlapping detections are not
//! counted twice towards recall.

use serde::{Deserialize, Serialize};

use crate::detect::positive;
use crate::error::{Error, Result};
use crate::geom::{axial_angle_diff, Segment2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchCriteria {
    pub max_perp_dist: f64,
    pub max_angle: f64,
}

impl Default for MatchCriteria {
    fn default() -> Self {
        Self {
            max_perp_dist: 0.3,
            max_angle: 5f64.to_radians(),
        }
    }
}

impl MatchCriteria {
    pub fn validate(&self) -> Result<()> {
        positive("criteria.max_perp_dist", self.max_perp_dist)?;
        positive("criteria.max_angle", self.max_angle)
    }
}

/// Per-detection outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMatch {
    pub gt: usize,
    /// Clipped projected length onto the ground-truth wall.
    pub overlap: f64,
    /// Interval `[t0, t1]` along the ground-truth wall, from its start.
    pub interval: [f64; 2],
    /// Perpendicular distance of the detection midpoint to the wall line.
    pub perp_dist: f64,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub detections: Vec<Segment2>,
    pub gt: Vec<Segment2>,
    pub matches: Vec<Option<DetectionMatch>>,
}

fn line_frame(g: &Segment2) -> Option<(crate::geom::Point2, crate::geom::Point2, f64)> {
    let len = g.length();
    (len > 0.0).then(|| {
        let u = (g.p2 - g.p1) * (1.0 / len);
        (g.p1, u, len)
    })
}

pub fn match_to_gt(detected: &[Segment2], gt: &[Segment2], c: &MatchCriteria) -> Correspondence {
    let frames: Vec<_> = gt.iter().map(line_frame).collect();
    let matches = detected
        .iter()
        .map(|d| {
            let mid = d.midpoint();
            let mut best: Option<DetectionMatch> = None;
            for (k, f) in frames.iter().enumerate() {
                let Some((o, u, len)) = *f else { continue };
                let perp = (mid - o).cross(u).abs();
                let angle = axial_angle_diff(d.direction_angle(), gt[k].direction_angle());
                if perp > c.max_perp_dist || angle > c.max_angle {
                    continue;
                }
                let (a, b) = ((d.p1 - o).dot(u), (d.p2 - o).dot(u));
                let t0 = a.min(b).max(0.0);
                let t1 = a.max(b).min(len);
                if t1 <= t0 {
                    continue;
                }
                let cand = DetectionMatch {
                    gt: k,
                    overlap: t1 - t0,
                    interval: [t0, t1],
                    perp_dist: perp,
                    angle,
                };
                let better = match &best {
                    None => true,
                    Some(b) => perp < b.perp_dist || (perp == b.perp_dist && cand.overlap > b.overlap),
                };
                if better {
                    best = Some(cand);
                }
            }
            best
        })
        .collect();
    Correspondence {
        detections: detected.to_vec(),
        gt: gt.to_vec(),
        matches,
    }
}

/// Total length of a union of intervals.
pub fn union_length(mut iv: Vec<[f64; 2]>) -> f64 {
    iv.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut total = 0.0;
    let mut cur: Option<[f64; 2]> = None;
    for [a, b] in iv {
        match cur {
            Some([c0, c1]) if a <= c1 => cur = Some([c0, c1.max(b)]),
            Some([c0, c1]) => {
                total += c1 - c0;
                cur = Some([a, b]);
            }
            None => cur = Some([a, b]),
        }
    }
    if let Some([c0, c1]) = cur {
        total += c1 - c0;
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallDetail {
    pub gt: usize,
    pub length: f64,
    pub matched_length: f64,
    pub detections: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub dist_err_cm: f64,
    pub angle_err_deg: f64,
    pub gt_length: f64,
    pub detected_length: f64,
    pub per_wall: Vec<WallDetail>,
}

pub fn compute_metrics(c: &Correspondence) -> Result<EvalReport> {
    let gt_length: f64 = c.gt.iter().map(Segment2::length).sum();
    if !(gt_length > 0.0) {
        return Err(Error::UndefinedMetric("ground truth has zero total length".into()));
    }
    let detected_length: f64 = c.detections.iter().map(Segment2::length).sum();
    let mut per_wall: Vec<WallDetail> = c
        .gt
        .iter()
        .enumerate()
        .map(|(k, g)| WallDetail {
            gt: k,
            length: g.length(),
            matched_length: 0.0,
            detections: Vec::new(),
        })
        .collect();
    let mut intervals: Vec<Vec<[f64; 2]>> = vec![Vec::new(); c.gt.len()];
    let (mut matched_det, mut wsum, mut dsum, mut asum) = (0.0, 0.0, 0.0, 0.0);
    for (i, m) in c.matches.iter().enumerate() {
        let Some(m) = m else { continue };
        intervals[m.gt].push(m.interval);
        per_wall[m.gt].detections.push(i);
        matched_det += m.overlap;
        wsum += m.overlap;
        dsum += m.overlap * m.perp_dist;
        asum += m.overlap * m.angle;
    }
    for (w, iv) in per_wall.iter_mut().zip(intervals) {
        w.matched_length = union_length(iv);
    }
    let recall = per_wall.iter().map(|w| w.matched_length).sum::<f64>() / gt_length;
    let precision = if detected_length > 0.0 {
        matched_det / detected_length
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let (dist_err_cm, angle_err_deg) = if wsum > 0.0 {
        (100.0 * dsum / wsum, (asum / wsum).to_degrees())
    } else {
        (0.0, 0.0)
    };
    Ok(EvalReport {
        recall,
        precision,
        f1,
        dist_err_cm,
        angle_err_deg,
        gt_length,
        detected_length,
        per_wall,
    })
}

pub fn evaluate(detected: &[Segment2], gt: &[Segment2], c: &MatchCriteria) -> Result<EvalReport> {
    c.validate()?;
    compute_metrics(&match_to_gt(detected, gt, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point2;

    fn seg(x1: f64, y1: f64, x2: f64, y2: f64) -> Segment2 {
        Segment2 {
            p1: Point2::new(x1, y1),
            p2: Point2::new(x2, y2),
        }
    }

    #[test]
    fn perfect_and_spurious() {
        let gt = vec![seg(0.0, 0.0, 6.0, 0.0), seg(6.0, 0.0, 6.0, 4.0)];
        let r = evaluate(&gt, &gt, &MatchCriteria::default()).unwrap();
        assert_eq!((r.recall, r.precision, r.f1), (1.0, 1.0, 1.0));
        assert_eq!((r.dist_err_cm, r.angle_err_deg), (0.0, 0.0));
        let mut det = gt.clone();
        det.push(seg(2.0, 2.0, 2.0, 4.0));
        let r = evaluate(&det, &gt, &MatchCriteria::default()).unwrap();
        assert_eq!(r.recall, 1.0);
        assert!((r.precision - 10.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn offset_detection_unmatched() {
        let gt = vec![seg(0.0, 0.0, 5.0, 0.0)];
        let r = evaluate(&[seg(0.0, 0.31, 5.0, 0.31)], &gt, &MatchCriteria::default()).unwrap();
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.f1, 0.0);
    }

    #[test]
    fn fragments_union() {
        let gt = vec![seg(0.0, 0.0, 5.0, 0.0)];
        let det = [seg(0.0, 0.0, 1.0, 0.0), seg(0.5, 0.0, 2.0, 0.0), seg(3.0, 0.0, 4.0, 0.0)];
        let r = evaluate(&det, &gt, &MatchCriteria::default()).unwrap();
        assert!((r.per_wall[0].matched_length - 3.0).abs() < 1e-12);
        assert!((r.recall - 0.6).abs() < 1e-12);
    }

    #[test]
    fn zero_gt_is_undefined() {
        assert!(matches!(
            evaluate(&[], &[], &MatchCriteria::default()),
            Err(Error::UndefinedMetric(_))
        ));
    }
}
