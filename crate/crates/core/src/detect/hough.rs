//! Progressive probabilistic Hough transform on the binary BEV raster.
//!
//! Occupied pixels are drawn in a seeded random order and vote into a
//! `(rho, theta)` accumulator. As soon as a bin crosses the vote threshold
//! the corresponding line is walked through the image in both directions,
//! tolerating gaps up to `max_gap`; pixels met on the walk are removed from
//! the pool and their votes withdrawn, so each pixel supports at most one
//! segment. The walk is repeated once along the least-squares line of the
//! pixels found by the first pass, which keeps long walks on the line when
//! the accumulator angle is off by up to half a bin.
//!
//! The binary raster is used directly: no edge detection precedes voting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ransac::{fit_line_tls, FittedLine};
use super::{positive, DetectorKind, RawDetection};
use crate::bev::BevImage;
use crate::error::Result;
use crate::geom::{Point2, Segment2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HoughConfig {
    /// Accumulator distance resolution in metres.
    pub rho_res: f64,
    /// Accumulator angle resolution in radians.
    pub theta_res: f64,
    pub votes_threshold: usize,
    pub min_line_len: f64,
    pub max_gap: f64,
    /// Half-width in pixels of the strip searched on each side of the walk.
    pub corridor_px: usize,
    pub seed: u64,
}

impl Default for HoughConfig {
    fn default() -> Self {
        Self {
            rho_res: 0.02,
            theta_res: 1f64.to_radians(),
            votes_threshold: 25,
            min_line_len: 0.5,
            max_gap: 0.3,
            corridor_px: 1,
            seed: 0,
        }
    }
}

impl HoughConfig {
    pub fn validate(&self) -> Result<()> {
        positive("hough.rho_res", self.rho_res)?;
        positive("hough.theta_res", self.theta_res)?;
        positive("hough.votes_threshold", self.votes_threshold as f64)?;
        positive("hough.min_line_len", self.min_line_len)?;
        positive("hough.max_gap", self.max_gap)
    }
}

/// Pixel window the detector works in, relative to the full raster.
struct Window {
    w: usize,
    h: usize,
}

impl Window {
    fn index(&self, x: i64, y: i64) -> Option<usize> {
        if x < 0 || y < 0 || x >= self.w as i64 || y >= self.h as i64 {
            None
        } else {
            Some(y as usize * self.w + x as usize)
        }
    }
}

struct Accumulator {
    bins: Vec<i32>,
    numrho: usize,
    offset: i64,
    trig: Vec<(f64, f64)>,
    theta_res: f64,
}

impl Accumulator {
    fn new(win: &Window, rho_px: f64, theta_res: f64) -> Self {
        let numangle = ((std::f64::consts::PI / theta_res).round() as usize).max(1);
        let numrho = (((win.w + win.h) * 2 + 1) as f64 / rho_px).round() as usize;
        let trig = (0..numangle)
            .map(|n| {
                let t = n as f64 * theta_res;
                (t.cos() / rho_px, t.sin() / rho_px)
            })
            .collect();
        Self {
            bins: vec![0; numangle * numrho],
            numrho,
            offset: (numrho as i64 - 1) / 2,
            trig,
            theta_res,
        }
    }

    fn rho_bin(&self, n: usize, x: i64, y: i64) -> usize {
        let (c, s) = self.trig[n];
        ((x as f64 * c + y as f64 * s).round() as i64 + self.offset) as usize
    }

    /// Adds the pixel's votes; returns the strongest bin it touched as
    /// `(votes, angle index)`.
    fn vote(&mut self, x: i64, y: i64) -> (i32, usize) {
        let mut best = (0, 0);
        for n in 0..self.trig.len() {
            let r = self.rho_bin(n, x, y);
            let v = &mut self.bins[n * self.numrho + r];
            *v += 1;
            if *v > best.0 {
                best = (*v, n);
            }
        }
        best
    }

    fn unvote(&mut self, x: i64, y: i64) {
        for n in 0..self.trig.len() {
            let r = self.rho_bin(n, x, y);
            self.bins[n * self.numrho + r] -= 1;
        }
    }
}

pub fn detect_hough(img: &BevImage, cfg: &HoughConfig, frame_ts: f64) -> Result<RawDetection> {
    cfg.validate()?;
    let mut out = RawDetection::empty(DetectorKind::Hough, frame_ts);
    let Some((c0, r0, c1, r1)) = img.bounding_box() else {
        return Ok(out);
    };
    let win = Window {
        w: c1 - c0 + 1,
        h: r1 - r0 + 1,
    };
    let scale = img.georef().scale;
    let rho_px = (cfg.rho_res / scale).max(1e-3);
    let max_gap_px = cfg.max_gap / scale;
    let min_len_px = cfg.min_line_len / scale;

    let mut mask = vec![false; win.w * win.h];
    let mut voted = vec![false; win.w * win.h];
    let mut pts: Vec<(i64, i64)> = img
        .occupied()
        .map(|(c, r)| ((c - c0) as i64, (r - r0) as i64))
        .collect();
    for &(x, y) in &pts {
        mask[y as usize * win.w + x as usize] = true;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    pts.shuffle(&mut rng);

    let mut acc = Accumulator::new(&win, rho_px, cfg.theta_res);
    let threshold = cfg.votes_threshold as i32;
    let walker = Walker {
        win: &win,
        corridor: cfg.corridor_px as i64,
        max_gap_px,
    };

    for &(x, y) in &pts {
        let idx = y as usize * win.w + x as usize;
        if !mask[idx] {
            continue;
        }
        let (votes, n) = acc.vote(x, y);
        voted[idx] = true;
        if votes < threshold {
            continue;
        }
        let theta = n as f64 * acc.theta_res;
        let seed = Point2::new(x as f64, y as f64);
        let coarse = FittedLine {
            point: seed,
            direction: Point2::new(-theta.sin(), theta.cos()),
        };
        let mut found = walker.walk(&mask, &coarse);
        let mut line = coarse;
        if let Some(refined) = fit_pixels(&found) {
            let t = refined.coordinate(seed);
            line = FittedLine {
                point: refined.at(t),
                direction: refined.direction,
            };
            found = walker.walk(&mask, &line);
            if let Some(l) = fit_pixels(&found) {
                line = l;
            }
        }

        let (mut tmin, mut tmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(px, py) in &found {
            let t = line.coordinate(Point2::new(px as f64, py as f64));
            tmin = tmin.min(t);
            tmax = tmax.max(t);
        }
        if tmax - tmin < min_len_px {
            // A rejected candidate gives up only its seed. Clearing its whole
            // walk would cut true lines wherever noise crosses them.
            mask[idx] = false;
            continue;
        }
        for &(px, py) in &found {
            let i = py as usize * win.w + px as usize;
            mask[i] = false;
            if voted[i] {
                acc.unvote(px, py);
                voted[i] = false;
            }
        }
        let a = line.at(tmin);
        let b = line.at(tmax);
        let g = img.georef();
        out.segments.push(Segment2 {
            p1: g.cell_center(a.x + c0 as f64, a.y + r0 as f64),
            p2: g.cell_center(b.x + c0 as f64, b.y + r0 as f64),
        });
    }
    Ok(out)
}

fn fit_pixels(px: &[(i64, i64)]) -> Option<FittedLine> {
    let pts: Vec<Point2> = px.iter().map(|&(x, y)| Point2::new(x as f64, y as f64)).collect();
    fit_line_tls(&pts)
}

struct Walker<'a> {
    win: &'a Window,
    corridor: i64,
    max_gap_px: f64,
}

impl Walker<'_> {
    /// Occupied pixels met walking both ways from `line.point`, stopping at
    /// the raster edge or after a gap longer than `max_gap_px`.
    fn walk(&self, mask: &[bool], line: &FittedLine) -> Vec<(i64, i64)> {
        let u = line.direction;
        let major_x = u.x.abs() >= u.y.abs();
        let step = u * (1.0 / u.x.abs().max(u.y.abs()));
        let step_len = step.norm();
        let mut found = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for sign in [1.0, -1.0] {
            let mut gap = 0usize;
            let mut k = if sign > 0.0 { 0.0 } else { 1.0 };
            loop {
                let p = line.point + step * (sign * k);
                let (ix, iy) = (p.x.round() as i64, p.y.round() as i64);
                if self.win.index(ix, iy).is_none() {
                    break;
                }
                let mut hit = false;
                for c in -self.corridor..=self.corridor {
                    let (qx, qy) = if major_x { (ix, iy + c) } else { (ix + c, iy) };
                    if let Some(i) = self.win.index(qx, qy) {
                        if mask[i] {
                            hit = true;
                            if seen.insert(i) {
                                found.push((qx, qy));
                            }
                        }
                    }
                }
                if hit {
                    gap = 0;
                } else {
                    gap += 1;
                    if gap as f64 * step_len > self.max_gap_px {
                        break;
                    }
                }
                k += 1.0;
            }
        }
        found
    }
}
