//! Gradient region-growing segment detector in the style of LSD.
//!
//! The binary raster is blurred into a float image so that it has a usable
//! gradient field. Pixels are visited in decreasing gradient magnitude; each
//! unused seed grows a region of 8-connected pixels whose level-line angle
//! agrees with the running region angle within `angle_tolerance`. The region
//! is summarised by its weighted principal axis and enclosing rectangle, and
//! accepted when it is large enough and fills its rectangle densely enough.
//! The a-contrario NFA validation of the original algorithm is replaced by
//! that density test.
//!
//! Thick wall bands produce two regions with opposite gradient directions,
//! one per face, so a band yields a pair of parallel segments.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::{positive, DetectorKind, RawDetection};
use crate::bev::BevImage;
use crate::error::{Error, Result};
use crate::geom::{Point2, Segment2};

/// Number of buckets for the linear-time pseudo-ordering of seeds.
const ORDER_BINS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LsdConfig {
    pub angle_tolerance: f64,
    pub density_threshold: f64,
    pub min_region_px: usize,
    /// Minimum gradient magnitude on the blurred `[0, 1]` raster.
    pub gradient_threshold: f64,
    pub blur_sigma_px: f64,
}

impl Default for LsdConfig {
    fn default() -> Self {
        Self {
            angle_tolerance: 22.5f64.to_radians(),
            density_threshold: 0.7,
            min_region_px: 12,
            gradient_threshold: 0.02,
            blur_sigma_px: 2.0,
        }
    }
}

impl LsdConfig {
    pub fn validate(&self) -> Result<()> {
        positive("lsd.angle_tolerance", self.angle_tolerance)?;
        positive("lsd.gradient_threshold", self.gradient_threshold)?;
        positive("lsd.blur_sigma_px", self.blur_sigma_px)?;
        positive("lsd.min_region_px", self.min_region_px as f64)?;
        if !(self.density_threshold > 0.0 && self.density_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "lsd.density_threshold must lie in (0, 1], got {}",
                self.density_threshold
            )));
        }
        Ok(())
    }
}

/// An accepted region with its bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct LsdRegion {
    pub segment: Segment2,
    /// Region pixel count over enclosing-rectangle area.
    pub density: f64,
    pub size: usize,
    /// Rectangle width in pixels.
    pub width_px: f64,
}

pub fn detect_lsd(img: &BevImage, cfg: &LsdConfig, frame_ts: f64) -> Result<RawDetection> {
    let regions = detect_lsd_regions(img, cfg)?;
    let mut out = RawDetection::empty(DetectorKind::Lsd, frame_ts);
    out.segments = regions.into_iter().map(|r| r.segment).collect();
    Ok(out)
}

struct Field {
    w: usize,
    h: usize,
    angle: Vec<f64>,
    mag: Vec<f64>,
}

pub fn detect_lsd_regions(img: &BevImage, cfg: &LsdConfig) -> Result<Vec<LsdRegion>> {
    cfg.validate()?;
    let Some((c0, r0, c1, r1)) = img.bounding_box() else {
        return Ok(Vec::new());
    };
    let margin = (3.0 * cfg.blur_sigma_px).ceil() as usize + 2;
    let n = img.width();
    let (x0, y0) = (c0.saturating_sub(margin), r0.saturating_sub(margin));
    let (x1, y1) = ((c1 + margin).min(n - 1), (r1 + margin).min(n - 1));
    let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);

    let mut raw = vec![0.0f64; w * h];
    for (c, r) in img.occupied() {
        raw[(r - y0) * w + (c - x0)] = 1.0;
    }
    let blurred = gaussian_blur(&raw, w, h, cfg.blur_sigma_px);
    let field = gradient_field(&blurred, w, h, cfg.gradient_threshold);

    let mut used = vec![false; w * h];
    let mut regions = Vec::new();
    let mut region: Vec<usize> = Vec::new();
    let georef = img.georef();
    for seed in pseudo_sorted(&field, cfg.gradient_threshold) {
        if used[seed] {
            continue;
        }
        grow_region(&field, seed, cfg.angle_tolerance, &mut used, &mut region);
        if region.len() < cfg.min_region_px {
            continue;
        }
        let Some((rect, density)) = refine(&field, seed, cfg, &mut used, &mut region) else {
            continue;
        };
        let a = rect.center + rect.dir * rect.lmin;
        let b = rect.center + rect.dir * rect.lmax;
        regions.push(LsdRegion {
            segment: Segment2 {
                p1: georef.cell_center(a.x + x0 as f64, a.y + y0 as f64),
                p2: georef.cell_center(b.x + x0 as f64, b.y + y0 as f64),
            },
            density,
            size: region.len(),
            width_px: rect.width,
        });
    }
    Ok(regions)
}

fn rect_density(field: &Field, region: &[usize]) -> Option<(Rect, f64)> {
    let rect = enclosing_rect(field, region)?;
    let density = region.len() as f64 / (rect.length * rect.width);
    Some((rect, density))
}

/// Brings a sparse region up to the density threshold: first regrow it with
/// a tolerance estimated from the pixels near the seed, then shrink it about
/// the seed. Pixels cut away by shrinking are released for later seeds,
/// which is how long, gappy structures end up as several short regions.
fn refine(
    field: &Field,
    seed: usize,
    cfg: &LsdConfig,
    used: &mut [bool],
    region: &mut Vec<usize>,
) -> Option<(Rect, f64)> {
    let (rect, density) = rect_density(field, region)?;
    if density >= cfg.density_threshold {
        return Some((rect, density));
    }
    let pos = |i: usize| Point2::new((i % field.w) as f64, (i / field.w) as f64);
    let origin = pos(seed);
    let a0 = field.angle[seed];
    let near: Vec<f64> = region
        .iter()
        .filter(|&&i| pos(i).distance(origin) < rect.width)
        .map(|&i| {
            let d = (field.angle[i] - a0 + PI).rem_euclid(TAU) - PI;
            d
        })
        .collect();
    let n = near.len() as f64;
    let mean = near.iter().sum::<f64>() / n;
    let var = near.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    let tau = 2.0 * var.sqrt();
    if tau > 0.0 && tau < cfg.angle_tolerance {
        for &i in region.iter() {
            used[i] = false;
        }
        grow_region(field, seed, tau, used, region);
        if region.len() < cfg.min_region_px {
            return None;
        }
        let (rect, density) = rect_density(field, region)?;
        if density >= cfg.density_threshold {
            return Some((rect, density));
        }
    }
    let mut radius = region.iter().map(|&i| pos(i).distance(origin)).fold(0.0, f64::max);
    loop {
        radius *= 0.75;
        region.retain(|&i| {
            let keep = pos(i).distance(origin) <= radius;
            if !keep {
                used[i] = false;
            }
            keep
        });
        if region.len() < cfg.min_region_px {
            return None;
        }
        let (rect, density) = rect_density(field, region)?;
        if density >= cfg.density_threshold {
            return Some((rect, density));
        }
    }
}

fn gaussian_blur(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);

    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let xx = x as i64 + k as i64 - radius;
                if (0..w as i64).contains(&xx) {
                    acc += kv * row[xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (k, kv) in kernel.iter().enumerate() {
            let yy = y as i64 + k as i64 - radius;
            if !(0..h as i64).contains(&yy) {
                continue;
            }
            let src_row = &tmp[yy as usize * w..(yy as usize + 1) * w];
            let dst_row = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst_row.iter_mut().zip(src_row) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Central-difference gradient; the level-line angle is the gradient angle
/// rotated by -90 degrees, as in LSD.
fn gradient_field(img: &[f64], w: usize, h: usize, threshold: f64) -> Field {
    let mut angle = vec![f64::NAN; w * h];
    let mut mag = vec![0.0; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            let gx = 0.5 * (img[i + 1] - img[i - 1]);
            let gy = 0.5 * (img[i + w] - img[i - w]);
            let m = gx.hypot(gy);
            mag[i] = m;
            if m >= threshold {
                angle[i] = gx.atan2(-gy);
            }
        }
    }
    Field { w, h, angle, mag }
}

/// Usable pixels in approximately decreasing gradient magnitude.
fn pseudo_sorted(field: &Field, threshold: f64) -> Vec<usize> {
    let max = field.mag.iter().cloned().fold(0.0, f64::max);
    if max < threshold {
        return Vec::new();
    }
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); ORDER_BINS];
    for (i, &m) in field.mag.iter().enumerate() {
        if !field.angle[i].is_nan() {
            let b = ((m / max) * (ORDER_BINS - 1) as f64) as usize;
            bins[ORDER_BINS - 1 - b].push(i);
        }
    }
    bins.into_iter().flatten().collect()
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        TAU - d
    } else {
        d
    }
}

fn grow_region(field: &Field, seed: usize, tol: f64, used: &mut [bool], region: &mut Vec<usize>) {
    region.clear();
    region.push(seed);
    used[seed] = true;
    let mut reg_angle = field.angle[seed];
    let (mut sx, mut sy) = (reg_angle.cos(), reg_angle.sin());
    let (w, h) = (field.w as i64, field.h as i64);
    let mut k = 0;
    while k < region.len() {
        let i = region[k];
        let (x, y) = ((i % field.w) as i64, (i / field.w) as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (xx, yy) = (x + dx, y + dy);
                if xx < 0 || yy < 0 || xx >= w || yy >= h {
                    continue;
                }
                let j = (yy * w + xx) as usize;
                let a = field.angle[j];
                if used[j] || a.is_nan() || angle_diff(a, reg_angle) > tol {
                    continue;
                }
                used[j] = true;
                region.push(j);
                sx += a.cos();
                sy += a.sin();
                reg_angle = sy.atan2(sx);
            }
        }
        k += 1;
    }
}

struct Rect {
    center: Point2,
    dir: Point2,
    lmin: f64,
    lmax: f64,
    length: f64,
    width: f64,
}

fn enclosing_rect(field: &Field, region: &[usize]) -> Option<Rect> {
    let pos = |i: usize| Point2::new((i % field.w) as f64, (i / field.w) as f64);
    let wsum: f64 = region.iter().map(|&i| field.mag[i]).sum();
    if wsum <= 0.0 {
        return None;
    }
    let center = region
        .iter()
        .fold(Point2::ORIGIN, |a, &i| a + pos(i) * field.mag[i])
        * (1.0 / wsum);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &i in region {
        let d = pos(i) - center;
        let m = field.mag[i];
        sxx += m * d.x * d.x;
        sxy += m * d.x * d.y;
        syy += m * d.y * d.y;
    }
    let dir = Point2::from_angle(0.5 * (2.0 * sxy).atan2(sxx - syy));
    let perp = dir.perp();
    let (mut lmin, mut lmax, mut wmin, mut wmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &i in region {
        let d = pos(i) - center;
        let l = d.dot(dir);
        let t = d.dot(perp);
        lmin = lmin.min(l);
        lmax = lmax.max(l);
        wmin = wmin.min(t);
        wmax = wmax.max(t);
    }
    if lmax <= lmin {
        return None;
    }
    Some(Rect {
        center,
        dir,
        lmin,
        lmax,
        length: lmax - lmin + 1.0,
        width: wmax - wmin + 1.0,
    })
}
