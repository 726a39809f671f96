//! Height-compression flattening of LiDAR frames and binary BEV rasters.
//!
//! Frames are converted from spherical to Cartesian coordinates, cut to a
//! height band that removes floor and ceiling rings, and the surviving
//! `(x, y)` positions are kept both as a point list (for RANSAC) and as a
//! square occupancy raster with the sensor at its centre (for the image
//! detectors).
//!
//! Raster convention: world `y` points up, image rows grow downwards.
//! A point maps to `col = floor(x / scale) + size/2` and
//! `row = size/2 - 1 - floor(y / scale)`.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point2;

const FRAME_MAGIC: &[u8; 4] = b"BEVF";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// One revolution of a multi-channel spinning LiDAR.
///
/// `ranges` is row-major by channel: `ranges[c * azimuths.len() + a]`.
/// A range of exactly zero encodes a missing return.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarFrame {
    pub elevations: Vec<f64>,
    pub azimuths: Vec<f64>,
    pub ranges: Vec<f64>,
    pub timestamp: f64,
}

impl LidarFrame {
    pub fn new(
        elevations: Vec<f64>,
        azimuths: Vec<f64>,
        ranges: Vec<f64>,
        timestamp: f64,
    ) -> Result<Self> {
        let f = Self {
            elevations,
            azimuths,
            ranges,
            timestamp,
        };
        f.validate()?;
        Ok(f)
    }

    /// A frame with no returns at all.
    pub fn empty(elevations: Vec<f64>, azimuths: Vec<f64>, timestamp: f64) -> Self {
        let n = elevations.len() * azimuths.len();
        Self {
            elevations,
            azimuths,
            ranges: vec![0.0; n],
            timestamp,
        }
    }

    pub fn channels(&self) -> usize {
        self.elevations.len()
    }

    pub fn azimuth_steps(&self) -> usize {
        self.azimuths.len()
    }

    pub fn range(&self, channel: usize, step: usize) -> f64 {
        self.ranges[channel * self.azimuths.len() + step]
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.elevations.len() * self.azimuths.len();
        if self.ranges.len() != expected {
            return Err(Error::Shape(format!(
                "{} ranges for {} channels x {} azimuth steps",
                self.ranges.len(),
                self.elevations.len(),
                self.azimuths.len()
            )));
        }
        if !strictly_increasing(&self.elevations) {
            return Err(Error::Shape("elevations must be strictly increasing".into()));
        }
        if !strictly_increasing(&self.azimuths)
            || self
                .azimuths
                .iter()
                .any(|a| !(0.0..std::f64::consts::TAU).contains(a))
        {
            return Err(Error::Shape(
                "azimuths must be strictly increasing within [0, 2pi)".into(),
            ));
        }
        if let Some(r) = self.ranges.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(Error::Shape(format!("invalid range value {r}")));
        }
        Ok(())
    }

    /// Little-endian binary layout: magic `BEVF`, `u32` channels, `u32`
    /// azimuth steps, `f64` timestamp, then `f32` elevations, azimuths and
    /// ranges (row-major by channel).
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(FRAME_MAGIC)?;
        w.write_all(&(self.channels() as u32).to_le_bytes())?;
        w.write_all(&(self.azimuth_steps() as u32).to_le_bytes())?;
        w.write_all(&self.timestamp.to_le_bytes())?;
        for v in self
            .elevations
            .iter()
            .chain(&self.azimuths)
            .chain(&self.ranges)
        {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)
            .map_err(|e| Error::Format(format!("frame read failed: {e}")))?;
        Self::from_bytes(&buf)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 20 || &buf[..4] != FRAME_MAGIC {
            return Err(Error::Format("missing BEVF header".into()));
        }
        let channels = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
        let steps = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let timestamp = f64::from_le_bytes(buf[12..20].try_into().unwrap());
        let count = channels
            .checked_mul(steps)
            .and_then(|n| n.checked_add(channels + steps))
            .ok_or_else(|| Error::Format("frame dimensions overflow".into()))?;
        let body = &buf[20..];
        if body.len() != count * 4 {
            return Err(Error::Format(format!(
                "expected {} payload bytes, found {}",
                count * 4,
                body.len()
            )));
        }
        let mut vals = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        let elevations: Vec<f64> = vals.by_ref().take(channels).collect();
        let azimuths: Vec<f64> = vals.by_ref().take(steps).collect();
        let ranges: Vec<f64> = vals.collect();
        Self::new(elevations, azimuths, ranges, timestamp)
    }
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[0] < w[1])
}

/// Spherical to Cartesian. Zero-range beams are omitted.
pub fn spherical_to_cartesian(frame: &LidarFrame) -> Result<Vec<Point3>> {
    frame.validate()?;
    let az_trig: Vec<(f64, f64)> = frame.azimuths.iter().map(|a| a.sin_cos()).collect();
    let mut out = Vec::new();
    for (c, el) in frame.elevations.iter().enumerate() {
        let (se, ce) = el.sin_cos();
        let row = &frame.ranges[c * az_trig.len()..(c + 1) * az_trig.len()];
        for (&r, &(sa, ca)) in row.iter().zip(&az_trig) {
            if r > 0.0 {
                out.push(Point3 {
                    x: r * ce * ca,
                    y: r * ce * sa,
                    z: r * se,
                });
            }
        }
    }
    Ok(out)
}

/// Vertical region of interest, inclusive at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightBand {
    pub z_min: f64,
    pub z_max: f64,
}

impl HeightBand {
    pub fn new(z_min: f64, z_max: f64) -> Result<Self> {
        let b = Self { z_min, z_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.z_min.is_finite() && self.z_max.is_finite()) {
            return Err(Error::Config("height band limits must be finite".into()));
        }
        if self.z_min >= self.z_max {
            return Err(Error::Config(format!(
                "height band z_min {} must be below z_max {}",
                self.z_min, self.z_max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, z: f64) -> bool {
        self.z_min <= z && z <= self.z_max
    }
}

impl Default for HeightBand {
    fn default() -> Self {
        Self {
            z_min: 0.3,
            z_max: 1.8,
        }
    }
}

pub fn height_filter(points: &[Point3], band: &HeightBand) -> Vec<Point2> {
    points
        .iter()
        .filter(|p| band.contains(p.z))
        .map(|p| Point2::new(p.x, p.y))
        .collect()
}

/// Metric georeference of a square raster centred on the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Georef {
    /// Metres per pixel.
    pub scale: f64,
    /// Width and height in pixels.
    pub size: usize,
}

impl Default for Georef {
    fn default() -> Self {
        Self {
            scale: 0.02,
            size: 4096,
        }
    }
}

impl Georef {
    pub fn new(scale: f64, size: usize) -> Result<Self> {
        let g = Self { scale, size };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Config(format!("raster scale {} must be > 0", self.scale)));
        }
        if self.size == 0 || self.size % 2 != 0 {
            return Err(Error::Config(format!(
                "raster size {} must be a positive even number",
                self.size
            )));
        }
        Ok(())
    }

    fn half(&self) -> i64 {
        (self.size / 2) as i64
    }

    /// Metric distance from the sensor to the raster edge.
    pub fn half_range(&self) -> f64 {
        self.half() as f64 * self.scale
    }

    /// Pixel `(origin_col, origin_row)` containing the sensor.
    pub fn origin_px(&self) -> (usize, usize) {
        (self.size / 2, self.size / 2 - 1)
    }

    pub fn world_to_pixel(&self, p: Point2) -> Option<(usize, usize)> {
        let col = (p.x / self.scale).floor() as i64 + self.half();
        let row = self.half() - 1 - (p.y / self.scale).floor() as i64;
        let n = self.size as i64;
        if (0..n).contains(&col) && (0..n).contains(&row) {
            Some((col as usize, row as usize))
        } else {
            None
        }
    }

    /// Centre of pixel `(col, row)` in metres. Accepts fractional pixel
    /// indices, so sub-pixel detector output can be mapped as well.
    pub fn cell_center(&self, col: f64, row: f64) -> Point2 {
        let h = self.half() as f64;
        Point2::new(
            (col + 0.5 - h) * self.scale,
            (h - 0.5 - row) * self.scale,
        )
    }

    /// Pixel-index-aligned continuous coordinates used by OBB label files:
    /// `x = (u - size/2) * scale`, `y = (size/2 - 1 - v) * scale`. The
    /// integer point `(u, v)` is the world position whose floor lands in
    /// pixel `(u, v)`.
    pub fn pixel_to_world(&self, u: f64, v: f64) -> Point2 {
        let h = self.half() as f64;
        Point2::new((u - h) * self.scale, (h - 1.0 - v) * self.scale)
    }

    /// Inverse of [`Georef::pixel_to_world`].
    pub fn world_to_pixel_f(&self, p: Point2) -> (f64, f64) {
        let h = self.half() as f64;
        (p.x / self.scale + h, h - 1.0 - p.y / self.scale)
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.world_to_pixel(p).is_some()
    }
}

/// Square binary occupancy raster.
#[derive(Clone, PartialEq)]
pub struct BevImage {
    georef: Georef,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl std::fmt::Debug for BevImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BevImage")
            .field("georef", &self.georef)
            .field("occupied", &self.count_occupied())
            .finish()
    }
}

impl BevImage {
    pub fn new(georef: Georef) -> Self {
        let words_per_row = georef.size.div_ceil(64);
        Self {
            georef,
            words_per_row,
            bits: vec![0; words_per_row * georef.size],
        }
    }

    pub fn georef(&self) -> &Georef {
        &self.georef
    }

    pub fn width(&self) -> usize {
        self.georef.size
    }

    pub fn height(&self) -> usize {
        self.georef.size
    }

    pub fn get(&self, col: usize, row: usize) -> bool {
        if col >= self.georef.size || row >= self.georef.size {
            return false;
        }
        let w = self.bits[row * self.words_per_row + col / 64];
        (w >> (col % 64)) & 1 == 1
    }

    pub fn set(&mut self, col: usize, row: usize, value: bool) {
        assert!(col < self.georef.size && row < self.georef.size);
        let w = &mut self.bits[row * self.words_per_row + col / 64];
        let mask = 1u64 << (col % 64);
        if value {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    pub fn count_occupied(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Occupied pixels in row-major order.
    pub fn occupied(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let wpr = self.words_per_row;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0)
            .flat_map(move |(i, &w)| {
                let row = i / wpr;
                let base = (i % wpr) * 64;
                BitIter(w).map(move |b| (base + b, row))
            })
    }

    /// Inclusive pixel bounding box `(col_min, row_min, col_max, row_max)`.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for (c, r) in self.occupied() {
            bb = Some(match bb {
                None => (c, r, c, r),
                Some((c0, r0, c1, r1)) => (c0.min(c), r0.min(r), c1.max(c), r1.max(r)),
            });
        }
        bb
    }

    /// 1-bit PBM (`P4`), occupied pixels black.
    pub fn write_pbm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.georef.size;
        write!(w, "P4\n{n} {n}\n")?;
        let row_bytes = n.div_ceil(8);
        let mut row_buf = vec![0u8; row_bytes];
        for r in 0..n {
            row_buf.iter_mut().for_each(|b| *b = 0);
            for c in 0..n {
                if self.get(c, r) {
                    row_buf[c / 8] |= 0x80 >> (c % 8);
                }
            }
            w.write_all(&row_buf)?;
        }
        Ok(())
    }

    pub fn read_pbm<R: BufRead>(mut r: R, scale: f64) -> Result<Self> {
        let mut header = Vec::new();
        let mut tokens: Vec<String> = Vec::new();
        while tokens.len() < 3 {
            header.clear();
            r.read_until(b'\n', &mut header)
                .map_err(|e| Error::Format(format!("pbm header: {e}")))?;
            if header.is_empty() {
                return Err(Error::Format("truncated pbm header".into()));
            }
            let line = String::from_utf8_lossy(&header);
            let line = line.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(str::to_owned));
        }
        if tokens[0] != "P4" {
            return Err(Error::Format("not a P4 bitmap".into()));
        }
        let w: usize = tokens[1]
            .parse()
            .map_err(|_| Error::Format("bad pbm width".into()))?;
        let h: usize = tokens[2]
            .parse()
            .map_err(|_| Error::Format("bad pbm height".into()))?;
        if w != h {
            return Err(Error::Format("BEV rasters are square".into()));
        }
        let mut img = BevImage::new(Georef::new(scale, w)?);
        let row_bytes = w.div_ceil(8);
        let mut row_buf = vec![0u8; row_bytes];
        for row in 0..h {
            r.read_exact(&mut row_buf)
                .map_err(|e| Error::Format(format!("pbm body: {e}")))?;
            for c in 0..w {
                if row_buf[c / 8] & (0x80 >> (c % 8)) != 0 {
                    img.set(c, row, true);
                }
            }
        }
        Ok(img)
    }

    pub fn sidecar(&self) -> RasterSidecar {
        let (c, r) = self.georef.origin_px();
        RasterSidecar {
            scale: self.georef.scale,
            size: self.georef.size,
            origin_px: [c, r],
        }
    }
}

/// JSON written next to an exported PBM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterSidecar {
    pub scale: f64,
    pub size: usize,
    pub origin_px: [usize; 2],
}

struct BitIter(u64);

impl Iterator for BitIter {
    type Item = usize;
    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let b = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(b)
    }
}

/// Marks every pixel that contains at least one point. Out-of-raster points
/// are dropped.
pub fn rasterize(points: &[Point2], georef: &Georef) -> BevImage {
    let mut img = BevImage::new(*georef);
    for p in points {
        if let Some((c, r)) = georef.world_to_pixel(*p) {
            img.set(c, r, true);
        }
    }
    img
}

/// Flattening parameters. The height band is floor-relative; `sensor_height`
/// converts sensor-frame `z` to height above the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlattenConfig {
    pub band: HeightBand,
    pub sensor_height: f64,
    pub raster: Georef,
}

impl Default for FlattenConfig {
    fn default() -> Self {
        Self {
            band: HeightBand::default(),
            sensor_height: 0.6,
            raster: Georef::default(),
        }
    }
}

impl FlattenConfig {
    pub fn validate(&self) -> Result<()> {
        self.band.validate()?;
        self.raster.validate()?;
        if !self.sensor_height.is_finite() {
            return Err(Error::Config("sensor_height must be finite".into()));
        }
        Ok(())
    }

    /// The band expressed in sensor-frame `z`.
    pub fn sensor_band(&self) -> HeightBand {
        HeightBand {
            z_min: self.band.z_min - self.sensor_height,
            z_max: self.band.z_max - self.sensor_height,
        }
    }
}

/// Both flattened representations of one frame.
#[derive(Debug, Clone)]
pub struct Flattened {
    pub points: Vec<Point2>,
    pub image: BevImage,
}

pub fn flatten_pipeline(frame: &LidarFrame, cfg: &FlattenConfig) -> Result<Flattened> {
    let cloud = spherical_to_cartesian(frame)?;
    flatten_cloud(&cloud, cfg)
}

/// Same as [`flatten_pipeline`] for an already Cartesian sensor-frame cloud.
pub fn flatten_cloud(cloud: &[Point3], cfg: &FlattenConfig) -> Result<Flattened> {
    cfg.validate()?;
    let points = height_filter(cloud, &cfg.sensor_band());
    let image = rasterize(&points, &cfg.raster);
    Ok(Flattened { points, image })
}

/// Reads a pre-flattened `x,y,z` CSV cloud. Blank lines and lines starting
/// with `#` are skipped, as is a non-numeric header row.
pub fn read_csv_cloud<R: BufRead>(r: R) -> Result<Vec<Point3>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = t.split(',').map(str::trim).collect();
        let parsed: Option<Vec<f64>> = fields.iter().map(|f| f.parse().ok()).collect();
        match parsed {
            Some(v) if v.len() == 3 && v.iter().all(|x| x.is_finite()) => out.push(Point3 {
                x: v[0],
                y: v[1],
                z: v[2],
            }),
            None if i == 0 => continue,
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected `x,y,z`, got `{t}`"),
                })
            }
        }
    }
    Ok(out)
}
