//! Deterministic SVG output: map overlays, floorplans, BEV previews and
//! bar charts. Numbers are printed with fixed precision so files diff
//! cleanly.

use std::fmt::Write as _;

use crate::bev::BevImage;
use crate::eval::Correspondence;
use crate::geom::{Point2, Segment2};
use crate::manhattan::Floorplan;

/// World-to-canvas mapping with `y` up.
struct View {
    min: Point2,
    scale: f64,
    h: f64,
    margin: f64,
}

impl View {
    fn fit(points: impl Iterator<Item = Point2>, width: f64) -> Self {
        let (mut lo, mut hi) = (Point2::new(f64::MAX, f64::MAX), Point2::new(f64::MIN, f64::MIN));
        for p in points {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        if lo.x > hi.x {
            lo = Point2::new(-1.0, -1.0);
            hi = Point2::new(1.0, 1.0);
        }
        let margin = 20.0;
        let span = (hi.x - lo.x).max(hi.y - lo.y).max(1e-6);
        let scale = (width - 2.0 * margin) / span;
        Self {
            min: lo,
            scale,
            h: (hi.y - lo.y) * scale + 2.0 * margin,
            margin,
        }
    }

    fn map(&self, p: Point2) -> (f64, f64) {
        (
            self.margin + (p.x - self.min.x) * self.scale,
            self.h - self.margin - (p.y - self.min.y) * self.scale,
        )
    }

    fn line(&self, s: &mut String, a: Point2, b: Point2, color: &str, w: f64, extra: &str) {
        let (x1, y1) = self.map(a);
        let (x2, y2) = self.map(b);
        let _ = writeln!(
            s,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{color}" stroke-width="{w}"{extra}/>"#
        );
    }
}

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Ground truth in green, matched ground-truth parts in orange, matched
/// detections in pink and unmatched detections in blue.
pub fn overlay_svg(c: &Correspondence) -> String {
    let pts = c.gt.iter().chain(&c.detections).flat_map(|s| [s.p1, s.p2]);
    let v = View::fit(pts, 800.0);
    let mut s = header(800.0, v.h);
    for g in &c.gt {
        v.line(&mut s, g.p1, g.p2, "#2ca02c", 4.0, "");
    }
    for (d, m) in c.detections.iter().zip(&c.matches) {
        if let Some(m) = m {
            let g = c.gt[m.gt];
            let u = (g.p2 - g.p1) * (1.0 / g.length());
            v.line(&mut s, g.p1 + u * m.interval[0], g.p1 + u * m.interval[1], "#ff7f0e", 2.5, "");
        }
        let color = if m.is_some() { "#e377c2" } else { "#1f77b4" };
        v.line(&mut s, d.p1, d.p2, color, 1.5, "");
    }
    s.push_str("</svg>\n");
    s
}

/// Walls as strokes, corners as dots, loops filled.
pub fn floorplan_svg(fp: &Floorplan) -> String {
    let pts = fp
        .walls
        .iter()
        .flat_map(|w| {
            let (a, b) = w.segment.endpoints();
            [a, b]
        })
        .chain(fp.corners.iter().copied());
    let v = View::fit(pts, 800.0);
    let mut s = header(800.0, v.h);
    for l in &fp.loops {
        let pts: Vec<String> = l
            .iter()
            .map(|&k| {
                let (x, y) = v.map(fp.corners[k]);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(s, r##"<polygon points="{}" fill="#dbe9f6" stroke="none"/>"##, pts.join(" "));
    }
    for w in &fp.walls {
        let (a, b) = w.segment.endpoints();
        v.line(&mut s, a, b, "black", 2.0, "");
    }
    for c in &fp.corners {
        let (x, y) = v.map(*c);
        let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="#d62728"/>"##);
    }
    for c in &fp.columns {
        let (x, y) = v.map(Point2::new(c.x, c.y));
        let _ = writeln!(
            s,
            r##"<circle cx="{x:.2}" cy="{y:.2}" r="{:.2}" fill="none" stroke="#7f7f7f"/>"##,
            (c.r * v.scale).max(1.0)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Occupied raster cells, pooled into `cell` x `cell` blocks, with optional
/// segments on top.
pub fn bev_svg(img: &BevImage, cell: usize, segments: &[Segment2]) -> String {
    let cell = cell.max(1);
    let n = img.width().div_ceil(cell);
    let mut blocks = std::collections::BTreeSet::new();
    for (c, r) in img.occupied() {
        blocks.insert((r / cell, c / cell));
    }
    let px = 800.0 / n as f64;
    let mut s = header(800.0, 800.0);
    for (r, c) in blocks {
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{px:.2}" height="{px:.2}" fill="black"/>"#,
            c as f64 * px,
            r as f64 * px
        );
    }
    let g = img.georef();
    for seg in segments {
        let (u1, v1) = g.world_to_pixel_f(seg.p1);
        let (u2, v2) = g.world_to_pixel_f(seg.p2);
        let k = px / cell as f64;
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#d62728" stroke-width="1.5"/>"##,
            u1 * k,
            v1 * k,
            u2 * k,
            v2 * k
        );
    }
    s.push_str("</svg>\n");
    s
}

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#17becf"];

/// Stacked bars, one per row, with a dashed red reference line.
pub fn stacked_bars_svg(title: &str, parts: &[&str], rows: &[(String, Vec<f64>)], reference: Option<f64>, unit: &str) -> String {
    let (w, h, left, bottom, top) = (640.0, 420.0, 70.0, 60.0, 40.0);
    let max_total = rows
        .iter()
        .map(|(_, v)| v.iter().sum::<f64>())
        .fold(reference.unwrap_or(0.0), f64::max)
        .max(1e-9)
        * 1.1;
    let plot_h = h - bottom - top;
    let y = |v: f64| h - bottom - v / max_total * plot_h;
    let mut s = header(w, h);
    let _ = writeln!(s, r#"<text x="{:.1}" y="24" font-size="16" text-anchor="middle">{title}</text>"#, w / 2.0);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{:.1}" x2="{left}" y2="{top}" stroke="black"/>"#, h - bottom);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#, h - bottom, w - 20.0, h - bottom);
    for k in 0..=4 {
        let v = max_total * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{v:.1}</text>"#,
            left - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" font-size="12" transform="rotate(-90 16 {:.1})" text-anchor="middle">{unit}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    let slot = (w - left - 20.0) / rows.len().max(1) as f64;
    for (i, (label, vals)) in rows.iter().enumerate() {
        let x = left + slot * (i as f64 + 0.2);
        let bw = slot * 0.6;
        let mut acc = 0.0;
        for (j, v) in vals.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.2}" width="{bw:.1}" height="{:.2}" fill="{}"/>"#,
                y(acc + v),
                y(acc) - y(acc + v),
                PALETTE[j % PALETTE.len()]
            );
            acc += v;
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{label}</text>"#,
            x + bw / 2.0,
            h - bottom + 18.0
        );
    }
    if let Some(r) = reference {
        let _ = writeln!(
            s,
            r#"<line x1="{left}" y1="{:.2}" x2="{:.1}" y2="{:.2}" stroke="red" stroke-width="2" stroke-dasharray="8 5"/>"#,
            y(r),
            w - 20.0,
            y(r)
        );
    }
    for (j, p) in parts.iter().enumerate() {
        let lx = left + 10.0 + 110.0 * j as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}" font-size="11">{p}</text>"#,
            h - 22.0,
            PALETTE[j % PALETTE.len()],
            lx + 14.0,
            h - 13.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Side-by-side bars per row, one per series, on a `[0, 1]` axis.
pub fn grouped_bars_svg(title: &str, series: &[&str], rows: &[(String, Vec<f64>)]) -> String {
    let (w, h, left, bottom, top) = (640.0, 380.0, 60.0, 60.0, 40.0);
    let plot_h = h - bottom - top;
    let y = |v: f64| h - bottom - v.clamp(0.0, 1.0) * plot_h;
    let mut s = header(w, h);
    let _ = writeln!(s, r#"<text x="{:.1}" y="24" font-size="16" text-anchor="middle">{title}</text>"#, w / 2.0);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#, h - bottom, w - 20.0, h - bottom);
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{v:.2}</text>"##,
            y(v),
            w - 20.0,
            y(v),
            left - 6.0,
            y(v) + 4.0
        );
    }
    let slot = (w - left - 20.0) / rows.len().max(1) as f64;
    let bw = slot * 0.7 / series.len().max(1) as f64;
    for (i, (label, vals)) in rows.iter().enumerate() {
        let x0 = left + slot * (i as f64 + 0.15);
        for (j, v) in vals.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.2}" width="{bw:.1}" height="{:.2}" fill="{}"/>"#,
                x0 + bw * j as f64,
                y(*v),
                y(0.0) - y(*v),
                PALETTE[j % PALETTE.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{label}</text>"#,
            x0 + slot * 0.35,
            h - bottom + 18.0
        );
    }
    for (j, p) in series.iter().enumerate() {
        let lx = left + 10.0 + 110.0 * j as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}" font-size="11">{p}</text>"#,
            h - 22.0,
            PALETTE[j % PALETTE.len()],
            lx + 14.0,
            h - 13.0
        );
    }
    s.push_str("</svg>\n");
    s
}
