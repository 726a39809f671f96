//! Planar geometry shared by every stage: points, segments, the Hessian
//! normal form used by fusion, axial angle arithmetic and rigid motions.
//!
//! The Hessian convention used throughout is `rho >= 0` with a full-circle
//! normal angle `alpha in [0, 2pi)`: the unit normal `(cos alpha, sin alpha)`
//! points from the origin towards the line. The tangent is the normal rotated
//! by +90 degrees, `t = (-sin alpha, cos alpha)`, and a segment is the pair of
//! signed offsets `d1 <= d2` of its endpoints from the perpendicular foot
//! `rho * n` measured along `t`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this magnitude a line is considered to pass through the origin.
const RHO_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { x: c, y: s }
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Self) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Self) -> f64 {
        (self - other).norm()
    }

    /// Counter-clockwise quarter turn.
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn midpoint(self, other: Self) -> Self {
        Self::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Self) -> Self {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Self) -> Self {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Self {
        Point2::new(self.x * k, self.y * k)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Self {
        Point2::new(-self.x, -self.y)
    }
}

/// A line segment given by its endpoints. Construction through
/// [`Segment2::new`] rejects zero-length input; the fields stay public so
/// that intermediate results can be assembled cheaply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment2 {
    pub p1: Point2,
    pub p2: Point2,
}

impl Segment2 {
    pub fn new(p1: Point2, p2: Point2) -> Result<Self> {
        if !p1.is_finite() || !p2.is_finite() {
            return Err(Error::Degenerate("segment endpoint is not finite".into()));
        }
        if p1 == p2 {
            return Err(Error::Degenerate("zero-length segment".into()));
        }
        Ok(Self { p1, p2 })
    }

    pub fn length(&self) -> f64 {
        self.p1.distance(self.p2)
    }

    pub fn midpoint(&self) -> Point2 {
        self.p1.midpoint(self.p2)
    }

    /// Unit direction from `p1` to `p2`.
    pub fn direction(&self) -> Point2 {
        let d = self.p2 - self.p1;
        d * (1.0 / d.norm())
    }

    /// Line direction angle folded into `[0, pi)`.
    pub fn direction_angle(&self) -> f64 {
        let d = self.p2 - self.p1;
        d.y.atan2(d.x).rem_euclid(PI)
    }

    /// Euclidean distance from `p` to the closed segment.
    pub fn distance_to_point(&self, p: Point2) -> f64 {
        let d = self.p2 - self.p1;
        let len2 = d.dot(d);
        let t = if len2 > 0.0 {
            ((p - self.p1).dot(d) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        p.distance(self.p1 + d * t)
    }

    pub fn reversed(&self) -> Self {
        Self {
            p1: self.p2,
            p2: self.p1,
        }
    }
}

/// A segment in Hessian normal form plus tangential extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarSegment {
    pub rho: f64,
    pub alpha: f64,
    pub d1: f64,
    pub d2: f64,
}

impl PolarSegment {
    pub fn normal(&self) -> Point2 {
        Point2::from_angle(self.alpha)
    }

    pub fn tangent(&self) -> Point2 {
        let (s, c) = self.alpha.sin_cos();
        Point2::new(-s, c)
    }

    /// Perpendicular foot of the origin on the line.
    pub fn foot(&self) -> Point2 {
        self.normal() * self.rho
    }

    pub fn point_at(&self, d: f64) -> Point2 {
        let (s, c) = self.alpha.sin_cos();
        Point2::new(self.rho * c - d * s, self.rho * s + d * c)
    }

    pub fn endpoints(&self) -> (Point2, Point2) {
        (self.point_at(self.d1), self.point_at(self.d2))
    }

    pub fn length(&self) -> f64 {
        (self.d2 - self.d1).abs()
    }

    pub fn midpoint(&self) -> Point2 {
        self.point_at(0.5 * (self.d1 + self.d2))
    }

    /// Line direction angle folded into `[0, pi)`.
    pub fn direction_angle(&self) -> f64 {
        (self.alpha + FRAC_PI_2).rem_euclid(PI)
    }

    /// Signed distance of `p` from the line along the normal.
    pub fn signed_distance(&self, p: Point2) -> f64 {
        p.dot(self.normal()) - self.rho
    }

    /// Tangential coordinate of `p` (its projection onto the tangent).
    pub fn project(&self, p: Point2) -> f64 {
        p.dot(self.tangent())
    }

    /// The same segment described with the opposite normal. The result may
    /// carry a negative `rho`; call [`PolarSegment::canonical`] to restore the
    /// `rho >= 0` convention.
    pub fn flipped(&self) -> Self {
        Self {
            rho: -self.rho,
            alpha: wrap_2pi(self.alpha + PI),
            d1: -self.d2,
            d2: -self.d1,
        }
    }

    /// Restores `rho >= 0`, `alpha in [0, 2pi)` and `d1 <= d2`.
    pub fn canonical(&self) -> Self {
        let mut s = if self.rho < 0.0 {
            self.flipped()
        } else {
            *self
        };
        s.alpha = wrap_2pi(s.alpha);
        if s.d1 > s.d2 {
            std::mem::swap(&mut s.d1, &mut s.d2);
        }
        s
    }

    /// Representation whose normal lies within 90 degrees of `reference`'s.
    pub fn aligned_to(&self, reference_alpha: f64) -> Self {
        if wrap_pi(self.alpha - reference_alpha).abs() > FRAC_PI_2 {
            self.flipped()
        } else {
            *self
        }
    }

    pub fn to_segment(&self) -> Segment2 {
        polar_to_segment(self)
    }
}

/// Converts endpoints to Hessian form.
pub fn segment_to_polar(s: &Segment2) -> Result<PolarSegment> {
    if !s.p1.is_finite() || !s.p2.is_finite() {
        return Err(Error::Degenerate("segment endpoint is not finite".into()));
    }
    let d = s.p2 - s.p1;
    let len = d.norm();
    if len == 0.0 {
        return Err(Error::Degenerate("zero-length segment".into()));
    }
    let u = d * (1.0 / len);
    let mut n = Point2::new(u.y, -u.x);
    let mut rho = n.dot(s.p1.midpoint(s.p2));
    if rho.abs() < RHO_EPS {
        // Through the origin: choose the normal with the smallest
        // nonnegative angle.
        rho = 0.0;
        if n.y.atan2(n.x).rem_euclid(TAU) >= PI {
            n = -n;
        }
    } else if rho < 0.0 {
        rho = -rho;
        n = -n;
    }
    let alpha = wrap_2pi(n.y.atan2(n.x));
    let t = Point2::new(-alpha.sin(), alpha.cos());
    let (a, b) = (t.dot(s.p1), t.dot(s.p2));
    let (d1, d2) = if a <= b { (a, b) } else { (b, a) };
    Ok(PolarSegment { rho, alpha, d1, d2 })
}

/// Reconstructs the endpoints, always in `(d1-endpoint, d2-endpoint)` order.
pub fn polar_to_segment(p: &PolarSegment) -> Segment2 {
    let (p1, p2) = p.endpoints();
    Segment2 { p1, p2 }
}

/// Angle between two line directions, ignoring orientation. Inputs are
/// direction angles in radians (any range); the result lies in `[0, pi/2]`.
pub fn axial_angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Wraps to `(-pi, pi]`.
pub fn wrap_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Wraps to `[0, 2pi)`.
pub fn wrap_2pi(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Planar rigid motion: rotate by `theta`, then translate by `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
    };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_pi(theta),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        Point2::new(c * p.x - s * p.y + self.x, s * p.x + c * p.y + self.y)
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let p = self.apply(other.position());
        Pose2::new(p.x, p.y, self.theta + other.theta)
    }
}

pub fn transform_segment(s: &Segment2, pose: &Pose2) -> Segment2 {
    Segment2 {
        p1: pose.apply(s.p1),
        p2: pose.apply(s.p2),
    }
}

/// Moves a polar segment by a rigid motion. Rotation about the origin maps
/// `alpha -> alpha + theta` and keeps the extent; translation shifts `rho`
/// along the normal and the extent along the tangent.
pub fn transform_polar(p: &PolarSegment, pose: &Pose2) -> PolarSegment {
    let alpha = p.alpha + pose.theta;
    let (s, c) = alpha.sin_cos();
    let shift_n = pose.x * c + pose.y * s;
    let shift_t = -pose.x * s + pose.y * c;
    PolarSegment {
        rho: p.rho + shift_n,
        alpha,
        d1: p.d1 + shift_t,
        d2: p.d2 + shift_t,
    }
    .canonical()
}
