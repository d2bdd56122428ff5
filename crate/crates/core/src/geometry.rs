//! Planar primitives and the dual-circle collision tests shared by the planner,
//! the avoidance module and the collision audit.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("segment endpoints coincide at ({0}, {1})")]
    DegenerateSegment(f64, f64),
    #[error("circle radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon is not convex and simple")]
    NotConvex,
    #[error("non-finite coordinate")]
    NonFinite,
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Rotates the vector by `theta` about the origin.
    pub fn rotate(self, theta: f64) -> Point2 {
        let (s, c) = theta.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Planar pose: position plus heading.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub const fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn heading(&self) -> Point2 {
        Point2::new(self.theta.cos(), self.theta.sin())
    }

    /// Applies this pose as a rigid transform to a pose given in its local frame.
    pub fn compose(&self, local: &Pose) -> Pose {
        let p = self.position() + local.position().rotate(self.theta);
        Pose::new(p.x, p.y, wrap_angle(self.theta + local.theta))
    }

    pub fn transform_point(&self, local: Point2) -> Point2 {
        self.position() + local.rotate(self.theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
}

impl Segment {
    pub fn new(a: Point2, b: Point2) -> Result<Self, GeometryError> {
        if !a.is_finite() || !b.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        if (b - a).norm_sq() == 0.0 {
            return Err(GeometryError::DegenerateSegment(a.x, a.y));
        }
        Ok(Self { a, b })
    }

    pub fn length(&self) -> f64 {
        self.a.dist(self.b)
    }

    pub fn distance_to(&self, p: Point2) -> f64 {
        let (_, d) = project_point_to_segment(p, self);
        p.dist(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Point2,
    pub radius: f64,
}

impl Circle {
    pub fn new(center: Point2, radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0) {
            return Err(GeometryError::NonPositiveRadius(radius));
        }
        if !center.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { center, radius })
    }
}

/// Two equal circles on the vehicle's longitudinal axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub front: Circle,
    pub rear: Circle,
}

impl Footprint {
    /// Footprint of a vehicle whose rear axle sits at `pose`. Circle centers are
    /// placed at a quarter and three quarters of the wheelbase.
    pub fn at(pose: &Pose, wheelbase: f64, radius: f64) -> Self {
        let h = pose.heading();
        let p = pose.position();
        Footprint {
            front: Circle {
                center: p + h * (0.75 * wheelbase),
                radius,
            },
            rear: Circle {
                center: p + h * (0.25 * wheelbase),
                radius,
            },
        }
    }

    pub fn circles(&self) -> [Circle; 2] {
        [self.front, self.rear]
    }

    pub fn inflate(&self, by: f64) -> Self {
        let mut f = *self;
        f.front.radius += by;
        f.rear.radius += by;
        f
    }

    /// Smallest surface-to-surface distance over the four circle pairs.
    /// Non-positive when the footprints touch or overlap.
    pub fn clearance(&self, other: &Footprint) -> f64 {
        let mut best = f64::INFINITY;
        for a in self.circles() {
            for b in other.circles() {
                best = best.min(a.center.dist(b.center) - a.radius - b.radius);
            }
        }
        best
    }
}

/// Closest point of `s` to `p`, with the clamped projection scalar.
pub fn project_point_to_segment(p: Point2, s: &Segment) -> (f64, Point2) {
    let ab = s.b - s.a;
    let t = ((p - s.a).dot(ab) / ab.norm_sq()).clamp(0.0, 1.0);
    (t, s.a + ab * t)
}

/// Boundary contact counts as a collision.
pub fn circle_segment_collides(c: &Circle, s: &Segment) -> bool {
    let (_, d) = project_point_to_segment(c.center, s);
    (c.center - d).norm_sq() <= c.radius * c.radius
}

pub fn footprint_hits_infrastructure(f: &Footprint, segments: &[Segment]) -> bool {
    segments
        .iter()
        .any(|s| circle_segment_collides(&f.front, s) || circle_segment_collides(&f.rear, s))
}

pub fn footprints_overlap(f1: &Footprint, f2: &Footprint) -> bool {
    f1.clearance(f2) <= 0.0
}

/// Earliest non-negative time at which two discs moving with constant relative
/// velocity come within `r_sum + margin` of each other. Returns `Some(0.0)` when
/// they already are.
pub fn analytic_closing_time(
    rel_pos0: Point2,
    rel_vel: Point2,
    r_sum: f64,
    margin: f64,
) -> Option<f64> {
    let reach = r_sum + margin;
    let c = rel_pos0.norm_sq() - reach * reach;
    if c <= 0.0 {
        return Some(0.0);
    }
    let a = rel_vel.norm_sq();
    if a == 0.0 {
        return None;
    }
    let b = 2.0 * rel_pos0.dot(rel_vel);
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // Numerically stable roots; with c > 0 both roots share a sign.
    let q = -0.5 * (b + b.signum() * sq);
    let (r1, r2) = (q / a, c / q);
    let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
    if lo >= 0.0 {
        Some(lo)
    } else if hi >= 0.0 {
        Some(hi)
    } else {
        None
    }
}

/// Convex polygon with counter-clockwise vertices (clockwise input is reversed).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<Point2>,
}

impl ConvexPolygon {
    pub fn new(mut vertices: Vec<Point2>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let n = vertices.len();
        let mut sign = 0.0;
        let mut turn = 0.0;
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            let cr = (b - a).cross(c - b);
            if cr.abs() < 1e-12 {
                return Err(GeometryError::NotConvex);
            }
            if sign == 0.0 {
                sign = cr.signum();
            } else if cr.signum() != sign {
                return Err(GeometryError::NotConvex);
            }
            let ea = (b - a).y.atan2((b - a).x);
            let eb = (c - b).y.atan2((c - b).x);
            turn += wrap_angle(eb - ea);
        }
        // A convex simple polygon turns exactly once.
        if (turn.abs() - 2.0 * PI).abs() > 1e-6 {
            return Err(GeometryError::NotConvex);
        }
        if sign < 0.0 {
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    /// Points on the boundary count as inside.
    pub fn contains(&self, p: Point2) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            (b - a).cross(p - a) >= 0.0
        })
    }
}

/// Approximates a circle by an inscribed polygon whose chords deviate from the
/// arc by at most `max_chord_error`.
pub fn polyline_circle(center: Point2, radius: f64, max_chord_error: f64) -> Vec<Segment> {
    polyline_arc(center, radius, 0.0, 2.0 * PI, max_chord_error)
}

/// Counter-clockwise arc from `start` sweeping `sweep` radians.
pub fn polyline_arc(
    center: Point2,
    radius: f64,
    start: f64,
    sweep: f64,
    max_chord_error: f64,
) -> Vec<Segment> {
    let ratio = (1.0 - max_chord_error / radius).clamp(-1.0, 1.0);
    let max_step = 2.0 * ratio.acos();
    let n = ((sweep.abs() / max_step).ceil() as usize).max(1);
    let pts: Vec<Point2> = (0..=n)
        .map(|i| {
            let a = start + sweep * i as f64 / n as f64;
            center + Point2::new(a.cos(), a.sin()) * radius
        })
        .collect();
    pts.windows(2)
        .filter_map(|w| Segment::new(w[0], w[1]).ok())
        .collect()
}
