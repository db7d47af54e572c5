//! Bird's-eye-view geometry: oriented rectangles, poses and overlap.
//!
//! Rectangles live on the ground plane. Overlap between two rectangles is
//! computed exactly by clipping one convex quadrilateral against the other
//! (Sutherland–Hodgman) and taking the shoelace area of the result.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("angle is not finite: {0}")]
    NonFiniteAngle(f64),
    #[error("invalid rectangle: {0}")]
    InvalidRect(String),
}

/// Wraps a finite angle into (−π, π].
///
/// Non-finite input is rejected; use [`wrap_angle`] on values already
/// known to be finite.
pub fn yaw_normalize(angle: f64) -> Result<f64, GeometryError> {
    if !angle.is_finite() {
        return Err(GeometryError::NonFiniteAngle(angle));
    }
    Ok(wrap_angle(angle))
}

/// Infallible form of [`yaw_normalize`]. Non-finite input propagates as NaN.
pub fn wrap_angle(angle: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut a = angle.rem_euclid(two_pi); // [0, 2π)
    if a > PI {
        a -= two_pi;
    }
    // rem_euclid maps −π to π already; guard the rounding edge at −π.
    if a <= -PI {
        a += two_pi;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    /// Bearing from this pose's position to a world point (world frame).
    pub fn bearing_to(&self, x: f64, y: f64) -> f64 {
        (y - self.y).atan2(x - self.x)
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (x - self.x).hypot(y - self.y)
    }
}

/// A rectangle flat on the ground: center, heading of the long axis,
/// length along the heading, width across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub cx: f64,
    pub cy: f64,
    pub yaw: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedRect {
    pub fn new(cx: f64, cy: f64, yaw: f64, length: f64, width: f64) -> Result<Self, GeometryError> {
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(GeometryError::InvalidRect(format!("non-finite center ({cx}, {cy})")));
        }
        if !(length.is_finite() && length > 0.0 && width.is_finite() && width > 0.0) {
            return Err(GeometryError::InvalidRect(format!(
                "dimensions must be positive, got {length} x {width}"
            )));
        }
        Ok(Self {
            cx,
            cy,
            yaw: yaw_normalize(yaw)?,
            length,
            width,
        })
    }

    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = 0.5 * self.length;
        let hw = 0.5 * self.width;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[u, v]| [self.cx + c * u - s * v, self.cy + s * u + c * v])
    }

    /// Expresses a world point in this rectangle's body frame.
    pub fn to_local(&self, x: f64, y: f64) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let [u, v] = self.to_local(x, y);
        u.abs() <= 0.5 * self.length && v.abs() <= 0.5 * self.width
    }

    /// Parameter in [0, 1] at which the segment p0→p1 first touches this
    /// rectangle, or `None` if it misses. Liang–Barsky in the body frame.
    pub fn segment_entry(&self, p0: [f64; 2], p1: [f64; 2]) -> Option<f64> {
        let a = self.to_local(p0[0], p0[1]);
        let b = self.to_local(p1[0], p1[1]);
        let d = [b[0] - a[0], b[1] - a[1]];
        let half = [0.5 * self.length, 0.5 * self.width];
        let mut t0: f64 = 0.0;
        let mut t1: f64 = 1.0;
        for axis in 0..2 {
            for (p, q) in [(-d[axis], a[axis] + half[axis]), (d[axis], half[axis] - a[axis])] {
                if p == 0.0 {
                    if q < 0.0 {
                        return None;
                    }
                } else {
                    let r = q / p;
                    if p < 0.0 {
                        t0 = t0.max(r);
                    } else {
                        t1 = t1.min(r);
                    }
                    if t0 > t1 {
                        return None;
                    }
                }
            }
        }
        Some(t0)
    }
}

/// Transforms a rectangle from the ego frame described by `pose` into the
/// world frame. Dimensions are unchanged.
pub fn to_world(pose: &Pose2D, rect: &OrientedRect) -> OrientedRect {
    let (s, c) = pose.heading.sin_cos();
    OrientedRect {
        cx: pose.x + c * rect.cx - s * rect.cy,
        cy: pose.y + s * rect.cx + c * rect.cy,
        yaw: wrap_angle(rect.yaw + pose.heading),
        length: rect.length,
        width: rect.width,
    }
}

/// Shoelace area of a simple polygon (absolute value).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % poly.len()];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc.abs()
}

/// Clips `subject` against the convex counter-clockwise polygon `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut output);
        let mut prev = input[input.len() - 1];
        let mut prev_side = side(prev);
        for &cur in &input {
            let cur_side = side(cur);
            if cur_side >= 0.0 {
                if prev_side < 0.0 {
                    output.push(intersect(prev, cur, prev_side, cur_side));
                }
                output.push(cur);
            } else if prev_side >= 0.0 {
                output.push(intersect(prev, cur, prev_side, cur_side));
            }
            prev = cur;
            prev_side = cur_side;
        }
    }
    output
}

fn intersect(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Area of overlap between two oriented rectangles.
pub fn intersection_area(a: &OrientedRect, b: &OrientedRect) -> f64 {
    // Cheap reject on circumscribed circles.
    let ra = 0.5 * a.length.hypot(a.width);
    let rb = 0.5 * b.length.hypot(b.width);
    if (a.cx - b.cx).hypot(a.cy - b.cy) > ra + rb {
        return 0.0;
    }
    polygon_area(&clip_convex(&a.corners(), &b.corners()))
}

/// Intersection over union of two rectangles, in [0, 1].
pub fn bev_iou(a: &OrientedRect, b: &OrientedRect) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}
