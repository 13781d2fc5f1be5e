//! Foundational geometric types shared by every pipeline stage: 3D points,
//! timestamped frames, rigid transforms, and minimum oriented bounding boxes.

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

/// Tolerance for rotation orthonormality checks.
const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("empty point set")]
    EmptyPointSet,
    #[error("rotation matrix is not orthonormal with unit determinant")]
    InvalidRotation,
    #[error("point has non-finite coordinates")]
    NonFinitePoint,
}

/// A single LiDAR return in the sensor-centered right-handed frame
/// (z up, ground roughly 2 m below the sensor).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Distance from the sensor origin.
    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        self.distance_squared(other).sqrt()
    }

    pub fn distance_squared(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

/// One LiDAR sweep: a timestamp plus the points it returned.
///
/// Timestamps must strictly increase within a sequence; that ordering is
/// the caller's contract and is checked at ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Seconds, monotone non-decreasing across a sequence.
    pub timestamp: f64,
    pub points: Vec<Point3>,
}

impl Frame {
    pub fn new(timestamp: f64, points: Vec<Point3>) -> Self {
        Self { timestamp, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A proper rigid motion: rotation (orthonormal, det +1) plus translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, rejecting rotations that are not orthonormal
    /// with determinant +1 (within 1e-9).
    pub fn try_new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let t = Self {
            rotation,
            translation,
        };
        if t.is_valid() {
            Ok(t)
        } else {
            Err(GeometryError::InvalidRotation)
        }
    }

    /// Rotation by `angle` radians about the z axis, then translation.
    pub fn from_z_rotation(angle: f64, translation: Vector3<f64>) -> Self {
        let (s, c) = angle.sin_cos();
        let rotation = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn is_valid(&self) -> bool {
        let gram = self.rotation.transpose() * self.rotation;
        let ortho_err = (gram - Matrix3::identity()).norm();
        let det_err = (self.rotation.determinant() - 1.0).abs();
        ortho_err <= ROTATION_TOL * 10.0 && det_err <= ROTATION_TOL * 10.0
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        Point3::from_vector(self.rotation * p.to_vector() + self.translation)
    }

    pub fn apply_all(&self, points: &[Point3]) -> Vec<Point3> {
        points.iter().map(|&p| self.apply(p)).collect()
    }

    /// Composition: `a.compose(&b)` applies `b` first, then `a`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians (0..=pi), from the trace.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }
}

/// Applies the transform to a single point: `R * p + t`.
pub fn apply_transform(t: &RigidTransform, p: Point3) -> Point3 {
    t.apply(p)
}

/// Composes two transforms so that applying the result equals applying
/// `b` then `a`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

/// Arithmetic mean of a non-empty point set.
pub fn centroid(points: &[Point3]) -> Result<Point3, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptyPointSet);
    }
    let mut sum = Vector3::zeros();
    for p in points {
        sum += p.to_vector();
    }
    Ok(Point3::from_vector(sum / points.len() as f64))
}

/// A rectangle in the ground plane, free to rotate: the minimum-area
/// enclosing box of a projected point set.
///
/// `heading` is the direction of the axis measured by `half_extents.x`,
/// reduced mod pi/2 into `[0, pi/2)` (a rectangle's heading is only
/// defined up to quarter turns), which keeps it inside the documented
/// `[-pi/2, pi/2)` range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox2D {
    pub center: Vector2<f64>,
    pub half_extents: Vector2<f64>,
    pub heading: f64,
}

impl OrientedBox2D {
    pub fn area(&self) -> f64 {
        4.0 * self.half_extents.x * self.half_extents.y
    }

    /// True if the (x, y) projection of `p` lies inside the box,
    /// inflated by `tol` on each side.
    pub fn contains_xy(&self, p: &Point3, tol: f64) -> bool {
        let d = Vector2::new(p.x, p.y) - self.center;
        let (s, c) = self.heading.sin_cos();
        let along = c * d.x + s * d.y;
        let across = -s * d.x + c * d.y;
        along.abs() <= self.half_extents.x + tol && across.abs() <= self.half_extents.y + tol
    }
}

/// Reduces an angle mod pi/2 into `[0, pi/2)`.
fn canonical_heading(theta: f64) -> f64 {
    let quarter = std::f64::consts::FRAC_PI_2;
    let mut h = theta % quarter;
    if h < 0.0 {
        h += quarter;
    }
    // Guard against -0.0 and values that round up to the open bound.
    if h >= quarter {
        h -= quarter;
    }
    if h == 0.0 {
        h = 0.0;
    }
    h
}

/// Andrew monotone-chain convex hull over (x, y) projections.
/// Returns hull vertices in counter-clockwise order without repetition.
fn convex_hull_xy(points: &[Point3]) -> Vec<Vector2<f64>> {
    let mut pts: Vec<Vector2<f64>> = points.iter().map(|p| Vector2::new(p.x, p.y)).collect();
    pts.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).unwrap());
    pts.dedup_by(|a, b| a.x == b.x && a.y == b.y);
    if pts.len() <= 2 {
        return pts;
    }
    let cross = |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    // Lower and upper chains are built separately: a shared stack would let
    // the upper pass pop verified lower-hull vertices.
    let mut lower: Vec<Vector2<f64>> = Vec::with_capacity(pts.len());
    for p in pts.iter() {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0
        {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<Vector2<f64>> = Vec::with_capacity(pts.len());
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0
        {
            upper.pop();
        }
        upper.push(*p);
    }
    // Each chain ends on the other's starting vertex; drop both repeats.
    lower.pop();
    upper.pop();
    lower.extend(upper);
    // Collinear inputs collapse to the two extreme vertices.
    if lower.len() < 2 && pts.len() >= 2 {
        return vec![pts[0], pts[pts.len() - 1]];
    }
    lower
}

/// Minimum-area oriented bounding box of the (x, y) projections.
///
/// Convex hull plus rotating calipers: the optimal box is aligned with
/// some hull edge, so every edge heading is tried and the smallest area
/// wins; area ties break toward the smallest canonical heading.
/// Degenerate inputs (single point, collinear set) yield zero-extent
/// boxes along the fitted direction.
pub fn min_oriented_bbox2d(points: &[Point3]) -> Result<OrientedBox2D, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptyPointSet);
    }
    let hull = convex_hull_xy(points);

    if hull.len() == 1 {
        return Ok(OrientedBox2D {
            center: hull[0],
            half_extents: Vector2::zeros(),
            heading: 0.0,
        });
    }

    let mut best: Option<OrientedBox2D> = None;
    let n = hull.len();
    let edges = if n == 2 { 1 } else { n };
    for i in 0..edges {
        let a = hull[i];
        let b = hull[(i + 1) % n];
        let edge = b - a;
        if edge.norm() == 0.0 {
            continue;
        }
        let theta = edge.y.atan2(edge.x);
        let candidate = box_at_heading(&hull, theta);
        let better = match &best {
            None => true,
            Some(cur) => {
                candidate.area() < cur.area() - 1e-12
                    || ((candidate.area() - cur.area()).abs() <= 1e-12
                        && candidate.heading < cur.heading)
            }
        };
        if better {
            best = Some(candidate);
        }
    }
    best.ok_or(GeometryError::EmptyPointSet)
}

/// Axis-aligned bounding box of `hull` in the frame rotated by `-theta`,
/// reported as an oriented box with canonical heading.
fn box_at_heading(hull: &[Vector2<f64>], theta: f64) -> OrientedBox2D {
    let (s, c) = theta.sin_cos();
    let mut min_u = f64::INFINITY;
    let mut max_u = f64::NEG_INFINITY;
    let mut min_v = f64::INFINITY;
    let mut max_v = f64::NEG_INFINITY;
    for p in hull {
        let u = c * p.x + s * p.y;
        let v = -s * p.x + c * p.y;
        min_u = min_u.min(u);
        max_u = max_u.max(u);
        min_v = min_v.min(v);
        max_v = max_v.max(v);
    }
    let cu = (min_u + max_u) / 2.0;
    let cv = (min_v + max_v) / 2.0;
    let center = Vector2::new(c * cu - s * cv, s * cu + c * cv);
    let hu = (max_u - min_u) / 2.0;
    let hv = (max_v - min_v) / 2.0;

    let heading = canonical_heading(theta);
    // The canonical reduction may have swapped which axis is "x".
    let quarter_turns = ((theta - heading) / std::f64::consts::FRAC_PI_2).round() as i64;
    let half_extents = if quarter_turns.rem_euclid(2) == 0 {
        Vector2::new(hu, hv)
    } else {
        Vector2::new(hv, hu)
    };
    OrientedBox2D {
        center,
        half_extents,
        heading,
    }
}
