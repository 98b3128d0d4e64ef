//! Analytic distance queries from observed points to the posed capsule model.
//!
//! Distances are measured to the capsule *surface*; points on or inside a
//! capsule are at distance zero. All queries are pure functions.

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::skeleton::PosedModel;

/// A capsule: all points within `radius` of the segment `a`–`b`.
///
/// `a == b` is allowed and degenerates to a sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub a: Point3<f64>,
    pub b: Point3<f64>,
    pub radius: f64,
}

impl Capsule {
    pub fn new(a: Point3<f64>, b: Point3<f64>, radius: f64) -> Self {
        assert!(radius > 0.0, "capsule radius must be positive");
        Capsule { a, b, radius }
    }

    pub fn axis_length(&self) -> f64 {
        (self.b - self.a).norm()
    }
}

/// Closest point on the segment `a`–`b` to `p`.
///
/// Returns `a + t(b - a)` with `t = clamp((p-a)·(b-a) / |b-a|², 0, 1)`;
/// a degenerate segment returns `a`.
pub fn closest_point_on_segment(p: Point3<f64>, a: Point3<f64>, b: Point3<f64>) -> Point3<f64> {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return a;
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

/// Distance from `p` to the surface of `c`, clamped to zero inside.
pub fn distance_to_capsule(p: Point3<f64>, c: &Capsule) -> f64 {
    let foot = closest_point_on_segment(p, c.a, c.b);
    ((p - foot).norm() - c.radius).max(0.0)
}

/// Distance from `p` to the nearest capsule of the model, with the id of
/// that link. Ties go to the smallest link id so the result is deterministic.
pub fn distance_to_model(p: Point3<f64>, model: &PosedModel) -> Result<(f64, u32)> {
    if model.segments.is_empty() {
        return Err(Error::EmptyModel);
    }
    Ok(nearest_link(p, model))
}

/// Infallible inner query for hot loops; callers must have checked the model
/// is non-empty.
pub(crate) fn nearest_link(p: Point3<f64>, model: &PosedModel) -> (f64, u32) {
    let mut best_d = f64::INFINITY;
    let mut best_id = u32::MAX;
    for seg in &model.segments {
        let d = distance_to_capsule(p, &seg.capsule);
        if d < best_d || (d == best_d && seg.link_id < best_id) {
            best_d = d;
            best_id = seg.link_id;
        }
    }
    (best_d, best_id)
}
