//! Planar geometry primitives shared by the world model and the planners.
//!
//! Obstacles are line segments in the ground plane; all intersection tests are
//! closed (touching counts as intersecting) with a fixed tolerance so that
//! grazing contacts are treated conservatively.

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

/// Tolerance for geometric predicates. Contacts within this distance count as
/// intersections.
pub const GEOM_EPS: f64 = 1e-9;

/// Axis-aligned rectangle, used for workspace bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        assert!(min[0] < max[0] && min[1] < max[1], "degenerate rectangle");
        Rect { min, max }
    }

    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x >= self.min[0] - GEOM_EPS
            && p.x <= self.max[0] + GEOM_EPS
            && p.y >= self.min[1] - GEOM_EPS
            && p.y <= self.max[1] + GEOM_EPS
    }

    /// Diameter of the rectangle (its diagonal length).
    pub fn diameter(&self) -> f64 {
        let dx = self.max[0] - self.min[0];
        let dy = self.max[1] - self.min[1];
        (dx * dx + dy * dy).sqrt()
    }

    /// Clamps a coordinate on the given axis into the rectangle.
    pub fn clamp_axis(&self, axis: usize, v: f64) -> f64 {
        v.clamp(self.min[axis], self.max[axis])
    }
}

/// Line segment in the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Segment {
    pub fn new(a: [f64; 2], b: [f64; 2]) -> Self {
        Segment { a, b }
    }

    pub fn start(&self) -> Point2<f64> {
        Point2::new(self.a[0], self.a[1])
    }

    pub fn end(&self) -> Point2<f64> {
        Point2::new(self.b[0], self.b[1])
    }
}

fn cross(o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Squared distance from a point to a closed segment.
pub fn point_segment_dist2(p: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    let ab: Vector2<f64> = b - a;
    let ap: Vector2<f64> = p - a;
    let len2 = ab.norm_squared();
    if len2 <= GEOM_EPS * GEOM_EPS {
        return ap.norm_squared();
    }
    let t = (ap.dot(&ab) / len2).clamp(0.0, 1.0);
    let proj = a + ab * t;
    (p - proj).norm_squared()
}

/// Closed intersection test between two segments. Touching endpoints and
/// collinear overlap count as intersections; contacts within [`GEOM_EPS`] are
/// included.
pub fn segments_intersect(
    p1: &Point2<f64>,
    p2: &Point2<f64>,
    q1: &Point2<f64>,
    q2: &Point2<f64>,
) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);

    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }

    // Near-degenerate or touching configurations: fall back to distance tests
    // so that grazing contacts within tolerance are caught.
    let eps2 = GEOM_EPS * GEOM_EPS;
    point_segment_dist2(p1, q1, q2) <= eps2
        || point_segment_dist2(p2, q1, q2) <= eps2
        || point_segment_dist2(q1, p1, p2) <= eps2
        || point_segment_dist2(q2, p1, p2) <= eps2
}

/// True if the open motion segment from `a` to `b` crosses the obstacle.
pub fn segment_hits_obstacle(a: &Point2<f64>, b: &Point2<f64>, obstacle: &Segment) -> bool {
    segments_intersect(a, b, &obstacle.start(), &obstacle.end())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crossing_segments_intersect() {
        assert!(segments_intersect(
            &Point2::new(0.0, 0.0),
            &Point2::new(2.0, 2.0),
            &Point2::new(0.0, 2.0),
            &Point2::new(2.0, 0.0),
        ));
    }

    #[test]
    fn disjoint_segments_do_not_intersect() {
        assert!(!segments_intersect(
            &Point2::new(0.0, 0.0),
            &Point2::new(1.0, 0.0),
            &Point2::new(0.0, 1.0),
            &Point2::new(1.0, 1.0),
        ));
    }

    #[test]
    fn touching_endpoint_counts_as_intersection() {
        // Closed test: sharing a single point intersects.
        assert!(segments_intersect(
            &Point2::new(0.0, 0.0),
            &Point2::new(1.0, 1.0),
            &Point2::new(1.0, 1.0),
            &Point2::new(2.0, 0.0),
        ));
    }

    #[test]
    fn collinear_overlap_counts_as_intersection() {
        assert!(segments_intersect(
            &Point2::new(0.0, 0.0),
            &Point2::new(2.0, 0.0),
            &Point2::new(1.0, 0.0),
            &Point2::new(3.0, 0.0),
        ));
    }

    #[test]
    fn collinear_disjoint_does_not_intersect() {
        assert!(!segments_intersect(
            &Point2::new(0.0, 0.0),
            &Point2::new(1.0, 0.0),
            &Point2::new(2.0, 0.0),
            &Point2::new(3.0, 0.0),
        ));
    }

    #[test]
    fn grazing_contact_within_tolerance_intersects() {
        assert!(segments_intersect(
            &Point2::new(0.0, 1e-10),
            &Point2::new(2.0, 1e-10),
            &Point2::new(1.0, 0.0),
            &Point2::new(1.0, -1.0),
        ));
    }

    #[test]
    fn rect_contains_and_diameter() {
        let r = Rect::new([0.0, 0.0], [10.0, 10.0]);
        assert!(r.contains(&Point2::new(5.0, 5.0)));
        assert!(r.contains(&Point2::new(0.0, 0.0)));
        assert!(!r.contains(&Point2::new(10.1, 5.0)));
        assert!((r.diameter() - 200f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn point_segment_distance() {
        let d2 = point_segment_dist2(
            &Point2::new(1.0, 1.0),
            &Point2::new(0.0, 0.0),
            &Point2::new(2.0, 0.0),
        );
        assert!((d2 - 1.0).abs() < 1e-12);
    }
}
