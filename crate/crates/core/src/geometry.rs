//! Planar poses and frame transforms shared by the data generator, the
//! controller and the simulator.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Wraps an angle to (−π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 {
        x: 0.0,
        y: 0.0,
        heading: 0.0,
    };

    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    /// Expresses a world point in this pose's frame.
    pub fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Maps a point given in this pose's frame to the world.
    pub fn to_world(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    /// Rotates a free vector from this frame into the world.
    pub fn rotate_to_world(&self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    pub fn rotate_to_local(&self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
    }

    /// Expresses another world pose relative to this one.
    pub fn relative(&self, other: &Pose2) -> Pose2 {
        let p = self.to_local([other.x, other.y]);
        Pose2::new(p[0], p[1], wrap_angle(other.heading - self.heading))
    }

    /// Composes a pose given in this frame into the world.
    pub fn compose(&self, local: &Pose2) -> Pose2 {
        let p = self.to_world([local.x, local.y]);
        Pose2::new(p[0], p[1], wrap_angle(self.heading + local.heading))
    }
}

/// A constant-curvature piece of a [`Route`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteSegment {
    pub length: f64,
    pub curvature: f64,
}

/// A planar path made of constant-curvature segments, parameterized by
/// arclength. It continues as a straight line before `s = 0` and past its end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub start: Pose2,
    pub segments: Vec<RouteSegment>,
}

fn advance(p: &Pose2, curvature: f64, ds: f64) -> Pose2 {
    if curvature.abs() < 1e-12 {
        let (s, c) = p.heading.sin_cos();
        return Pose2::new(p.x + c * ds, p.y + s * ds, p.heading);
    }
    let h1 = p.heading + curvature * ds;
    Pose2::new(
        p.x + (h1.sin() - p.heading.sin()) / curvature,
        p.y - (h1.cos() - p.heading.cos()) / curvature,
        h1,
    )
}

impl Route {
    pub fn new(start: Pose2, segments: Vec<RouteSegment>) -> Self {
        Self { start, segments }
    }

    /// A single arc (or line) from the origin heading along +x.
    pub fn arc(length: f64, curvature: f64) -> Self {
        Self::new(Pose2::IDENTITY, vec![RouteSegment { length, curvature }])
    }

    pub fn length(&self) -> f64 {
        self.segments.iter().map(|s| s.length).sum()
    }

    /// Pose at arclength `s`; the heading is not wrapped.
    pub fn pose_at(&self, s: f64) -> Pose2 {
        if s <= 0.0 {
            return advance(&self.start, 0.0, s);
        }
        let mut pose = self.start;
        let mut left = s;
        for seg in &self.segments {
            if left <= seg.length {
                return advance(&pose, seg.curvature, left);
            }
            pose = advance(&pose, seg.curvature, seg.length);
            left -= seg.length;
        }
        advance(&pose, 0.0, left)
    }

    pub fn curvature_at(&self, s: f64) -> f64 {
        if s < 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for seg in &self.segments {
            acc += seg.length;
            if s < acc {
                return seg.curvature;
            }
        }
        0.0
    }

    /// Arclength of the route point closest to `p`, searched over
    /// `[lo, hi]` by coarse sampling and golden-section refinement.
    pub fn project_within(&self, p: [f64; 2], lo: f64, hi: f64) -> f64 {
        let dist2 = |s: f64| {
            let q = self.pose_at(s);
            (q.x - p[0]).powi(2) + (q.y - p[1]).powi(2)
        };
        let step = 0.1;
        let n = ((hi - lo) / step).ceil().max(1.0) as usize;
        let mut best = (lo, dist2(lo));
        for i in 1..=n {
            let s = (lo + i as f64 * step).min(hi);
            let d = dist2(s);
            if d < best.1 {
                best = (s, d);
            }
        }
        let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if dist2(c) < dist2(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    pub fn project(&self, p: [f64; 2]) -> f64 {
        self.project_within(p, -10.0, self.length() + 40.0)
    }

    /// Signed lateral offset of `p` from the route (positive left).
    pub fn lateral_offset(&self, p: [f64; 2], s: f64) -> f64 {
        self.pose_at(s).to_local(p)[1]
    }
}

pub fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Distance from `p` to the segment `a`–`b`.
pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return norm(ap);
    }
    let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0);
    norm([ap[0] - t * ab[0], ap[1] - t * ab[1]])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_stays_in_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.1 + 4.0 * PI) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn local_world_round_trip() {
        let pose = Pose2::new(3.0, -2.0, 0.7);
        let p = [1.5, 4.0];
        let back = pose.to_world(pose.to_local(p));
        assert!((back[0] - p[0]).abs() < 1e-12 && (back[1] - p[1]).abs() < 1e-12);
        let rel = pose.relative(&pose.compose(&Pose2::new(1.0, 2.0, 0.3)));
        assert!((rel.x - 1.0).abs() < 1e-12 && (rel.y - 2.0).abs() < 1e-12);
        assert!((rel.heading - 0.3).abs() < 1e-12);
    }

    #[test]
    fn route_arc_and_projection() {
        let r = Route::arc(20.0, 0.1);
        let p = r.pose_at(10.0 * std::f64::consts::FRAC_PI_2);
        assert!((p.x - 10.0).abs() < 1e-12 && (p.y - 10.0).abs() < 1e-12);
        assert!((r.pose_at(-2.0).x + 2.0).abs() < 1e-15);
        let end = r.pose_at(20.0);
        let beyond = r.pose_at(25.0);
        assert!(((beyond.x - end.x).hypot(beyond.y - end.y) - 5.0).abs() < 1e-12);
        let s = r.project([5.0, 3.0]);
        let q = r.pose_at(s);
        // The projection is orthogonal: the offset has no along-track part.
        assert!(q.to_local([5.0, 3.0])[0].abs() < 1e-6);
        let two = Route::new(
            Pose2::IDENTITY,
            vec![RouteSegment { length: 5.0, curvature: 0.0 }, RouteSegment { length: 5.0, curvature: -0.2 }],
        );
        assert_eq!(two.curvature_at(6.0), -0.2);
        assert_eq!(two.pose_at(5.0), Pose2::new(5.0, 0.0, 0.0));
        assert!((two.lateral_offset([3.0, 0.5], 3.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn segment_distance() {
        assert_eq!(point_segment_distance([0.0, 1.0], [-1.0, 0.0], [1.0, 0.0]), 1.0);
        assert_eq!(point_segment_distance([3.0, 0.0], [-1.0, 0.0], [1.0, 0.0]), 2.0);
        assert_eq!(point_segment_distance([3.0, 4.0], [0.0, 0.0], [0.0, 0.0]), 5.0);
    }
}
