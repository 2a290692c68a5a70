//! Geofence envelope, mission path and the distance queries shared by the
//! baseline switch and the feature extractor.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Axis-aligned box geofence. Points on the boundary count as inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub min_corner: Vec3,
    pub max_corner: Vec3,
}

/// Result of a closest-approach query against an [`Envelope`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryQuery {
    pub distance: f64,
    /// Unit vector from the queried point toward the nearest boundary point.
    pub direction: Vec3,
    pub inside: bool,
}

impl Envelope {
    pub fn new(min_corner: Vec3, max_corner: Vec3) -> Result<Self> {
        let env = Envelope { min_corner, max_corner };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            let (lo, hi) = (self.min_corner[i], self.max_corner[i]);
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::InvalidEnvelope(format!("axis {i} bounds are not finite")));
            }
            if lo >= hi {
                return Err(Error::InvalidEnvelope(format!(
                    "axis {i}: min {lo} must be below max {hi}"
                )));
            }
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        (self.min_corner + self.max_corner) * 0.5
    }

    pub fn half_extents(&self) -> Vec3 {
        (self.max_corner - self.min_corner) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        (self.max_corner - self.min_corner).norm()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| self.min_corner[i] <= p[i] && p[i] <= self.max_corner[i])
    }

    /// True when `p` lies strictly inside (not on a face).
    pub fn contains_strictly(&self, p: &Vec3) -> bool {
        (0..3).all(|i| self.min_corner[i] < p[i] && p[i] < self.max_corner[i])
    }

    /// Distance and direction of closest approach to the boundary.
    ///
    /// Interior points report the perpendicular distance to the nearest face,
    /// ties resolved in the order x-, x+, y-, y+, z-, z+. Exterior points report
    /// the Euclidean distance to the closest point of the box.
    pub fn boundary_query(&self, p: &Vec3) -> BoundaryQuery {
        if self.contains(p) {
            let mut best = f64::INFINITY;
            let mut direction = Vec3::zeros();
            for axis in 0..3 {
                let faces = [
                    (p[axis] - self.min_corner[axis], -1.0),
                    (self.max_corner[axis] - p[axis], 1.0),
                ];
                for (d, sign) in faces {
                    if d < best {
                        best = d;
                        direction = Vec3::zeros();
                        direction[axis] = sign;
                    }
                }
            }
            BoundaryQuery { distance: best, direction, inside: true }
        } else {
            let closest = self.clamp(p);
            let offset = closest - p;
            let distance = offset.norm();
            BoundaryQuery { distance, direction: offset / distance, inside: false }
        }
    }

    /// Signed distance to the nearer face along each axis: positive inside,
    /// negative once the point has crossed that face.
    pub fn per_axis_boundary_distances(&self, p: &Vec3) -> Vec3 {
        Vec3::from_fn(|i, _| (p[i] - self.min_corner[i]).min(self.max_corner[i] - p[i]))
    }

    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        Vec3::from_fn(|i, _| p[i].clamp(self.min_corner[i], self.max_corner[i]))
    }
}

/// Planned mission: ordered waypoints from the initial position to a landing point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mission {
    pub waypoints: Vec<Vec3>,
    pub arrival_radius: f64,
}

impl Mission {
    pub fn start(&self) -> Vec3 {
        self.waypoints[0]
    }

    pub fn destination(&self) -> Vec3 {
        *self.waypoints.last().expect("mission has waypoints")
    }

    /// All violations of the mission invariants against `env`, as
    /// `(field path, message)` pairs.
    pub fn violations(&self, env: &Envelope) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if self.waypoints.len() < 2 {
            out.push(("waypoints".into(), format!("need at least 2 waypoints, got {}", self.waypoints.len())));
        }
        if !(self.arrival_radius > 0.0 && self.arrival_radius.is_finite()) {
            out.push(("arrival_radius".into(), format!("must be > 0, got {}", self.arrival_radius)));
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            if !env.contains_strictly(w) {
                out.push((
                    format!("waypoints[{i}]"),
                    format!("({}, {}, {}) is not strictly inside the envelope", w.x, w.y, w.z),
                ));
            }
        }
        if let Some(last) = self.waypoints.last() {
            if self.waypoints.len() >= 2 && last.z != 0.0 {
                out.push((
                    format!("waypoints[{}]", self.waypoints.len() - 1),
                    format!("final waypoint must be on the ground (z = 0), got z = {}", last.z),
                ));
            }
        }
        for i in 1..self.waypoints.len() {
            if self.waypoints[i] == self.waypoints[i - 1] {
                out.push((format!("waypoints[{i}]"), "duplicates the previous waypoint".into()));
            }
        }
        out
    }

    pub fn validate(&self, env: &Envelope) -> Result<()> {
        match self.violations(env).into_iter().next() {
            None => Ok(()),
            Some((field, msg)) => Err(Error::InvalidMission(format!("{field}: {msg}"))),
        }
    }
}

/// Arc-length parameterized polyline through the mission waypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    points: Vec<Vec3>,
    // cumulative arc length at each point; cumulative[0] = 0
    cumulative: Vec<f64>,
}

pub fn build_path(mission: &Mission) -> Result<Path> {
    Path::new(&mission.waypoints)
}

impl Path {
    pub fn new(points: &[Vec3]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidMission(format!(
                "a path needs at least 2 points, got {}",
                points.len()
            )));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        cumulative.push(0.0);
        for i in 1..points.len() {
            let seg = (points[i] - points[i - 1]).norm();
            if seg == 0.0 {
                return Err(Error::DuplicateWaypoint { index: i });
            }
            cumulative.push(cumulative[i - 1] + seg);
        }
        Ok(Path { points: points.to_vec(), cumulative })
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn segment_index(&self, s: f64) -> usize {
        // last segment whose start arc is <= s
        let idx = self.cumulative.partition_point(|&c| c <= s);
        idx.saturating_sub(1).min(self.points.len() - 2)
    }

    /// Point at arc length `s`, clamped to the path ends.
    pub fn point_at(&self, s: f64) -> Vec3 {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_index(s);
        let seg_len = self.cumulative[i + 1] - self.cumulative[i];
        let t = (s - self.cumulative[i]) / seg_len;
        self.points[i] + (self.points[i + 1] - self.points[i]) * t
    }

    /// Unit tangent of the segment containing arc length `s`.
    pub fn tangent_at(&self, s: f64) -> Vec3 {
        let i = self.segment_index(s.clamp(0.0, self.length()));
        (self.points[i + 1] - self.points[i]).normalize()
    }

    /// Arc length of the closest point on the path to `p`. Earliest segment
    /// wins on ties.
    pub fn project(&self, p: &Vec3) -> f64 {
        let mut best_d2 = f64::INFINITY;
        let mut best_s = 0.0;
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let ab = self.points[i + 1] - a;
            let len2 = ab.norm_squared();
            let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
            let d2 = (a + ab * t - p).norm_squared();
            if d2 < best_d2 {
                best_d2 = d2;
                best_s = self.cumulative[i] + t * len2.sqrt();
            }
        }
        best_s
    }

    /// Pure-pursuit reference: the path point `lookahead` beyond the projection of `p`.
    pub fn target(&self, p: &Vec3, lookahead: f64) -> Vec3 {
        self.point_at(self.project(p) + lookahead)
    }
}

pub fn path_target(path: &Path, p: &Vec3, lookahead: f64) -> Vec3 {
    path.target(p, lookahead)
}
