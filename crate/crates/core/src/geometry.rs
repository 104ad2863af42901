//! Workspace primitives and exact distance queries.
//!
//! Robot links are capsules, obstacles are axis-aligned boxes. Every
//! link/obstacle distance query also yields the pair of nearest points,
//! which define the separating planes used to underestimate clearance
//! after the robot or the obstacles have moved.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

pub type Point = Point3<f64>;
pub type Vector = Vector3<f64>;

/// Axis-aligned box obstacle moving with constant velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub center: Point,
    pub half_extents: Vector,
    #[serde(default = "Vector::zeros")]
    pub velocity: Vector,
}

impl Aabb {
    pub fn new(center: Point, half_extents: Vector) -> Self {
        debug_assert!(half_extents.iter().all(|h| *h > 0.0));
        Aabb {
            center,
            half_extents,
            velocity: Vector::zeros(),
        }
    }

    pub fn with_velocity(mut self, velocity: Vector) -> Self {
        self.velocity = velocity;
        self
    }

    pub fn min(&self) -> Point {
        self.center - self.half_extents
    }

    pub fn max(&self) -> Point {
        self.center + self.half_extents
    }

    /// Nearest point of the (solid) box to `p`.
    pub fn clamp(&self, p: &Point) -> Point {
        let lo = self.min();
        let hi = self.max();
        Point::new(
            p.x.clamp(lo.x, hi.x),
            p.y.clamp(lo.y, hi.y),
            p.z.clamp(lo.z, hi.z),
        )
    }

    pub fn contains(&self, p: &Point) -> bool {
        let lo = self.min();
        let hi = self.max();
        (0..3).all(|k| p[k] >= lo[k] && p[k] <= hi[k])
    }

    pub fn vertices(&self) -> [Point; 8] {
        let lo = self.min();
        let hi = self.max();
        let mut out = [lo; 8];
        for (i, v) in out.iter_mut().enumerate() {
            *v = Point::new(
                if i & 1 == 0 { lo.x } else { hi.x },
                if i & 2 == 0 { lo.y } else { hi.y },
                if i & 4 == 0 { lo.z } else { hi.z },
            );
        }
        out
    }
}

/// Sphere primitive; a capsule with coincident endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Point,
    pub radius: f64,
}

impl From<Sphere> for Capsule {
    fn from(s: Sphere) -> Self {
        Capsule::new(s.center, s.center, s.radius)
    }
}

/// Segment swept by a ball. `a == b` degenerates to a sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: Point,
    pub b: Point,
    pub radius: f64,
}

impl Capsule {
    pub fn new(a: Point, b: Point, radius: f64) -> Self {
        debug_assert!(radius >= 0.0);
        Capsule { a, b, radius }
    }

    pub fn point_at(&self, s: f64) -> Point {
        self.a + (self.b - self.a) * s
    }
}

/// Result of a distance query between a robot primitive and an obstacle.
///
/// `distance` is surface to surface and may be negative for capsules in
/// contact. `r_point` lies on the capsule's core segment, `o_point` on the
/// obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceWitness {
    pub distance: f64,
    pub r_point: Point,
    pub o_point: Point,
}

/// Exact distance between the segment `a`-`b` and a solid box.
///
/// The squared distance along the segment is a convex piecewise quadratic
/// whose pieces are delimited by the parameters where the segment crosses
/// a slab boundary of the box. Each piece is minimized in closed form.
/// When the minimum is attained on an interval (segment parallel to a
/// face, or passing through the box) the witness is taken at the middle of
/// that interval.
pub fn distance_segment_box(a: &Point, b: &Point, bx: &Aabb) -> DistanceWitness {
    let lo = bx.min();
    let hi = bx.max();
    let dir = b - a;

    let mut breaks = [0.0f64; 8];
    let mut nb = 0;
    breaks[nb] = 0.0;
    nb += 1;
    for k in 0..3 {
        if dir[k] != 0.0 {
            for bound in [lo[k], hi[k]] {
                let t = (bound - a[k]) / dir[k];
                if t > 0.0 && t < 1.0 {
                    breaks[nb] = t;
                    nb += 1;
                }
            }
        }
    }
    breaks[nb] = 1.0;
    nb += 1;
    let breaks = &mut breaks[..nb];
    breaks.sort_by(|x, y| x.total_cmp(y));

    // (t_lo, t_hi, squared distance) candidates of every piece
    let mut pieces: [(f64, f64, f64); 8] = [(0.0, 0.0, f64::INFINITY); 8];
    let mut np = 0;
    let mut best = f64::INFINITY;
    for w in breaks.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 < t0 {
            continue;
        }
        let tm = 0.5 * (t0 + t1);
        let pm = a + dir * tm;
        let (mut qa, mut qb) = (0.0, 0.0);
        for k in 0..3 {
            let c = if pm[k] < lo[k] {
                lo[k]
            } else if pm[k] > hi[k] {
                hi[k]
            } else {
                continue;
            };
            qa += dir[k] * dir[k];
            qb += 2.0 * dir[k] * (a[k] - c);
        }
        let (s_lo, s_hi) = if qa > 0.0 {
            let t = (-qb / (2.0 * qa)).clamp(t0, t1);
            (t, t)
        } else {
            (t0, t1)
        };
        let p = a + dir * s_lo;
        let f = (p - bx.clamp(&p)).norm_squared();
        pieces[np] = (s_lo, s_hi, f);
        np += 1;
        if f < best {
            best = f;
        }
    }

    let tol = 1e-14 * best.max(1e-12);
    let mut t_min = f64::INFINITY;
    let mut t_max = f64::NEG_INFINITY;
    for &(s_lo, s_hi, f) in &pieces[..np] {
        if f - best <= tol {
            t_min = t_min.min(s_lo);
            t_max = t_max.max(s_hi);
        }
    }
    let t = 0.5 * (t_min + t_max);
    let r_point = a + dir * t;
    let o_point = bx.clamp(&r_point);
    DistanceWitness {
        distance: (r_point - o_point).norm(),
        r_point,
        o_point,
    }
}

/// Signed capsule/box distance: segment distance minus the capsule radius.
pub fn distance_capsule_box(c: &Capsule, bx: &Aabb) -> DistanceWitness {
    let mut w = distance_segment_box(&c.a, &c.b, bx);
    w.distance -= c.radius;
    w
}

/// Closest points between two segments; returns the parameters on each
/// segment and the distance between the points.
pub fn closest_segment_segment(p1: &Point, q1: &Point, p2: &Point, q2: &Point) -> (f64, f64, f64) {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    const EPS: f64 = 1e-18;

    let (s, t) = if a <= EPS && e <= EPS {
        (0.0, 0.0)
    } else if a <= EPS {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s = if denom > EPS {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    let c1 = p1 + d1 * s;
    let c2 = p2 + d2 * t;
    (s, t, (c1 - c2).norm())
}

pub fn distance_capsule_capsule(c1: &Capsule, c2: &Capsule) -> f64 {
    let (_, _, d) = closest_segment_segment(&c1.a, &c1.b, &c2.a, &c2.b);
    d - c1.radius - c2.radius
}

/// Per-link minimal distances `d` and their minimum `d_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceProfile {
    pub d: Vec<f64>,
    pub d_c: f64,
}

impl DistanceProfile {
    pub fn new(d: Vec<f64>) -> Self {
        let d_c = d.iter().copied().fold(f64::INFINITY, f64::min);
        DistanceProfile { d, d_c }
    }

    pub fn uniform(n: usize, value: f64) -> Self {
        DistanceProfile::new(vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn all_positive(&self) -> bool {
        self.d.iter().all(|d| *d > 0.0)
    }
}

/// Plane separating a robot link from an obstacle. The normal points from
/// the obstacle toward the link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparatingPlane {
    pub normal: Vector,
    pub point: Point,
    pub link_index: usize,
    pub obstacle_index: usize,
    /// Pair excluded from distance computations (e.g. the base link against
    /// the mounting table).
    pub active: bool,
    /// Built from a fallback normal because the witnesses coincided.
    pub degenerate: bool,
}

impl SeparatingPlane {
    pub fn signed_distance(&self, p: &Point) -> f64 {
        self.normal.dot(&(p - self.point))
    }

    /// Conservative signed distance from a capsule to the plane.
    pub fn capsule_distance(&self, c: &Capsule) -> f64 {
        self.signed_distance(&c.a).min(self.signed_distance(&c.b)) - c.radius
    }
}

/// Planes for every (link, obstacle) pair, stored row-major by link.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSet {
    pub n_links: usize,
    pub n_obstacles: usize,
    pub planes: Vec<SeparatingPlane>,
    pub stamp_time: f64,
}

impl PlaneSet {
    pub fn empty(n_links: usize) -> Self {
        PlaneSet {
            n_links,
            n_obstacles: 0,
            planes: Vec::new(),
            stamp_time: 0.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn get(&self, link: usize, obstacle: usize) -> &SeparatingPlane {
        &self.planes[link * self.n_obstacles + obstacle]
    }

    pub fn link_planes(&self, link: usize) -> &[SeparatingPlane] {
        let start = link * self.n_obstacles;
        &self.planes[start..start + self.n_obstacles]
    }
}

/// Distances from every link to every obstacle, skipping pairs for which
/// `active(link, obstacle)` is false. `previous` supplies fallback normals
/// for pairs whose witnesses coincide.
pub fn compute_distance_profile_masked<F>(
    links: &[Capsule],
    obstacles: &[Aabb],
    d_max: f64,
    previous: Option<&PlaneSet>,
    active: F,
) -> (DistanceProfile, PlaneSet)
where
    F: Fn(usize, usize) -> bool,
{
    let n = links.len();
    if obstacles.is_empty() {
        return (DistanceProfile::uniform(n, d_max), PlaneSet::empty(n));
    }
    let m = obstacles.len();
    let prev = previous.filter(|p| p.n_links == n && p.n_obstacles == m);
    let mut d = vec![d_max; n];
    let mut planes = Vec::with_capacity(n * m);
    for (i, link) in links.iter().enumerate() {
        for (j, obs) in obstacles.iter().enumerate() {
            let is_active = active(i, j);
            let w = distance_capsule_box(link, obs);
            if is_active && w.distance < d[i] {
                d[i] = w.distance;
            }
            let diff = w.r_point - w.o_point;
            let len = diff.norm();
            let (normal, degenerate) = if len > 1e-12 {
                (diff / len, false)
            } else if let Some(p) = prev {
                (p.get(i, j).normal, true)
            } else {
                let c = w.r_point - obs.center;
                let cn = c.norm();
                if cn > 1e-12 {
                    (c / cn, true)
                } else {
                    (Vector::z(), true)
                }
            };
            planes.push(SeparatingPlane {
                normal,
                point: w.o_point,
                link_index: i,
                obstacle_index: j,
                active: is_active,
                degenerate,
            });
        }
    }
    (
        DistanceProfile::new(d),
        PlaneSet {
            n_links: n,
            n_obstacles: m,
            planes,
            stamp_time: 0.0,
        },
    )
}

/// Per-link distances to all obstacles together with the separating planes.
pub fn compute_distance_profile(
    links: &[Capsule],
    obstacles: &[Aabb],
    d_max: f64,
    previous: Option<&PlaneSet>,
) -> (DistanceProfile, PlaneSet) {
    compute_distance_profile_masked(links, obstacles, d_max, previous, |_, _| true)
}

/// Translates every plane toward its link by `v_obs * elapsed`.
pub fn update_planes(ps: &PlaneSet, elapsed: f64, v_obs: f64) -> PlaneSet {
    debug_assert!(elapsed >= 0.0);
    let shift = v_obs * elapsed;
    let mut out = ps.clone();
    if shift != 0.0 {
        for p in &mut out.planes {
            p.point += p.normal * shift;
        }
    }
    out.stamp_time += elapsed;
    out
}

/// Lower bounds on per-link clearance from the (possibly advanced) planes.
pub fn distance_to_planes(links: &[Capsule], ps: &PlaneSet, d_max: f64) -> DistanceProfile {
    let mut d = vec![d_max; links.len()];
    if !ps.is_empty() {
        for (i, link) in links.iter().enumerate() {
            for plane in ps.link_planes(i) {
                if plane.active {
                    d[i] = d[i].min(plane.capsule_distance(link));
                }
            }
        }
    }
    DistanceProfile::new(d)
}
