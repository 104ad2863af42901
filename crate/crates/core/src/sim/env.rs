//! Moving box obstacles inside a spherical workspace.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cspace::random_unit;
use crate::geometry::{
    compute_distance_profile_masked, distance_capsule_box, Aabb, DistanceProfile, PlaneSet, Point, Vector,
};
use crate::kinematics::{self_collision, RobotPose};

/// Result of checking a pose against the environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Contact {
    Free,
    Obstacle,
    SelfCollision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub obstacles: Vec<Aabb>,
    /// Static boxes such as a mounting table.
    pub fixtures: Vec<Aabb>,
    /// Links with index below this value ignore the fixtures.
    pub fixture_exempt_links: usize,
    pub workspace_center: Point,
    pub workspace_radius: f64,
    /// Obstacles bounce off a sphere of `exclusion_radius` around this point.
    pub base_center: Point,
    pub exclusion_radius: f64,
    pub v_obs: f64,
    /// Obstacles move in the `z = workspace_center.z` plane.
    pub planar: bool,
    pub time: f64,
}

impl Environment {
    pub fn empty(workspace_center: Point, workspace_radius: f64, v_obs: f64) -> Self {
        Environment {
            obstacles: Vec::new(),
            fixtures: Vec::new(),
            fixture_exempt_links: 0,
            workspace_center,
            workspace_radius,
            base_center: workspace_center,
            exclusion_radius: 0.0,
            v_obs,
            planar: false,
            time: 0.0,
        }
    }

    /// Distance cap used when nothing is in range.
    pub fn d_max(&self) -> f64 {
        4.0 * self.workspace_radius
    }

    pub fn boxes(&self) -> Vec<Aabb> {
        self.obstacles.iter().chain(&self.fixtures).copied().collect()
    }

    fn pair_active(&self, link: usize, j: usize) -> bool {
        j < self.obstacles.len() || link >= self.fixture_exempt_links
    }

    pub fn distance_profile(&self, pose: &RobotPose, previous: Option<&PlaneSet>) -> (DistanceProfile, PlaneSet) {
        let boxes = self.boxes();
        compute_distance_profile_masked(&pose.link_capsules, &boxes, self.d_max(), previous, |i, j| {
            self.pair_active(i, j)
        })
    }

    /// Smallest active link-box distance.
    pub fn clearance(&self, pose: &RobotPose) -> f64 {
        let mut best = f64::INFINITY;
        for (i, c) in pose.link_capsules.iter().enumerate() {
            for (j, b) in self.obstacles.iter().chain(&self.fixtures).enumerate() {
                if self.pair_active(i, j) {
                    best = best.min(distance_capsule_box(c, b).distance);
                }
            }
        }
        best
    }

    pub fn contact(&self, pose: &RobotPose) -> Contact {
        if self.clearance(pose) <= 0.0 {
            Contact::Obstacle
        } else if self_collision(pose) {
            Contact::SelfCollision
        } else {
            Contact::Free
        }
    }

    /// Obstacles after `dt` seconds of constant-velocity motion with
    /// specular reflection off the workspace sphere and the base zone.
    pub fn advanced(&self, dt: f64) -> Environment {
        let mut out = self.clone();
        out.advance(dt);
        out
    }

    pub fn advance(&mut self, dt: f64) {
        debug_assert!(dt >= 0.0);
        if dt == 0.0 {
            return;
        }
        for k in 0..self.obstacles.len() {
            let mut b = self.obstacles[k];
            let min_half = b.half_extents.min();
            let speed = b.velocity.norm();
            let steps = if speed > 0.0 { ((speed * dt) / min_half).ceil().max(1.0) as usize } else { 1 };
            let h = dt / steps as f64;
            for _ in 0..steps {
                self.move_reflecting(&mut b, h);
            }
            self.obstacles[k] = b;
        }
        self.time += dt;
    }

    fn move_reflecting(&self, b: &mut Aabb, h: f64) {
        let mut remaining = h;
        for _ in 0..8 {
            if remaining <= 0.0 {
                break;
            }
            let c = b.center;
            let v = b.velocity;
            // first boundary hit within the remaining time
            let exit = sphere_exit_time(&c, &v, &self.workspace_center, self.workspace_radius);
            let enter = sphere_entry_time(&c, &v, &self.base_center, self.exclusion_radius);
            let (tau, normal) = match (exit, enter) {
                (Some(a), Some(e)) if e < a => (e, Some(false)),
                (Some(a), _) => (a, Some(true)),
                (None, Some(e)) => (e, Some(false)),
                (None, None) => (f64::INFINITY, None),
            };
            if tau >= remaining || normal.is_none() {
                b.center += v * remaining;
                break;
            }
            b.center += v * tau;
            remaining -= tau;
            let outward = normal.unwrap();
            let n = if outward {
                (b.center - self.workspace_center).normalize()
            } else {
                (b.center - self.base_center).normalize()
            };
            let vn = v.dot(&n);
            b.velocity = v - n * (2.0 * vn);
        }
    }
}

/// Time until a point inside the sphere, moving with `v`, leaves it.
fn sphere_exit_time(c: &Point, v: &Vector, center: &Point, r: f64) -> Option<f64> {
    let p = c - center;
    let a = v.norm_squared();
    if a == 0.0 {
        return None;
    }
    let b = p.dot(v);
    if p.norm() >= r {
        // already on or outside the boundary: reflect now if moving outward
        return if b > 0.0 { Some(0.0) } else { None };
    }
    let cc = p.norm_squared() - r * r;
    let disc = b * b - a * cc;
    Some(((-b + disc.sqrt()) / a).max(0.0))
}

/// Time until a point outside the sphere, moving with `v`, enters it.
fn sphere_entry_time(c: &Point, v: &Vector, center: &Point, r: f64) -> Option<f64> {
    if r <= 0.0 {
        return None;
    }
    let p = c - center;
    let a = v.norm_squared();
    let b = p.dot(v);
    if a == 0.0 || b >= 0.0 {
        return None;
    }
    if p.norm() <= r {
        return Some(0.0);
    }
    let cc = p.norm_squared() - r * r;
    let disc = b * b - a * cc;
    if disc < 0.0 {
        return None;
    }
    Some(((-b - disc.sqrt()) / a).max(0.0))
}

/// Obstacle population parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpawnParams {
    pub n_obs: usize,
    /// Cube side length, meters.
    pub size: f64,
    pub v_obs: f64,
}

/// Uniform cube positions in the workspace outside the base zone, with
/// uniform random directions and speeds in `[0, v_obs]`.
pub fn spawn_random_obstacles<R: Rng + ?Sized>(env: &Environment, params: &SpawnParams, rng: &mut R) -> Vec<Aabb> {
    let half = Vector::repeat(params.size / 2.0);
    let mut out = Vec::with_capacity(params.n_obs);
    while out.len() < params.n_obs {
        let dir = if env.planar { random_unit(2, rng) } else { random_unit(3, rng) };
        let dim = if env.planar { 2.0 } else { 3.0 };
        let r = env.workspace_radius * rng.random::<f64>().powf(1.0 / dim);
        let offset = if env.planar {
            Vector::new(dir[0] * r, dir[1] * r, 0.0)
        } else {
            Vector::new(dir[0] * r, dir[1] * r, dir[2] * r)
        };
        let center = env.workspace_center + offset;
        if (center - env.base_center).norm() <= env.exclusion_radius {
            continue;
        }
        let vdir = if env.planar { random_unit(2, rng) } else { random_unit(3, rng) };
        let speed = params.v_obs * rng.random::<f64>();
        let velocity = if env.planar {
            Vector::new(vdir[0], vdir[1], 0.0) * speed
        } else {
            Vector::new(vdir[0], vdir[1], vdir[2]) * speed
        };
        out.push(Aabb::new(center, half).with_velocity(velocity));
    }
    out
}
