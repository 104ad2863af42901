//! Free-space certificates in configuration space.
//!
//! A dynamic expanded bubble around `q` holds every `(y, t)` with
//! `Σ_j r_ij |y_j - q_j| + v_obs t <= d_i` for all links `i`. Burs walk a
//! time-parameterized trajectory and keep the prefix that stays inside;
//! generalized burs chain several bubbles using plane-based distance
//! underestimates.

use crate::cspace::{norm, Configuration, ExtendedConfiguration};
use crate::error::{Error, Result};
use crate::geometry::{distance_to_planes, update_planes, DistanceProfile, PlaneSet};
use crate::kinematics::{enclosing_radii, EnclosingRadii, RobotPose};
use crate::trajectory::{rest_to_rest_duration, KinematicLimits, QuinticSpline, Spline};

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicExpandedBubble {
    pub root: ExtendedConfiguration,
    pub d: DistanceProfile,
    pub radii: EnclosingRadii,
    pub v_obs: f64,
}

impl DynamicExpandedBubble {
    pub fn new(root: ExtendedConfiguration, d: DistanceProfile, radii: EnclosingRadii, v_obs: f64) -> Self {
        DynamicExpandedBubble { root, d, radii, v_obs }
    }

    pub fn is_nonempty(&self) -> bool {
        self.d.all_positive()
    }
}

fn contains(q: &[f64], d: &DistanceProfile, radii: &EnclosingRadii, v_obs: f64, y: &[f64], t: f64) -> bool {
    let delta: Vec<f64> = y.iter().zip(q).map(|(a, b)| a - b).collect();
    let shift = v_obs * t;
    (0..d.len()).all(|i| radii.displacement_bound(i, &delta) + shift <= d.d[i])
}

/// Membership of `(y, t)`, with `t` measured from the bubble's root time.
pub fn deb_contains(deb: &DynamicExpandedBubble, y: &Configuration, t: f64) -> bool {
    contains(&deb.root.q, &deb.d, &deb.radii, deb.v_obs, y, t)
}

/// Trajectory nodes certified by one bubble.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicBur {
    pub root: Configuration,
    pub t_root: f64,
    /// Accepted `(configuration, absolute time)` nodes, in time order.
    pub spines: Vec<(Configuration, f64)>,
    /// The trajectory's final node was accepted.
    pub reaches_end: bool,
}

impl DynamicBur {
    pub fn last_time(&self) -> f64 {
        self.spines.last().map(|s| s.1).unwrap_or(self.t_root)
    }
}

/// The part of `traj.grid(dt)` at or after `t_start`, generated lazily.
fn grid_from(traj: &Spline, t_start: f64, dt: f64) -> impl Iterator<Item = f64> {
    let start = traj.start_time();
    let end = traj.end_time();
    let on_grid = |m: f64| {
        let k = ((m - start) / dt).round();
        let t = start + k * dt;
        (t - m).abs() <= 1e-12 && t < end - 1e-12
    };
    let mut extra: Vec<f64> = traj
        .mandatory_times()
        .into_iter()
        .filter(|&m| m > start && m < end && m >= t_start - 1e-12 && !on_grid(m))
        .collect();
    extra.sort_by(f64::total_cmp);
    let mut k = (((t_start - start) / dt).floor() as u64).saturating_sub(1);
    while start + k as f64 * dt < t_start - 1e-12 {
        k += 1;
    }
    let mut extra = extra.into_iter().peekable();
    let mut done = false;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        let t = start + k as f64 * dt;
        let regular = if t >= end - 1e-12 { end } else { t };
        if let Some(&m) = extra.peek() {
            if m < regular {
                return extra.next();
            }
        }
        if regular == end {
            done = true;
        } else {
            k += 1;
        }
        Some(regular)
    })
}

/// Certifies the prefix of `traj` starting at `t_start` inside the bubble
/// rooted at `traj(t_start)`. Nodes lie on the global grid of `traj` with
/// step `dt`.
pub fn compute_dbur_from(
    traj: &Spline,
    t_start: f64,
    dt: f64,
    d: &DistanceProfile,
    radii: &EnclosingRadii,
    v_obs: f64,
) -> Result<DynamicBur> {
    let root = traj.position_clamped(t_start);
    let end = traj.end_time();
    let mut spines = Vec::new();
    let mut reaches_end = false;
    let mut times = grid_from(traj, t_start, dt).peekable();
    let lead = times.peek().is_none_or(|t| (*t - t_start).abs() > 1e-12).then_some(t_start);
    for t in lead.into_iter().chain(times) {
        let elapsed = t - t_start;
        if !d.d.iter().all(|di| v_obs * elapsed < *di) {
            break;
        }
        let q = traj.position_clamped(t);
        if !contains(&root, d, radii, v_obs, &q, elapsed) {
            break;
        }
        if t >= end - 1e-12 {
            reaches_end = true;
        }
        spines.push((q, t));
    }
    if spines.is_empty() {
        return Err(Error::EmptyBur);
    }
    Ok(DynamicBur {
        root,
        t_root: t_start,
        spines,
        reaches_end,
    })
}

/// Single-bubble certificate over the whole trajectory.
pub fn compute_dbur(
    traj: &Spline,
    dt: f64,
    d0: &DistanceProfile,
    radii: &EnclosingRadii,
    v_obs: f64,
) -> Result<DynamicBur> {
    compute_dbur_from(traj, traj.start_time(), dt, d0, radii, v_obs)
}

/// For each speed in `v_values`, whether the single-bubble certificate of
/// `traj` reaches its end; one walk shared by all speeds.
pub fn certifies_whole(traj: &Spline, dt: f64, d: &DistanceProfile, radii: &EnclosingRadii, v_values: &[f64]) -> Vec<bool> {
    let t0 = traj.start_time();
    let end = traj.end_time();
    let root = traj.position_clamped(t0);
    let mut alive = vec![true; v_values.len()];
    let mut reached = vec![false; v_values.len()];
    let mut bound = vec![0.0; d.len()];
    let mut times = grid_from(traj, t0, dt).peekable();
    let lead = times.peek().is_none_or(|t| (*t - t0).abs() > 1e-12).then_some(t0);
    for t in lead.into_iter().chain(times) {
        if !alive.iter().any(|a| *a) {
            break;
        }
        let elapsed = t - t0;
        let q = traj.position_clamped(t);
        let delta: Vec<f64> = q.iter().zip(root.iter()).map(|(a, b)| a - b).collect();
        for (i, b) in bound.iter_mut().enumerate() {
            *b = radii.displacement_bound(i, &delta);
        }
        for (k, &v) in v_values.iter().enumerate() {
            if !alive[k] {
                continue;
            }
            let shift = v * elapsed;
            let ok = d.d.iter().zip(&bound).all(|(di, b)| shift < *di && b + shift <= *di);
            if !ok {
                alive[k] = false;
            } else if t >= end - 1e-12 {
                reached[k] = true;
            }
        }
    }
    reached
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicGeneralizedBur {
    pub burs: Vec<DynamicBur>,
    /// Absolute time up to which the trajectory is certified.
    pub covered_time: f64,
    pub reaches_end: bool,
}

impl DynamicGeneralizedBur {
    pub fn chain_size(&self) -> usize {
        self.burs.len()
    }
}

/// Chains up to `k_max` burs along `traj`. `planes0` and `d0` belong to the
/// obstacle snapshot at `traj.start_time()`.
#[allow(clippy::too_many_arguments)]
pub fn compute_dgbur<F>(
    traj: &Spline,
    dt: f64,
    d0: &DistanceProfile,
    planes0: &PlaneSet,
    pose_fn: F,
    v_obs: f64,
    k_max: usize,
    d_max: f64,
) -> DynamicGeneralizedBur
where
    F: Fn(&[f64]) -> RobotPose,
{
    let t0 = traj.start_time();
    let mut burs: Vec<DynamicBur> = Vec::new();
    let mut t_k = t0;
    let mut d = d0.clone();
    let mut radii = enclosing_radii(&pose_fn(&traj.position_clamped(t0)));
    let mut reaches_end = false;
    while burs.len() < k_max.max(1) {
        let bur = match compute_dbur_from(traj, t_k, dt, &d, &radii, v_obs) {
            Ok(b) => b,
            Err(_) => break,
        };
        let t_m = bur.last_time();
        let progressed = t_m > t_k || burs.is_empty();
        reaches_end = bur.reaches_end;
        burs.push(bur);
        if reaches_end || !progressed || burs.len() >= k_max {
            break;
        }
        let q_m = traj.position_clamped(t_m);
        let pose = pose_fn(&q_m);
        let planes = update_planes(planes0, t_m - t0, v_obs);
        d = distance_to_planes(&pose.link_capsules, &planes, d_max);
        radii = enclosing_radii(&pose);
        t_k = t_m;
    }
    let covered_time = burs.last().map(|b| b.last_time()).unwrap_or(t0);
    DynamicGeneralizedBur {
        burs,
        covered_time,
        reaches_end,
    }
}

/// Largest step along the unit `direction` that stays in the static bubble.
/// With a `target`, the result is clamped to the segment toward it.
pub fn extend_spine(
    q: &Configuration,
    direction: &[f64],
    d: &DistanceProfile,
    radii: &EnclosingRadii,
    target: Option<&Configuration>,
) -> Result<(Configuration, f64)> {
    let len = norm(direction);
    if !(len > 1e-12) {
        return Err(Error::ZeroDirection);
    }
    let mut step = f64::INFINITY;
    for i in 0..d.len() {
        let denom = radii.displacement_bound(i, direction);
        if denom > 0.0 {
            step = step.min(d.d[i].max(0.0) / denom);
        }
    }
    if let Some(target) = target {
        let dist = crate::cspace::rho(q, target);
        if step >= dist {
            return Ok((target.clone(), dist));
        }
    }
    if !step.is_finite() {
        return Err(Error::ZeroDirection);
    }
    Ok((q.offset(direction, step), step))
}

/// Static generalized spine: up to `layers` bubble extensions from `q`
/// toward `target`, refreshing distances from the frozen `planes`.
pub fn extend_generalized_spine<F>(
    q: &Configuration,
    target: &Configuration,
    d0: &DistanceProfile,
    planes: &PlaneSet,
    pose_fn: F,
    d_max: f64,
    layers: usize,
) -> Configuration
where
    F: Fn(&[f64]) -> RobotPose,
{
    let mut current = q.clone();
    let mut d = d0.clone();
    let mut pose = pose_fn(q);
    for layer in 0..layers {
        let dist = crate::cspace::rho(&current, target);
        if dist <= 1e-12 || !d.all_positive() {
            break;
        }
        let dir: Vec<f64> = target.iter().zip(current.iter()).map(|(a, b)| (a - b) / dist).collect();
        let radii = enclosing_radii(&pose);
        let Ok((next, step)) = extend_spine(&current, &dir, &d, &radii, Some(target)) else {
            break;
        };
        current = next;
        if step < 1e-6 || layer + 1 == layers {
            break;
        }
        pose = pose_fn(&current);
        d = distance_to_planes(&pose.link_capsules, planes, d_max);
    }
    current
}

/// One cell of a bubble cross-section.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SliceSample {
    pub x: f64,
    pub y: f64,
    pub v_obs: f64,
    pub inside: bool,
}

/// Cross-section of the bubbles at `v_values` in the plane of joints
/// `axes`, sampled on a `resolution × resolution` grid over `[lo, hi]²`
/// offsets from the root. A grid point is inside when the time-optimal
/// rest-to-rest quintic from the root is certified up to its end.
#[allow(clippy::too_many_arguments)]
pub fn deb_slice(
    root: &Configuration,
    d: &DistanceProfile,
    radii: &EnclosingRadii,
    limits: &KinematicLimits,
    axes: (usize, usize),
    range: (f64, f64),
    resolution: usize,
    v_values: &[f64],
    dt: f64,
) -> Vec<SliceSample> {
    let x0 = ExtendedConfiguration::at_rest(root.clone());
    let step = if resolution > 1 {
        (range.1 - range.0) / (resolution - 1) as f64
    } else {
        0.0
    };
    let mut out = Vec::with_capacity(resolution * resolution * v_values.len());
    for a in 0..resolution {
        for b in 0..resolution {
            let mut y = root.clone();
            y[axes.0] += range.0 + a as f64 * step;
            y[axes.1] += range.0 + b as f64 * step;
            let zero = vec![0.0; y.dim()];
            let t_f = rest_to_rest_duration(root, &y, limits).max(dt);
            let traj = Spline::Quintic(QuinticSpline::from_boundary(&x0, &y, &zero, &zero, t_f));
            let flags = certifies_whole(&traj, dt, d, radii, v_values);
            for (&v, inside) in v_values.iter().zip(flags) {
                out.push(SliceSample {
                    x: y[axes.0],
                    y: y[axes.1],
                    v_obs: v,
                    inside,
                });
            }
        }
    }
    out
}
