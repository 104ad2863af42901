//! The reactive planner: an adaptive horizon of candidate configurations
//! around the robot, scored by clearance, clearance rate and goal
//! progress, driving one spline per period.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::bubbles::{compute_dgbur, extend_generalized_spine};
use crate::cspace::{rho, sample_neighborhood, Configuration, ExtendedConfiguration, JointLimits};
use crate::geometry::{distance_to_planes, DistanceProfile, PlaneSet};
use crate::kinematics::{fk_unchecked, self_collision, ChainModel, RobotPose};
use crate::scheduler::{timed, BudgetClock, IterationTiming};
use crate::sim::env::Environment;
use crate::sim::oracle::{is_valid_motion, Collision};
use crate::trajectory::{
    build_composite, estimate_final_velocity, fit_emergency_quartic, fit_quintic, QuinticSpline, Spline,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrgbtParams {
    pub n_h0: usize,
    pub d_crit: f64,
    /// Clearance at which the distance term of a weight saturates.
    pub d_ref: f64,
    pub w_min: f64,
    pub w_mean_min: f64,
    pub max_modify_attempts: usize,
    pub safe_on: bool,
    pub period: f64,
    pub e1: f64,
    /// Discretization step of burs and limit checks.
    pub dt: f64,
    /// Bubble layers when certifying a spline.
    pub k_layers: usize,
    /// Bubble layers per horizon spine.
    pub spine_layers: usize,
    pub max_bisection_iters: usize,
    /// Random nodes are drawn within this multiple of `‖ω_max‖ T`.
    pub random_radius_factor: f64,
    pub goal_tolerance: f64,
}

impl Default for DrgbtParams {
    fn default() -> Self {
        DrgbtParams {
            n_h0: 10,
            d_crit: 0.05,
            d_ref: 0.5,
            w_min: 0.5,
            w_mean_min: 0.5,
            max_modify_attempts: 10,
            safe_on: false,
            period: 0.05,
            e1: 0.03,
            dt: 1e-3,
            k_layers: 5,
            spine_layers: 5,
            max_bisection_iters: 5,
            random_radius_factor: 2.0,
            goal_tolerance: 1e-6,
        }
    }
}

impl DrgbtParams {
    pub fn safe() -> Self {
        DrgbtParams {
            safe_on: true,
            period: 0.02,
            e1: 0.012,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Path,
    Random,
    Lateral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeState {
    Regular,
    Bad,
    Critical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonNode {
    pub target: Configuration,
    pub reached: Option<Configuration>,
    pub kind: NodeKind,
    pub state: NodeState,
    pub weight: f64,
    pub d_c_local: f64,
    pub d_c_prev: Option<f64>,
}

impl HorizonNode {
    pub fn new(target: Configuration, kind: NodeKind) -> Self {
        HorizonNode {
            target,
            reached: None,
            kind,
            state: NodeState::Regular,
            weight: 0.0,
            d_c_local: 0.0,
            d_c_prev: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Horizon {
    pub nodes: Vec<HorizonNode>,
    /// Target size from the last update.
    pub size: usize,
    pub next: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlannerStatus {
    Reached,
    Advanced,
    Trapped,
}

/// Slowdown accepted for arriving with a nonzero velocity.
const VF_SLOWDOWN: f64 = 1.25;

/// Horizon size for critical distance `d_c`.
pub fn horizon_size(d_c: f64, n_h0: usize, n: usize, d_crit: f64) -> usize {
    let cap = n * n_h0;
    if !(d_c > 0.0) {
        return cap;
    }
    let grown = (n_h0 as f64 * (1.0 + d_crit / d_c)).floor();
    if grown >= cap as f64 {
        cap
    } else {
        grown as usize
    }
}

/// Path nodes from `marker` on, padded with random samples around `q_curr`.
pub fn generate_horizon<R: rand::Rng + ?Sized>(
    q_curr: &Configuration,
    path: &[Configuration],
    marker: usize,
    n_h: usize,
    radius: f64,
    limits: &JointLimits,
    rng: &mut R,
) -> Horizon {
    let mut nodes: Vec<HorizonNode> = path
        .iter()
        .skip(marker)
        .take(n_h)
        .map(|q| HorizonNode::new(q.clone(), NodeKind::Path))
        .collect();
    while nodes.len() < n_h {
        nodes.push(HorizonNode::new(sample_neighborhood(q_curr, radius, limits, rng), NodeKind::Random));
    }
    Horizon {
        nodes,
        size: n_h,
        next: None,
    }
}

/// Targets at distance `dist` from `q_curr` along an orthonormal
/// basis of the complement of `q_next - q_curr`.
pub fn lateral_targets(q_curr: &Configuration, q_next: &Configuration, dist: f64, limits: &JointLimits) -> Vec<Configuration> {
    let n = q_curr.dim();
    let len = rho(q_curr, q_next);
    if len <= 1e-12 {
        return Vec::new();
    }
    let mut basis: Vec<Vec<f64>> = vec![q_next.iter().zip(q_curr.iter()).map(|(a, b)| (a - b) / len).collect()];
    for k in 0..n {
        if basis.len() == n {
            break;
        }
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let l = crate::cspace::norm(&v);
        if l > 1e-6 {
            basis.push(v.into_iter().map(|x| x / l).collect());
        }
    }
    basis
        .iter()
        .skip(1)
        .map(|b| {
            let mut q = q_curr.offset(b, dist);
            limits.clamp(&mut q);
            q
        })
        .collect()
}

/// Weight and state of one node. Critical and zero-length spines score 0.
pub fn node_weight(
    q_curr: &Configuration,
    reached: &Configuration,
    goal: &Configuration,
    d_c_local: f64,
    d_c_prev: f64,
    d_crit: f64,
    d_ref: f64,
) -> (f64, NodeState) {
    if d_c_local < d_crit {
        return (0.0, NodeState::Critical);
    }
    let spine = rho(q_curr, reached);
    if spine <= 1e-12 {
        return (0.0, NodeState::Bad);
    }
    let p_dist = (d_c_local / d_ref).min(1.0);
    let p_rate = 0.5 * (1.0 + ((d_c_local - d_c_prev) / d_crit).tanh());
    let p_goal = (0.5 * (1.0 + (rho(q_curr, goal) - rho(reached, goal)) / spine)).clamp(0.0, 1.0);
    let w = (0.5 * p_dist + 0.25 * p_rate + 0.25 * p_goal).clamp(0.0, 1.0);
    if w > 0.0 {
        (w, NodeState::Regular)
    } else {
        (0.0, NodeState::Bad)
    }
}

/// Scores every node that has a reached endpoint; returns the weights in
/// node order and records them on the nodes.
pub fn compute_node_weights(h: &mut Horizon, q_curr: &Configuration, goal: &Configuration, d_crit: f64, d_ref: f64) -> Vec<f64> {
    h.nodes
        .iter_mut()
        .map(|node| {
            let (w, state) = match &node.reached {
                Some(r) => {
                    let prev = node.d_c_prev.unwrap_or(node.d_c_local);
                    node_weight(q_curr, r, goal, node.d_c_local, prev, d_crit, d_ref)
                }
                None => (0.0, NodeState::Bad),
            };
            node.weight = w;
            node.state = state;
            w
        })
        .collect()
}

/// Index of the best node; ties go to the endpoint closer to the goal.
/// `None` when every weight is zero.
pub fn get_next_state(h: &Horizon, goal: &Configuration) -> Option<usize> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (k, node) in h.nodes.iter().enumerate() {
        let Some(r) = &node.reached else { continue };
        if !(node.weight > 0.0) {
            continue;
        }
        let dg = rho(r, goal);
        let better = match best {
            None => true,
            Some((_, w, g)) => node.weight > w || (node.weight == w && dg < g),
        };
        if better {
            best = Some((k, node.weight, dg));
        }
    }
    best.map(|b| b.0)
}

pub fn whether_to_replan(weights: &[f64], w_min: f64, w_mean_min: f64) -> bool {
    if weights.is_empty() {
        return true;
    }
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    max < w_min || mean < w_mean_min
}

/// Re-spaces `path` (first node replaced by `q_curr`) so consecutive nodes
/// are at most `max_step` apart. Existing vertices are kept.
pub fn update_path(path: &[Configuration], q_curr: &Configuration, max_step: f64) -> Vec<Configuration> {
    let mut out = vec![q_curr.clone()];
    let rest = if path.first().is_some_and(|p| rho(p, q_curr) <= 1e-12) {
        &path[1..]
    } else {
        path
    };
    for node in rest {
        let prev = out.last().unwrap().clone();
        let len = rho(&prev, node);
        if len <= 1e-12 {
            continue;
        }
        let segments = (len / max_step).ceil().max(1.0) as usize;
        for k in 1..segments {
            out.push(crate::cspace::interpolate(&prev, node, k as f64 / segments as f64));
        }
        out.push(node.clone());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepResult {
    Advanced,
    ReachedGoal,
    Collision(crate::sim::oracle::CollisionKind),
    Trapped,
}

/// Which trajectory the robot follows after an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplineSource {
    Quintic,
    QuinticRest,
    Composite,
    Emergency,
    Retained,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutcome {
    pub result: StepResult,
    pub status: PlannerStatus,
    pub replanning: bool,
    pub d_c: f64,
    pub n_h: usize,
    pub horizon_len: usize,
    pub weight_max: f64,
    pub weight_mean: f64,
    pub source: SplineSource,
    pub collision: Option<Collision>,
    pub q: Configuration,
    pub timing: IterationTiming,
}

/// Planner state for one run.
#[derive(Debug, Clone)]
pub struct Drgbt {
    pub model: ChainModel,
    pub params: DrgbtParams,
    pub goal: Configuration,
    pub path: Vec<Configuration>,
    pub marker: usize,
    pub horizon: Horizon,
    pub status: PlannerStatus,
    /// Trajectory the robot is following and the time reached on it.
    pub trajectory: Spline,
    pub offset: f64,
    pub q_next: Configuration,
    pub traversed: Vec<Configuration>,
    /// Joint-space length of the executed motion.
    pub path_length: f64,
    pub replanning: bool,
    regenerate: bool,
    planes: Option<PlaneSet>,
    rng: ChaCha8Rng,
}

impl Drgbt {
    pub fn new(model: ChainModel, params: DrgbtParams, q_start: Configuration, goal: Configuration, seed: u64) -> Self {
        let trajectory = Spline::Quintic(QuinticSpline::constant(&q_start, params.dt));
        Drgbt {
            model,
            params,
            goal,
            path: Vec::new(),
            marker: 0,
            horizon: Horizon::default(),
            status: PlannerStatus::Trapped,
            trajectory,
            offset: 0.0,
            q_next: q_start.clone(),
            traversed: vec![q_start],
            path_length: 0.0,
            replanning: true,
            regenerate: true,
            planes: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn state(&self) -> ExtendedConfiguration {
        self.trajectory.state_clamped(self.offset)
    }

    fn step_length(&self) -> f64 {
        self.model.kinematic_limits.omega_norm() * self.params.period
    }

    /// Installs a new predefined path starting at the current configuration.
    pub fn install_path(&mut self, path: &[Configuration]) {
        let q = self.state().q;
        self.path = update_path(path, &q, self.step_length());
        self.marker = 0;
        self.regenerate = true;
        self.replanning = false;
    }

    fn advance_marker(&mut self, q: &Configuration) {
        if self.path.is_empty() {
            return;
        }
        let mut best = (self.marker, f64::INFINITY);
        for (k, p) in self.path.iter().enumerate().skip(self.marker) {
            let d = rho(p, q);
            if d < best.1 {
                best = (k, d);
            }
        }
        self.marker = best.0;
    }

    fn pose(&self, q: &[f64]) -> RobotPose {
        fk_unchecked(&self.model, q)
    }

    fn clearance_at(&self, q: &Configuration, planes: &PlaneSet, d_max: f64) -> f64 {
        distance_to_planes(&self.pose(q).link_capsules, planes, d_max).d_c
    }

    /// Resizes the horizon, replaces bad and critical nodes and regenerates
    /// the lateral nodes.
    pub fn update_horizon(&mut self, q_curr: &Configuration, d: &DistanceProfile, planes: &PlaneSet, d_max: f64) {
        let n = self.model.dof();
        let p = self.params.clone();
        let n_h = horizon_size(d.d_c, p.n_h0, n, p.d_crit);
        let limits = self.model.joint_limits();
        let radius = p.random_radius_factor * self.step_length();
        let mut nodes: Vec<HorizonNode> = std::mem::take(&mut self.horizon.nodes)
            .into_iter()
            .filter(|nd| nd.kind != NodeKind::Lateral)
            .collect();
        for node in nodes.iter_mut() {
            if node.state == NodeState::Regular {
                continue;
            }
            let mut candidate = node.target.clone();
            for _ in 0..p.max_modify_attempts {
                candidate = sample_neighborhood(q_curr, radius, &limits, &mut self.rng);
                if rho(&candidate, q_curr) > 1e-9 && self.clearance_at(&candidate, planes, d_max) >= p.d_crit {
                    break;
                }
            }
            *node = HorizonNode::new(candidate, NodeKind::Random);
        }
        let laterals = lateral_targets(q_curr, &self.q_next, self.step_length(), &limits);
        let n_lat = laterals.len().min(n_h.saturating_sub(1));
        let keep = n_h - n_lat;
        if nodes.len() > keep {
            // drop the lowest-weight non-path nodes first, then trailing path nodes
            let mut order: Vec<usize> = (0..nodes.len()).filter(|k| nodes[*k].kind != NodeKind::Path).collect();
            order.sort_by(|a, b| nodes[*a].weight.total_cmp(&nodes[*b].weight));
            let mut drop = vec![false; nodes.len()];
            let mut excess = nodes.len() - keep;
            for k in order {
                if excess == 0 {
                    break;
                }
                drop[k] = true;
                excess -= 1;
            }
            for k in (0..nodes.len()).rev() {
                if excess == 0 {
                    break;
                }
                if !drop[k] {
                    drop[k] = true;
                    excess -= 1;
                }
            }
            let mut it = drop.into_iter();
            nodes.retain(|_| !it.next().unwrap());
        }
        while nodes.len() < keep {
            nodes.push(HorizonNode::new(
                sample_neighborhood(q_curr, radius, &limits, &mut self.rng),
                NodeKind::Random,
            ));
        }
        nodes.extend(laterals.into_iter().take(n_lat).map(|q| HorizonNode::new(q, NodeKind::Lateral)));
        self.horizon.nodes = nodes;
        self.horizon.size = n_h;
        self.horizon.next = None;
    }

    /// Extends a generalized spine toward every node until the budget runs
    /// out; nodes left without a spine are dropped.
    pub fn generate_gbur(&mut self, q_curr: &Configuration, d: &DistanceProfile, planes: &PlaneSet, d_max: f64, clock: &mut BudgetClock) {
        let mut kept = Vec::with_capacity(self.horizon.nodes.len());
        let nodes = std::mem::take(&mut self.horizon.nodes);
        let layers = self.params.spine_layers;
        for (k, mut node) in nodes.into_iter().enumerate() {
            if k > 0 && !clock.checkpoint() {
                break;
            }
            if k == 0 {
                clock.checkpoint();
            }
            let reached = if d.all_positive() {
                extend_generalized_spine(q_curr, &node.target, d, planes, |q| self.pose(q), d_max, layers)
            } else {
                q_curr.clone()
            };
            let local = self.clearance_at(&reached, planes, d_max);
            if node.reached.is_some() {
                node.d_c_prev = Some(node.d_c_local);
            }
            node.d_c_local = local;
            node.reached = Some(reached);
            kept.push(node);
        }
        self.horizon.nodes = kept;
    }

    /// Certifies that `spline` keeps the robot clear of obstacles moving at
    /// up to `v_obs`, inside the joint limits and free of self-contact.
    fn certify(&self, spline: &Spline, d0: &DistanceProfile, planes0: &PlaneSet, env: &Environment) -> bool {
        let p = &self.params;
        // covers motion between discretization nodes
        let reach: f64 = self.model.joints.iter().map(|j| crate::geometry::Vector::from(j.origin_xyz).norm()).sum::<f64>()
            + crate::geometry::Vector::from(self.model.tip).norm();
        let omega_l1: f64 = self.model.kinematic_limits.omega_max.iter().sum();
        let margin = 0.5 * p.dt * (env.v_obs + reach * omega_l1);
        let inflated = |q: &[f64]| {
            let mut pose = self.pose(q);
            pose.link_capsules.iter_mut().for_each(|c| c.radius += margin);
            pose
        };
        let d = DistanceProfile::new(d0.d.iter().map(|x| x - margin).collect());
        let chain = compute_dgbur(spline, p.dt, &d, planes0, inflated, env.v_obs, p.k_layers, env.d_max());
        if !chain.reaches_end {
            return false;
        }
        let limits = self.model.joint_limits();
        spline.grid(5.0 * p.dt).into_iter().all(|t| {
            let q = spline.position_clamped(t);
            limits.contains(&q) && !self_collision(&self.pose(&q))
        })
    }

    fn safe_candidate(&self, x_curr: &ExtendedConfiguration, target: &Configuration) -> Option<Spline> {
        let p = &self.params;
        let limits = &self.model.kinematic_limits;
        let zero = vec![0.0; x_curr.dim()];
        let head = fit_quintic(x_curr, target, &zero, limits, p.dt).ok()?;
        let t_new = p.period + p.e1;
        if head.t_f() <= t_new {
            return Some(Spline::Quintic(head));
        }
        build_composite(head, t_new, limits, p.dt).ok().map(Spline::Composite)
    }

    /// Produces the spline for this period and the planner status.
    fn update_curr_state(
        &mut self,
        x_curr: &ExtendedConfiguration,
        q_next: Option<&Configuration>,
        d: &DistanceProfile,
        planes: &PlaneSet,
        env: &Environment,
    ) -> (Option<Spline>, SplineSource, PlannerStatus) {
        let p = self.params.clone();
        let limits = self.model.kinematic_limits.clone();
        if p.safe_on {
            let Some(q_next) = q_next else {
                let stop = fit_emergency_quartic(x_curr, &limits, p.dt).ok().map(Spline::Quartic);
                return match stop {
                    Some(s) if self.certify(&s, d, planes, env) => (Some(s), SplineSource::Emergency, PlannerStatus::Trapped),
                    _ => (None, SplineSource::Retained, PlannerStatus::Trapped),
                };
            };
            if let Some(s) = self.safe_candidate(x_curr, q_next) {
                if self.certify(&s, d, planes, env) {
                    let status = if s.end_time() <= p.period + p.e1 { PlannerStatus::Reached } else { PlannerStatus::Advanced };
                    let source = if matches!(s, Spline::Composite(_)) { SplineSource::Composite } else { SplineSource::QuinticRest };
                    return (Some(s), source, status);
                }
            }
            let (mut lo, mut hi) = (0.0, 1.0);
            let mut best = None;
            for _ in 0..p.max_bisection_iters {
                let s_mid = 0.5 * (lo + hi);
                let target = crate::cspace::interpolate(&x_curr.q, q_next, s_mid);
                match self.safe_candidate(x_curr, &target) {
                    Some(s) if self.certify(&s, d, planes, env) => {
                        best = Some(s);
                        lo = s_mid;
                    }
                    _ => hi = s_mid,
                }
            }
            if let Some(s) = best {
                return (Some(s), SplineSource::Composite, PlannerStatus::Advanced);
            }
            if let Ok(stop) = fit_emergency_quartic(x_curr, &limits, p.dt) {
                let s = Spline::Quartic(stop);
                if self.certify(&s, d, planes, env) {
                    return (Some(s), SplineSource::Emergency, PlannerStatus::Trapped);
                }
            }
            return (None, SplineSource::Retained, PlannerStatus::Trapped);
        }
        let Some(q_next) = q_next else {
            return match fit_emergency_quartic(x_curr, &limits, p.dt) {
                Ok(s) => (Some(Spline::Quartic(s)), SplineSource::Emergency, PlannerStatus::Trapped),
                Err(_) => (None, SplineSource::Retained, PlannerStatus::Trapped),
            };
        };
        let vf = if rho(q_next, &self.goal) <= p.goal_tolerance {
            vec![0.0; x_curr.dim()]
        } else {
            estimate_final_velocity(&x_curr.q, q_next, &limits, p.period)
        };
        // a final velocity the robot cannot build up within the move makes
        // the quintic swing back first, so scaled-down velocities compete
        let candidates: Vec<(QuinticSpline, SplineSource)> = [1.0, 0.75, 0.5, 0.25, 0.0]
            .into_iter()
            .filter_map(|scale| {
                let v: Vec<f64> = vf.iter().map(|x| x * scale).collect();
                let source = if scale > 0.0 { SplineSource::Quintic } else { SplineSource::QuinticRest };
                fit_quintic(x_curr, q_next, &v, &limits, p.dt).ok().map(|s| (s, source))
            })
            .collect();
        let fastest = candidates.iter().map(|(s, _)| s.t_f()).fold(f64::INFINITY, f64::min);
        let fitted = candidates.into_iter().find(|(s, _)| s.t_f() <= VF_SLOWDOWN * fastest);
        match fitted.ok_or(()) {
            Ok((s, source)) => {
                let status = if s.t_f() <= p.period + p.e1 { PlannerStatus::Reached } else { PlannerStatus::Advanced };
                (Some(Spline::Quintic(s)), source, status)
            }
            Err(_) => match fit_emergency_quartic(x_curr, &limits, p.dt) {
                Ok(s) => (Some(Spline::Quartic(s)), SplineSource::Emergency, PlannerStatus::Trapped),
                Err(_) => (None, SplineSource::Retained, PlannerStatus::Trapped),
            },
        }
    }

    /// One planning period against the obstacle snapshot `env`; the robot
    /// then executes `T` seconds of the resulting trajectory while the
    /// obstacles move.
    pub fn step(&mut self, env: &Environment, clock: &mut BudgetClock, dt_check: f64) -> IterationOutcome {
        let t1_start = Instant::now();
        let mut timing = IterationTiming::default();
        let p = self.params.clone();
        let d_max = env.d_max();
        let x_curr = self.state();
        let q_curr = x_curr.q.clone();
        let pose = self.pose(&q_curr);
        let prev = self.planes.take();
        let (d, planes) = timed(&mut timing.compute_distances, || env.distance_profile(&pose, prev.as_ref()));
        self.advance_marker(&q_curr);

        let limits = self.model.joint_limits();
        if self.status != PlannerStatus::Advanced || self.regenerate || self.horizon.nodes.is_empty() {
            let n_h = horizon_size(d.d_c, p.n_h0, self.model.dof(), p.d_crit);
            let radius = p.random_radius_factor * self.step_length();
            let h = timed(&mut timing.generate_horizon, || {
                generate_horizon(&q_curr, &self.path, self.marker, n_h, radius, &limits, &mut self.rng)
            });
            self.horizon = h;
            self.regenerate = false;
        }
        timed(&mut timing.update_horizon, || self.update_horizon(&q_curr, &d, &planes, d_max));
        let n_h = self.horizon.size;
        let t = Instant::now();
        self.generate_gbur(&q_curr, &d, &planes, d_max, clock);
        timing.generate_gbur = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let goal = self.goal.clone();
        let weights = compute_node_weights(&mut self.horizon, &q_curr, &goal, p.d_crit, p.d_ref);
        let best = get_next_state(&self.horizon, &goal);
        self.horizon.next = best;
        let q_next = best.and_then(|k| self.horizon.nodes[k].reached.clone());
        timing.weights_and_next = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let (spline, source, mut status) = self.update_curr_state(&x_curr, q_next.as_ref(), &d, &planes, env);
        timing.update_curr_state = t.elapsed().as_secs_f64();
        self.q_next = match (&q_next, status) {
            (Some(q), s) if s != PlannerStatus::Trapped => q.clone(),
            _ => q_curr.clone(),
        };
        if q_next.is_none() {
            status = PlannerStatus::Trapped;
        }
        let (exec, from) = match spline {
            Some(s) => {
                self.trajectory = s;
                (&self.trajectory, 0.0)
            }
            None => (&self.trajectory, self.offset),
        };
        let t = Instant::now();
        let collision = is_valid_motion(&self.model, exec, from, p.period, env, dt_check);
        timing.is_valid = t.elapsed().as_secs_f64();
        let steps = (p.period / p.dt).round().max(1.0) as usize;
        let mut prev_q = exec.position_clamped(from);
        for k in 1..=steps {
            let q = exec.position_clamped(from + p.period * k as f64 / steps as f64);
            self.path_length += rho(&prev_q, &q);
            prev_q = q;
        }
        self.offset = from + p.period;
        let x_new = self.state();
        self.traversed.push(x_new.q.clone());
        self.status = status;
        self.planes = Some(planes);

        if status == PlannerStatus::Trapped || whether_to_replan(&weights, p.w_min, p.w_mean_min) || self.path.is_empty() {
            self.replanning = true;
        }
        let at_goal = rho(&x_new.q, &goal) <= p.goal_tolerance && x_new.is_at_rest(1e-9);
        let result = match (collision, at_goal) {
            (Some(c), _) => StepResult::Collision(c.kind),
            (None, true) => StepResult::ReachedGoal,
            (None, false) if status == PlannerStatus::Trapped => StepResult::Trapped,
            _ => StepResult::Advanced,
        };
        timing.t1 = t1_start.elapsed().as_secs_f64();
        let (weight_max, weight_mean) = if weights.is_empty() {
            (0.0, 0.0)
        } else {
            (
                weights.iter().copied().fold(0.0, f64::max),
                weights.iter().sum::<f64>() / weights.len() as f64,
            )
        };
        IterationOutcome {
            result,
            status,
            replanning: self.replanning,
            d_c: d.d_c,
            n_h,
            horizon_len: self.horizon.nodes.len(),
            weight_max,
            weight_mean,
            source,
            collision,
            q: x_new.q,
            timing,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use approx::assert_abs_diff_eq;

    #[test]
    fn horizon_size_examples() {
        assert_eq!(horizon_size(0.1, 10, 6, 0.05), 15);
        assert_eq!(horizon_size(24.0, 10, 6, 0.05), 10);
        assert_eq!(horizon_size(0.01, 10, 6, 0.05), 60);
        assert_eq!(horizon_size(0.0, 10, 6, 0.05), 60);
        assert_eq!(horizon_size(-0.2, 10, 6, 0.05), 60);
    }

    #[test]
    fn horizon_generation_counts() {
        let limits = JointLimits(vec![(-10.0, 10.0)]);
        let path: Vec<Configuration> = (0..20).map(|k| Configuration(vec![k as f64 * 0.1])).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = Configuration(vec![0.2]);
        let h = generate_horizon(&q, &path, 2, 10, 0.5, &limits, &mut rng);
        assert!(h.nodes.iter().all(|n| n.kind == NodeKind::Path));
        assert_eq!(h.nodes[0].target, path[2]);
        assert_eq!(h.nodes[9].target, path[11]);
        let h = generate_horizon(&q, &path, 15, 10, 0.5, &limits, &mut rng);
        assert_eq!(h.nodes.iter().filter(|n| n.kind == NodeKind::Path).count(), 5);
        let h = generate_horizon(&q, &[], 0, 10, 0.5, &limits, &mut rng);
        assert_eq!(h.nodes.iter().filter(|n| n.kind == NodeKind::Random).count(), 10);
    }

    #[test]
    fn weight_formula() {
        let q = Configuration(vec![0.0, 0.0]);
        let goal = Configuration(vec![2.0, 0.0]);
        let reached = Configuration(vec![0.5, 0.0]);
        let (w, s) = node_weight(&q, &reached, &goal, 0.3, 0.3, 0.05, 0.5);
        assert_eq!(s, NodeState::Regular);
        assert_abs_diff_eq!(w, 0.5 * 0.6 + 0.375, epsilon = 1e-12);
        let (w, s) = node_weight(&q, &reached, &goal, 0.01, 0.3, 0.05, 0.5);
        assert_eq!((w, s), (0.0, NodeState::Critical));
        let (w, s) = node_weight(&q, &q, &goal, 1.0, 1.0, 0.05, 0.5);
        assert_eq!((w, s), (0.0, NodeState::Bad));
    }

    fn node(w: f64, reached: Vec<f64>) -> HorizonNode {
        let mut n = HorizonNode::new(Configuration(reached.clone()), NodeKind::Random);
        n.weight = w;
        n.reached = Some(Configuration(reached));
        n
    }

    #[test]
    fn next_state_selection() {
        let goal = Configuration(vec![1.0]);
        let h = Horizon {
            nodes: vec![node(0.4, vec![0.0]), node(0.7, vec![0.2]), node(0.7, vec![0.5])],
            size: 3,
            next: None,
        };
        assert_eq!(get_next_state(&h, &goal), Some(2));
        let h = Horizon {
            nodes: vec![node(0.0, vec![0.0]), node(0.0, vec![0.2])],
            size: 2,
            next: None,
        };
        assert_eq!(get_next_state(&h, &goal), None);
    }

    #[test]
    fn replan_rule() {
        assert!(!whether_to_replan(&[0.6; 5], 0.5, 0.5));
        assert!(whether_to_replan(&[0.2; 5], 0.5, 0.5));
        assert!(whether_to_replan(&[0.9, 0.0, 0.0], 0.5, 0.5));
    }

    #[test]
    fn path_respacing() {
        let path = vec![Configuration(vec![0.0]), Configuration(vec![2.0])];
        let out = update_path(&path, &Configuration(vec![0.0]), 0.385);
        assert_eq!(out.len(), 7);
        for w in out.windows(2) {
            assert!(rho(&w[0], &w[1]) <= 0.385 + 1e-12);
        }
        let length: f64 = out.windows(2).map(|w| rho(&w[0], &w[1])).sum();
        assert_abs_diff_eq!(length, 2.0, epsilon = 1e-9);
        let fine = vec![Configuration(vec![0.0]), Configuration(vec![0.1]), Configuration(vec![0.3])];
        assert_eq!(update_path(&fine, &Configuration(vec![0.0]), 0.385), fine);
    }

    #[test]
    fn lateral_basis_is_orthogonal() {
        let limits = JointLimits(vec![(-5.0, 5.0); 3]);
        let q = Configuration(vec![0.0, 0.0, 0.0]);
        let next = Configuration(vec![1.0, 1.0, 0.0]);
        let lats = lateral_targets(&q, &next, 0.3, &limits);
        assert_eq!(lats.len(), 2);
        for l in &lats {
            assert_abs_diff_eq!(rho(l, &q), 0.3, epsilon = 1e-12);
            let dot: f64 = l.iter().zip([1.0, 1.0, 0.0]).map(|(a, b)| a * b).sum();
            assert_abs_diff_eq!(dot, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn free_space_reaches_goal() {
        let model = ChainModel::planar(2, 1.0, 0.05);
        let env = Environment::empty(Point::origin(), 2.5, 0.5);
        for safe in [false, true] {
            let params = if safe { DrgbtParams::safe() } else { DrgbtParams::default() };
            let start = Configuration(vec![0.0, 0.0]);
            let goal = Configuration(vec![1.5, -1.0]);
            let mut planner = Drgbt::new(model.clone(), params, start.clone(), goal.clone(), 3);
            planner.install_path(&[start, goal]);
            let mut reached = false;
            for _ in 0..400 {
                let out = planner.step(&env, &mut BudgetClock::unlimited(), 1e-3);
                assert!(!matches!(out.result, StepResult::Collision(_)));
                if out.result == StepResult::ReachedGoal {
                    reached = true;
                    break;
                }
            }
            assert!(reached, "safe = {safe}");
        }
    }
}
