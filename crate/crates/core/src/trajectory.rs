//! Time parameterization of local motions.
//!
//! Every joint follows its own polynomial over a shared duration:
//! a quintic for the current spline (six boundary conditions) and a
//! quartic for the emergency stop (five conditions, final position free).
//! Durations are the shortest that keep velocity, acceleration and jerk
//! within bounds on a sampling grid.

use serde::{Deserialize, Serialize};

use crate::cspace::{norm, rho, Configuration, ExtendedConfiguration};
use crate::error::{Error, Result};

/// Per-joint bounds on velocity, acceleration and jerk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicLimits {
    pub omega_max: Vec<f64>,
    pub alpha_max: Vec<f64>,
    pub jerk_max: Vec<f64>,
}

impl KinematicLimits {
    pub fn uniform(n: usize, omega: f64, alpha: f64, jerk: f64) -> Self {
        KinematicLimits {
            omega_max: vec![omega; n],
            alpha_max: vec![alpha; n],
            jerk_max: vec![jerk; n],
        }
    }

    /// Datasheet values of a six-axis collaborative arm.
    pub fn xarm6() -> Self {
        KinematicLimits::uniform(6, std::f64::consts::PI, 20.0, 500.0)
    }

    pub fn dim(&self) -> usize {
        self.omega_max.len()
    }

    pub fn omega_norm(&self) -> f64 {
        norm(&self.omega_max)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.omega_max.len();
        if self.alpha_max.len() != n || self.jerk_max.len() != n {
            return Err(Error::InvalidModel("kinematic limit vectors differ in length".into()));
        }
        if self
            .omega_max
            .iter()
            .chain(&self.alpha_max)
            .chain(&self.jerk_max)
            .any(|x| !(*x > 0.0))
        {
            return Err(Error::InvalidModel("kinematic limits must be positive".into()));
        }
        Ok(())
    }
}

const LIMIT_SLACK: f64 = 1e-9;

fn within(value: f64, bound: f64) -> bool {
    value.abs() <= bound * (1.0 + LIMIT_SLACK) + 1e-12
}

/// Position, velocity, acceleration and jerk of `c[0] + c[1] t + ...`.
fn eval_poly(c: &[f64], t: f64) -> [f64; 4] {
    let mut p = 0.0;
    let mut v = 0.0;
    let mut a = 0.0;
    let mut j = 0.0;
    for (k, ck) in c.iter().enumerate().rev() {
        let kf = k as f64;
        p = p * t + ck;
        if k >= 1 {
            v = v * t + kf * ck;
        }
        if k >= 2 {
            a = a * t + kf * (kf - 1.0) * ck;
        }
        if k >= 3 {
            j = j * t + kf * (kf - 1.0) * (kf - 2.0) * ck;
        }
    }
    [p, v, a, j]
}

/// Joint polynomials sharing a time window `[t0, t0 + duration]`.
#[derive(Debug, Clone, PartialEq)]
struct JointPolys {
    coeffs: Vec<Vec<f64>>,
    t0: f64,
    duration: f64,
}

impl JointPolys {
    fn end(&self) -> f64 {
        self.t0 + self.duration
    }

    fn eval(&self, t: f64) -> (ExtendedConfiguration, Vec<f64>) {
        let tau = t - self.t0;
        let n = self.coeffs.len();
        let mut q = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut j = Vec::with_capacity(n);
        for c in &self.coeffs {
            let [pp, vv, aa, jj] = eval_poly(c, tau);
            q.push(pp);
            v.push(vv);
            a.push(aa);
            j.push(jj);
        }
        (
            ExtendedConfiguration {
                q: Configuration(q),
                q_dot: v,
                q_ddot: a,
            },
            j,
        )
    }

    fn position(&self, t: f64) -> Configuration {
        let tau = t - self.t0;
        Configuration(
            self.coeffs
                .iter()
                .map(|c| c.iter().rev().fold(0.0, |acc, ck| acc * tau + ck))
                .collect(),
        )
    }
}

/// Degree-5 polynomial per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct QuinticSpline {
    polys: JointPolys,
}

impl QuinticSpline {
    /// Spline meeting the six boundary conditions over `duration`.
    pub fn from_boundary(x0: &ExtendedConfiguration, qf: &[f64], vf: &[f64], af: &[f64], duration: f64) -> Self {
        let t = duration;
        let coeffs = (0..x0.dim())
            .map(|i| {
                let q0 = x0.q[i];
                let v0 = x0.q_dot[i];
                let a0 = x0.q_ddot[i];
                let dq = qf[i] - q0;
                let (vf, af) = (vf[i], af[i]);
                let c3 = (20.0 * dq - (8.0 * vf + 12.0 * v0) * t - (3.0 * a0 - af) * t * t) / (2.0 * t.powi(3));
                let c4 = (-30.0 * dq + (14.0 * vf + 16.0 * v0) * t + (3.0 * a0 - 2.0 * af) * t * t) / (2.0 * t.powi(4));
                let c5 = (12.0 * dq - 6.0 * (vf + v0) * t - (a0 - af) * t * t) / (2.0 * t.powi(5));
                vec![q0, v0, 0.5 * a0, c3, c4, c5]
            })
            .collect();
        QuinticSpline {
            polys: JointPolys {
                coeffs,
                t0: 0.0,
                duration,
            },
        }
    }

    pub fn constant(q: &Configuration, duration: f64) -> Self {
        QuinticSpline {
            polys: JointPolys {
                coeffs: q.iter().map(|x| vec![*x, 0.0, 0.0, 0.0, 0.0, 0.0]).collect(),
                t0: 0.0,
                duration,
            },
        }
    }

    pub fn coefficients(&self, joint: usize) -> &[f64] {
        &self.polys.coeffs[joint]
    }

    pub fn t0(&self) -> f64 {
        self.polys.t0
    }

    pub fn t_f(&self) -> f64 {
        self.polys.end()
    }

    pub fn duration(&self) -> f64 {
        self.polys.duration
    }

    pub fn final_position(&self) -> Configuration {
        self.polys.position(self.t_f())
    }
}

/// Degree-4 stopping polynomial per joint; ends with zero velocity and
/// acceleration at `q_stop`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuarticSpline {
    polys: JointPolys,
    q_stop: Configuration,
}

impl QuarticSpline {
    pub fn from_state(x0: &ExtendedConfiguration, duration: f64) -> Self {
        let t = duration;
        let coeffs: Vec<Vec<f64>> = (0..x0.dim())
            .map(|i| {
                let v0 = x0.q_dot[i];
                let a0 = x0.q_ddot[i];
                let c3 = -v0 / (t * t) - 2.0 * a0 / (3.0 * t);
                let c4 = v0 / (2.0 * t.powi(3)) + a0 / (4.0 * t * t);
                vec![x0.q[i], v0, 0.5 * a0, c3, c4]
            })
            .collect();
        let q_stop = Configuration(
            (0..x0.dim())
                .map(|i| x0.q[i] + 0.5 * x0.q_dot[i] * t + x0.q_ddot[i] * t * t / 12.0)
                .collect(),
        );
        QuarticSpline {
            polys: JointPolys {
                coeffs,
                t0: 0.0,
                duration,
            },
            q_stop,
        }
    }

    pub fn q_stop(&self) -> &Configuration {
        &self.q_stop
    }

    pub fn t0(&self) -> f64 {
        self.polys.t0
    }

    pub fn duration(&self) -> f64 {
        self.polys.duration
    }

    pub fn end(&self) -> f64 {
        self.polys.end()
    }

    fn shifted(mut self, t0: f64) -> Self {
        self.polys.t0 = t0;
        self
    }
}

/// Quintic head on `[t0, t_new]` followed by an emergency tail.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeSpline {
    pub head: QuinticSpline,
    pub t_new: f64,
    pub tail: QuarticSpline,
}

impl CompositeSpline {
    pub fn q_stop(&self) -> &Configuration {
        self.tail.q_stop()
    }
}

/// Any trajectory the planner can execute.
#[derive(Debug, Clone, PartialEq)]
pub enum Spline {
    Quintic(QuinticSpline),
    Quartic(QuarticSpline),
    Composite(CompositeSpline),
}

impl Spline {
    pub fn start_time(&self) -> f64 {
        match self {
            Spline::Quintic(s) => s.t0(),
            Spline::Quartic(s) => s.t0(),
            Spline::Composite(s) => s.head.t0(),
        }
    }

    pub fn end_time(&self) -> f64 {
        match self {
            Spline::Quintic(s) => s.t_f(),
            Spline::Quartic(s) => s.end(),
            Spline::Composite(s) => s.tail.end(),
        }
    }

    /// Interior times that discretization must include.
    pub fn mandatory_times(&self) -> Vec<f64> {
        match self {
            Spline::Composite(c) => vec![c.t_new],
            _ => Vec::new(),
        }
    }

    fn piece(&self, t: f64) -> &JointPolys {
        match self {
            Spline::Quintic(s) => &s.polys,
            Spline::Quartic(s) => &s.polys,
            Spline::Composite(c) => {
                if t <= c.t_new {
                    &c.head.polys
                } else {
                    &c.tail.polys
                }
            }
        }
    }

    /// State at `t`; times past the end return the final state.
    pub fn state_clamped(&self, t: f64) -> ExtendedConfiguration {
        let t = t.clamp(self.start_time(), self.end_time());
        self.piece(t).eval(t).0
    }

    pub fn position_clamped(&self, t: f64) -> Configuration {
        let t = t.clamp(self.start_time(), self.end_time());
        self.piece(t).position(t)
    }

    /// State and jerk at `t`, or `OutOfDomain`.
    pub fn evaluate_with_jerk(&self, t: f64) -> Result<(ExtendedConfiguration, Vec<f64>)> {
        let (start, end) = (self.start_time(), self.end_time());
        let eps = 1e-12 * (1.0 + end.abs());
        if t < start - eps || t > end + eps {
            return Err(Error::OutOfDomain { t, start, end });
        }
        let t = t.clamp(start, end);
        Ok(self.piece(t).eval(t))
    }

    pub fn final_position(&self) -> Configuration {
        self.position_clamped(self.end_time())
    }

    /// Final state is at rest (true for quartic stops and composites).
    pub fn ends_at_rest(&self) -> bool {
        self.state_clamped(self.end_time()).is_at_rest(1e-9)
    }

    /// Sampling grid `start, start + dt, ...`, always including the end
    /// and any mandatory interior times.
    pub fn grid(&self, dt: f64) -> Vec<f64> {
        sample_times(self.start_time(), self.end_time(), dt, &self.mandatory_times())
    }
}

pub(crate) fn sample_times(start: f64, end: f64, dt: f64, mandatory: &[f64]) -> Vec<f64> {
    let mut times = Vec::new();
    let mut k = 0u64;
    loop {
        let t = start + k as f64 * dt;
        if t >= end - 1e-12 {
            break;
        }
        times.push(t);
        k += 1;
    }
    times.push(end);
    if !mandatory.is_empty() {
        for &m in mandatory {
            if m > start && m < end && !times.iter().any(|t| (t - m).abs() <= 1e-12) {
                times.push(m);
            }
        }
        times.sort_by(|a, b| a.total_cmp(b));
    }
    times
}

/// State of a spline at `t`.
pub fn evaluate(spline: &Spline, t: f64) -> Result<ExtendedConfiguration> {
    spline.evaluate_with_jerk(t).map(|(x, _)| x)
}

/// Velocity, acceleration and jerk bounds hold at every grid sample.
pub fn check_limits(spline: &Spline, limits: &KinematicLimits, dt: f64) -> bool {
    spline.grid(dt).into_iter().all(|t| {
        let (x, jerk) = spline.piece(t).eval(t);
        (0..x.dim()).all(|i| {
            within(x.q_dot[i], limits.omega_max[i])
                && within(x.q_ddot[i], limits.alpha_max[i])
                && within(jerk[i], limits.jerk_max[i])
        })
    })
}

fn state_within_limits(x: &ExtendedConfiguration, limits: &KinematicLimits) -> bool {
    (0..x.dim()).all(|i| within(x.q_dot[i], limits.omega_max[i]) && within(x.q_ddot[i], limits.alpha_max[i]))
}

const GROWTH: f64 = 1.2;
const MAX_GROWTH_STEPS: usize = 80;
/// Longest duration tried before a fit is declared infeasible, seconds.
pub const MAX_SPLINE_DURATION: f64 = 10.0;
const BISECTION_TOL: f64 = 1e-4;

/// Smallest duration on the ×1.2 grid/bisection search for which `make`
/// yields a spline within limits.
fn minimal_duration<F>(lower_bound: f64, dt: f64, limits: &KinematicLimits, make: F) -> Option<(f64, Spline)>
where
    F: Fn(f64) -> Spline,
{
    let feasible = |t: f64| {
        let s = make(t);
        if check_limits(&s, limits, dt) {
            Some(s)
        } else {
            None
        }
    };
    let floor = dt;
    let mut t = lower_bound.max(floor);
    let (mut lo, mut hi, mut best);
    if let Some(s) = feasible(t) {
        // shrink while feasible; the analytic bound is only exact from rest
        hi = t;
        best = s;
        lo = floor;
        while hi > floor {
            let cand = (hi / GROWTH).max(floor);
            match feasible(cand) {
                Some(s) => {
                    hi = cand;
                    best = s;
                }
                None => {
                    lo = cand;
                    break;
                }
            }
        }
        if hi <= floor {
            return Some((hi, best));
        }
    } else {
        lo = t;
        let mut found = None;
        for _ in 0..MAX_GROWTH_STEPS {
            if t >= MAX_SPLINE_DURATION {
                break;
            }
            t = (t * GROWTH).min(MAX_SPLINE_DURATION);
            if let Some(s) = feasible(t) {
                found = Some(s);
                break;
            }
            lo = t;
        }
        best = found?;
        hi = t;
    }
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        match feasible(mid) {
            Some(s) => {
                hi = mid;
                best = s;
            }
            None => lo = mid,
        }
    }
    Some((hi, best))
}

/// Shortest rest-to-rest quintic duration from `q0` to `qf`: the largest of
/// the per-joint velocity, acceleration and jerk bounds.
pub fn rest_to_rest_duration(q0: &Configuration, qf: &Configuration, limits: &KinematicLimits) -> f64 {
    let mut t: f64 = 0.0;
    for i in 0..q0.dim() {
        let dq = (qf[i] - q0[i]).abs();
        t = t
            .max(15.0 * dq / (8.0 * limits.omega_max[i]))
            .max((10.0 * 3f64.sqrt() / 3.0 * dq / limits.alpha_max[i]).sqrt())
            .max((60.0 * dq / limits.jerk_max[i]).cbrt());
    }
    t
}

/// Shortest quintic from `x0` to `qf` arriving with velocity `vf` and
/// zero acceleration. `dt` is the limit-checking grid and the minimal
/// allowed duration.
pub fn fit_quintic(
    x0: &ExtendedConfiguration,
    qf: &Configuration,
    vf: &[f64],
    limits: &KinematicLimits,
    dt: f64,
) -> Result<QuinticSpline> {
    if !x0.is_finite() || !qf.is_finite() {
        return Err(Error::Infeasible("non-finite boundary state".into()));
    }
    if !state_within_limits(x0, limits) {
        return Err(Error::Infeasible("initial state exceeds the kinematic limits".into()));
    }
    let n = x0.dim();
    let zero = vec![0.0; n];
    if rho(&x0.q, qf) == 0.0 && x0.is_at_rest(0.0) && vf.iter().all(|v| *v == 0.0) {
        return Ok(QuinticSpline::constant(qf, dt));
    }
    let lb = rest_to_rest_duration(&x0.q, qf, limits);
    let make = |t: f64| Spline::Quintic(QuinticSpline::from_boundary(x0, qf, vf, &zero, t));
    if x0.is_at_rest(0.0) && vf.iter().all(|v| *v == 0.0) {
        // rest-to-rest: the bound is the continuous optimum
        let s = make(lb.max(dt));
        if check_limits(&s, limits, dt) {
            if let Spline::Quintic(q) = s {
                return Ok(q);
            }
        }
    }
    match minimal_duration(lb, dt, limits, make) {
        Some((_, Spline::Quintic(s))) => Ok(s),
        _ => Err(Error::Infeasible("no quintic duration satisfies the limits".into())),
    }
}

/// Final velocity toward `q_next`: along the motion direction with
/// magnitude `min(‖ω_max‖, ρ(q_curr, q_next) / period)`, scaled down if a
/// component would exceed its joint bound.
pub fn estimate_final_velocity(
    q_curr: &Configuration,
    q_next: &Configuration,
    limits: &KinematicLimits,
    period: f64,
) -> Vec<f64> {
    let dist = rho(q_curr, q_next);
    let n = q_curr.dim();
    if dist == 0.0 {
        return vec![0.0; n];
    }
    let mag = limits.omega_norm().min(dist / period);
    let mut v: Vec<f64> = (0..n).map(|i| (q_next[i] - q_curr[i]) / dist * mag).collect();
    let scale = (0..n)
        .map(|i| limits.omega_max[i] / v[i].abs())
        .fold(1.0f64, f64::min);
    if scale < 1.0 {
        v.iter_mut().for_each(|x| *x *= scale);
    }
    v
}

/// Shortest quartic that brings `x_new` to rest.
pub fn fit_emergency_quartic(x_new: &ExtendedConfiguration, limits: &KinematicLimits, dt: f64) -> Result<QuarticSpline> {
    if !x_new.is_finite() {
        return Err(Error::Infeasible("non-finite state".into()));
    }
    if !state_within_limits(x_new, limits) {
        return Err(Error::Infeasible("state exceeds the kinematic limits".into()));
    }
    if x_new.is_at_rest(0.0) {
        return Ok(QuarticSpline::from_state(x_new, dt));
    }
    let mut lb: f64 = 0.0;
    for i in 0..x_new.dim() {
        lb = lb.max(1.5 * x_new.q_dot[i].abs() / limits.alpha_max[i]);
    }
    let make = |t: f64| Spline::Quartic(QuarticSpline::from_state(x_new, t));
    match minimal_duration(lb, dt, limits, make) {
        Some((_, Spline::Quartic(s))) => Ok(s),
        _ => Err(Error::Infeasible("no stopping duration satisfies the limits".into())),
    }
}

/// Truncates `head` at `t_new` and appends the shortest stop from there.
pub fn build_composite(head: QuinticSpline, t_new: f64, limits: &KinematicLimits, dt: f64) -> Result<CompositeSpline> {
    let x = head.polys.eval(t_new).0;
    let tail = fit_emergency_quartic(&x, limits, dt)?.shifted(t_new);
    Ok(CompositeSpline { head, t_new, tail })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rest(q: Vec<f64>) -> ExtendedConfiguration {
        ExtendedConfiguration::at_rest(Configuration(q))
    }

    #[test]
    fn smoothstep_coefficients() {
        let s = QuinticSpline::from_boundary(&rest(vec![0.0]), &[1.0], &[0.0], &[0.0], 1.0);
        let c = s.coefficients(0);
        for (got, want) in c.iter().zip([0.0, 0.0, 0.0, 10.0, -15.0, 6.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        let mid = evaluate(&Spline::Quintic(s), 0.5).unwrap();
        assert_abs_diff_eq!(mid.q[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(mid.q_dot[0], 1.875, epsilon = 1e-12);
    }

    #[test]
    fn identity_motion_uses_minimal_step() {
        let limits = KinematicLimits::uniform(2, 1.0, 1.0, 1.0);
        let x0 = rest(vec![0.3, -0.2]);
        let s = fit_quintic(&x0, &x0.q, &[0.0, 0.0], &limits, 1e-3).unwrap();
        assert_eq!(s.duration(), 1e-3);
        assert_eq!(s.final_position(), x0.q);
    }

    #[test]
    fn velocity_bound_sets_duration() {
        let limits = KinematicLimits::uniform(1, 1.875, 1e3, 1e5);
        let s = fit_quintic(&rest(vec![0.0]), &Configuration(vec![1.0]), &[0.0], &limits, 1e-3).unwrap();
        assert!((s.duration() - 1.0).abs() < 2e-4, "{}", s.duration());
    }

    #[test]
    fn infeasible_initial_state() {
        let limits = KinematicLimits::uniform(1, 1.0, 1.0, 1.0);
        let x0 = ExtendedConfiguration {
            q: Configuration(vec![0.0]),
            q_dot: vec![2.0],
            q_ddot: vec![0.0],
        };
        assert!(matches!(
            fit_quintic(&x0, &Configuration(vec![1.0]), &[0.0], &limits, 1e-3),
            Err(Error::Infeasible(_))
        ));
        assert!(fit_emergency_quartic(&x0, &limits, 1e-3).is_err());
    }

    #[test]
    fn evaluate_outside_domain() {
        let s = Spline::Quintic(QuinticSpline::constant(&Configuration(vec![0.0]), 0.5));
        assert!(matches!(evaluate(&s, 0.6), Err(Error::OutOfDomain { .. })));
        assert!(evaluate(&s, -0.1).is_err());
        assert!(evaluate(&s, 0.5).is_ok());
    }

    #[test]
    fn final_velocity_estimate() {
        let limits = KinematicLimits::uniform(2, 1.0, 10.0, 100.0);
        let q = Configuration(vec![0.0, 0.0]);
        assert_eq!(estimate_final_velocity(&q, &q, &limits, 0.05), vec![0.0, 0.0]);
        let far = Configuration(vec![3.0, 4.0]);
        let v = estimate_final_velocity(&q, &far, &limits, 0.05);
        // ‖ω‖ = √2 < 5 / 0.05, direction (0.6, 0.8); 0.8·√2 > 1 so rescaled
        let expected_scale = 1.0 / (0.8 * 2f64.sqrt());
        assert_abs_diff_eq!(v[0], 0.6 * 2f64.sqrt() * expected_scale, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 1.0, epsilon = 1e-12);
        let near = Configuration(vec![0.003, 0.004]);
        let v = estimate_final_velocity(&q, &near, &limits, 0.05);
        assert_abs_diff_eq!(v[0], 0.6 * 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 0.8 * 0.1, epsilon = 1e-12);
    }

    #[test]
    fn stop_from_rest() {
        let limits = KinematicLimits::xarm6();
        let x = rest(vec![0.1; 6]);
        let s = fit_emergency_quartic(&x, &limits, 1e-3).unwrap();
        assert_eq!(s.q_stop(), &x.q);
        assert_eq!(s.duration(), 1e-3);
    }

    #[test]
    fn composite_is_c2_at_junction() {
        let limits = KinematicLimits::uniform(2, 3.0, 20.0, 500.0);
        let head = fit_quintic(&rest(vec![0.0, 0.0]), &Configuration(vec![1.0, -0.5]), &[0.0, 0.0], &limits, 1e-3).unwrap();
        let t_new = 0.3 * head.duration();
        let comp = Spline::Composite(build_composite(head, t_new, &limits, 1e-3).unwrap());
        let before = comp.piece(t_new).eval(t_new).0;
        let after = match &comp {
            Spline::Composite(c) => c.tail.polys.eval(t_new).0,
            _ => unreachable!(),
        };
        for i in 0..2 {
            assert_abs_diff_eq!(before.q[i], after.q[i], epsilon = 1e-9);
            assert_abs_diff_eq!(before.q_dot[i], after.q_dot[i], epsilon = 1e-9);
            assert_abs_diff_eq!(before.q_ddot[i], after.q_ddot[i], epsilon = 1e-9);
        }
        assert!(comp.ends_at_rest());
        assert!(check_limits(&comp, &limits, 1e-3));
        assert!(comp.grid(1e-3).iter().any(|t| (*t - t_new).abs() < 1e-12));
    }
}
