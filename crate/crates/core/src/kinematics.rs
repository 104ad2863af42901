//! Serial revolute chains: forward kinematics, link capsules, enclosing
//! radii and self-collision.

use std::path::Path;

use nalgebra::{Isometry3, Translation3, Unit, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::cspace::{Configuration, JointLimits};
use crate::error::{Error, Result};
use crate::geometry::{distance_capsule_capsule, Capsule, Point, Vector};
use crate::trajectory::KinematicLimits;

/// One revolute joint. The joint frame is placed at `origin_xyz` /
/// `origin_rpy` relative to the previous joint frame (after its rotation);
/// the joint rotates about `axis` expressed in its own frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub origin_xyz: [f64; 3],
    #[serde(default)]
    pub origin_rpy: [f64; 3],
    pub axis: [f64; 3],
    pub lower: f64,
    pub upper: f64,
    /// Radius of the capsule covering the link that starts at this joint.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainModel {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub base: [f64; 3],
    pub base_radius: f64,
    /// End of the last link, in the last joint frame.
    pub tip: [f64; 3],
    pub joints: Vec<JointSpec>,
    pub kinematic_limits: KinematicLimits,
}

impl ChainModel {
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joint_limits(&self) -> JointLimits {
        JointLimits(self.joints.iter().map(|j| (j.lower, j.upper)).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::InvalidModel("chain needs at least one joint".into()));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if !(j.lower < j.upper) {
                return Err(Error::InvalidModel(format!("joint {i}: lower limit must be below upper")));
            }
            if !(j.radius > 0.0) || !j.radius.is_finite() {
                return Err(Error::InvalidModel(format!("joint {i}: capsule radius must be positive")));
            }
            let a = Vector::from(j.axis);
            if !(a.norm() > 1e-9) {
                return Err(Error::InvalidModel(format!("joint {i}: zero axis")));
            }
        }
        if !(self.base_radius >= 0.0) {
            return Err(Error::InvalidModel("base radius must be nonnegative".into()));
        }
        self.kinematic_limits.validate()?;
        if self.kinematic_limits.dim() != self.dof() {
            return Err(Error::InvalidModel(format!(
                "kinematic limits given for {} joints, chain has {}",
                self.kinematic_limits.dim(),
                self.dof()
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let model: ChainModel = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn check_limits(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        for (i, (x, j)) in q.iter().zip(&self.joints).enumerate() {
            if !(*x >= j.lower && *x <= j.upper) {
                return Err(Error::JointLimitViolation {
                    joint: i,
                    value: *x,
                    lower: j.lower,
                    upper: j.upper,
                });
            }
        }
        Ok(())
    }

    /// Planar chain of `n` links of length `len`, all joints about z.
    pub fn planar(n: usize, len: f64, radius: f64) -> Self {
        let joints = (0..n)
            .map(|i| JointSpec {
                origin_xyz: if i == 0 { [0.0; 3] } else { [len, 0.0, 0.0] },
                origin_rpy: [0.0; 3],
                axis: [0.0, 0.0, 1.0],
                lower: -std::f64::consts::PI,
                upper: std::f64::consts::PI,
                radius,
            })
            .collect();
        ChainModel {
            name: format!("planar{n}"),
            base: [0.0; 3],
            base_radius: radius,
            tip: [len, 0.0, 0.0],
            joints,
            kinematic_limits: KinematicLimits::uniform(n, std::f64::consts::PI, 20.0, 500.0),
        }
    }

    /// Six-axis arm with link lengths and capsule radii in the proportions
    /// of a small collaborative robot.
    pub fn xarm6_like() -> Self {
        use std::f64::consts::PI;
        let j = |xyz: [f64; 3], axis: [f64; 3], lower: f64, upper: f64, radius: f64| JointSpec {
            origin_xyz: xyz,
            origin_rpy: [0.0; 3],
            axis,
            lower,
            upper,
            radius,
        };
        ChainModel {
            name: "xarm6-like".into(),
            base: [0.0; 3],
            base_radius: 0.2,
            tip: [0.10, 0.0, 0.0],
            joints: vec![
                j([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], -PI, PI, 0.06),
                j([0.0, 0.0, 0.267], [0.0, 1.0, 0.0], -2.059, 2.0944, 0.05),
                j([0.0, 0.0, 0.29], [0.0, 1.0, 0.0], -3.927, 0.19198, 0.045),
                j([0.20, 0.0, 0.0], [1.0, 0.0, 0.0], -PI, PI, 0.04),
                j([0.15, 0.0, 0.0], [0.0, 1.0, 0.0], -1.69297, PI, 0.035),
                j([0.10, 0.0, 0.0], [1.0, 0.0, 0.0], -PI, PI, 0.03),
            ],
            kinematic_limits: KinematicLimits::xarm6(),
        }
    }
}

/// Joint origins, joint axes and link capsules at one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotPose {
    pub q: Configuration,
    /// `n + 1` points: joint origins followed by the tip.
    pub skeleton: Vec<Point>,
    /// World-frame unit axis of every joint.
    pub axes: Vec<Vector>,
    pub link_capsules: Vec<Capsule>,
}

/// Forward kinematics; rejects configurations outside the joint limits.
pub fn forward_kinematics(model: &ChainModel, q: &Configuration) -> Result<RobotPose> {
    model.check_limits(q)?;
    Ok(fk_unchecked(model, q))
}

/// Forward kinematics without the limit check (dimension still asserted).
pub fn fk_unchecked(model: &ChainModel, q: &[f64]) -> RobotPose {
    assert_eq!(q.len(), model.dof(), "configuration dimension");
    let n = model.dof();
    let mut frame = Isometry3::from_parts(Translation3::from(Vector::from(model.base)), UnitQuaternion::identity());
    let mut skeleton = Vec::with_capacity(n + 1);
    let mut axes = Vec::with_capacity(n);
    for (spec, qi) in model.joints.iter().zip(q) {
        let [r, p, y] = spec.origin_rpy;
        frame *= Isometry3::from_parts(
            Translation3::from(Vector::from(spec.origin_xyz)),
            UnitQuaternion::from_euler_angles(r, p, y),
        );
        let axis = Unit::new_normalize(Vector::from(spec.axis));
        skeleton.push(Point::from(frame.translation.vector));
        axes.push(frame.rotation * axis.into_inner());
        frame *= UnitQuaternion::from_axis_angle(&axis, *qi);
    }
    skeleton.push(frame * Point::from(model.tip));
    let link_capsules = (0..n)
        .map(|i| Capsule::new(skeleton[i], skeleton[i + 1], model.joints[i].radius))
        .collect();
    RobotPose {
        q: Configuration(q.to_vec()),
        skeleton,
        axes,
        link_capsules,
    }
}

/// Lower-triangular radii `r[i][j]`, `j <= i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnclosingRadii {
    pub r: Vec<Vec<f64>>,
}

impl EnclosingRadii {
    pub fn n(&self) -> usize {
        self.r.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.r[i][j]
    }

    /// `Σ_{j<=i} r_ij |delta_j|`
    pub fn displacement_bound(&self, i: usize, delta: &[f64]) -> f64 {
        self.r[i].iter().zip(delta).map(|(r, d)| r * d.abs()).sum()
    }
}

fn distance_to_axis(p: &Point, origin: &Point, axis: &Vector) -> f64 {
    let v = p - origin;
    (v - axis * axis.dot(&v)).norm()
}

/// Radius of the cylinder about joint `j` that contains links `j..=i`.
pub fn enclosing_radii(pose: &RobotPose) -> EnclosingRadii {
    let n = pose.link_capsules.len();
    let mut r = Vec::with_capacity(n);
    for i in 0..n {
        let row = (0..=i)
            .map(|j| {
                (j..=i)
                    .map(|k| {
                        let c = &pose.link_capsules[k];
                        let o = &pose.skeleton[j];
                        let a = &pose.axes[j];
                        distance_to_axis(&c.a, o, a).max(distance_to_axis(&c.b, o, a)) + c.radius
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        r.push(row);
    }
    EnclosingRadii { r }
}

/// Non-adjacent link capsules intersect.
pub fn self_collision(pose: &RobotPose) -> bool {
    let caps = &pose.link_capsules;
    for i in 0..caps.len() {
        for k in i + 2..caps.len() {
            if distance_capsule_capsule(&caps[i], &caps[k]) < 0.0 {
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn tip(model: &ChainModel, q: Vec<f64>) -> Point {
        *forward_kinematics(model, &Configuration(q)).unwrap().skeleton.last().unwrap()
    }

    #[test]
    fn planar_fk() {
        let m = ChainModel::planar(2, 1.0, 0.05);
        assert_abs_diff_eq!(tip(&m, vec![0.0, 0.0]), Point::new(2.0, 0.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(tip(&m, vec![FRAC_PI_2, 0.0]), Point::new(0.0, 2.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(tip(&m, vec![FRAC_PI_2, -FRAC_PI_2]), Point::new(1.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn limit_violation() {
        let m = ChainModel::planar(2, 1.0, 0.05);
        let err = forward_kinematics(&m, &Configuration(vec![4.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::JointLimitViolation { joint: 0, .. }));
    }

    fn zero_radius_planar() -> ChainModel {
        let mut m = ChainModel::planar(2, 1.0, 0.1);
        m.joints.iter_mut().for_each(|j| j.radius = 0.0);
        m
    }

    #[test]
    fn radii_of_straight_chain() {
        let m = zero_radius_planar();
        let r = enclosing_radii(&fk_unchecked(&m, &[0.0, 0.0]));
        assert_abs_diff_eq!(r.get(0, 0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.get(1, 0), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.get(1, 1), 1.0, epsilon = 1e-12);
        let inflated = enclosing_radii(&fk_unchecked(&ChainModel::planar(2, 1.0, 0.1), &[0.0, 0.0]));
        assert_abs_diff_eq!(inflated.get(1, 0), 2.1, epsilon = 1e-12);
        assert_abs_diff_eq!(inflated.get(1, 1), 1.1, epsilon = 1e-12);
    }

    #[test]
    fn radius_of_bent_chain_matches_sampling() {
        let m = zero_radius_planar();
        let pose = fk_unchecked(&m, &[0.0, FRAC_PI_2]);
        let r = enclosing_radii(&pose);
        assert_abs_diff_eq!(r.get(1, 0), 2f64.sqrt(), epsilon = 1e-12);
        // densest sampled point of link 2 from the joint-1 axis
        let best = (0..=1000)
            .map(|k| {
                let p = pose.link_capsules[1].point_at(k as f64 / 1000.0);
                (p.x * p.x + p.y * p.y).sqrt()
            })
            .fold(0.0, f64::max);
        assert_abs_diff_eq!(best, 2f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn self_collision_cases() {
        let m = ChainModel::planar(2, 1.0, 0.1);
        assert!(!self_collision(&fk_unchecked(&m, &[0.0, 3.1])));
        let m3 = ChainModel::planar(3, 1.0, 0.1);
        assert!(!self_collision(&fk_unchecked(&m3, &[0.0, 0.0, 0.0])));
        // second and third links fold back over the first
        let folded = fk_unchecked(&m3, &[0.0, PI - 0.05, PI - 0.05]);
        let d = distance_capsule_capsule(&folded.link_capsules[0], &folded.link_capsules[2]);
        assert!(d < 0.0);
        assert!(self_collision(&folded));
    }

    #[test]
    fn xarm_model_is_valid() {
        let m = ChainModel::xarm6_like();
        m.validate().unwrap();
        let pose = forward_kinematics(&m, &Configuration::zeros(6)).unwrap();
        assert_abs_diff_eq!(pose.skeleton[6], Point::new(0.55, 0.0, 0.557), epsilon = 1e-12);
        assert!(!self_collision(&pose));
    }

    #[test]
    fn toml_round_trip() {
        let m = ChainModel::xarm6_like();
        let text = toml::to_string(&m).unwrap();
        assert_eq!(ChainModel::from_toml_str(&text).unwrap(), m);
        let bad = text.replace("base_radius", "base_radius_typo");
        assert!(matches!(ChainModel::from_toml_str(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn fk_is_bitwise_deterministic() {
        let m = ChainModel::xarm6_like();
        let q = [0.3, -0.4, -1.0, 0.7, 0.2, -0.1];
        assert_eq!(fk_unchecked(&m, &q), fk_unchecked(&m, &q));
    }
}
