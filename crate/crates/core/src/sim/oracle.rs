//! Discrete collision checking of robot and obstacle motion.

use serde::{Deserialize, Serialize};

use crate::kinematics::{fk_unchecked, ChainModel};
use crate::trajectory::Spline;

use super::env::{Contact, Environment};

/// Contact while the robot moves (type I) or while it is at rest (type II).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollisionKind {
    TypeI,
    TypeII,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Collision {
    pub kind: CollisionKind,
    /// Seconds after the start of the checked segment.
    pub time: f64,
    pub self_collision: bool,
}

/// Joint-speed norm below which the robot counts as stopped.
pub const REST_SPEED: f64 = 1e-6;

/// Moves the robot along `traj` from `t_from` for `duration` seconds and
/// the obstacles along their velocities, checking on a shared grid of
/// step `dt_check`. Returns the first contact.
pub fn is_valid_motion(
    model: &ChainModel,
    traj: &Spline,
    t_from: f64,
    duration: f64,
    env: &Environment,
    dt_check: f64,
) -> Option<Collision> {
    let steps = (duration / dt_check - 1e-9).ceil().max(0.0) as usize;
    let mut world = env.clone();
    let mut elapsed = 0.0;
    for k in 0..=steps {
        let tau = if k == steps { duration } else { k as f64 * dt_check };
        if tau > elapsed {
            world.advance(tau - elapsed);
            elapsed = tau;
        }
        let x = traj.state_clamped(t_from + tau);
        let pose = fk_unchecked(model, &x.q);
        let contact = world.contact(&pose);
        if contact != Contact::Free {
            let kind = if x.speed() > REST_SPEED {
                CollisionKind::TypeI
            } else {
                CollisionKind::TypeII
            };
            return Some(Collision {
                kind,
                time: tau,
                self_collision: contact == Contact::SelfCollision,
            });
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cspace::{Configuration, ExtendedConfiguration};
    use crate::geometry::{Aabb, Point, Vector};
    use crate::trajectory::{fit_quintic, QuinticSpline};

    fn setup() -> (ChainModel, Environment) {
        (ChainModel::planar(2, 1.0, 0.05), Environment::empty(Point::origin(), 3.0, 1.0))
    }

    #[test]
    fn empty_environment_is_valid() {
        let (m, e) = setup();
        let traj = Spline::Quintic(QuinticSpline::constant(&Configuration(vec![0.0, 0.0]), 1.0));
        assert!(is_valid_motion(&m, &traj, 0.0, 0.5, &e, 1e-3).is_none());
    }

    #[test]
    fn crossing_obstacle_hits_moving_robot() {
        let (m, mut e) = setup();
        // box sweeps down through the straight arm near the tip
        e.obstacles.push(Aabb::new(Point::new(1.5, 0.5, 0.0), Vector::repeat(0.05)).with_velocity(Vector::new(0.0, -1.0, 0.0)));
        let x0 = ExtendedConfiguration::at_rest(Configuration(vec![0.0, 0.0]));
        let traj = Spline::Quintic(fit_quintic(&x0, &Configuration(vec![0.05, 0.0]), &[0.0, 0.0], &m.kinematic_limits, 1e-3).unwrap());
        let hit = is_valid_motion(&m, &traj, 0.0, 0.5, &e, 1e-3).unwrap();
        assert!(hit.time > 0.3 && hit.time < 0.45, "{hit:?}");
        // a coarser grid on the same family never reports an earlier contact
        let coarse = is_valid_motion(&m, &traj, 0.0, 0.5, &e, 1e-2);
        assert!(coarse.is_none_or(|c| c.time >= hit.time - 1e-12));
        let still = Spline::Quintic(QuinticSpline::constant(&Configuration(vec![0.0, 0.0]), 0.01));
        assert_eq!(is_valid_motion(&m, &still, 0.0, 0.5, &e, 1e-3).unwrap().kind, CollisionKind::TypeII);
    }
}
