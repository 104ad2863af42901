//! Bidirectional tree planner whose extension primitive is the generalized
//! bubble spine. Used to (re)compute the predefined path against a frozen
//! obstacle snapshot.

use kdtree::distance::squared_euclidean;
use kdtree::KdTree;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bubbles::extend_generalized_spine;
use crate::cspace::{interpolate, rho, sample_uniform, Configuration};
use crate::kinematics::{fk_unchecked, self_collision, ChainModel};
use crate::scheduler::BudgetClock;
use crate::sim::env::Environment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplannerParams {
    /// Bubble layers per extension.
    pub k_spine: usize,
    pub goal_bias: f64,
    /// Extensions attempted per connect call.
    pub max_connect_steps: usize,
    /// Edge sampling step for self-collision checks, radians.
    pub edge_resolution: f64,
}

impl Default for ReplannerParams {
    fn default() -> Self {
        ReplannerParams {
            k_spine: 5,
            goal_bias: 0.1,
            max_connect_steps: 50,
            edge_resolution: 0.005,
        }
    }
}

const BRUTE_FORCE_BELOW: usize = 64;

struct Tree {
    nodes: Vec<Configuration>,
    parent: Vec<Option<usize>>,
    index: KdTree<f64, usize, Vec<f64>>,
}

impl Tree {
    fn new(root: Configuration) -> Self {
        let mut t = Tree {
            nodes: Vec::new(),
            parent: Vec::new(),
            index: KdTree::new(root.dim()),
        };
        t.add(root, None);
        t
    }

    fn add(&mut self, q: Configuration, parent: Option<usize>) -> usize {
        let id = self.nodes.len();
        // finite coordinates are guaranteed by construction
        let _ = self.index.add(q.0.clone(), id);
        self.nodes.push(q);
        self.parent.push(parent);
        id
    }

    fn nearest(&self, q: &Configuration) -> usize {
        if self.nodes.len() < BRUTE_FORCE_BELOW {
            let mut best = (0, f64::INFINITY);
            for (k, n) in self.nodes.iter().enumerate() {
                let d = rho(n, q);
                if d < best.1 {
                    best = (k, d);
                }
            }
            return best.0;
        }
        match self.index.nearest(&q.0, 1, &squared_euclidean) {
            Ok(v) if !v.is_empty() => *v[0].1,
            _ => 0,
        }
    }

    fn branch(&self, mut id: usize) -> Vec<Configuration> {
        let mut out = vec![self.nodes[id].clone()];
        while let Some(p) = self.parent[id] {
            out.push(self.nodes[p].clone());
            id = p;
        }
        out
    }
}

enum Extend {
    Trapped,
    Advanced(usize),
    Reached(usize),
}

struct Planner<'a> {
    model: &'a ChainModel,
    env: &'a Environment,
    params: &'a ReplannerParams,
}

impl Planner<'_> {
    fn edge_free(&self, a: &Configuration, b: &Configuration) -> bool {
        if self.model.dof() < 3 {
            return true;
        }
        let steps = (rho(a, b) / self.params.edge_resolution).ceil().max(1.0) as usize;
        (1..=steps).all(|k| !self_collision(&fk_unchecked(self.model, &interpolate(a, b, k as f64 / steps as f64))))
    }

    fn extend(&self, tree: &mut Tree, target: &Configuration) -> Extend {
        let near = tree.nearest(target);
        let q_near = tree.nodes[near].clone();
        let pose = fk_unchecked(self.model, &q_near);
        let (d, planes) = self.env.distance_profile(&pose, None);
        if !d.all_positive() {
            return Extend::Trapped;
        }
        let q_new = extend_generalized_spine(
            &q_near,
            target,
            &d,
            &planes,
            |q| fk_unchecked(self.model, q),
            self.env.d_max(),
            self.params.k_spine,
        );
        if rho(&q_new, &q_near) < 1e-6 || !self.edge_free(&q_near, &q_new) {
            return Extend::Trapped;
        }
        let reached = rho(&q_new, target) <= 1e-12;
        let id = tree.add(q_new, Some(near));
        if reached {
            Extend::Reached(id)
        } else {
            Extend::Advanced(id)
        }
    }

    /// True when a single generalized spine from `a` reaches `b`.
    fn direct(&self, a: &Configuration, b: &Configuration) -> bool {
        let pose = fk_unchecked(self.model, a);
        let (d, planes) = self.env.distance_profile(&pose, None);
        if !d.all_positive() {
            return false;
        }
        let q = extend_generalized_spine(
            a,
            b,
            &d,
            &planes,
            |q| fk_unchecked(self.model, q),
            self.env.d_max(),
            self.params.k_spine,
        );
        rho(&q, b) <= 1e-12 && self.edge_free(a, b)
    }

    /// Greedily skips intermediate nodes while the budget lasts.
    fn shortcut(&self, path: Vec<Configuration>, clock: &mut BudgetClock) -> Vec<Configuration> {
        let mut out = vec![path[0].clone()];
        let mut i = 0;
        while i + 1 < path.len() {
            let mut next = i + 1;
            for j in (i + 2..path.len()).rev() {
                if !clock.checkpoint() {
                    out.extend(path[i + 1..].iter().cloned());
                    return out;
                }
                if self.direct(&path[i], &path[j]) {
                    next = j;
                    break;
                }
            }
            out.push(path[next].clone());
            i = next;
        }
        out
    }

    fn connect(&self, tree: &mut Tree, target: &Configuration, clock: &mut BudgetClock) -> Option<usize> {
        for _ in 0..self.params.max_connect_steps {
            if !clock.checkpoint() {
                return None;
            }
            match self.extend(tree, target) {
                Extend::Reached(id) => return Some(id),
                Extend::Advanced(_) => {}
                Extend::Trapped => return None,
            }
        }
        None
    }
}

/// Searches a path from `q_start` to `q_goal` against the frozen `env`
/// until `clock` expires. Each extension grows a chain of up to `k_spine`
/// bubbles toward a random or goal-biased target.
pub fn replan<R: Rng + ?Sized>(
    model: &ChainModel,
    q_start: &Configuration,
    q_goal: &Configuration,
    env: &Environment,
    params: &ReplannerParams,
    clock: &mut BudgetClock,
    rng: &mut R,
) -> Option<Vec<Configuration>> {
    let planner = Planner { model, env, params };
    let limits = model.joint_limits();
    let mut trees = [Tree::new(q_start.clone()), Tree::new(q_goal.clone())];
    // index of the tree rooted at the start
    let mut a = 0;
    loop {
        if !clock.checkpoint() {
            return None;
        }
        let b = 1 - a;
        let target = if rng.random::<f64>() < params.goal_bias {
            trees[b].nodes[0].clone()
        } else {
            sample_uniform(&limits, rng)
        };
        let new_id = match planner.extend(&mut trees[a], &target) {
            Extend::Trapped => None,
            Extend::Advanced(id) | Extend::Reached(id) => Some(id),
        };
        if let Some(id) = new_id {
            let q_new = trees[a].nodes[id].clone();
            let (ta, tb) = if a == 0 {
                let (x, y) = trees.split_at_mut(1);
                (&mut x[0], &mut y[0])
            } else {
                let (x, y) = trees.split_at_mut(1);
                (&mut y[0], &mut x[0])
            };
            if let Some(joint) = planner.connect(tb, &q_new, clock) {
                let mut from_a = ta.branch(id);
                from_a.reverse();
                let from_b = tb.branch(joint);
                // the connection node appears in both branches
                from_a.extend(from_b.into_iter().skip(1));
                if a == 1 {
                    from_a.reverse();
                }
                return Some(planner.shortcut(from_a, clock));
            }
        }
        a = 1 - a;
    }
}
