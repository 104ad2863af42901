//! Simulation harness: scenario generation, closed-loop runs and trials.

pub mod env;
pub mod oracle;
pub mod output;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bubbles::{deb_slice, SliceSample};
use crate::config::{BudgetConfig, Config};
use crate::cspace::{rho, sample_uniform, Configuration};
use crate::drgbt::{Drgbt, DrgbtParams, IterationOutcome, StepResult};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Point, Vector};
use crate::kinematics::{enclosing_radii, fk_unchecked, forward_kinematics, ChainModel};
use crate::replanner::{replan, ReplannerParams};
use crate::scheduler::{run_period, BudgetClock, IterationTiming, TaskBudget};
use crate::sim::env::{spawn_random_obstacles, Contact, Environment, SpawnParams};
use crate::sim::oracle::CollisionKind;

/// Rejections tolerated while sampling start and goal.
pub const MAX_SCENARIO_TRIES: usize = 10_000;

fn norm3(v: &[f64; 3]) -> f64 {
    Vector::from(*v).norm()
}

fn model_reach(model: &ChainModel) -> f64 {
    model.joints.iter().map(|j| norm3(&j.origin_xyz)).sum::<f64>() + norm3(&model.tip)
}

fn model_is_planar(model: &ChainModel) -> bool {
    model
        .joints
        .iter()
        .all(|j| (Vector::from(j.axis) - Vector::z()).norm() < 1e-12 && j.origin_xyz[2].abs() < 1e-12)
        && model.tip[2].abs() < 1e-12
}

/// Environment without obstacles for `model` under the settings of `cfg`.
pub fn build_environment(cfg: &Config, model: &ChainModel) -> Result<Environment> {
    let e = &cfg.environment;
    let planar = e.planar.unwrap_or_else(|| model_is_planar(model));
    let zero = Configuration::zeros(model.dof());
    let pose = forward_kinematics(model, &zero)?;
    let default_center = if model.dof() > 1 { pose.skeleton[1] } else { pose.skeleton[0] };
    let center = e.workspace_center.map(Point::from).unwrap_or(default_center);
    let is_xarm = cfg.robot.model.is_none() && cfg.robot.preset.as_deref().unwrap_or("xarm6") == "xarm6";
    let radius = e
        .workspace_radius
        .unwrap_or(if is_xarm { 1.5 } else { 1.25 * model_reach(model) });
    let v_obs = e.v_obs_per_second(cfg.planner.period);
    let mut env = Environment::empty(center, radius, v_obs);
    env.planar = planar;
    let omega1 = model.kinematic_limits.omega_max[0];
    env.exclusion_radius = (v_obs / omega1).max(model.base_radius);
    if e.table && !planar {
        env.fixtures.push(Aabb::new(Point::new(0.0, 0.0, -0.05), Vector::new(0.67, 0.67, 0.05)));
        env.fixture_exempt_links = 1;
    }
    Ok(env)
}

/// A fully specified run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub model: ChainModel,
    pub env: Environment,
    pub q_start: Configuration,
    pub q_goal: Configuration,
    pub planner: DrgbtParams,
    pub replanner: ReplannerParams,
    pub budget: BudgetConfig,
    pub max_runtime: f64,
}

fn is_free(model: &ChainModel, env: &Environment, q: &Configuration) -> bool {
    env.contact(&fk_unchecked(model, q)) == Contact::Free
}

/// Spawns obstacles and samples a collision-free start and goal at least
/// `rho0` apart, unless the configuration fixes them.
pub fn generate_scenario(cfg: &Config, model: &ChainModel, n_obs: usize, seed: u64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = build_environment(cfg, model)?;
    env.obstacles = if cfg.environment.obstacles.is_empty() {
        let params = SpawnParams {
            n_obs,
            size: cfg.environment.obstacle_size,
            v_obs: env.v_obs,
        };
        spawn_random_obstacles(&env, &params, &mut rng)
    } else {
        cfg.environment.obstacles.iter().map(|b| b.to_aabb()).collect()
    };
    let limits = model.joint_limits();
    let fixed = |v: &Option<Vec<f64>>| -> Result<Option<Configuration>> {
        match v {
            None => Ok(None),
            Some(q) if q.len() != model.dof() => Err(Error::DimensionMismatch {
                expected: model.dof(),
                got: q.len(),
            }),
            Some(q) => Ok(Some(Configuration(q.clone()))),
        }
    };
    let start_fixed = fixed(&cfg.scenario.q_start)?;
    let goal_fixed = fixed(&cfg.scenario.q_goal)?;
    for _ in 0..MAX_SCENARIO_TRIES {
        let s = start_fixed.clone().unwrap_or_else(|| sample_uniform(&limits, &mut rng));
        let g = goal_fixed.clone().unwrap_or_else(|| sample_uniform(&limits, &mut rng));
        if rho(&s, &g) > cfg.scenario.rho0 && is_free(model, &env, &s) && is_free(model, &env, &g) {
            return Ok(Scenario {
                seed,
                model: model.clone(),
                env,
                q_start: s,
                q_goal: g,
                planner: cfg.planner.clone(),
                replanner: cfg.replanner.clone(),
                budget: cfg.budget.clone(),
                max_runtime: cfg.scenario.max_runtime,
            });
        }
        if start_fixed.is_some() && goal_fixed.is_some() {
            break;
        }
    }
    Err(Error::ScenarioGenerationFailed(MAX_SCENARIO_TRIES))
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Goal,
    CollisionI,
    CollisionIi,
    Timeout,
}

impl Outcome {
    /// Process exit code for the `run` subcommand.
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Goal => 0,
            Outcome::CollisionI | Outcome::CollisionIi => 2,
            Outcome::Timeout => 3,
        }
    }
}

/// Per-run results. Everything is a deterministic function of the seed in
/// virtual-budget mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run: usize,
    pub seed: u64,
    pub period: f64,
    pub e1: f64,
    pub n_obs: usize,
    pub safe_on: bool,
    pub outcome: Outcome,
    pub success: bool,
    pub algorithm_time: f64,
    pub path_length: f64,
    pub iterations: usize,
    pub deadline_overruns: usize,
    pub replans_requested: usize,
    pub replans_succeeded: usize,
    pub initial_plan_found: bool,
}

/// One line of `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub run: usize,
    pub iteration: usize,
    pub time: f64,
    pub result: StepResult,
    pub source: crate::drgbt::SplineSource,
    pub replanning: bool,
    pub replan_found: Option<bool>,
    pub d_c: f64,
    pub n_h: usize,
    pub horizon_len: usize,
    pub weight_max: f64,
    pub weight_mean: f64,
    pub q: Vec<f64>,
    pub t1_wall: f64,
    pub t2_wall: f64,
    pub overrun: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub events: Vec<EventRecord>,
    pub timings: Vec<IterationTiming>,
    /// Configurations at the end of every period.
    pub traversed: Vec<Configuration>,
}

struct LoopState {
    planner: Drgbt,
    env: Environment,
    rng: ChaCha8Rng,
}

/// Runs the planner in closed loop until it reaches the goal, collides or
/// `max_runtime` elapses.
pub fn run_scenario(sc: &Scenario, run: usize) -> Result<RunOutput> {
    let p = &sc.planner;
    let budget = TaskBudget::new(p.period, p.e1)?;
    let b = &sc.budget;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed ^ 0x5DEE_CE66_D1CE_5EED);
    let planner_seed = rng.random::<u64>();
    let mut planner = Drgbt::new(sc.model.clone(), p.clone(), sc.q_start.clone(), sc.q_goal.clone(), planner_seed);
    let mut clock = BudgetClock::for_mode(b.mode, b.initial_plan, b.ops_per_ms);
    let initial = replan(&sc.model, &sc.q_start, &sc.q_goal, &sc.env, &sc.replanner, &mut clock, &mut rng);
    let initial_plan_found = initial.is_some();
    if let Some(path) = initial {
        planner.install_path(&path);
    }
    let mut st = LoopState {
        planner,
        env: sc.env.clone(),
        rng,
    };
    let max_iters = (sc.max_runtime / p.period - 1e-9).ceil() as usize;
    let mut events = Vec::new();
    let mut timings = Vec::new();
    let (mut overruns, mut requested, mut succeeded) = (0, 0, 0);
    let mut outcome = Outcome::Timeout;
    let mut iterations = 0;
    let period = p.period;
    let dt_check = b.dt_check;
    let rp = sc.replanner.clone();
    while iterations < max_iters {
        let sp = run_period(
            &mut st,
            &budget,
            b.mode,
            b.ops_per_ms,
            b.overrun_tolerance,
            b.pace,
            |st, clock| {
                let out = st.planner.step(&st.env, clock, dt_check);
                st.env.advance(period);
                out
            },
            |out: &IterationOutcome| {
                out.replanning && matches!(out.result, StepResult::Advanced | StepResult::Trapped)
            },
            |st, clock, out| replan(&st.planner.model, &out.q, &st.planner.goal, &st.env, &rp, clock, &mut st.rng),
        );
        iterations += 1;
        let out = sp.t1;
        let replan_found = sp.t2.as_ref().map(Option::is_some);
        if let Some(found) = sp.t2 {
            requested += 1;
            if let Some(path) = found {
                st.planner.install_path(&path);
                succeeded += 1;
            }
        }
        overruns += usize::from(sp.overrun);
        let mut timing = out.timing;
        timing.replan = sp.t2_wall;
        timing.total = sp.t1_wall + sp.t2_wall;
        timings.push(timing);
        events.push(EventRecord {
            run,
            iteration: iterations,
            time: iterations as f64 * period,
            result: out.result,
            source: out.source,
            replanning: out.replanning,
            replan_found,
            d_c: out.d_c,
            n_h: out.n_h,
            horizon_len: out.horizon_len,
            weight_max: out.weight_max,
            weight_mean: out.weight_mean,
            q: out.q.0.clone(),
            t1_wall: sp.t1_wall,
            t2_wall: sp.t2_wall,
            overrun: sp.overrun,
        });
        match out.result {
            StepResult::ReachedGoal => {
                outcome = Outcome::Goal;
                break;
            }
            StepResult::Collision(CollisionKind::TypeI) => {
                outcome = Outcome::CollisionI;
                break;
            }
            StepResult::Collision(CollisionKind::TypeII) => {
                outcome = Outcome::CollisionIi;
                break;
            }
            _ => {}
        }
    }
    let metrics = RunMetrics {
        run,
        seed: sc.seed,
        period,
        e1: p.e1,
        n_obs: sc.env.obstacles.len(),
        safe_on: p.safe_on,
        outcome,
        success: outcome == Outcome::Goal,
        algorithm_time: iterations as f64 * period,
        path_length: st.planner.path_length,
        iterations,
        deadline_overruns: overruns,
        replans_requested: requested,
        replans_succeeded: succeeded,
        initial_plan_found,
    };
    Ok(RunOutput {
        metrics,
        events,
        timings,
        traversed: st.planner.traversed,
    })
}

/// Aggregate over the runs of one trial cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub period: f64,
    pub e1: f64,
    pub u1: f64,
    pub n_obs: usize,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Over successful runs.
    pub mean_algorithm_time: f64,
    pub std_algorithm_time: f64,
    pub mean_path_length: f64,
    pub std_path_length: f64,
    pub collisions_i: usize,
    pub collisions_ii: usize,
    pub timeouts: usize,
    pub overruns: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct TrialOutput {
    pub cells: Vec<CellSummary>,
    pub runs: Vec<RunOutput>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Seed of run `run` in cell `cell` of a trial seeded with `base`.
pub fn run_seed(base: u64, cell: usize, run: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(((cell as u64) << 32) | run as u64)
}

/// Runs `runs_per_cell` scenarios for every combination of period,
/// obstacle count and utilization in the trial grid.
pub fn run_trial(cfg: &Config, model: &ChainModel) -> Result<TrialOutput> {
    let t = &cfg.trial;
    let u1s: Vec<Option<f64>> = if t.u1.is_empty() {
        vec![None]
    } else {
        t.u1.iter().copied().map(Some).collect()
    };
    let mut cells = Vec::new();
    for &period in &t.periods {
        for &u1 in &u1s {
            for &n_obs in &t.n_obs {
                let e1 = match u1 {
                    Some(u) => u * period,
                    None => cfg.planner.e1.min(period),
                };
                TaskBudget::new(period, e1)?;
                cells.push((period, e1, n_obs));
            }
        }
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..t.runs_per_cell).map(move |r| (c, r)))
        .collect();
    let work = |&(c, r): &(usize, usize)| -> Result<RunOutput> {
        let (period, e1, n_obs) = cells[c];
        let mut cell_cfg = cfg.clone();
        cell_cfg.planner.period = period;
        cell_cfg.planner.e1 = e1;
        let sc = generate_scenario(&cell_cfg, model, n_obs, run_seed(cfg.seed, c, r))?;
        log::debug!("cell {c} run {r} seed {}", sc.seed);
        run_scenario(&sc, c * t.runs_per_cell + r)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(t.threads.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let runs: Vec<RunOutput> = pool.install(|| jobs.par_iter().map(work).collect::<Result<Vec<_>>>())?;
    let summaries = cells
        .iter()
        .enumerate()
        .map(|(c, &(period, e1, n_obs))| {
            let rs = &runs[c * t.runs_per_cell..(c + 1) * t.runs_per_cell];
            let ok: Vec<&RunOutput> = rs.iter().filter(|r| r.metrics.success).collect();
            let times: Vec<f64> = ok.iter().map(|r| r.metrics.algorithm_time).collect();
            let lens: Vec<f64> = ok.iter().map(|r| r.metrics.path_length).collect();
            let (mt, st) = mean_std(&times);
            let (ml, sl) = mean_std(&lens);
            let count = |o: Outcome| rs.iter().filter(|r| r.metrics.outcome == o).count();
            CellSummary {
                period,
                e1,
                u1: e1 / period,
                n_obs,
                runs: rs.len(),
                successes: ok.len(),
                success_rate: ok.len() as f64 / rs.len() as f64,
                mean_algorithm_time: mt,
                std_algorithm_time: st,
                mean_path_length: ml,
                std_path_length: sl,
                collisions_i: count(Outcome::CollisionI),
                collisions_ii: count(Outcome::CollisionIi),
                timeouts: count(Outcome::Timeout),
                overruns: rs.iter().map(|r| r.metrics.deadline_overruns).sum(),
                iterations: rs.iter().map(|r| r.metrics.iterations).sum(),
            }
        })
        .collect();
    Ok(TrialOutput { cells: summaries, runs })
}

/// One row of `slice.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceRow {
    pub root: usize,
    pub q1: f64,
    pub q2: f64,
    pub v_obs: f64,
    pub inside: bool,
}

/// Bubble cross-sections around every slice root among the slice's static
/// obstacles.
pub fn run_slice(cfg: &Config, model: &ChainModel) -> Result<Vec<SliceRow>> {
    let s = &cfg.slice;
    if s.axes.iter().any(|&a| a >= model.dof()) {
        return Err(Error::Config("slice: axis index out of range".into()));
    }
    let mut env = build_environment(cfg, model)?;
    env.obstacles = s.obstacles.iter().map(|b| b.to_aabb()).collect();
    let mut rows = Vec::new();
    for (k, q0) in s.roots.iter().enumerate() {
        if q0.len() != model.dof() {
            return Err(Error::DimensionMismatch {
                expected: model.dof(),
                got: q0.len(),
            });
        }
        let root = Configuration(q0.clone());
        let pose = forward_kinematics(model, &root)?;
        let (d, _) = env.distance_profile(&pose, None);
        if !d.all_positive() {
            return Err(Error::Config(format!("slice: root {k} is in collision")));
        }
        let samples: Vec<SliceSample> = deb_slice(
            &root,
            &d,
            &enclosing_radii(&pose),
            &model.kinematic_limits,
            (s.axes[0], s.axes[1]),
            (s.range[0], s.range[1]),
            s.resolution,
            &s.v_values,
            cfg.planner.dt,
        );
        rows.extend(samples.into_iter().map(|p| SliceRow {
            root: k,
            q1: p.x,
            q2: p.y,
            v_obs: p.v_obs,
            inside: p.inside,
        }));
    }
    Ok(rows)
}
