//! Run, trial and slice configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::drgbt::DrgbtParams;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Point, Vector};
use crate::kinematics::ChainModel;
use crate::replanner::ReplannerParams;
use crate::scheduler::{BudgetMode, TaskBudget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    /// `planar2`, `planar3` or `xarm6`.
    #[serde(default)]
    pub preset: Option<String>,
    /// Model file; relative paths resolve against the config file.
    #[serde(default)]
    pub model: Option<PathBuf>,
}

impl Default for RobotConfig {
    fn default() -> Self {
        RobotConfig {
            preset: Some("xarm6".into()),
            model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
}

impl BoxSpec {
    pub fn to_aabb(&self) -> Aabb {
        Aabb::new(Point::from(self.center), Vector::from(self.half_extents)).with_velocity(Vector::from(self.velocity))
    }
}

/// Unit of `v_obs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedUnit {
    /// Meters per second.
    PerSecond,
    /// Meters per planner iteration.
    PerIteration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub n_obs: usize,
    /// Cube side, meters.
    pub obstacle_size: f64,
    pub v_obs: f64,
    pub speed_unit: SpeedUnit,
    /// Defaults to the robot preset's workspace.
    pub workspace_center: Option<[f64; 3]>,
    pub workspace_radius: Option<f64>,
    /// Obstacles confined to the robot's plane.
    pub planar: Option<bool>,
    /// Mounting table under the 6-DoF preset.
    pub table: bool,
    /// Explicit obstacles, used instead of random ones when present.
    pub obstacles: Vec<BoxSpec>,
}

impl EnvConfig {
    /// Obstacle speed bound in m/s for planner period `period`.
    pub fn v_obs_per_second(&self, period: f64) -> f64 {
        match self.speed_unit {
            SpeedUnit::PerSecond => self.v_obs,
            SpeedUnit::PerIteration => self.v_obs / period,
        }
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            n_obs: 0,
            obstacle_size: 0.01,
            v_obs: 1.6,
            speed_unit: SpeedUnit::PerSecond,
            workspace_center: None,
            workspace_radius: None,
            planar: None,
            table: true,
            obstacles: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Minimal start-goal separation.
    pub rho0: f64,
    pub max_runtime: f64,
    pub q_start: Option<Vec<f64>>,
    pub q_goal: Option<Vec<f64>>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            rho0: 2.0,
            max_runtime: 10.0,
            q_start: None,
            q_goal: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub mode: BudgetMode,
    /// Checkpoints per millisecond of budget in virtual mode.
    pub ops_per_ms: f64,
    /// Budget of the initial plan, seconds.
    pub initial_plan: f64,
    /// Planning-task time beyond `e1` tolerated before counting an overrun.
    pub overrun_tolerance: f64,
    /// Sleep to every period boundary.
    pub pace: bool,
    /// Step of the motion validity check, seconds.
    pub dt_check: f64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            mode: BudgetMode::Wall,
            ops_per_ms: 4.0,
            initial_plan: 1.0,
            overrun_tolerance: 0.005,
            pace: false,
            dt_check: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    pub periods: Vec<f64>,
    pub n_obs: Vec<usize>,
    /// Planning-task utilizations `e1 / T`; empty means the planner's `e1`.
    pub u1: Vec<f64>,
    pub runs_per_cell: usize,
    pub threads: usize,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            periods: vec![0.05],
            n_obs: vec![0, 2, 5],
            u1: Vec::new(),
            runs_per_cell: 10,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SliceConfig {
    /// Bubble roots, one slice each.
    pub roots: Vec<Vec<f64>>,
    pub axes: [usize; 2],
    /// Offsets from `q0` covered by the grid along both axes.
    pub range: [f64; 2],
    pub resolution: usize,
    pub v_values: Vec<f64>,
    pub obstacles: Vec<BoxSpec>,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig {
            roots: vec![vec![-0.8, 0.0], vec![0.3, 2.0], vec![2.2, -0.6], vec![-2.4, 1.0]],
            axes: [0, 1],
            range: [-3.0, 3.0],
            resolution: 200,
            v_values: vec![0.0, 2.0, 4.0, 6.0],
            obstacles: vec![
                BoxSpec {
                    center: [1.2, 0.9, 0.0],
                    half_extents: [0.2, 0.2, 0.2],
                    velocity: [0.0; 3],
                },
                BoxSpec {
                    center: [0.4, -1.3, 0.0],
                    half_extents: [0.25, 0.15, 0.2],
                    velocity: [0.0; 3],
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub robot: RobotConfig,
    pub environment: EnvConfig,
    pub scenario: ScenarioConfig,
    pub planner: DrgbtParams,
    pub replanner: ReplannerParams,
    pub budget: BudgetConfig,
    pub trial: TrialConfig,
    pub slice: SliceConfig,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
    /// The file set `planner.period` or `planner.e1` itself.
    #[serde(skip)]
    pub explicit_timing: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 1,
            robot: RobotConfig::default(),
            environment: EnvConfig::default(),
            scenario: ScenarioConfig::default(),
            planner: DrgbtParams::default(),
            replanner: ReplannerParams::default(),
            budget: BudgetConfig::default(),
            trial: TrialConfig::default(),
            slice: SliceConfig::default(),
            base_dir: None,
            explicit_timing: false,
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.explicit_timing = table
            .get("planner")
            .and_then(|p| p.as_table())
            .is_some_and(|p| p.contains_key("period") || p.contains_key("e1"));
        if cfg.planner.safe_on {
            cfg.set_safe(true);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Switches the safe variant on or off. Unless the file fixed the
    /// timing, the variant's default period and budget come with it.
    pub fn set_safe(&mut self, on: bool) {
        self.planner.safe_on = on;
        if !self.explicit_timing {
            let d = if on { DrgbtParams::safe() } else { DrgbtParams::default() };
            self.planner.period = d.period;
            self.planner.e1 = d.e1;
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn model(&self) -> Result<ChainModel> {
        if let Some(p) = &self.robot.model {
            let path = match &self.base_dir {
                Some(b) if p.is_relative() => b.join(p),
                _ => p.clone(),
            };
            return ChainModel::load(&path);
        }
        match self.robot.preset.as_deref().unwrap_or("xarm6") {
            "xarm6" => Ok(ChainModel::xarm6_like()),
            "planar2" => Ok(ChainModel::planar(2, 1.0, 0.05)),
            "planar3" => Ok(ChainModel::planar(3, 0.7, 0.05)),
            other => Err(Error::Config(format!("unknown robot preset '{other}'"))),
        }
    }

    pub fn budget(&self) -> Result<TaskBudget> {
        TaskBudget::new(self.planner.period, self.planner.e1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let p = &self.planner;
        if p.n_h0 == 0 || p.k_layers == 0 || p.spine_layers == 0 {
            return bad("planner: n_h0, k_layers and spine_layers must be at least 1");
        }
        if !(p.d_crit > 0.0 && p.d_ref > 0.0 && p.dt > 0.0) {
            return bad("planner: d_crit, d_ref and dt must be positive");
        }
        if !(p.w_min > 0.0 && p.w_min < 1.0 && p.w_mean_min > 0.0 && p.w_mean_min < 1.0) {
            return bad("planner: weight thresholds must lie in (0, 1)");
        }
        TaskBudget::new(p.period, p.e1)?;
        if self.environment.v_obs < 0.0 || !(self.environment.obstacle_size > 0.0) {
            return bad("environment: v_obs must be nonnegative and obstacle_size positive");
        }
        if !(self.scenario.max_runtime > 0.0) || self.scenario.rho0 < 0.0 {
            return bad("scenario: max_runtime must be positive and rho0 nonnegative");
        }
        if !(self.budget.dt_check > 0.0 && self.budget.ops_per_ms > 0.0) {
            return bad("budget: dt_check and ops_per_ms must be positive");
        }
        if !(self.replanner.edge_resolution > 0.0) || self.replanner.k_spine == 0 {
            return bad("replanner: edge_resolution must be positive and k_spine at least 1");
        }
        if self.trial.runs_per_cell == 0 || self.trial.periods.is_empty() || self.trial.n_obs.is_empty() {
            return bad("trial: periods, n_obs and runs_per_cell must be nonempty");
        }
        if self.trial.u1.iter().any(|u| !(*u > 0.0 && *u <= 1.0)) {
            return bad("trial: u1 values must lie in (0, 1]");
        }
        if self.slice.resolution == 0 || self.slice.axes[0] == self.slice.axes[1] || self.slice.roots.is_empty() {
            return bad("slice: roots must be nonempty, resolution positive and axes distinct");
        }
        Ok(())
    }
}
