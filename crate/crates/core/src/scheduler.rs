//! Two-task budget scheduling: a periodic planning task with budget `e1`
//! and a sporadic replanning task with budget `e2 = T - e1`, both with
//! relative deadline `T`. Budgets are enforced cooperatively at
//! checkpoints.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskBudget {
    pub period: f64,
    pub e1: f64,
    pub e2: f64,
    pub d1: f64,
    pub d2: f64,
}

impl TaskBudget {
    pub fn new(period: f64, e1: f64) -> Result<Self> {
        if !(period > 0.0) || !(e1 > 0.0 && e1 <= period) {
            return Err(Error::Config(format!("need 0 < e1 <= T, got e1 = {e1}, T = {period}")));
        }
        Ok(TaskBudget {
            period,
            e1,
            e2: period - e1,
            d1: period,
            d2: period,
        })
    }

    /// Budget from a utilization fraction `u1 = e1 / T`.
    pub fn from_utilization(period: f64, u1: f64) -> Result<Self> {
        Self::new(period, u1 * period)
    }

    pub fn is_schedulable(&self) -> bool {
        check_schedulability(&[(self.e1, self.d1, self.period), (self.e2, self.d2, self.period)])
    }
}

/// Rounding slack of the utilization test, so that `e1 + (T - e1)` over
/// `T` still passes.
const UTILIZATION_SLACK: f64 = 1e-12;

/// Utilization test `Σ e / min(D, T) <= 1` over `(e, D, T)` triples.
pub fn check_schedulability(tasks: &[(f64, f64, f64)]) -> bool {
    tasks.iter().map(|(e, d, t)| e / d.min(*t)).sum::<f64>() <= 1.0 + UTILIZATION_SLACK
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetMode {
    Wall,
    Virtual,
}

impl std::str::FromStr for BudgetMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wall" => Ok(BudgetMode::Wall),
            "virtual" => Ok(BudgetMode::Virtual),
            other => Err(Error::Config(format!("unknown budget mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
enum Limit {
    Wall { deadline: Instant },
    Virtual { max_checkpoints: u64 },
    Unlimited,
}

/// Cooperative budget. Work loops call [`BudgetClock::checkpoint`] before
/// each unit of work and stop once it returns false. Expiry is sticky.
#[derive(Debug, Clone)]
pub struct BudgetClock {
    limit: Limit,
    started: Instant,
    last_checkpoint: Instant,
    checkpoints: u64,
    max_interval: Duration,
    expired: bool,
}

impl BudgetClock {
    fn with_limit(limit: Limit) -> Self {
        let now = Instant::now();
        BudgetClock {
            limit,
            started: now,
            last_checkpoint: now,
            checkpoints: 0,
            max_interval: Duration::ZERO,
            expired: false,
        }
    }

    pub fn wall(budget: f64) -> Self {
        Self::wall_until(Instant::now() + Duration::from_secs_f64(budget.max(0.0)))
    }

    pub fn wall_until(deadline: Instant) -> Self {
        Self::with_limit(Limit::Wall { deadline })
    }

    /// Allows `max_checkpoints` units of work regardless of elapsed time.
    pub fn virtual_ops(max_checkpoints: u64) -> Self {
        Self::with_limit(Limit::Virtual { max_checkpoints })
    }

    pub fn unlimited() -> Self {
        Self::with_limit(Limit::Unlimited)
    }

    /// Clock for `budget` seconds in the given mode; virtual budgets are
    /// `budget_ms * ops_per_ms` checkpoints.
    pub fn for_mode(mode: BudgetMode, budget: f64, ops_per_ms: f64) -> Self {
        match mode {
            BudgetMode::Wall => Self::wall(budget),
            BudgetMode::Virtual => Self::virtual_ops((budget * 1e3 * ops_per_ms).round().max(0.0) as u64),
        }
    }

    fn check(&mut self) -> bool {
        if self.expired {
            return true;
        }
        self.expired = match &self.limit {
            Limit::Wall { deadline } => Instant::now() >= *deadline,
            Limit::Virtual { max_checkpoints } => self.checkpoints >= *max_checkpoints,
            Limit::Unlimited => false,
        };
        self.expired
    }

    /// Registers a unit of work; false once the budget is spent.
    pub fn checkpoint(&mut self) -> bool {
        let now = Instant::now();
        self.max_interval = self.max_interval.max(now - self.last_checkpoint);
        self.last_checkpoint = now;
        if self.check() {
            return false;
        }
        self.checkpoints += 1;
        true
    }

    pub fn expired(&mut self) -> bool {
        self.check()
    }

    pub fn checkpoints(&self) -> u64 {
        self.checkpoints
    }

    pub fn elapsed(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    /// Longest wall time observed between consecutive checkpoints.
    pub fn max_interval(&self) -> f64 {
        self.max_interval.as_secs_f64()
    }
}

/// Wall time of every planning routine within one iteration, seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTiming {
    pub compute_distances: f64,
    pub generate_horizon: f64,
    pub update_horizon: f64,
    pub generate_gbur: f64,
    pub weights_and_next: f64,
    pub update_curr_state: f64,
    pub is_valid: f64,
    pub replan: f64,
    /// Whole planning task.
    pub t1: f64,
    /// Whole iteration including replanning.
    pub total: f64,
}

impl IterationTiming {
    pub const ROUTINES: [&'static str; 10] = [
        "compute_distances",
        "generate_horizon",
        "update_horizon",
        "generate_gbur",
        "weights_and_next",
        "update_curr_state",
        "is_valid",
        "replan",
        "t1",
        "total",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.compute_distances,
            self.generate_horizon,
            self.update_horizon,
            self.generate_gbur,
            self.weights_and_next,
            self.update_curr_state,
            self.is_valid,
            self.replan,
            self.t1,
            self.total,
        ]
    }
}

/// Times a closure and adds the elapsed seconds to `slot`.
pub fn timed<R>(slot: &mut f64, f: impl FnOnce() -> R) -> R {
    let start = Instant::now();
    let r = f();
    *slot += start.elapsed().as_secs_f64();
    r
}

/// Result of one scheduled period.
#[derive(Debug, Clone)]
pub struct ScheduledPeriod<P, R> {
    pub t1: P,
    pub t2: Option<R>,
    pub t1_wall: f64,
    pub t2_wall: f64,
    /// The planning task ran past `e1` by more than the tolerated interval
    /// (wall mode only).
    pub overrun: bool,
}

/// Runs the planning task with budget `e1`, then, if `wants_t2` holds for
/// its result, the replanning task with the rest of the period. The
/// replanning budget ends at the earlier of `e2` and the period boundary.
/// With `pace`, sleeps until the period boundary.
#[allow(clippy::too_many_arguments)]
pub fn run_period<S, P, R>(
    state: &mut S,
    budget: &TaskBudget,
    mode: BudgetMode,
    ops_per_ms: f64,
    overrun_tolerance: f64,
    pace: bool,
    t1: impl FnOnce(&mut S, &mut BudgetClock) -> P,
    wants_t2: impl FnOnce(&P) -> bool,
    t2: impl FnOnce(&mut S, &mut BudgetClock, &P) -> R,
) -> ScheduledPeriod<P, R> {
    let release = Instant::now();
    let boundary = release + Duration::from_secs_f64(budget.period);
    let mut c1 = BudgetClock::for_mode(mode, budget.e1, ops_per_ms);
    let p = t1(state, &mut c1);
    let t1_wall = release.elapsed().as_secs_f64();
    // a virtual budget is enforced exactly, so only wall budgets can overrun
    let overrun = mode == BudgetMode::Wall && t1_wall > budget.e1 + overrun_tolerance;
    let mut t2_wall = 0.0;
    let r = if wants_t2(&p) {
        let mut c2 = match mode {
            BudgetMode::Wall => {
                let own = Instant::now() + Duration::from_secs_f64(budget.e2);
                BudgetClock::wall_until(own.min(boundary))
            }
            BudgetMode::Virtual => BudgetClock::for_mode(mode, budget.e2, ops_per_ms),
        };
        let start = Instant::now();
        let r = t2(state, &mut c2, &p);
        t2_wall = start.elapsed().as_secs_f64();
        Some(r)
    } else {
        None
    };
    if pace {
        let now = Instant::now();
        if now < boundary {
            std::thread::sleep(boundary - now);
        }
    }
    ScheduledPeriod {
        t1: p,
        t2: r,
        t1_wall,
        t2_wall,
        overrun,
    }
}
