//! Command-line front end.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::scheduler::BudgetMode;
use crate::sim::{self, output};

/// Exit code for configuration and other setup errors.
pub const EXIT_ERROR: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "drgbt", version, about = "Reactive motion planning among moving obstacles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Wall,
    Virtual,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub budget_mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub safe: Option<OnOff>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario; exits 0 on goal, 2 on collision, 3 on timeout.
    Run(Common),
    /// Run the trial grid.
    Trial(Common),
    /// Sample bubble cross-sections in a joint plane.
    DebSlice(Common),
    /// Check a config file and/or re-parse the output files of a run.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory with output files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Config file, then `DRGBT_SEED` / `DRGBT_OUT`, then flags.
pub fn resolve_config(c: &Common) -> Result<(Config, PathBuf)> {
    let mut cfg = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let mut out = PathBuf::from("out");
    if let Ok(s) = std::env::var("DRGBT_SEED") {
        cfg.seed = s
            .parse()
            .map_err(|_| Error::Config(format!("DRGBT_SEED: not an integer: '{s}'")))?;
    }
    if let Ok(o) = std::env::var("DRGBT_OUT") {
        out = PathBuf::from(o);
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        out = o.clone();
    }
    if let Some(m) = c.budget_mode {
        cfg.budget.mode = match m {
            ModeArg::Wall => BudgetMode::Wall,
            ModeArg::Virtual => BudgetMode::Virtual,
        };
    }
    if let Some(s) = c.safe {
        cfg.set_safe(s == OnOff::On);
    }
    if let Some(t) = c.threads {
        cfg.trial.threads = t;
    }
    cfg.validate()?;
    Ok((cfg, out))
}

fn cmd_run(c: &Common) -> Result<i32> {
    let (cfg, out) = resolve_config(c)?;
    let model = cfg.model()?;
    let sc = sim::generate_scenario(&cfg, &model, cfg.environment.n_obs, cfg.seed)?;
    log::info!("start {:?} goal {:?} with {} obstacles", sc.q_start.0, sc.q_goal.0, sc.env.obstacles.len());
    let res = sim::run_scenario(&sc, 0)?;
    output::write_run(&out, &res)?;
    println!("{}", serde_json::to_string(&res.metrics).map_err(|e| Error::Io(e.to_string()))?);
    Ok(res.metrics.outcome.exit_code())
}

fn cmd_trial(c: &Common) -> Result<i32> {
    let (cfg, out) = resolve_config(c)?;
    let model = cfg.model()?;
    let res = sim::run_trial(&cfg, &model)?;
    output::write_trial(&out, &res)?;
    for cell in &res.cells {
        println!(
            "T={:.3} e1={:.3} n_obs={} success={:.3} time={:.3}s path={:.3}rad",
            cell.period, cell.e1, cell.n_obs, cell.success_rate, cell.mean_algorithm_time, cell.mean_path_length
        );
    }
    Ok(0)
}

fn cmd_slice(c: &Common) -> Result<i32> {
    let (mut cfg, out) = resolve_config(c)?;
    if c.config.is_none() {
        cfg.robot.preset = Some("planar2".into());
    }
    let model = cfg.model()?;
    let rows = sim::run_slice(&cfg, &model)?;
    output::write_slice(&out, &rows)?;
    for (k, _) in cfg.slice.roots.iter().enumerate() {
        for &v in &cfg.slice.v_values {
            let n = rows.iter().filter(|r| r.root == k && r.v_obs == v && r.inside).count();
            println!("root {k} v_obs {v}: {n} inside");
        }
    }
    Ok(0)
}

fn cmd_validate(config: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<i32> {
    if config.is_none() && out.is_none() {
        return Err(Error::Config("validate needs --config or --out".into()));
    }
    if let Some(p) = config {
        let cfg = Config::load(p)?;
        let model = cfg.model()?;
        println!("{}: ok ({}, {} joints)", p.display(), model.name, model.dof());
    }
    if let Some(dir) = out {
        for (name, n) in output::validate_outputs(dir)? {
            println!("{name}: {n} records");
        }
    }
    Ok(0)
}

pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Trial(c) => cmd_trial(c),
        Command::DebSlice(c) => cmd_slice(c),
        Command::Validate { config, out } => cmd_validate(config, out),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from(["drgbt", "run", "--seed", "9", "--budget-mode", "virtual", "--safe", "on"]).unwrap();
        let Command::Run(c) = &cli.command else { panic!() };
        let (cfg, _) = resolve_config(c).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.budget.mode, BudgetMode::Virtual);
        assert!(cfg.planner.safe_on);
        assert_eq!(cfg.planner.period, 0.02);
    }

    #[test]
    fn unknown_flag_is_an_error() {
        assert_eq!(main_from(["drgbt", "run", "--bogus"]), EXIT_ERROR);
    }
}
