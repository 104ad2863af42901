//! C interface to the planning library.
//!
//! Objects are opaque handles created by `*_new`/`*_from_*` functions and
//! released with the matching `*_free`. Every fallible call returns a
//! [`DrgbtStatus`]; on failure, [`drgbt_last_error`] describes the cause
//! for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use drgbt_core::config::Config;
use drgbt_core::cspace::{Configuration, ExtendedConfiguration};
use drgbt_core::drgbt::horizon_size;
use drgbt_core::kinematics::{fk_unchecked, ChainModel};
use drgbt_core::sim::{generate_scenario, run_scenario, Outcome};
use drgbt_core::trajectory::{fit_quintic, Spline};
use drgbt_core::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrgbtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Infeasible = 4,
    Io = 5,
    ScenarioFailed = 6,
    Panic = 7,
}

/// How a simulated run ended.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrgbtOutcome {
    Goal = 0,
    CollisionI = 1,
    CollisionIi = 2,
    Timeout = 3,
}

/// Summary of one simulated run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrgbtRunMetrics {
    pub outcome: DrgbtOutcome,
    pub success: bool,
    pub algorithm_time: f64,
    pub path_length: f64,
    pub iterations: u64,
    pub deadline_overruns: u64,
    pub replans_requested: u64,
    pub replans_succeeded: u64,
}

/// Serial-chain robot model.
pub struct DrgbtModel {
    inner: ChainModel,
}

/// Run configuration.
pub struct DrgbtConfig {
    inner: Config,
}

/// Time-parameterized joint trajectory.
pub struct DrgbtSpline {
    inner: Spline,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DrgbtStatus {
    match e {
        Error::Config(_) | Error::InvalidModel(_) => DrgbtStatus::Config,
        Error::Infeasible(_) => DrgbtStatus::Infeasible,
        Error::Io(_) => DrgbtStatus::Io,
        Error::ScenarioGenerationFailed(_) => DrgbtStatus::ScenarioFailed,
        _ => DrgbtStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (DrgbtStatus, String)>) -> DrgbtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DrgbtStatus::Ok,
        Ok(Err((s, m))) => {
            set_error(&m);
            s
        }
        Err(_) => {
            set_error("internal panic");
            DrgbtStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (DrgbtStatus, String) {
    (status_of(&e), e.to_string())
}

fn null() -> (DrgbtStatus, String) {
    (DrgbtStatus::NullPointer, "null pointer argument".into())
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, (DrgbtStatus, String)> {
    if s.is_null() {
        return Err(null());
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| (DrgbtStatus::InvalidArgument, "string is not UTF-8".into()))
}

unsafe fn read_vec(p: *const f64, n: usize) -> Result<Vec<f64>, (DrgbtStatus, String)> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, n).to_vec())
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn drgbt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Built-in model: `"xarm6"`, `"planar2"` or `"planar3"`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drgbt_model_from_preset(name: *const c_char, out: *mut *mut DrgbtModel) -> DrgbtStatus {
    guard(|| {
        let name = read_str(name)?;
        if out.is_null() {
            return Err(null());
        }
        let cfg = Config {
            robot: drgbt_core::config::RobotConfig {
                preset: Some(name.to_string()),
                model: None,
            },
            ..Config::default()
        };
        let inner = cfg.model().map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DrgbtModel { inner }));
        Ok(())
    })
}

/// Model from a TOML description.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drgbt_model_from_toml(text: *const c_char, out: *mut *mut DrgbtModel) -> DrgbtStatus {
    guard(|| {
        let text = read_str(text)?;
        if out.is_null() {
            return Err(null());
        }
        let inner = ChainModel::from_toml_str(text).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DrgbtModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn drgbt_model_free(model: *mut DrgbtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of joints, 0 for NULL.
///
/// # Safety
/// `model` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn drgbt_model_dof(model: *const DrgbtModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.dof())
}

/// Writes the `dof + 1` skeleton points (joint origins, then the tool
/// tip) of configuration `q` to `points`, three coordinates each.
///
/// # Safety
/// `q` must hold `n` values and `points` room for `3 * (n + 1)`.
#[no_mangle]
pub unsafe extern "C" fn drgbt_forward_kinematics(
    model: *const DrgbtModel,
    q: *const f64,
    n: usize,
    points: *mut f64,
) -> DrgbtStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(null)?;
        if n != m.inner.dof() {
            return Err(lib_err(Error::DimensionMismatch {
                expected: m.inner.dof(),
                got: n,
            }));
        }
        if points.is_null() {
            return Err(null());
        }
        let q = Configuration(read_vec(q, n)?);
        m.inner.check_limits(&q).map_err(lib_err)?;
        let pose = fk_unchecked(&m.inner, &q);
        let out = std::slice::from_raw_parts_mut(points, 3 * (n + 1));
        for (k, p) in pose.skeleton.iter().enumerate() {
            out[3 * k..3 * k + 3].copy_from_slice(&[p.x, p.y, p.z]);
        }
        Ok(())
    })
}

/// Shortest quintic within the model's kinematic limits from state
/// `(q0, v0, a0)` to `qf` with final velocity `vf` and zero final
/// acceleration. `v0`, `a0` and `vf` may be NULL for zeros.
///
/// # Safety
/// Non-NULL arrays must hold `n` values; `out` must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn drgbt_fit_quintic(
    model: *const DrgbtModel,
    q0: *const f64,
    v0: *const f64,
    a0: *const f64,
    qf: *const f64,
    vf: *const f64,
    n: usize,
    out: *mut *mut DrgbtSpline,
) -> DrgbtStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(null)?;
        if out.is_null() || q0.is_null() || qf.is_null() {
            return Err(null());
        }
        if n != m.inner.dof() {
            return Err(lib_err(Error::DimensionMismatch {
                expected: m.inner.dof(),
                got: n,
            }));
        }
        let zeros_or = |p: *const f64| if p.is_null() { Ok(vec![0.0; n]) } else { read_vec(p, n) };
        let x0 = ExtendedConfiguration {
            q: Configuration(read_vec(q0, n)?),
            q_dot: zeros_or(v0)?,
            q_ddot: zeros_or(a0)?,
        };
        let qf = Configuration(read_vec(qf, n)?);
        let s = fit_quintic(&x0, &qf, &zeros_or(vf)?, &m.inner.kinematic_limits, 1e-3).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DrgbtSpline {
            inner: Spline::Quintic(s),
        }));
        Ok(())
    })
}

/// # Safety
/// `spline` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn drgbt_spline_free(spline: *mut DrgbtSpline) {
    if !spline.is_null() {
        drop(Box::from_raw(spline));
    }
}

/// Duration in seconds, NaN for NULL.
///
/// # Safety
/// `spline` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn drgbt_spline_duration(spline: *const DrgbtSpline) -> f64 {
    spline
        .as_ref()
        .map_or(f64::NAN, |s| s.inner.end_time() - s.inner.start_time())
}

/// Position, velocity and acceleration at `t` seconds from the start.
/// Any output pointer may be NULL.
///
/// # Safety
/// Non-NULL outputs must have room for `n` values.
#[no_mangle]
pub unsafe extern "C" fn drgbt_spline_evaluate(
    spline: *const DrgbtSpline,
    t: f64,
    n: usize,
    q: *mut f64,
    v: *mut f64,
    a: *mut f64,
) -> DrgbtStatus {
    guard(|| {
        let s = spline.as_ref().ok_or_else(null)?;
        let x = drgbt_core::trajectory::evaluate(&s.inner, s.inner.start_time() + t).map_err(lib_err)?;
        if n != x.dim() {
            return Err(lib_err(Error::DimensionMismatch { expected: x.dim(), got: n }));
        }
        for (dst, src) in [(q, &x.q.0), (v, &x.q_dot), (a, &x.q_ddot)] {
            if !dst.is_null() {
                std::slice::from_raw_parts_mut(dst, n).copy_from_slice(src);
            }
        }
        Ok(())
    })
}

/// Number of horizon nodes for critical distance `d_c`.
#[no_mangle]
pub extern "C" fn drgbt_horizon_size(d_c: f64, n_h0: usize, dof: usize, d_crit: f64) -> usize {
    horizon_size(d_c, n_h0, dof, d_crit)
}

/// Configuration from TOML text; an empty string gives the defaults.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drgbt_config_from_toml(text: *const c_char, out: *mut *mut DrgbtConfig) -> DrgbtStatus {
    guard(|| {
        let text = read_str(text)?;
        if out.is_null() {
            return Err(null());
        }
        let inner = Config::from_toml_str(text).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DrgbtConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `config` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn drgbt_config_free(config: *mut DrgbtConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Generates the scenario for `seed` and runs it to completion.
///
/// # Safety
/// `config` must come from this library and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn drgbt_run_scenario(config: *const DrgbtConfig, seed: u64, out: *mut DrgbtRunMetrics) -> DrgbtStatus {
    guard(|| {
        let c = config.as_ref().ok_or_else(null)?;
        if out.is_null() {
            return Err(null());
        }
        let cfg = &c.inner;
        let model = cfg.model().map_err(lib_err)?;
        let sc = generate_scenario(cfg, &model, cfg.environment.n_obs, seed).map_err(lib_err)?;
        let m = run_scenario(&sc, 0).map_err(lib_err)?.metrics;
        *out = DrgbtRunMetrics {
            outcome: match m.outcome {
                Outcome::Goal => DrgbtOutcome::Goal,
                Outcome::CollisionI => DrgbtOutcome::CollisionI,
                Outcome::CollisionIi => DrgbtOutcome::CollisionIi,
                Outcome::Timeout => DrgbtOutcome::Timeout,
            },
            success: m.success,
            algorithm_time: m.algorithm_time,
            path_length: m.path_length,
            iterations: m.iterations as u64,
            deadline_overruns: m.deadline_overruns as u64,
            replans_requested: m.replans_requested as u64,
            replans_succeeded: m.replans_succeeded as u64,
        };
        Ok(())
    })
}
