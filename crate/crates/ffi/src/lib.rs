//! C ABI for pss-tune.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free` function. Every fallible call returns a [`PssStatus`];
//! on failure a description is available from [`pss_last_error`] on the
//! same thread until the next call. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pss_tune::dae::{simulate, Trajectory};
use pss_tune::hybrid::HybridModel;
use pss_tune::psys::{reference_pss, BuiltSystem};
use pss_tune::scenario::Scenario;
use pss_tune::tuner::{tune, Objective, PssObjective, TuningStatus};
use pss_tune::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PssStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed scenario or arguments.
    InvalidInput = 3,
    /// Newton, power flow or sensitivity failure.
    Numerical = 4,
    Io = 5,
    /// Buffer too small or index out of range.
    OutOfRange = 6,
    /// The tuner stopped on a failed line search; outputs hold the best point.
    LineSearchFailure = 7,
    Panic = 8,
}

/// A loaded scenario with its built model.
pub struct PssScenario {
    scenario: Scenario,
    built: BuiltSystem,
}

/// A simulated trajectory.
pub struct PssTrajectory {
    traj: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(text).expect("nul bytes removed")));
}

fn status_of(err: &Error) -> PssStatus {
    match err {
        Error::Io { .. } => PssStatus::Io,
        e if e.is_numerical() => PssStatus::Numerical,
        _ => PssStatus::InvalidInput,
    }
}

fn guard(f: impl FnOnce() -> Result<(), PssStatus>) -> PssStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PssStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            PssStatus::Panic
        }
    }
}

fn fail(err: Error) -> PssStatus {
    set_error(err.to_string());
    status_of(&err)
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, PssStatus> {
    if p.is_null() {
        set_error("null string argument");
        return Err(PssStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        PssStatus::InvalidUtf8
    })
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, PssStatus> {
    p.as_ref().ok_or_else(|| {
        set_error("null handle");
        PssStatus::NullPointer
    })
}

unsafe fn slice<'a>(p: *const f64, len: usize) -> Result<&'a [f64], PssStatus> {
    if p.is_null() {
        set_error("null input buffer");
        return Err(PssStatus::NullPointer);
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, needed: usize) -> Result<&'a mut [f64], PssStatus> {
    if p.is_null() {
        set_error("null output buffer");
        return Err(PssStatus::NullPointer);
    }
    if len < needed {
        set_error(format!("output buffer holds {len} values, {needed} needed"));
        return Err(PssStatus::OutOfRange);
    }
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), PssStatus> {
    if out.is_null() {
        set_error("null output pointer");
        return Err(PssStatus::NullPointer);
    }
    out.write(value);
    Ok(())
}

fn boxed(scenario: Scenario) -> Result<*mut PssScenario, PssStatus> {
    let built = scenario.build().map_err(fail)?;
    Ok(Box::into_raw(Box::new(PssScenario { scenario, built })))
}

/// Last error message on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn pss_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a scenario TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pss_scenario_load(path: *const c_char, out: *mut *mut PssScenario) -> PssStatus {
    guard(|| {
        let path = read_str(path)?;
        let s = Scenario::load(Path::new(path)).map_err(fail)?;
        put(out, boxed(s)?)
    })
}

/// Parses a scenario from TOML text. Relative case paths resolve against
/// the working directory.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pss_scenario_from_toml(text: *const c_char, out: *mut *mut PssScenario) -> PssStatus {
    guard(|| {
        let text = read_str(text)?;
        let s = Scenario::from_toml_str(text, "<string>").map_err(fail)?;
        put(out, boxed(s)?)
    })
}

/// The bundled 9-bus bus-9 fault scenario, with or without the reference
/// stabilizers on G2 and G3.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pss_scenario_nominal(with_pss: bool, out: *mut *mut PssScenario) -> PssStatus {
    guard(|| put(out, boxed(Scenario::nominal(with_pss.then(reference_pss)))?))
}

/// # Safety
/// `scenario` must come from a `pss_scenario_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn pss_scenario_free(scenario: *mut PssScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Number of tunable parameters.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pss_scenario_param_count(scenario: *const PssScenario, out: *mut usize) -> PssStatus {
    guard(|| put(out, handle(scenario)?.built.model.dims().p))
}

/// Copies the scenario's parameter vector into `buf`.
///
/// # Safety
/// `buf` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pss_scenario_params(scenario: *const PssScenario, buf: *mut f64, len: usize) -> PssStatus {
    guard(|| {
        let s = handle(scenario)?;
        let l = s.built.lambda0();
        slice_mut(buf, len, l.len())?.copy_from_slice(&l);
        Ok(())
    })
}

fn lambda_or_default(s: &PssScenario, lambda: *const f64, len: usize) -> Result<Vec<f64>, PssStatus> {
    if lambda.is_null() {
        return Ok(s.built.lambda0());
    }
    let p = s.built.model.dims().p;
    if len != p {
        set_error(format!("expected {p} parameters, got {len}"));
        return Err(PssStatus::OutOfRange);
    }
    Ok(unsafe { slice(lambda, len)? }.to_vec())
}

/// Simulates with parameters `lambda` (null for the scenario's own).
///
/// # Safety
/// `lambda` is null or holds `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pss_simulate(
    scenario: *const PssScenario,
    lambda: *const f64,
    len: usize,
    out: *mut *mut PssTrajectory,
) -> PssStatus {
    guard(|| {
        let s = handle(scenario)?;
        let l = lambda_or_default(s, lambda, len)?;
        let x0 = s.built.x0_with_lambda(&l).map_err(fail)?;
        let traj = simulate(
            &s.built.model,
            &x0,
            &s.built.y0,
            &s.built.schedule,
            &s.scenario.integrator,
        )
        .map_err(fail)?;
        put(out, Box::into_raw(Box::new(PssTrajectory { traj })))
    })
}

/// # Safety
/// `traj` must come from [`pss_simulate`] or be null.
#[no_mangle]
pub unsafe extern "C" fn pss_trajectory_free(traj: *mut PssTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of samples, including duplicated junction samples.
///
/// # Safety
/// `traj` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pss_trajectory_len(traj: *const PssTrajectory, out: *mut usize) -> PssStatus {
    guard(|| put(out, handle(traj)?.traj.len()))
}

/// Length of the augmented state vector.
///
/// # Safety
/// `traj` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pss_trajectory_state_dim(traj: *const PssTrajectory, out: *mut usize) -> PssStatus {
    guard(|| put(out, handle(traj)?.traj.dims.augmented()))
}

/// Copies the sample times into `buf`.
///
/// # Safety
/// `buf` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pss_trajectory_times(traj: *const PssTrajectory, buf: *mut f64, len: usize) -> PssStatus {
    guard(|| {
        let t = handle(traj)?;
        slice_mut(buf, len, t.traj.len())?.copy_from_slice(&t.traj.times);
        Ok(())
    })
}

/// Copies the time series of augmented-state entry `index` into `buf`.
///
/// # Safety
/// `buf` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pss_trajectory_state(
    traj: *const PssTrajectory,
    index: usize,
    buf: *mut f64,
    len: usize,
) -> PssStatus {
    guard(|| {
        let t = handle(traj)?;
        if index >= t.traj.dims.augmented() {
            set_error(format!("state index {index} is out of range"));
            return Err(PssStatus::OutOfRange);
        }
        slice_mut(buf, len, t.traj.len())?.copy_from_slice(&t.traj.state_series(index));
        Ok(())
    })
}

fn objective(s: &PssScenario) -> Result<PssObjective<'_>, PssStatus> {
    PssObjective::new(&s.built, s.scenario.integrator.clone(), s.scenario.objective.clone()).map_err(fail)
}

/// Objective value and, when `grad` is non-null, its gradient.
///
/// # Safety
/// `lambda` is null or holds `len` doubles; `grad` is null or holds
/// `grad_len` writable doubles; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pss_objective(
    scenario: *const PssScenario,
    lambda: *const f64,
    len: usize,
    value: *mut f64,
    grad: *mut f64,
    grad_len: usize,
) -> PssStatus {
    guard(|| {
        let s = handle(scenario)?;
        let l = lambda_or_default(s, lambda, len)?;
        let obj = objective(s)?;
        if grad.is_null() {
            return put(value, obj.value(&l).map_err(fail)?);
        }
        let out = slice_mut(grad, grad_len, l.len())?;
        let (j, g) = obj.value_and_gradient(&l).map_err(fail)?;
        out.copy_from_slice(&g);
        put(value, j)
    })
}

/// Tunes from the scenario's parameters with its tuner settings; writes the
/// final parameters and objective value.
///
/// # Safety
/// `lambda_out` must hold `len` writable doubles; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pss_tune(
    scenario: *const PssScenario,
    lambda_out: *mut f64,
    len: usize,
    value: *mut f64,
) -> PssStatus {
    guard(|| {
        let s = handle(scenario)?;
        let obj = objective(s)?;
        let bounds = s.scenario.bounds_for(&s.built).map_err(fail)?;
        let out = slice_mut(lambda_out, len, obj.dim())?;
        let res = tune(&obj, &s.built.lambda0(), &bounds, &s.scenario.tuner).map_err(fail)?;
        out.copy_from_slice(&res.lambda_star);
        put(value, res.value_star)?;
        if res.status == TuningStatus::LineSearchFailure {
            set_error(res.failure.unwrap_or_default());
            return Err(PssStatus::LineSearchFailure);
        }
        Ok(())
    })
}
