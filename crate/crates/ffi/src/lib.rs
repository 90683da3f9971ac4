//! C ABI over the adaptive controller and the experiment harness.
//!
//! Every fallible function returns an [`AbpcStatus`]. On failure the
//! message is available from [`abpc_last_error_message`] on the same
//! thread until the next failing call. Handles are opaque and must be
//! released with [`abpc_controller_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use abpc::config::{load_config, parse_config, parse_kernel_flag, ExperimentConfig, Overrides};
use abpc::harness::{metrics, run_closed_loop, Experiment};
use abpc::plants::Plant;
use abpc::AdaptiveController;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbpcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    DimensionMismatch = 4,
    Numerical = 5,
    Panic = 6,
}

/// Opaque online controller.
pub struct AbpcController {
    inner: AdaptiveController,
    outputs: usize,
    inputs: usize,
}

/// Metrics of one closed-loop run over its control window.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbpcMetrics {
    pub rmse: f64,
    pub iae: f64,
    pub tv_u: f64,
    pub peak_u: f64,
    pub window_start: usize,
    pub window_end: usize,
    /// Number of logged steps.
    pub steps_run: usize,
    /// 1 when every configured step ran.
    pub completed: u8,
    /// Step at which the run stopped, or 0.
    pub failure_step: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(AbpcStatus, String);

impl From<abpc::Error> for Failure {
    fn from(e: abpc::Error) -> Self {
        let status = if e.is_numerical() { AbpcStatus::Numerical } else { AbpcStatus::Config };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AbpcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AbpcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AbpcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(AbpcStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(AbpcStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, expected: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(Failure(AbpcStatus::NullPointer, format!("{what} is null")));
    }
    if len != expected {
        return Err(Failure(
            AbpcStatus::DimensionMismatch,
            format!("{what}: expected {expected} values, got {len}"),
        ));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a>(h: *mut AbpcController) -> Result<&'a mut AbpcController, Failure> {
    h.as_mut().ok_or_else(|| Failure(AbpcStatus::NullPointer, "controller handle is null".into()))
}

unsafe fn resolve(cfg: ExperimentConfig, kernel: *const c_char, seed: Option<u64>) -> Result<Experiment, Failure> {
    let kernel = if kernel.is_null() {
        None
    } else {
        let text = str_arg(kernel, "kernel")?;
        Some(parse_kernel_flag(text, cfg.kernel.width).map_err(|e| Failure(AbpcStatus::Config, e))?)
    };
    cfg.resolve(&Overrides { seed, kernel })
        .map_err(|e| Failure(AbpcStatus::Config, e.to_string()))
}

fn build_controller(exp: &Experiment) -> Result<Box<AbpcController>, Failure> {
    let y_init = Plant::new(exp.plant.clone()).initial_output();
    let inner = exp.controller(&y_init)?;
    Ok(Box::new(AbpcController { inner, outputs: exp.outputs(), inputs: exp.inputs() }))
}

unsafe fn store(out: *mut *mut AbpcController, f: impl FnOnce() -> Result<Box<AbpcController>, Failure>) -> AbpcStatus {
    if out.is_null() {
        set_error("output pointer is null");
        return AbpcStatus::NullPointer;
    }
    *out = ptr::null_mut();
    guard(|| {
        *out = Box::into_raw(f()?);
        Ok(())
    })
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn abpc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn abpc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a controller from a preset name or config path, optionally
/// overriding the kernel (`unitary`, `linear`, `poly2`, `poly2x`, `rbf`;
/// null keeps the configured one).
///
/// # Safety
/// `source` and a non-null `kernel` must be NUL-terminated strings; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn abpc_controller_from_preset(
    source: *const c_char,
    kernel: *const c_char,
    out: *mut *mut AbpcController,
) -> AbpcStatus {
    store(out, || {
        let cfg = load_config(str_arg(source, "source")?).map_err(|e| Failure(AbpcStatus::Config, e.to_string()))?;
        build_controller(&resolve(cfg, kernel, None)?)
    })
}

/// Builds a controller from TOML config text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abpc_controller_from_toml(text: *const c_char, out: *mut *mut AbpcController) -> AbpcStatus {
    store(out, || {
        let cfg = parse_config(str_arg(text, "text")?).map_err(|e| Failure(AbpcStatus::Config, e.to_string()))?;
        build_controller(&resolve(cfg, ptr::null(), None)?)
    })
}

/// Releases a controller. Null is ignored.
///
/// # Safety
/// `h` must come from a constructor in this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn abpc_controller_free(h: *mut AbpcController) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Output dimension `p`, or 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn abpc_controller_outputs(h: *const AbpcController) -> usize {
    h.as_ref().map_or(0, |c| c.outputs)
}

/// Input dimension `m`, or 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn abpc_controller_inputs(h: *const AbpcController) -> usize {
    h.as_ref().map_or(0, |c| c.inputs)
}

/// Records the applied input `u_k` (length `m`).
///
/// # Safety
/// `h` must be a live handle and `u` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn abpc_controller_push_input(h: *mut AbpcController, u: *const f64, len: usize) -> AbpcStatus {
    guard(|| {
        let c = handle(h)?;
        let u = slice_arg(u, len, c.inputs, "u")?;
        Ok(c.inner.push_input(u)?)
    })
}

/// Feeds the measured `y_k` (length `p`). When `yhat_prior` is non-null it
/// receives the one-step prediction made before the update.
///
/// # Safety
/// `h` must be a live handle, `y` must point to `len` doubles and a
/// non-null `yhat_prior` must have room for `p` doubles.
#[no_mangle]
pub unsafe extern "C" fn abpc_controller_observe(
    h: *mut AbpcController,
    y: *const f64,
    len: usize,
    yhat_prior: *mut f64,
) -> AbpcStatus {
    guard(|| {
        let c = handle(h)?;
        let y = slice_arg(y, len, c.outputs, "y")?;
        let obs = c.inner.observe(y)?;
        if !yhat_prior.is_null() {
            ptr::copy_nonoverlapping(obs.yhat_prior.as_ptr(), yhat_prior, obs.yhat_prior.len());
        }
        Ok(())
    })
}

/// Computes `u_{k+1}` (written to `u_next`, length `m`) for a reference of
/// length `p` held over the horizon. A non-null `cost` receives the optimal
/// cost.
///
/// # Safety
/// `h` must be a live handle, `reference` must point to `ref_len` doubles,
/// `u_next` must have room for `u_len` doubles and a non-null `cost` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn abpc_controller_compute(
    h: *mut AbpcController,
    reference: *const f64,
    ref_len: usize,
    u_next: *mut f64,
    u_len: usize,
    cost: *mut f64,
) -> AbpcStatus {
    guard(|| {
        let c = handle(h)?;
        let r = slice_arg(reference, ref_len, c.outputs, "reference")?;
        if u_next.is_null() {
            return Err(Failure(AbpcStatus::NullPointer, "u_next is null".into()));
        }
        if u_len != c.inputs {
            return Err(Failure(
                AbpcStatus::DimensionMismatch,
                format!("u_next: expected {} values, got {u_len}", c.inputs),
            ));
        }
        let step = c.inner.compute(r)?;
        ptr::copy_nonoverlapping(step.solution.u_next.as_ptr(), u_next, u_len);
        if !cost.is_null() {
            *cost = step.solution.cost_value;
        }
        Ok(())
    })
}

/// Runs a preset (or config path) in closed loop and writes its metrics.
/// `seed` and `kernel` may be null to keep the configured values. A run
/// stopped by divergence or a numerical failure still returns `Ok` with
/// `completed = 0`; metrics then cover the logged part of the window, or
/// are NaN when nothing of it was logged.
///
/// # Safety
/// `source` and a non-null `kernel` must be NUL-terminated strings, a
/// non-null `seed` must be readable and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abpc_run_preset(
    source: *const c_char,
    kernel: *const c_char,
    seed: *const u64,
    out: *mut AbpcMetrics,
) -> AbpcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(AbpcStatus::NullPointer, "output pointer is null".into()));
        }
        let cfg = load_config(str_arg(source, "source")?).map_err(|e| Failure(AbpcStatus::Config, e.to_string()))?;
        let exp = resolve(cfg, kernel, seed.as_ref().copied())?;
        let log = run_closed_loop(&exp)?;
        let (start, end) = exp.control_window();
        let last = log.records.last().map_or(0, |r| r.k);
        let window = (start, end.min(last));
        let m = metrics(&log, window).ok();
        *out = AbpcMetrics {
            rmse: m.map_or(f64::NAN, |m| m.rmse),
            iae: m.map_or(f64::NAN, |m| m.iae),
            tv_u: m.map_or(f64::NAN, |m| m.tv_u),
            peak_u: m.map_or(f64::NAN, |m| m.peak_u),
            window_start: window.0,
            window_end: window.1,
            steps_run: log.records.len(),
            completed: u8::from(log.completed()),
            failure_step: log.failure.as_ref().map_or(0, |f| f.step),
        };
        Ok(())
    })
}
