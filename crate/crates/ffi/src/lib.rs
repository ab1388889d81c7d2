//! C ABI over `mmhp-core`.
//!
//! Objects are opaque handles created by `*_new` or by an operation and
//! released with the matching `*_free`. Every fallible call returns an
//! [`MmhpStatus`]; on failure, [`mmhp_last_error_message`] describes the
//! most recent error on the calling thread. Probability rows are returned
//! row-major (`len × n_states`).

use std::cell::RefCell;
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use mmhp_core::filter::{default_max_substep, filter_counts, filter_events, PosteriorPath};
use mmhp_core::model::stationary_distribution;
use mmhp_core::simulate::{
    simulate_chain, simulate_events_thinning, ChainPath, CountSeries, EventTimes, InitialState,
};
use mmhp_core::smoother::filter_smooth_counts;
use mmhp_core::{Error, HawkesParams, ModelSpec, RateMatrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmhpStatus {
    Ok = 0,
    InvalidInput = 1,
    /// A numerical diagnostic (instability, degenerate posterior, ...).
    Numerical = 2,
    NullPointer = 3,
    Panic = 4,
}

pub struct MmhpModel(ModelSpec);
pub struct MmhpEvents(EventTimes);
pub struct MmhpPath(PosteriorPath);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(e: Error) -> MmhpStatus {
    set_error(format!("{}: {e}", e.code()));
    if e.exit_code() == 2 {
        MmhpStatus::Numerical
    } else {
        MmhpStatus::InvalidInput
    }
}

fn null(name: &str) -> MmhpStatus {
    set_error(format!("null pointer: {name}"));
    MmhpStatus::NullPointer
}

/// Runs `f`, converting panics and errors into status codes.
fn guard<F: FnOnce() -> Result<(), MmhpStatus>>(f: F) -> MmhpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MmhpStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            MmhpStatus::Panic
        }
    }
}

unsafe fn slice_in<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], MmhpStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, MmhpStatus> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn store<T>(out: *mut *mut T, value: T, name: &str) -> Result<(), MmhpStatus> {
    if out.is_null() {
        return Err(null(name));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the last error message on this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes) and returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mmhp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds a model. `rate_matrix` holds `n·n` entries row-major, entry
/// `(i, j)` being the rate `j → i`. `zeta` may be null (all ones). `q0` may
/// be null: the stationary law, or uniform when it is not unique.
///
/// # Safety
/// Non-null pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn mmhp_model_new(
    n: usize,
    rate_matrix: *const f64,
    alpha: *const f64,
    beta: *const f64,
    gamma: *const f64,
    zeta: *const f64,
    q0: *const f64,
    out: *mut *mut MmhpModel,
) -> MmhpStatus {
    guard(|| {
        if n == 0 {
            set_error("invalid-input: n must be positive".into());
            return Err(MmhpStatus::InvalidInput);
        }
        let a = RateMatrix::from_row_major(n, slice_in(rate_matrix, n * n, "rate_matrix")?.to_vec())
            .map_err(fail)?;
        let zeta = if zeta.is_null() { vec![1.0; n] } else { slice_in(zeta, n, "zeta")?.to_vec() };
        let params = HawkesParams::with_zeta(
            slice_in(alpha, n, "alpha")?.to_vec(),
            slice_in(beta, n, "beta")?.to_vec(),
            slice_in(gamma, n, "gamma")?.to_vec(),
            zeta,
        )
        .map_err(fail)?;
        let q0 = if q0.is_null() {
            match stationary_distribution(&a) {
                Ok(p) => p,
                Err(Error::Ambiguous(_)) => vec![1.0 / n as f64; n],
                Err(e) => return Err(fail(e)),
            }
        } else {
            slice_in(q0, n, "q0")?.to_vec()
        };
        let model = ModelSpec::new(a, params, q0).map_err(fail)?;
        store(out, MmhpModel(model), "out")
    })
}

/// # Safety
/// `model` must be null or a handle from [`mmhp_model_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mmhp_model_free(model: *mut MmhpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmhp_model_n_states(model: *const MmhpModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.n())
}

/// Wraps strictly increasing event times.
///
/// # Safety
/// `times` must reference `len` values (or be null when `len` is 0).
#[no_mangle]
pub unsafe extern "C" fn mmhp_events_new(
    times: *const f64,
    len: usize,
    out: *mut *mut MmhpEvents,
) -> MmhpStatus {
    guard(|| {
        let ev = EventTimes::new(slice_in(times, len, "times")?.to_vec()).map_err(fail)?;
        store(out, MmhpEvents(ev), "out")
    })
}

/// # Safety
/// `events` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmhp_events_free(events: *mut MmhpEvents) {
    if !events.is_null() {
        drop(Box::from_raw(events));
    }
}

/// # Safety
/// `events` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmhp_events_len(events: *const MmhpEvents) -> usize {
    events.as_ref().map_or(0, |e| e.0.len())
}

/// Copies up to `len` event times into `buf`; returns the number copied.
///
/// # Safety
/// `events` must be a live handle; `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn mmhp_events_copy(events: *const MmhpEvents, buf: *mut f64, len: usize) -> usize {
    match (events.as_ref(), buf.is_null()) {
        (Some(e), false) => {
            let n = e.0.len().min(len);
            ptr::copy_nonoverlapping(e.0.as_slice().as_ptr(), buf, n);
            n
        }
        _ => 0,
    }
}

/// Simulates events on `[0, horizon]`. With `n_changepoints > 0` the chain
/// is fixed: `labels` holds `n_changepoints + 1` states. Otherwise the chain
/// is drawn from the model, starting from `q0`.
///
/// # Safety
/// `model` must be a live handle; arrays must have the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn mmhp_simulate_events(
    model: *const MmhpModel,
    changepoints: *const f64,
    labels: *const usize,
    n_changepoints: usize,
    horizon: f64,
    seed: u64,
    out: *mut *mut MmhpEvents,
) -> MmhpStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let chain = if n_changepoints > 0 {
            if labels.is_null() {
                return Err(null("labels"));
            }
            let cps = slice_in(changepoints, n_changepoints, "changepoints")?;
            let labels = slice::from_raw_parts(labels, n_changepoints + 1);
            ChainPath::from_changepoints(cps, labels).map_err(fail)?
        } else {
            simulate_chain(&m.rate_matrix, &InitialState::Law(m.q0.clone()), horizon, seed)
                .map_err(fail)?
        };
        let ev = simulate_events_thinning(m, &chain, horizon, seed, None).map_err(fail)?;
        store(out, MmhpEvents(ev), "out")
    })
}

unsafe fn counts_from(t0: f64, dt: f64, counts: *const f64, n_bins: usize) -> Result<CountSeries, MmhpStatus> {
    CountSeries::new(t0, dt, slice_in(counts, n_bins, "counts")?.to_vec()).map_err(fail)
}

/// Filters bin counts on the grid `]t0 + (i-1)dt, t0 + i dt]`; the path has
/// `n_bins + 1` points.
///
/// # Safety
/// `model` must be a live handle; `counts` must hold `n_bins` values.
#[no_mangle]
pub unsafe extern "C" fn mmhp_filter_counts(
    model: *const MmhpModel,
    t0: f64,
    dt: f64,
    counts: *const f64,
    n_bins: usize,
    out: *mut *mut MmhpPath,
) -> MmhpStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let c = counts_from(t0, dt, counts, n_bins)?;
        store(out, MmhpPath(filter_counts(m, &c).map_err(fail)?), "out")
    })
}

/// Smoothed posterior for bin counts; same layout as [`mmhp_filter_counts`].
///
/// # Safety
/// `model` must be a live handle; `counts` must hold `n_bins` values.
#[no_mangle]
pub unsafe extern "C" fn mmhp_smooth_counts(
    model: *const MmhpModel,
    t0: f64,
    dt: f64,
    counts: *const f64,
    n_bins: usize,
    out: *mut *mut MmhpPath,
) -> MmhpStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let c = counts_from(t0, dt, counts, n_bins)?;
        let (_, s) = filter_smooth_counts(m, &c).map_err(fail)?;
        store(out, MmhpPath(s), "out")
    })
}

/// Filters exact event times on `[0, horizon]`, recording time 0, each event
/// and the horizon. `max_substep <= 0` selects the default.
///
/// # Safety
/// `model` and `events` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn mmhp_filter_events(
    model: *const MmhpModel,
    events: *const MmhpEvents,
    horizon: f64,
    max_substep: f64,
    out: *mut *mut MmhpPath,
) -> MmhpStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let ev = &handle(events, "events")?.0;
        let h = if max_substep > 0.0 { max_substep } else { default_max_substep(m) };
        store(out, MmhpPath(filter_events(m, ev, horizon, &[], h).map_err(fail)?), "out")
    })
}

/// # Safety
/// `path` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmhp_path_free(path: *mut MmhpPath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}

/// # Safety
/// `path` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmhp_path_len(path: *const MmhpPath) -> usize {
    path.as_ref().map_or(0, |p| p.0.len())
}

/// # Safety
/// `path` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmhp_path_n_states(path: *const MmhpPath) -> usize {
    path.as_ref().map_or(0, |p| p.0.n_states())
}

/// Log-evidence of the forward pass; NaN for a null handle.
///
/// # Safety
/// `path` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmhp_path_log_evidence(path: *const MmhpPath) -> f64 {
    path.as_ref().map_or(f64::NAN, |p| p.0.log_evidence)
}

/// Copies the `len` path times into `buf`.
///
/// # Safety
/// `path` must be a live handle; `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn mmhp_path_times(path: *const MmhpPath, buf: *mut f64, len: usize) -> MmhpStatus {
    guard(|| {
        let p = &handle(path, "path")?.0;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len != p.len() {
            set_error(format!("invalid-input: buffer holds {len} values, path has {}", p.len()));
            return Err(MmhpStatus::InvalidInput);
        }
        ptr::copy_nonoverlapping(p.times.as_ptr(), buf, len);
        Ok(())
    })
}

/// Copies the probabilities row-major into `buf` of `len = path_len · n_states`.
///
/// # Safety
/// `path` must be a live handle; `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn mmhp_path_probs(path: *const MmhpPath, buf: *mut f64, len: usize) -> MmhpStatus {
    guard(|| {
        let p = &handle(path, "path")?.0;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let want = p.len() * p.n_states();
        if len != want {
            set_error(format!("invalid-input: buffer holds {len} values, path needs {want}"));
            return Err(MmhpStatus::InvalidInput);
        }
        let out = slice::from_raw_parts_mut(buf, len);
        for (row, chunk) in p.probs.iter().zip(out.chunks_mut(p.n_states().max(1))) {
            chunk.copy_from_slice(row);
        }
        Ok(())
    })
}
