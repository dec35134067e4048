//! C interface to seval-core.
//!
//! Every fallible call returns a [`SevalStatus`]; on failure a message is
//! kept per thread and read with [`seval_last_error`]. Objects are opaque
//! handles released with their `_free` function. Passing NULL to a
//! `_free` function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use seval_core::engine::{greedy_rollout, seval_rollout, CandidateMode};
use seval_core::instance::{detect_format, generate, parse, JsspInstance, Schedule};
use seval_core::model::Checkpoint;
use seval_core::oracle::{dispatch_solve, solve_exact, DispatchRule, ProofStatus, SolveLimits};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SevalStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Io = 4,
    InvalidArgument = 5,
    Model = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Dispatching rules for [`seval_dispatch`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SevalRule {
    Spt = 0,
    Mwkr = 1,
    Fifo = 2,
}

/// A parsed or generated instance.
pub struct SevalInstance(Arc<JsspInstance>);

/// A loaded checkpoint.
pub struct SevalModel(Checkpoint);

/// A complete schedule for one instance.
pub struct SevalSchedule {
    instance: Arc<JsspInstance>,
    schedule: Schedule,
    makespan: u32,
    optimal: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let mut bytes = msg.into().into_bytes();
    bytes.retain(|&b| b != 0);
    let c = CString::new(bytes).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

type Res<T> = Result<T, (SevalStatus, String)>;

fn guard(f: impl FnOnce() -> Res<()>) -> SevalStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SevalStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SevalStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Res<&'a T> {
    p.as_ref().ok_or((SevalStatus::NullArgument, format!("{what} is NULL")))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Res<&'a str> {
    if p.is_null() {
        return Err((SevalStatus::NullArgument, format!("{what} is NULL")));
    }
    CStr::from_ptr(p).to_str().map_err(|e| (SevalStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Res<()> {
    if out.is_null() {
        return Err((SevalStatus::NullArgument, "output pointer is NULL".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn out_guard<T>(out: *mut *mut T, f: impl FnOnce() -> Res<T>) -> SevalStatus {
    guard(|| {
        if out.is_null() {
            return Err((SevalStatus::NullArgument, "output pointer is NULL".into()));
        }
        // SAFETY: checked non-null; the caller provides a writable slot.
        unsafe { *out = ptr::null_mut() };
        let v = f()?;
        unsafe { put(out, v) }
    })
}

/// Message for the last failed call on this thread; empty after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn seval_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn seval_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses an instance in standard or Taillard layout.
///
/// # Safety
/// `text` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seval_instance_parse(text: *const c_char, out: *mut *mut SevalInstance) -> SevalStatus {
    out_guard(out, || {
        let text = as_str(text, "text")?;
        let inst = parse(text, detect_format(text)).map_err(|e| (SevalStatus::Parse, e.to_string()))?;
        Ok(SevalInstance(Arc::new(inst)))
    })
}

/// Random instance with the usual generator.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seval_instance_generate(
    jobs: usize,
    machines: usize,
    seed: u64,
    out: *mut *mut SevalInstance,
) -> SevalStatus {
    out_guard(out, || {
        if jobs == 0 || machines == 0 {
            return Err((SevalStatus::InvalidArgument, "jobs and machines must be positive".into()));
        }
        Ok(SevalInstance(Arc::new(generate(jobs, machines, seed))))
    })
}

/// # Safety
/// `inst` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seval_instance_num_jobs(inst: *const SevalInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.0.num_jobs())
}

/// # Safety
/// `inst` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seval_instance_num_machines(inst: *const SevalInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.0.num_machines())
}

/// # Safety
/// `inst` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seval_instance_num_ops(inst: *const SevalInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.0.num_ops())
}

/// # Safety
/// `inst` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn seval_instance_free(inst: *mut SevalInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seval_model_load(path: *const c_char, out: *mut *mut SevalModel) -> SevalStatus {
    out_guard(out, || {
        let path = as_str(path, "path")?;
        let ck = Checkpoint::load(path).map_err(|e| match e {
            seval_core::model::CheckpointError::Io(io) => (SevalStatus::Io, format!("{path}: {io}")),
            other => (SevalStatus::Model, format!("{path}: {other}")),
        })?;
        Ok(SevalModel(ck))
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn seval_model_free(model: *mut SevalModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

fn wrap(inst: &Arc<JsspInstance>, schedule: Schedule, makespan: u32, optimal: bool) -> SevalSchedule {
    SevalSchedule { instance: inst.clone(), schedule, makespan, optimal }
}

/// Branch and bound with a time limit in seconds (non-positive means
/// none).
///
/// # Safety
/// `inst` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seval_solve_exact(
    inst: *const SevalInstance,
    time_limit: f64,
    out: *mut *mut SevalSchedule,
) -> SevalStatus {
    out_guard(out, || {
        let inst = &as_ref(inst, "instance")?.0;
        let limits = if time_limit > 0.0 { SolveLimits::with_time_limit(time_limit) } else { SolveLimits::unlimited() };
        let r = solve_exact(inst, limits);
        Ok(wrap(inst, r.schedule, r.makespan, r.status == ProofStatus::Optimal))
    })
}

/// # Safety
/// `inst` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seval_dispatch(
    inst: *const SevalInstance,
    rule: SevalRule,
    out: *mut *mut SevalSchedule,
) -> SevalStatus {
    out_guard(out, || {
        let inst = &as_ref(inst, "instance")?.0;
        let rule = match rule {
            SevalRule::Spt => DispatchRule::Spt,
            SevalRule::Mwkr => DispatchRule::Mwkr,
            SevalRule::Fifo => DispatchRule::Fifo,
        };
        let r = dispatch_solve(inst, rule);
        Ok(wrap(inst, r.schedule, r.makespan, false))
    })
}

/// Model rollout: greedy when `n == 1`, otherwise the best of `n`
/// self-evaluated candidates per step.
///
/// # Safety
/// `model` and `inst` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seval_infer(
    model: *const SevalModel,
    inst: *const SevalInstance,
    n: usize,
    seed: u64,
    out: *mut *mut SevalSchedule,
) -> SevalStatus {
    out_guard(out, || {
        let model = &as_ref(model, "model")?.0.model;
        let inst = &as_ref(inst, "instance")?.0;
        let r = match n {
            0 => return Err((SevalStatus::InvalidArgument, "n must be at least 1".into())),
            1 => greedy_rollout(inst, model),
            _ => seval_rollout(inst, model, n, CandidateMode::Maximal, seed),
        }
        .map_err(|e| (SevalStatus::Model, e.to_string()))?;
        Ok(wrap(inst, r.schedule, r.makespan, false))
    })
}

/// # Safety
/// `s` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seval_schedule_makespan(s: *const SevalSchedule) -> u32 {
    s.as_ref().map_or(0, |s| s.makespan)
}

/// 1 when the solver proved the makespan optimal, else 0.
///
/// # Safety
/// `s` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seval_schedule_is_optimal(s: *const SevalSchedule) -> i32 {
    s.as_ref().map_or(0, |s| i32::from(s.optimal))
}

/// Copies start times in job-major operation order. `written` receives
/// the number of operations; with a short buffer nothing is copied and
/// [`SevalStatus::BufferTooSmall`] is returned.
///
/// # Safety
/// `s` must be a live handle; `buf` must hold `len` values (it may be NULL
/// when `len` is 0); `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seval_schedule_starts(
    s: *const SevalSchedule,
    buf: *mut u32,
    len: usize,
    written: *mut usize,
) -> SevalStatus {
    guard(|| {
        let s = as_ref(s, "schedule")?;
        if written.is_null() {
            return Err((SevalStatus::NullArgument, "written is NULL".into()));
        }
        let starts: Vec<u32> = s.schedule.starts().iter().flatten().copied().collect();
        *written = starts.len();
        if len < starts.len() {
            return Err((SevalStatus::BufferTooSmall, format!("need {} slots, got {len}", starts.len())));
        }
        if buf.is_null() {
            return Err((SevalStatus::NullArgument, "buf is NULL".into()));
        }
        ptr::copy_nonoverlapping(starts.as_ptr(), buf, starts.len());
        Ok(())
    })
}

/// Schedule in the text export format as a NUL-terminated string; free
/// it with [`seval_string_free`].
///
/// # Safety
/// `s` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seval_schedule_export(s: *const SevalSchedule, out: *mut *mut c_char) -> SevalStatus {
    guard(|| {
        let s = as_ref(s, "schedule")?;
        if out.is_null() {
            return Err((SevalStatus::NullArgument, "output pointer is NULL".into()));
        }
        *out = ptr::null_mut();
        let text = seval_core::instance::format_schedule(&s.instance, &s.schedule)
            .map_err(|e| (SevalStatus::InvalidArgument, e.to_string()))?;
        *out = CString::new(text).map_err(|e| (SevalStatus::Panic, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn seval_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `s` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn seval_schedule_free(s: *mut SevalSchedule) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}
