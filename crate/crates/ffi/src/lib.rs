//! C ABI over the `mcfg` core.
//!
//! Every fallible function returns an [`McfgStatus`]. On failure the
//! message is kept per thread and read with [`mcfg_last_error`]. Objects
//! are opaque handles created by `*_new` functions and released by the
//! matching `*_free`. Array arguments are `(pointer, length)` pairs; output
//! arrays must have exactly the length the operation produces.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mcfg::embedding::{perturb, ConditionEmbedding, Group, PerturbationSpec};
use mcfg::guidance;
use mcfg::harness::manifest::ScenarioManifest;
use mcfg::harness::output::write_csv;
use mcfg::harness::sweep::{run_sweep, run_sweep_with_jobs, SweepResult};
use mcfg::metrics::{evaluate, MetricsReport};
use mcfg::schedule::{build_linear_schedule, NoiseSchedule};
use mcfg::toymodel::{LatentVideo, WorldModel, WorldParams};
use mcfg::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McfgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    OutOfRange = 4,
    Io = 5,
    Parse = 6,
    Validation = 7,
    Run = 8,
    Panic = 9,
}

/// Embedding index group targeted by a perturbation.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McfgGroup {
    Content = 0,
    Motion = 1,
    Count = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct McfgMetrics {
    pub flow: f64,
    pub structural_var: f64,
    pub align_err: f64,
    pub count_pred: usize,
    pub count_true: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct McfgSweepRow {
    pub policy_index: usize,
    pub grid_index: usize,
    pub omega: f64,
    pub omega_std: f64,
    pub tau: f64,
    pub sigma_c: f64,
    pub seed: u64,
    pub metrics: McfgMetrics,
}

pub struct McfgSchedule {
    inner: NoiseSchedule,
}

pub struct McfgWorld {
    inner: WorldModel,
}

pub struct McfgSweep {
    inner: SweepResult,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: McfgStatus,
    message: String,
}

impl Failure {
    fn new(status: McfgStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn null(what: &str) -> Self {
        Self::new(McfgStatus::NullPointer, format!("null pointer: {what}"))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::StepOutOfRange { .. } => McfgStatus::OutOfRange,
            Error::DimensionMismatch { .. } | Error::ShapeMismatch { .. } | Error::LengthMismatch { .. } => {
                McfgStatus::DimensionMismatch
            }
            Error::Io { .. } => McfgStatus::Io,
            Error::Parse { .. } => McfgStatus::Parse,
            Error::Validation { .. } => McfgStatus::Validation,
            Error::Run { .. } => McfgStatus::Run,
            _ => McfgStatus::InvalidArgument,
        };
        let mut message = e.to_string();
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            message.push_str(": ");
            message.push_str(&s.to_string());
            source = s.source();
        }
        Self { status, message }
    }
}

type FfiResult<T = ()> = Result<T, Failure>;

fn set_last_error(message: Option<String>) {
    let c = message.map(|m| CString::new(m.replace('\0', " ")).expect("nul bytes removed"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> FfiResult) -> McfgStatus {
    set_last_error(None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => McfgStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(Some(e.message));
            e.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(Some(format!("panic: {msg}")));
            McfgStatus::Panic
        }
    }
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, expected: usize, what: &str) -> FfiResult<&'a mut [f64]> {
    if len != expected {
        return Err(Failure::new(
            McfgStatus::DimensionMismatch,
            format!("{what}: expected length {expected}, got {len}"),
        ));
    }
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure::new(McfgStatus::InvalidArgument, format!("{what}: not UTF-8: {e}")))
}

fn emit<T>(out: *mut *mut T, value: T) {
    // SAFETY: callers check `out` for null before computing `value`.
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

fn copy_into(dst: &mut [f64], src: &[f64]) {
    dst.copy_from_slice(src);
}

fn metrics(m: &MetricsReport) -> McfgMetrics {
    McfgMetrics {
        flow: m.flow,
        structural_var: m.structural_var,
        align_err: m.align_err,
        count_pred: m.count_pred,
        count_true: m.count_true,
    }
}

/// Message for the last failed call on this thread, or null after a
/// successful one. Valid until the next `mcfg_*` call on the same thread.
#[no_mangle]
pub extern "C" fn mcfg_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, nul-terminated version string.
#[no_mangle]
pub extern "C" fn mcfg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- schedule ------------------------------------------------------------

/// Linear beta schedule with `steps` steps.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn mcfg_schedule_new(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    out: *mut *mut McfgSchedule,
) -> McfgStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let inner = build_linear_schedule(steps, beta_start, beta_end)?;
        emit(out, McfgSchedule { inner });
        Ok(())
    })
}

/// # Safety
/// `schedule` must be null or a handle from [`mcfg_schedule_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mcfg_schedule_free(schedule: *mut McfgSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// Number of steps, or 0 for a null handle.
///
/// # Safety
/// `schedule` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mcfg_schedule_steps(schedule: *const McfgSchedule) -> usize {
    schedule.as_ref().map_or(0, |s| s.inner.steps())
}

/// Cumulative product of `1 - beta` up to `t`, with `t` in `[0, T]`.
///
/// # Safety
/// `schedule` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mcfg_schedule_alpha_bar(schedule: *const McfgSchedule, t: usize, out: *mut f64) -> McfgStatus {
    guard(|| {
        let s = handle(schedule, "schedule")?;
        let out = out_ptr(out, "out")?;
        *out = s.inner.alpha_bar(t)?;
        Ok(())
    })
}

// ---- world model ---------------------------------------------------------

/// World with the default layout: 3 slots, 8 frames, 10 prototypes.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcfg_world_new_default(out: *mut *mut McfgWorld) -> McfgStatus {
    mcfg_world_new(3, 8, 0.05, 0, out)
}

/// World with `slots` objects over `frames` frames, clean-data spread
/// `sigma_data` and the default prototype counts drawn from `prototype_seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcfg_world_new(
    slots: usize,
    frames: usize,
    sigma_data: f64,
    prototype_seed: u64,
    out: *mut *mut McfgWorld,
) -> McfgStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let mut params = WorldParams {
            slots,
            frames,
            sigma_data,
            ..WorldParams::default()
        };
        params.prototypes.seed = prototype_seed;
        let inner = WorldModel::new(&params)?;
        emit(out, McfgWorld { inner });
        Ok(())
    })
}

/// # Safety
/// `world` must be null or a handle from a `mcfg_world_new*` call not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mcfg_world_free(world: *mut McfgWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Latent length `frames * slots * 3`, or 0 for a null handle.
///
/// # Safety
/// `world` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mcfg_world_latent_dim(world: *const McfgWorld) -> usize {
    world.as_ref().map_or(0, |w| w.inner.latent_dim())
}

/// Embedding length `5 * slots`, or 0 for a null handle.
///
/// # Safety
/// `world` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mcfg_world_embedding_dim(world: *const McfgWorld) -> usize {
    world.as_ref().map_or(0, |w| w.inner.embedding_dim())
}

unsafe fn latent(w: &WorldModel, z: *const f64, len: usize) -> FfiResult<LatentVideo> {
    let data = input(z, len, "z")?.to_vec();
    Ok(LatentVideo::from_vec(w.frames(), w.slots(), data)?)
}

unsafe fn condition(w: &WorldModel, c: *const f64, len: usize) -> FfiResult<ConditionEmbedding> {
    let values = input(c, len, "condition")?.to_vec();
    Ok(ConditionEmbedding::new(values, w.default_groups())?)
}

/// Conditional noise prediction at step `t` in `[1, T]`.
///
/// # Safety
/// Handles must be live; `z` has `z_len` readable values, `c` has `c_len`,
/// and `out` has `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn mcfg_world_eps_conditional(
    world: *const McfgWorld,
    schedule: *const McfgSchedule,
    z: *const f64,
    z_len: usize,
    t: usize,
    c: *const f64,
    c_len: usize,
    out: *mut f64,
    out_len: usize,
) -> McfgStatus {
    guard(|| {
        let w = &handle(world, "world")?.inner;
        let s = &handle(schedule, "schedule")?.inner;
        let z = latent(w, z, z_len)?;
        let c = condition(w, c, c_len)?;
        let out = output(out, out_len, w.latent_dim(), "out")?;
        copy_into(out, w.eps_conditional(s, &z, t, &c)?.as_slice());
        Ok(())
    })
}

/// Exact mixture (unconditional) noise prediction at step `t`.
///
/// # Safety
/// As for [`mcfg_world_eps_conditional`].
#[no_mangle]
pub unsafe extern "C" fn mcfg_world_eps_unconditional(
    world: *const McfgWorld,
    schedule: *const McfgSchedule,
    z: *const f64,
    z_len: usize,
    t: usize,
    out: *mut f64,
    out_len: usize,
) -> McfgStatus {
    guard(|| {
        let w = &handle(world, "world")?.inner;
        let s = &handle(schedule, "schedule")?.inner;
        let z = latent(w, z, z_len)?;
        let out = output(out, out_len, w.latent_dim(), "out")?;
        copy_into(out, w.eps_unconditional(s, &z, t)?.as_slice());
        Ok(())
    })
}

/// Adds `sigma_c`-scaled Gaussian noise, drawn deterministically from
/// `(seed, nonce)`, to the coordinates of `c` in `group` (an [`McfgGroup`]
/// value). Other coordinates are copied.
///
/// # Safety
/// `world` must be live; `c` and `out` hold `len` values each.
#[no_mangle]
pub unsafe extern "C" fn mcfg_perturb(
    world: *const McfgWorld,
    c: *const f64,
    len: usize,
    group: u32,
    sigma_c: f64,
    seed: u64,
    nonce: u64,
    out: *mut f64,
    out_len: usize,
) -> McfgStatus {
    guard(|| {
        let w = &handle(world, "world")?.inner;
        let c = condition(w, c, len)?;
        let out = output(out, out_len, c.len(), "out")?;
        let target = match group {
            g if g == McfgGroup::Content as u32 => Group::Content,
            g if g == McfgGroup::Motion as u32 => Group::Motion,
            g if g == McfgGroup::Count as u32 => Group::Count,
            g => return Err(Failure::new(McfgStatus::InvalidArgument, format!("unknown group {g}"))),
        };
        let p = perturb(&c, &PerturbationSpec::new(target, sigma_c, seed), nonce)?;
        copy_into(out, p.values());
        Ok(())
    })
}

/// Toy metrics of a clean latent against its condition.
///
/// # Safety
/// `world` must be live, arrays readable for their lengths, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mcfg_evaluate(
    world: *const McfgWorld,
    z: *const f64,
    z_len: usize,
    c: *const f64,
    c_len: usize,
    threshold: f64,
    out: *mut McfgMetrics,
) -> McfgStatus {
    guard(|| {
        let w = &handle(world, "world")?.inner;
        let v = latent(w, z, z_len)?;
        let c = condition(w, c, c_len)?;
        let out = out_ptr(out, "out")?;
        *out = metrics(&evaluate(&v, &c, threshold)?);
        Ok(())
    })
}

// ---- guidance rules ------------------------------------------------------

type Combine = fn(&[f64], &[f64], f64) -> mcfg::Result<Vec<f64>>;

unsafe fn combine(
    rule: Combine,
    a: *const f64,
    b: *const f64,
    len: usize,
    scale: f64,
    out: *mut f64,
    out_len: usize,
) -> McfgStatus {
    guard(|| {
        let a = input(a, len, "first operand")?;
        let b = input(b, len, "second operand")?;
        let out = output(out, out_len, len, "out")?;
        copy_into(out, &rule(a, b, scale)?);
        Ok(())
    })
}

/// `eps_null + omega_std * (eps_cond - eps_null)`.
///
/// # Safety
/// Inputs hold `len` values; `out` holds `out_len == len`.
#[no_mangle]
pub unsafe extern "C" fn mcfg_cfg_combine(
    eps_null: *const f64,
    eps_cond: *const f64,
    len: usize,
    omega_std: f64,
    out: *mut f64,
    out_len: usize,
) -> McfgStatus {
    combine(guidance::cfg_combine, eps_null, eps_cond, len, omega_std, out, out_len)
}

/// `eps_pert + omega * (eps_cond - eps_pert)`.
///
/// # Safety
/// As for [`mcfg_cfg_combine`].
#[no_mangle]
pub unsafe extern "C" fn mcfg_motioncfg_combine(
    eps_pert: *const f64,
    eps_cond: *const f64,
    len: usize,
    omega: f64,
    out: *mut f64,
    out_len: usize,
) -> McfgStatus {
    combine(
        guidance::motioncfg_combine,
        eps_pert,
        eps_cond,
        len,
        omega,
        out,
        out_len,
    )
}

/// `eps_cond + omega * (eps_cond - eps_pert)`.
///
/// # Safety
/// As for [`mcfg_cfg_combine`].
#[no_mangle]
pub unsafe extern "C" fn mcfg_motioncfg_anchored(
    eps_cond: *const f64,
    eps_pert: *const f64,
    len: usize,
    omega: f64,
    out: *mut f64,
    out_len: usize,
) -> McfgStatus {
    combine(
        guidance::motioncfg_anchored,
        eps_cond,
        eps_pert,
        len,
        omega,
        out,
        out_len,
    )
}

/// Clean estimate from `z_t` and a noise prediction.
///
/// # Safety
/// `schedule` live; `z`, `eps`, `out` hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn mcfg_tweedie(
    schedule: *const McfgSchedule,
    z: *const f64,
    eps: *const f64,
    len: usize,
    t: usize,
    out: *mut f64,
    out_len: usize,
) -> McfgStatus {
    guard(|| {
        let s = &handle(schedule, "schedule")?.inner;
        let z = input(z, len, "z")?;
        let eps = input(eps, len, "eps")?;
        let out = output(out, out_len, len, "out")?;
        copy_into(out, &guidance::tweedie(z, eps, s, t)?);
        Ok(())
    })
}

/// Noise prediction that maps `z_t` to the clean estimate `z_updated`.
///
/// # Safety
/// As for [`mcfg_tweedie`].
#[no_mangle]
pub unsafe extern "C" fn mcfg_effective_noise(
    schedule: *const McfgSchedule,
    z: *const f64,
    z_updated: *const f64,
    len: usize,
    t: usize,
    out: *mut f64,
    out_len: usize,
) -> McfgStatus {
    guard(|| {
        let s = &handle(schedule, "schedule")?.inner;
        let z = input(z, len, "z")?;
        let upd = input(z_updated, len, "z_updated")?;
        let out = output(out, out_len, len, "out")?;
        copy_into(out, &guidance::effective_noise(z, upd, s, t)?);
        Ok(())
    })
}

/// Guidance scale equivalent to a clean-space step of size `gamma` at `t`.
///
/// # Safety
/// `schedule` live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mcfg_omega_from_gamma(
    schedule: *const McfgSchedule,
    gamma: f64,
    t: usize,
    out: *mut f64,
) -> McfgStatus {
    guard(|| {
        let s = &handle(schedule, "schedule")?.inner;
        let out = out_ptr(out, "out")?;
        *out = guidance::omega_from_gamma(gamma, s, t)?;
        Ok(())
    })
}

// ---- sweeps --------------------------------------------------------------

/// Runs the sweep described by a JSON manifest. `jobs == 0` uses the
/// global thread pool.
///
/// # Safety
/// `manifest_json` is a nul-terminated UTF-8 string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mcfg_sweep_run_json(
    manifest_json: *const c_char,
    jobs: usize,
    out: *mut *mut McfgSweep,
) -> McfgStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let m = ScenarioManifest::from_json(text(manifest_json, "manifest_json")?)?;
        let inner = if jobs == 0 {
            run_sweep(&m)?
        } else {
            run_sweep_with_jobs(&m, jobs)?
        };
        let names = inner
            .rows
            .iter()
            .map(|r| CString::new(r.policy.replace('\0', " ")).expect("nul bytes removed"))
            .collect();
        emit(out, McfgSweep { inner, names });
        Ok(())
    })
}

/// # Safety
/// `sweep` must be null or a handle from [`mcfg_sweep_run_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mcfg_sweep_free(sweep: *mut McfgSweep) {
    if !sweep.is_null() {
        drop(Box::from_raw(sweep));
    }
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `sweep` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mcfg_sweep_row_count(sweep: *const McfgSweep) -> usize {
    sweep.as_ref().map_or(0, |s| s.inner.rows.len())
}

/// Copies row `index` into `out`.
///
/// # Safety
/// `sweep` live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mcfg_sweep_row(sweep: *const McfgSweep, index: usize, out: *mut McfgSweepRow) -> McfgStatus {
    guard(|| {
        let s = handle(sweep, "sweep")?;
        let out = out_ptr(out, "out")?;
        let r = s.inner.rows.get(index).ok_or_else(|| {
            Failure::new(
                McfgStatus::OutOfRange,
                format!("row {index} outside [0, {})", s.inner.rows.len()),
            )
        })?;
        *out = McfgSweepRow {
            policy_index: r.policy_index,
            grid_index: r.grid_index,
            omega: r.omega,
            omega_std: r.omega_std,
            tau: r.tau,
            sigma_c: r.sigma_c,
            seed: r.seed,
            metrics: metrics(&r.metrics),
        };
        Ok(())
    })
}

/// Policy id of row `index`, or null when out of range. Owned by the
/// handle and valid until [`mcfg_sweep_free`].
///
/// # Safety
/// `sweep` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mcfg_sweep_policy(sweep: *const McfgSweep, index: usize) -> *const c_char {
    sweep
        .as_ref()
        .and_then(|s| s.names.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Writes the per-run CSV to `path`.
///
/// # Safety
/// `sweep` live; `path` a nul-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn mcfg_sweep_write_csv(sweep: *const McfgSweep, path: *const c_char) -> McfgStatus {
    guard(|| {
        let s = handle(sweep, "sweep")?;
        let path = text(path, "path")?;
        write_csv(&s.inner, Path::new(path))?;
        Ok(())
    })
}
