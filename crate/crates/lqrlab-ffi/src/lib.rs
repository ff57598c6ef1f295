//! C ABI for the online-LQR laboratory.
//!
//! Handles are opaque pointers owned by the library; every function returns
//! an [`LqrlabStatus`] and writes results through out-pointers. The generated
//! header lives at `include/lqrlab.h`.
//!
//! ```c
//! LqrlabInstance *inst = NULL;
//! if (lqrlab_instance_generate(1, 200, &inst) != LQRLAB_STATUS_OK) { ... }
//! double j_mpc, j_star, regret;
//! lqrlab_mpc_regret(inst, 5, 0.0, &j_mpc, &j_star, &regret);
//! lqrlab_instance_free(inst);
//! ```
//!
//! All functions are panic-safe: a caught panic maps to
//! `LQRLAB_STATUS_PANIC` instead of unwinding across the boundary.

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use lqrlab::harness::full_cell_report;
use lqrlab::model::{generate_instance, load_instance, save_instance, GeneratorProfile, Instance};
use lqrlab::riccati::stability_constants;
use lqrlab::{Error, Tolerances};

/// Status code returned by every API call.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LqrlabStatus {
    Ok = 0,
    /// A pointer argument was null.
    NullPointer = 1,
    /// Bad dimensions, horizon, window, or non-UTF-8 path.
    InvalidArgument = 2,
    /// Divergence, loss of positive definiteness, or ill-conditioning.
    NumericalFailure = 3,
    /// A configured size cap was exceeded.
    SizeExceeded = 4,
    /// File could not be read, written, or parsed.
    Io = 5,
    /// Internal panic caught at the boundary.
    Panic = 6,
}

/// Opaque problem instance: system, cost schedule, bounds, disturbances.
pub struct LqrlabInstance {
    inner: Instance,
}

fn status_of(err: &Error) -> LqrlabStatus {
    match err {
        Error::Dimension { .. }
        | Error::Horizon { .. }
        | Error::WindowedRegime { .. }
        | Error::PredictionMissing { .. }
        | Error::GainsNotRetained
        | Error::InstanceMismatch(_)
        | Error::NegativeCoefficient { .. }
        | Error::Config(_) => LqrlabStatus::InvalidArgument,
        Error::NotSymmetric { .. }
        | Error::NotPositiveDefinite { .. }
        | Error::DareDivergence { .. }
        | Error::IllConditioned { .. }
        | Error::DegenerateConstants(_) => LqrlabStatus::NumericalFailure,
        Error::Stage { source, .. } => status_of(source),
        Error::SizeCap { .. } => LqrlabStatus::SizeExceeded,
        Error::Io { .. } | Error::Parse { .. } => LqrlabStatus::Io,
    }
}

fn guarded(f: impl FnOnce() -> LqrlabStatus) -> LqrlabStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(LqrlabStatus::Panic)
}

unsafe fn path_from<'a>(ptr: *const c_char) -> Result<&'a Path, LqrlabStatus> {
    if ptr.is_null() {
        return Err(LqrlabStatus::NullPointer);
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map(Path::new)
        .map_err(|_| LqrlabStatus::InvalidArgument)
}

/// Generate a seeded random instance with the default two-state profile.
///
/// On success `*out` owns the handle; release it with
/// [`lqrlab_instance_free`].
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn lqrlab_instance_generate(
    seed: u64,
    horizon: usize,
    out: *mut *mut LqrlabInstance,
) -> LqrlabStatus {
    if out.is_null() {
        return LqrlabStatus::NullPointer;
    }
    guarded(|| match generate_instance(seed, horizon, &GeneratorProfile::paper()) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(LqrlabInstance { inner }));
            LqrlabStatus::Ok
        }
        Err(e) => status_of(&e),
    })
}

/// Load an instance from the documented text format.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for a pointer
/// write.
#[no_mangle]
pub unsafe extern "C" fn lqrlab_instance_load(
    path: *const c_char,
    out: *mut *mut LqrlabInstance,
) -> LqrlabStatus {
    if out.is_null() {
        return LqrlabStatus::NullPointer;
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    guarded(|| match load_instance(path) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(LqrlabInstance { inner }));
            LqrlabStatus::Ok
        }
        Err(e) => status_of(&e),
    })
}

/// Write an instance to the documented text format.
///
/// # Safety
/// `inst` must be a live handle from this library and `path` a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lqrlab_instance_save(
    inst: *const LqrlabInstance,
    path: *const c_char,
) -> LqrlabStatus {
    if inst.is_null() {
        return LqrlabStatus::NullPointer;
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    guarded(|| match save_instance(&(*inst).inner, path) {
        Ok(()) => LqrlabStatus::Ok,
        Err(e) => status_of(&e),
    })
}

/// Release a handle. Null is a no-op.
///
/// # Safety
/// `inst` must be null or a handle from this library not freed before.
#[no_mangle]
pub unsafe extern "C" fn lqrlab_instance_free(inst: *mut LqrlabInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// Horizon `T` of the instance.
///
/// # Safety
/// `inst` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn lqrlab_instance_horizon(
    inst: *const LqrlabInstance,
    out: *mut usize,
) -> LqrlabStatus {
    if inst.is_null() || out.is_null() {
        return LqrlabStatus::NullPointer;
    }
    *out = (*inst).inner.costs.horizon();
    LqrlabStatus::Ok
}

/// Stability constants `τ`, `ρ`, `γ` of the instance's cost bounds.
///
/// # Safety
/// `inst` must be a live handle; the out-pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lqrlab_constants(
    inst: *const LqrlabInstance,
    tau: *mut f64,
    rho: *mut f64,
    gamma: *mut f64,
) -> LqrlabStatus {
    if inst.is_null() || tau.is_null() || rho.is_null() || gamma.is_null() {
        return LqrlabStatus::NullPointer;
    }
    guarded(|| {
        match stability_constants(
            &(*inst).inner.sys,
            &(*inst).inner.bounds,
            &Tolerances::default(),
        ) {
            Ok(c) => {
                *tau = c.tau;
                *rho = c.rho;
                *gamma = c.gamma;
                LqrlabStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Hindsight-optimal total cost `J*`.
///
/// # Safety
/// `inst` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn lqrlab_optimal_cost(
    inst: *const LqrlabInstance,
    out: *mut f64,
) -> LqrlabStatus {
    if inst.is_null() || out.is_null() {
        return LqrlabStatus::NullPointer;
    }
    guarded(|| {
        let tol = Tolerances::default();
        let inner = &(*inst).inner;
        let run = lqrlab::offline::build_offline_policy(&inner.sys, &inner.costs, &tol)
            .and_then(|policy| lqrlab::offline::optimal_rollout(&policy, &inner.trace));
        match run {
            Ok(traj) => {
                *out = traj.total;
                LqrlabStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Run the windowed controller with lookahead `w` and prediction-noise
/// amplitude `snr` (0 means accurate predictions), writing the realized
/// cost, the optimal cost and their difference.
///
/// # Safety
/// `inst` must be a live handle; the out-pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lqrlab_mpc_regret(
    inst: *const LqrlabInstance,
    w: usize,
    snr: f64,
    j_mpc: *mut f64,
    j_star: *mut f64,
    regret: *mut f64,
) -> LqrlabStatus {
    if inst.is_null() || j_mpc.is_null() || j_star.is_null() || regret.is_null() {
        return LqrlabStatus::NullPointer;
    }
    if snr.is_nan() || snr < 0.0 {
        return LqrlabStatus::InvalidArgument;
    }
    guarded(|| {
        match full_cell_report(&(*inst).inner, w, snr, &Tolerances::default()) {
            Ok(report) => {
                *j_mpc = report.j_pi;
                *j_star = report.j_star;
                *regret = report.regret;
                LqrlabStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn lqrlab_status_message(status: LqrlabStatus) -> *const c_char {
    let msg: &'static [u8] = match status {
        LqrlabStatus::Ok => b"ok\0",
        LqrlabStatus::NullPointer => b"null pointer argument\0",
        LqrlabStatus::InvalidArgument => b"invalid argument\0",
        LqrlabStatus::NumericalFailure => b"numerical failure\0",
        LqrlabStatus::SizeExceeded => b"size cap exceeded\0",
        LqrlabStatus::Io => b"i/o or parse failure\0",
        LqrlabStatus::Panic => b"internal panic\0",
    };
    msg.as_ptr() as *const c_char
}
