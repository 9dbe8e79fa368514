//! C ABI over the otmatch library.
//!
//! Objects cross the boundary as opaque handles created by `otm_*_new` style
//! constructors and released with the matching `*_free`. Every fallible call
//! returns an [`OtmStatus`]; on failure, [`otm_last_error`] describes the
//! most recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DVector;
use otmatch::cli::{build_scenario, parse_config_str, preset};
use otmatch::engine::Simulation;
use otmatch::measures::{w2_exact, DiscreteMeasure};
use otmatch::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OtmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    InvariantViolation = 5,
    Io = 6,
    Panic = 7,
}

/// Weighted point cloud.
pub struct OtmMeasure {
    inner: DiscreteMeasure,
}

/// A running multi-agent simulation.
pub struct OtmSimulation {
    inner: Simulation,
}

/// Metrics of one completed cycle.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OtmCycleMetrics {
    pub cycle: u64,
    pub psi_start: f64,
    pub psi_end: f64,
    pub w2: f64,
    pub descent_ok: bool,
    pub bound_ok: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> OtmStatus {
    match err.exit_code() {
        2 => OtmStatus::Config,
        4 => OtmStatus::InvariantViolation,
        5 => OtmStatus::Io,
        _ => match err {
            Error::EmptySupport | Error::InvalidMeasure(_) | Error::DimensionMismatch(_) => OtmStatus::InvalidArgument,
            _ => OtmStatus::Numerical,
        },
    }
}

fn guard(f: impl FnOnce() -> Result<(), (OtmStatus, String)>) -> OtmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OtmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            OtmStatus::Panic
        }
    }
}

fn lib(err: Error) -> (OtmStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (OtmStatus, String) {
    (OtmStatus::NullPointer, format!("`{what}` is null"))
}

/// Message for the last failed call on this thread, or null if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn otm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn otm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a measure from `n` row-major points of dimension `dim` and their
/// weights.
///
/// # Safety
/// `points` must reference `n * dim` doubles and `weights` `n` doubles.
/// `out` must be a valid place to store the handle.
#[no_mangle]
pub unsafe extern "C" fn otm_measure_new(
    points: *const f64,
    weights: *const f64,
    n: usize,
    dim: usize,
    out: *mut *mut OtmMeasure,
) -> OtmStatus {
    guard(|| {
        if points.is_null() || weights.is_null() || out.is_null() {
            return Err(null("points/weights/out"));
        }
        if dim == 0 {
            return Err((OtmStatus::InvalidArgument, "dimension must be positive".into()));
        }
        let coords = std::slice::from_raw_parts(points, n * dim);
        let w = std::slice::from_raw_parts(weights, n).to_vec();
        let pts = coords.chunks(dim).map(DVector::from_column_slice).collect();
        let inner = DiscreteMeasure::new(pts, w).map_err(lib)?;
        *out = Box::into_raw(Box::new(OtmMeasure { inner }));
        Ok(())
    })
}

/// # Safety
/// `m` must come from [`otm_measure_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn otm_measure_free(m: *mut OtmMeasure) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Squared 2-Wasserstein distance between two measures.
///
/// # Safety
/// Handles must be live; `out_cost` must be writable.
#[no_mangle]
pub unsafe extern "C" fn otm_w2_exact(a: *const OtmMeasure, b: *const OtmMeasure, out_cost: *mut f64) -> OtmStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out_cost.is_null() {
            return Err(null("a/b/out_cost"));
        }
        let (cost, _) = w2_exact(&(*a).inner, &(*b).inner).map_err(lib)?;
        *out_cost = cost;
        Ok(())
    })
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, (OtmStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| (OtmStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

fn simulation_from_toml(text: &str, seed: Option<u64>) -> Result<Simulation, (OtmStatus, String)> {
    let mut cfg = parse_config_str(text).map_err(lib)?;
    if let Some(s) = seed {
        cfg.seed = s;
        if cfg.lti.a.is_none() {
            cfg.lti.system_seed = None;
        }
    }
    build_scenario(&cfg).and_then(|s| s.simulation()).map_err(lib)
}

/// Creates a simulation from scenario text (TOML).
///
/// # Safety
/// `config` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn otm_simulation_from_config(config: *const c_char, out: *mut *mut OtmSimulation) -> OtmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = simulation_from_toml(text(config, "config")?, None)?;
        *out = Box::into_raw(Box::new(OtmSimulation { inner }));
        Ok(())
    })
}

/// Creates a simulation from a built-in preset with the given seed.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn otm_simulation_from_preset(
    name: *const c_char,
    seed: u64,
    out: *mut *mut OtmSimulation,
) -> OtmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let name = text(name, "name")?;
        let toml = preset(name).ok_or_else(|| (OtmStatus::Config, format!("unknown preset `{name}`")))?;
        let inner = simulation_from_toml(&toml, Some(seed))?;
        *out = Box::into_raw(Box::new(OtmSimulation { inner }));
        Ok(())
    })
}

/// # Safety
/// `sim` must come from an `otm_simulation_from_*` call and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn otm_simulation_free(sim: *mut OtmSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Runs one cycle. `out` may be null when the metrics are not needed.
///
/// # Safety
/// `sim` must be live; `out`, when non-null, must be writable.
#[no_mangle]
pub unsafe extern "C" fn otm_simulation_step(sim: *mut OtmSimulation, out: *mut OtmCycleMetrics) -> OtmStatus {
    guard(|| {
        if sim.is_null() {
            return Err(null("sim"));
        }
        let c = (*sim).inner.step_cycle().map_err(lib)?;
        if !out.is_null() {
            *out = OtmCycleMetrics {
                cycle: c.cycle as u64,
                psi_start: c.psi_start,
                psi_end: c.psi_end,
                w2: c.w2,
                descent_ok: c.descent_ok,
                bound_ok: c.bound_ok,
            };
        }
        Ok(())
    })
}

/// Number of agents, or 0 for a null handle.
///
/// # Safety
/// `sim` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn otm_simulation_agent_count(sim: *const OtmSimulation) -> usize {
    if sim.is_null() {
        0
    } else {
        (*sim).inner.n_agents()
    }
}

/// Number of completed cycles, or 0 for a null handle.
///
/// # Safety
/// `sim` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn otm_simulation_cycle(sim: *const OtmSimulation) -> u64 {
    if sim.is_null() {
        0
    } else {
        (*sim).inner.state().cycle as u64
    }
}

/// Copies agent positions into `buf` as `x0 y0 x1 y1 ...`.
///
/// `len` is the capacity of `buf` in doubles and must be at least
/// `2 * agent_count`.
///
/// # Safety
/// `sim` must be live; `buf` must reference `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn otm_simulation_positions(sim: *const OtmSimulation, buf: *mut f64, len: usize) -> OtmStatus {
    guard(|| {
        if sim.is_null() || buf.is_null() {
            return Err(null("sim/buf"));
        }
        let positions = (*sim).inner.positions();
        let dim = positions.first().map_or(0, |p| p.len());
        let need = positions.len() * dim;
        if len < need {
            return Err((
                OtmStatus::InvalidArgument,
                format!("buffer holds {len} values, {need} needed"),
            ));
        }
        let out = std::slice::from_raw_parts_mut(buf, need);
        for (dst, v) in out.iter_mut().zip(positions.iter().flat_map(|p| p.iter())) {
            *dst = *v;
        }
        Ok(())
    })
}
