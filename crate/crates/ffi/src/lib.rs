//! C ABI over the `pbnet` library.
//!
//! Every fallible function returns a [`PbnetStatus`]; on failure the message is
//! available from [`pbnet_last_error_message`] on the same thread. Handles are
//! opaque and must be released with the matching `_free` function.

use pbnet::network::{Engine, EngineSpec};
use pbnet::params::{ids, ParamStore};
use pbnet::training::{CsTemplate, ProblemConfig};
use pbnet::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

pub const PBNET_ENGINE_STANDARD: u32 = 0;
pub const PBNET_ENGINE_MEMEFF: u32 = 1;
pub const PBNET_ENGINE_CHECKPOINT: u32 = 2;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PbnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Dimension = 3,
    Argument = 4,
    Config = 5,
    Numeric = 6,
    State = 7,
    Training = 8,
    Io = 9,
    Panic = 10,
}

/// Compressed-sensing problem: dimensions, algorithm and layer settings.
pub struct PbnetProblem {
    template: CsTemplate,
}

/// Parameter store for one problem (measurement matrix and scalars).
pub struct PbnetParams {
    store: ParamStore,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PbnetStatus {
    match e {
        Error::Dimension { .. } => PbnetStatus::Dimension,
        Error::Argument(_) => PbnetStatus::Argument,
        Error::Config(_) | Error::Json(_) => PbnetStatus::Config,
        Error::Numeric(_) => PbnetStatus::Numeric,
        Error::State(_) => PbnetStatus::State,
        Error::Training(_) => PbnetStatus::Training,
        Error::Io(_) => PbnetStatus::Io,
        Error::Layer { source, .. } | Error::Sample { source, .. } => status_of(source),
    }
}

struct Fail(PbnetStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(PbnetStatus::NullPointer, format!("{what} is NULL"))
}

fn guard<F>(f: F) -> PbnetStatus
where
    F: FnOnce() -> Result<(), Fail>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PbnetStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            PbnetStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn engine_of(code: u32) -> Result<Engine, Fail> {
    match code {
        PBNET_ENGINE_STANDARD => Ok(Engine::Standard),
        PBNET_ENGINE_MEMEFF => Ok(Engine::MemoryEfficient),
        PBNET_ENGINE_CHECKPOINT => Ok(Engine::CheckpointOnly),
        other => Err(Fail(
            PbnetStatus::Argument,
            format!("unknown engine code {other}"),
        )),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pbnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length including the NUL,
/// or 0 when there is no error.
///
/// # Safety
/// `buf` must be NULL or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pbnet_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n - 1) = 0;
            }
            bytes.len()
        }
    })
}

/// Parses a problem description (JSON object with the keys of the `problem`
/// section of a run config; `"{}"` gives the defaults).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pbnet_problem_from_json(
    json: *const c_char,
    out: *mut *mut PbnetProblem,
) -> PbnetStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Fail(PbnetStatus::InvalidUtf8, e.to_string()))?;
        let cfg: ProblemConfig = serde_json::from_str(text)
            .map_err(|e| Fail(PbnetStatus::Config, format!("invalid problem: {e}")))?;
        // Forward passes never invert; the contraction bound is checked per
        // gradient call when the memory-efficient engine is selected.
        let template = CsTemplate::new(cfg)?.with_invertibility_check(false);
        *out = Box::into_raw(Box::new(PbnetProblem { template }));
        Ok(())
    })
}

/// # Safety
/// `problem` must be NULL or a handle from [`pbnet_problem_from_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pbnet_problem_free(problem: *mut PbnetProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Writes the measurement count `m`, signal length `n` and layer count.
///
/// # Safety
/// `problem` must be a live handle; output pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pbnet_problem_dims(
    problem: *const PbnetProblem,
    m: *mut usize,
    n: *mut usize,
    n_layers: *mut usize,
) -> PbnetStatus {
    guard(|| {
        let p = problem.as_ref().ok_or_else(|| null("problem"))?;
        if m.is_null() || n.is_null() || n_layers.is_null() {
            return Err(null("output pointer"));
        }
        let c = p.template.config();
        *m = c.m;
        *n = c.n;
        *n_layers = c.n_layers;
        Ok(())
    })
}

/// Initial parameters: Gaussian measurement matrix drawn from `seed`.
///
/// # Safety
/// `problem` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pbnet_params_init(
    problem: *const PbnetProblem,
    seed: u64,
    out: *mut *mut PbnetParams,
) -> PbnetStatus {
    guard(|| {
        let p = problem.as_ref().ok_or_else(|| null("problem"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let store = p.template.init_params(seed)?;
        *out = Box::into_raw(Box::new(PbnetParams { store }));
        Ok(())
    })
}

/// # Safety
/// `params` must be NULL or a handle from [`pbnet_params_init`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pbnet_params_free(params: *mut PbnetParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Copies the row-major `m × n` measurement matrix into `out` (`len = m·n`).
///
/// # Safety
/// `params` must be a live handle; `out` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pbnet_params_matrix(
    params: *const PbnetParams,
    out: *mut f64,
    len: usize,
) -> PbnetStatus {
    guard(|| {
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        let a = p.store.values(ids::MEASUREMENT_MATRIX)?;
        if len != a.len() {
            return Err(Error::Dimension {
                context: "matrix buffer",
                expected: a.len(),
                actual: len,
            }
            .into());
        }
        slice_mut(out, len, "out")?.copy_from_slice(a);
        Ok(())
    })
}

/// Replaces the measurement matrix with `len = m·n` row-major values.
///
/// # Safety
/// `params` must be a live handle; `values` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pbnet_params_set_matrix(
    params: *mut PbnetParams,
    values: *const f64,
    len: usize,
) -> PbnetStatus {
    guard(|| {
        let p = params.as_mut().ok_or_else(|| null("params"))?;
        let v = slice(values, len, "values")?.to_vec();
        p.store.set_values(ids::MEASUREMENT_MATRIX, v)?;
        Ok(())
    })
}

/// Measures `x_true` with the current matrix and runs the unrolled network;
/// writes the `n`-vector reconstruction to `out`.
///
/// # Safety
/// Handles must be live; `x_true` and `out` must be valid for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn pbnet_reconstruct(
    problem: *const PbnetProblem,
    params: *const PbnetParams,
    x_true: *const f64,
    n: usize,
    out: *mut f64,
) -> PbnetStatus {
    guard(|| {
        let pr = problem.as_ref().ok_or_else(|| null("problem"))?;
        let pa = params.as_ref().ok_or_else(|| null("params"))?;
        let x = pbnet::linop::Signal::new(slice(x_true, n, "x_true")?.to_vec())?;
        let xhat = pr.template.reconstruct(&pa.store, &x)?;
        slice_mut(out, n, "out")?.copy_from_slice(xhat.as_slice());
        Ok(())
    })
}

/// Loss `(1/n)‖x̂ − x_true‖²` and its gradient with respect to the
/// measurement matrix through the chosen engine (`PBNET_ENGINE_*`).
/// `peak_signals` (nullable) receives the engine's peak stored-signal count.
///
/// # Safety
/// Handles must be live; `x_true` valid for `n` doubles, `grad_a` for
/// `grad_len = m·n` doubles, `loss` for one double.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn pbnet_sample_gradient(
    problem: *const PbnetProblem,
    params: *const PbnetParams,
    x_true: *const f64,
    n: usize,
    engine: u32,
    checkpoints: usize,
    loss: *mut f64,
    grad_a: *mut f64,
    grad_len: usize,
    peak_signals: *mut usize,
) -> PbnetStatus {
    guard(|| {
        let pr = problem.as_ref().ok_or_else(|| null("problem"))?;
        let pa = params.as_ref().ok_or_else(|| null("params"))?;
        if loss.is_null() {
            return Err(null("loss"));
        }
        let engine = engine_of(engine)?;
        let x = pbnet::linop::Signal::new(slice(x_true, n, "x_true")?.to_vec())?;
        let template = pr
            .template
            .clone()
            .with_invertibility_check(engine == Engine::MemoryEfficient);
        let s = template.sample_gradient(&pa.store, &x, &EngineSpec::new(engine, checkpoints))?;
        let g = s
            .grads
            .get(&ids::MEASUREMENT_MATRIX)
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        if grad_len != g.len() {
            return Err(Error::Dimension {
                context: "gradient buffer",
                expected: g.len(),
                actual: grad_len,
            }
            .into());
        }
        slice_mut(grad_a, grad_len, "grad_a")?.copy_from_slice(g);
        *loss = s.loss;
        if !peak_signals.is_null() {
            *peak_signals = s.run.meter.peak_signal_count();
        }
        Ok(())
    })
}
