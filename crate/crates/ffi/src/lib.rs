//! C ABI for the mg1nn toolkit.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`Mg1Status`]; on failure a message is available from
//! [`mg1_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mg1nn::linalg::Matrix;
use mg1nn::mlp::MlpModel;
use mg1nn::qbd::{self, QbdSolution};
use mg1nn::{case_study, Error, PhaseType, QueueInstance};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mg1Status {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The (alpha, S) pair is not a valid phase-type representation.
    InvalidPhaseType = 3,
    Unstable = 4,
    NoConvergence = 5,
    TailTooHeavy = 6,
    Io = 7,
    Parse = 8,
    BufferTooSmall = 9,
    Panic = 10,
    Other = 11,
}

/// Phase-type distribution handle.
pub struct Mg1PhaseType(PhaseType);

/// Trained network handle.
pub struct Mg1Model(MlpModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> Mg1Status {
    match e {
        Error::NegativeProbability(_)
        | Error::BadDiagonal { .. }
        | Error::PositiveRowSum { .. }
        | Error::NegativeRate { .. }
        | Error::SingularGenerator => Mg1Status::InvalidPhaseType,
        Error::Unstable { .. } => Mg1Status::Unstable,
        Error::NoConvergence(_) => Mg1Status::NoConvergence,
        Error::TailTooHeavy { .. } => Mg1Status::TailTooHeavy,
        Error::Io(_) => Mg1Status::Io,
        Error::Parse(_) | Error::Json(_) => Mg1Status::Parse,
        Error::DimensionMismatch(_) | Error::InvalidConfig(_) | Error::DatasetMismatch(_) => {
            Mg1Status::InvalidArgument
        }
        _ => Mg1Status::Other,
    }
}

struct Failure(Mg1Status, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), format!("{}: {e}", e.category()))
    }
}

fn null(what: &str) -> Failure {
    Failure(Mg1Status::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure, and turns panics into `Panic`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> Mg1Status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Mg1Status::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside mg1nn".into());
            Mg1Status::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(Mg1Status::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out_handle<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message describing the last failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mg1_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn mg1_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a phase-type distribution from `m` initial probabilities and an
/// `m x m` row-major sub-generator.
///
/// # Safety
/// `alpha` must point to `m` doubles, `s` to `m * m` doubles, and `out` to
/// writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn mg1_ph_new(
    m: usize,
    alpha: *const f64,
    s: *const f64,
    out: *mut *mut Mg1PhaseType,
) -> Mg1Status {
    guard(|| {
        if m == 0 {
            return Err(Failure(Mg1Status::InvalidArgument, "m must be positive".into()));
        }
        let alpha = slice(alpha, m, "alpha")?.to_vec();
        let s = slice(s, m * m, "S")?;
        let rows: Vec<Vec<f64>> = s.chunks(m).map(<[f64]>::to_vec).collect();
        let s = Matrix::from_rows(&rows).expect("square by construction");
        out_handle(out, Mg1PhaseType(PhaseType::new(alpha, s)?))
    })
}

/// Parses a JSON record `{"m":..,"alpha":[..],"S":[[..]]}`.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mg1_ph_from_json(json: *const c_char, out: *mut *mut Mg1PhaseType) -> Mg1Status {
    guard(|| {
        let text = string(json, "json")?;
        let ph: PhaseType = serde_json::from_str(text).map_err(Error::from)?;
        out_handle(out, Mg1PhaseType(ph))
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `ph` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mg1_ph_free(ph: *mut Mg1PhaseType) {
    if !ph.is_null() {
        drop(Box::from_raw(ph));
    }
}

/// Number of phases, or 0 for a null handle.
///
/// # Safety
/// `ph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mg1_ph_phases(ph: *const Mg1PhaseType) -> usize {
    ph.as_ref().map_or(0, |p| p.0.phases())
}

/// Writes the raw moments `E[X^1] .. E[X^k_max]` into `out`.
///
/// # Safety
/// `ph` must be a live handle and `out` must hold `k_max` doubles.
#[no_mangle]
pub unsafe extern "C" fn mg1_ph_moments(ph: *const Mg1PhaseType, k_max: usize, out: *mut f64) -> Mg1Status {
    guard(|| {
        let ph = ph.as_ref().ok_or_else(|| null("ph"))?;
        let out = slice_mut(out, k_max, "out")?;
        out.copy_from_slice(&ph.0.moments(k_max));
        Ok(())
    })
}

/// Returns a new handle scaled to unit mean.
///
/// # Safety
/// `ph` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mg1_ph_scale_to_unit_mean(ph: *const Mg1PhaseType, out: *mut *mut Mg1PhaseType) -> Mg1Status {
    guard(|| {
        let ph = ph.as_ref().ok_or_else(|| null("ph"))?;
        out_handle(out, Mg1PhaseType(ph.0.scale_to_unit_mean()?))
    })
}

/// Exact M/PH/1 queue-length probabilities `P(N=0) .. P(N=levels-1)`.
/// `tail_mass` (optional) receives the probability of `N >= levels`. When
/// `epsilon` is positive, a tail above it fails with `TailTooHeavy`.
///
/// # Safety
/// `ph` must be a live handle, `probs` must hold `levels` doubles, and
/// `tail_mass` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn mg1_solve(
    lambda: f64,
    ph: *const Mg1PhaseType,
    levels: usize,
    epsilon: f64,
    probs: *mut f64,
    tail_mass: *mut f64,
) -> Mg1Status {
    guard(|| {
        let ph = ph.as_ref().ok_or_else(|| null("ph"))?;
        if levels == 0 {
            return Err(Failure(Mg1Status::InvalidArgument, "levels must be positive".into()));
        }
        let out = slice_mut(probs, levels, "probs")?;
        let inst = QueueInstance::new(lambda, ph.0.clone())?;
        let dist = if epsilon > 0.0 {
            qbd::solve(&inst, levels, epsilon)?
        } else {
            QbdSolution::solve(&inst)?.distribution(levels)?
        };
        out.copy_from_slice(&dist.probs);
        if !tail_mass.is_null() {
            *tail_mass = dist.tail_mass;
        }
        Ok(())
    })
}

/// Loads a model file written by `mg1nn train`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mg1_model_load(path: *const c_char, out: *mut *mut Mg1Model) -> Mg1Status {
    guard(|| {
        let path = string(path, "path")?;
        out_handle(out, Mg1Model(MlpModel::load(path)?))
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mg1_model_free(model: *mut Mg1Model) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of moments the model consumes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mg1_model_n_moments(model: *const Mg1Model) -> usize {
    model.as_ref().map_or(0, |m| m.0.n_moments)
}

/// Length of the predicted probability vector, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mg1_model_levels(model: *const Mg1Model) -> usize {
    model.as_ref().map_or(0, |m| m.0.output_dim())
}

/// Predicts the queue-length distribution from the arrival rate and the raw
/// service moments `m1 .. mn` (any time scale; `n` must equal
/// `mg1_model_n_moments`). Writes `mg1_model_levels` values to `out`.
///
/// # Safety
/// `model` must be a live handle, `moments` must hold `n` doubles and `out`
/// must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mg1_model_predict(
    model: *const Mg1Model,
    lambda: f64,
    moments: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> Mg1Status {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.0;
        if out_len < model.output_dim() {
            return Err(Failure(
                Mg1Status::BufferTooSmall,
                format!("output needs {} entries, got {out_len}", model.output_dim()),
            ));
        }
        let moments = slice(moments, n, "moments")?;
        if moments.first().is_none_or(|m| *m <= 0.0) {
            return Err(Failure(Mg1Status::InvalidArgument, "mean service time must be positive".into()));
        }
        let probs = case_study::predict_from_moments(model, lambda, moments)?;
        slice_mut(out, probs.len(), "out")?.copy_from_slice(&probs);
        Ok(())
    })
}
