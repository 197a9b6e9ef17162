//! C interface to network sampling, the objective, the classical solvers
//! and trained-model inference.
//!
//! Every fallible function returns a [`JcpaStatus`]. On failure the message
//! is kept per thread and can be read with [`jcpa_last_error_message`].
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use jcpa::baselines::{closest_split, exhaustive, wmmse_allocation, ClosestOrder, WmmseConfig, DEFAULT_GUARD};
use jcpa::jcpgnn::{forward, load_checkpoint, JcpgnnParams, Mode};
use jcpa::metrics::{objective, Allocation};
use jcpa::netgen::{sample_instance, FadingConfig, GeometryConfig, NetworkInstance};
use jcpa::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JcpaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Io = 4,
    Parse = 5,
    Guard = 6,
    Failed = 7,
    Panic = 8,
}

/// A network realization.
pub struct JcpaInstance(NetworkInstance);

/// A trained model loaded from a checkpoint.
pub struct JcpaModel(JcpgnnParams);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(JcpaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Config(_) | Error::Validation(_) | Error::Placement { .. } => JcpaStatus::InvalidArgument,
            Error::Dimension(_) | Error::Shape { .. } | Error::Index { .. } => JcpaStatus::Dimension,
            Error::Io { .. } => JcpaStatus::Io,
            Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => JcpaStatus::Parse,
            Error::Guard { .. } => JcpaStatus::Guard,
            Error::Divergence { .. } => JcpaStatus::Failed,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(JcpaStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> Failure {
    Failure(JcpaStatus::InvalidArgument, msg)
}

fn guarded(f: impl FnOnce() -> Result<(), Failure>) -> JcpaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => JcpaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside jcpa".to_string());
            JcpaStatus::Panic
        }
    }
}

unsafe fn instance<'a>(inst: *const JcpaInstance) -> Result<&'a NetworkInstance, Failure> {
    inst.as_ref().map(|i| &i.0).ok_or_else(|| null("instance"))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

fn check_len(inst: &NetworkInstance, d_pairs: usize) -> Result<(), Failure> {
    if d_pairs != inst.d_pairs {
        return Err(Failure(
            JcpaStatus::Dimension,
            format!("buffer length {d_pairs} does not match D={}", inst.d_pairs),
        ));
    }
    Ok(())
}

fn assignment_of(inst: &NetworkInstance, assignment: &[usize]) -> Result<(), Failure> {
    match assignment.iter().position(|&c| c >= inst.m_channels) {
        Some(i) => Err(invalid(format!(
            "pair {i} assigned channel {} but M={}",
            assignment[i], inst.m_channels
        ))),
        None => Ok(()),
    }
}

fn write_alloc(alloc: &Allocation, assignment: &mut [usize], power: &mut [f64]) {
    assignment.copy_from_slice(&alloc.assignment());
    power.copy_from_slice(&alloc.power);
}

/// Message of the last failed call on this thread, or NULL.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn jcpa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn jcpa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Sample a network with `d_pairs` pairs and `m_channels` channels using the
/// default geometry and fading.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn jcpa_instance_sample(
    d_pairs: usize,
    m_channels: usize,
    seed: u64,
    out: *mut *mut JcpaInstance,
) -> JcpaStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let geometry = GeometryConfig::new(d_pairs, m_channels);
        let inst = sample_instance(&geometry, &FadingConfig::default(), seed)?;
        *out = Box::into_raw(Box::new(JcpaInstance(inst)));
        Ok(())
    })
}

/// Build a network from explicit gains laid out `(rx * D + tx) * M + m`.
///
/// # Safety
/// `gains` must hold `d_pairs * d_pairs * m_channels` values, `weights`
/// `d_pairs` values, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn jcpa_instance_from_gains(
    d_pairs: usize,
    m_channels: usize,
    gains: *const f64,
    weights: *const f64,
    noise_power: f64,
    p_max: f64,
    out: *mut *mut JcpaInstance,
) -> JcpaStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if d_pairs == 0 || m_channels == 0 {
            return Err(invalid(format!("need D >= 1 and M >= 1, got D={d_pairs} M={m_channels}")));
        }
        let flat = input(gains, d_pairs * d_pairs * m_channels, "gains")?;
        let weights = input(weights, d_pairs, "weights")?.to_vec();
        let nested: Vec<Vec<Vec<f64>>> = flat
            .chunks(d_pairs * m_channels)
            .map(|row| row.chunks(m_channels).map(<[f64]>::to_vec).collect())
            .collect();
        let inst = NetworkInstance::from_gains(&nested, weights, noise_power, p_max)?;
        *out = Box::into_raw(Box::new(JcpaInstance(inst)));
        Ok(())
    })
}

/// Release an instance. NULL is ignored.
///
/// # Safety
/// `inst` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn jcpa_instance_free(inst: *mut JcpaInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// # Safety
/// `inst` must be a live handle; `d_pairs` and `m_channels` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn jcpa_instance_dims(
    inst: *const JcpaInstance,
    d_pairs: *mut usize,
    m_channels: *mut usize,
) -> JcpaStatus {
    guarded(|| {
        let inst = instance(inst)?;
        if let Some(d) = d_pairs.as_mut() {
            *d = inst.d_pairs;
        }
        if let Some(m) = m_channels.as_mut() {
            *m = inst.m_channels;
        }
        Ok(())
    })
}

/// Power gain from transmitter `tx` to receiver `rx` on channel `m`.
///
/// # Safety
/// `inst` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn jcpa_instance_gain(
    inst: *const JcpaInstance,
    rx: usize,
    tx: usize,
    m: usize,
    out: *mut f64,
) -> JcpaStatus {
    guarded(|| {
        let inst = instance(inst)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if rx >= inst.d_pairs || tx >= inst.d_pairs || m >= inst.m_channels {
            return Err(Failure(
                JcpaStatus::Dimension,
                format!("gain ({rx}, {tx}, {m}) out of range for D={} M={}", inst.d_pairs, inst.m_channels),
            ));
        }
        *out = inst.gain(rx, tx, m);
        Ok(())
    })
}

/// Weighted sum rate of a hard allocation.
///
/// # Safety
/// `assignment` and `power` must each hold `d_pairs` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn jcpa_objective(
    inst: *const JcpaInstance,
    assignment: *const usize,
    power: *const f64,
    d_pairs: usize,
    out: *mut f64,
) -> JcpaStatus {
    guarded(|| {
        let inst = instance(inst)?;
        check_len(inst, d_pairs)?;
        let assignment = input(assignment, d_pairs, "assignment")?;
        let power = input(power, d_pairs, "power")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        assignment_of(inst, assignment)?;
        let alloc = Allocation::from_assignment(assignment, inst.m_channels, power.to_vec());
        *out = objective(inst, &alloc)?;
        Ok(())
    })
}

/// WMMSE powers for a fixed channel assignment.
///
/// # Safety
/// `assignment` must hold `d_pairs` values and `power_out` room for `d_pairs`.
#[no_mangle]
pub unsafe extern "C" fn jcpa_wmmse_power(
    inst: *const JcpaInstance,
    assignment: *const usize,
    d_pairs: usize,
    power_out: *mut f64,
) -> JcpaStatus {
    guarded(|| {
        let inst = instance(inst)?;
        check_len(inst, d_pairs)?;
        let assignment = input(assignment, d_pairs, "assignment")?;
        let power_out = output(power_out, d_pairs, "power_out")?;
        assignment_of(inst, assignment)?;
        let channel = Allocation::from_assignment(assignment, inst.m_channels, vec![0.0; d_pairs]).channel;
        let alloc = wmmse_allocation(inst, &channel, &WmmseConfig::default())?;
        power_out.copy_from_slice(&alloc.power);
        Ok(())
    })
}

/// Best assignment over all M^D candidates with WMMSE powers. Refuses
/// networks with more than 2^20 candidates.
///
/// # Safety
/// `assignment_out` and `power_out` must have room for `d_pairs` values.
#[no_mangle]
pub unsafe extern "C" fn jcpa_exhaustive(
    inst: *const JcpaInstance,
    d_pairs: usize,
    assignment_out: *mut usize,
    power_out: *mut f64,
) -> JcpaStatus {
    guarded(|| {
        let inst = instance(inst)?;
        check_len(inst, d_pairs)?;
        let assignment_out = output(assignment_out, d_pairs, "assignment_out")?;
        let power_out = output(power_out, d_pairs, "power_out")?;
        let alloc = exhaustive(inst, &WmmseConfig::default(), DEFAULT_GUARD)?;
        write_alloc(&alloc, assignment_out, power_out);
        Ok(())
    })
}

/// Nearest-neighbour channel split with WMMSE powers.
///
/// # Safety
/// `assignment_out` and `power_out` must have room for `d_pairs` values.
#[no_mangle]
pub unsafe extern "C" fn jcpa_closest(
    inst: *const JcpaInstance,
    d_pairs: usize,
    assignment_out: *mut usize,
    power_out: *mut f64,
) -> JcpaStatus {
    guarded(|| {
        let inst = instance(inst)?;
        check_len(inst, d_pairs)?;
        let assignment_out = output(assignment_out, d_pairs, "assignment_out")?;
        let power_out = output(power_out, d_pairs, "power_out")?;
        let channel = closest_split(inst, ClosestOrder::default());
        let alloc = wmmse_allocation(inst, &channel, &WmmseConfig::default())?;
        write_alloc(&alloc, assignment_out, power_out);
        Ok(())
    })
}

/// Load a model checkpoint (JSON).
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn jcpa_model_load(path: *const c_char, out: *mut *mut JcpaModel) -> JcpaStatus {
    guarded(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not valid UTF-8".to_string()))?;
        let params = load_checkpoint(Path::new(path))?;
        *out = Box::into_raw(Box::new(JcpaModel(params)));
        Ok(())
    })
}

/// Release a model. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn jcpa_model_free(model: *mut JcpaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of channels the model was trained for.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn jcpa_model_channels(model: *const JcpaModel, out: *mut usize) -> JcpaStatus {
    guarded(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = model.0.meta.m_channels;
        Ok(())
    })
}

/// Channel assignment and powers predicted by the model.
///
/// # Safety
/// Handles must be live; `assignment_out` and `power_out` must have room
/// for `d_pairs` values.
#[no_mangle]
pub unsafe extern "C" fn jcpa_model_allocate(
    model: *const JcpaModel,
    inst: *const JcpaInstance,
    d_pairs: usize,
    assignment_out: *mut usize,
    power_out: *mut f64,
) -> JcpaStatus {
    guarded(|| {
        let params = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let inst = instance(inst)?;
        check_len(inst, d_pairs)?;
        let assignment_out = output(assignment_out, d_pairs, "assignment_out")?;
        let power_out = output(power_out, d_pairs, "power_out")?;
        if params.meta.m_channels != inst.m_channels {
            return Err(Failure(
                JcpaStatus::Dimension,
                format!("model expects M={}, instance has M={}", params.meta.m_channels, inst.m_channels),
            ));
        }
        let alloc = forward(&params.graph(inst), params, Mode::Hard)?;
        write_alloc(&alloc, assignment_out, power_out);
        Ok(())
    })
}
