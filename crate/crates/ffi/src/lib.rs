//! C interface to packed `.pbdc` models.
//!
//! Handles are opaque and owned by the caller: every `*_new`/`*_load` pairs
//! with a `*_free`. Functions return a [`PbdcaeStatus`]; the message of the
//! last failure on the calling thread is available from
//! [`pbdcae_last_error`]. Panics never cross the boundary.
//!
//! Images are interleaved 8-bit RGB (`height × width × 3`, row-major). Motor
//! vectors hold twelve joint angles in degrees followed by the gripper
//! command in `[0, 1]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use pbdcae::evalsynth::{JOINTS, MOTOR_DIM};
use pbdcae::modelio::{import_model, PackedModel};
use pbdcae::seqmodel::LstmState;
use pbdcae::{Error, Image8};

/// Length of a motor vector (joints and gripper).
pub const PBDCAE_MOTOR_DIM: usize = 13;
const _: () = assert!(PBDCAE_MOTOR_DIM == MOTOR_DIM);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbdcaeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Format = 5,
    Checksum = 6,
    UnsupportedVersion = 7,
    Internal = 8,
    Panic = 9,
}

/// Loaded model; shareable by any number of sessions.
pub struct PbdcaeModel {
    inner: Arc<PackedModel>,
}

/// Recurrent state bound to one model.
pub struct PbdcaeSession {
    model: Arc<PackedModel>,
    state: LstmState<f32>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PbdcaeModelInfo {
    pub input_size: u32,
    pub input_channels: u32,
    pub feature_dim: u32,
    pub motor_dim: u32,
    pub lstm_layers: u32,
    /// 1 partial, 2 binary.
    pub mode: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PbdcaeStatus {
    match e {
        Error::Shape(_) => PbdcaeStatus::ShapeMismatch,
        Error::Io(_) | Error::MissingArtifact { .. } => PbdcaeStatus::Io,
        Error::Format(_) => PbdcaeStatus::Format,
        Error::Checksum { .. } => PbdcaeStatus::Checksum,
        Error::UnsupportedVersion { .. } => PbdcaeStatus::UnsupportedVersion,
        Error::InvalidValue(_) | Error::Config(_) => PbdcaeStatus::InvalidArgument,
        _ => PbdcaeStatus::Internal,
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (PbdcaeStatus, String)>) -> PbdcaeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PbdcaeStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            PbdcaeStatus::Panic
        }
    }
}

fn lib<T>(r: pbdcae::Result<T>) -> Result<T, (PbdcaeStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (PbdcaeStatus, String) {
    (PbdcaeStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `ptr` must be null or point to `len` readable elements.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], (PbdcaeStatus, String)> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

fn new_model(m: PackedModel, out: *mut *mut PbdcaeModel) {
    let boxed = Box::new(PbdcaeModel { inner: Arc::new(m) });
    // SAFETY: callers check `out` for null first.
    unsafe { *out = Box::into_raw(boxed) };
}

/// Loads a `.pbdc` file. On success `*out` receives a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pbdcae_model_load(path: *const c_char, out: *mut *mut PbdcaeModel) -> PbdcaeStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let p = CStr::from_ptr(path).to_str().map_err(|_| (PbdcaeStatus::InvalidArgument, "path is not UTF-8".into()))?;
        new_model(lib(import_model(Path::new(p)))?, out);
        Ok(())
    })
}

/// Parses a `.pbdc` image held in memory.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pbdcae_model_from_bytes(data: *const u8, len: usize, out: *mut *mut PbdcaeModel) -> PbdcaeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let bytes = slice(data, len, "data")?;
        new_model(lib(PackedModel::from_bytes(bytes))?, out);
        Ok(())
    })
}

/// Releases a model handle. Null is ignored. Sessions created from it stay valid.
///
/// # Safety
/// `model` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pbdcae_model_free(model: *mut PbdcaeModel) {
    if !model.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(model))));
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pbdcae_model_info(model: *const PbdcaeModel, out: *mut PbdcaeModelInfo) -> PbdcaeStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let a = m.inner.arch();
        *out = PbdcaeModelInfo {
            input_size: a.input_size as u32,
            input_channels: a.input_channels as u32,
            feature_dim: a.feature_dim as u32,
            motor_dim: MOTOR_DIM as u32,
            lstm_layers: m.inner.lstm().layers.len() as u32,
            mode: if m.inner.mode().binary_decoder() { 2 } else { 1 },
        };
        Ok(())
    })
}

fn frame(pixels: &[u8], height: usize, width: usize) -> Result<Image8, (PbdcaeStatus, String)> {
    lib(Image8::from_hwc(height, width, 3, pixels))
}

/// Encodes one frame (resized to the model input when needed) into
/// `feature_dim` values of ±1.
///
/// # Safety
/// `pixels` must hold `height * width * 3` bytes, `features` `feature_len` floats.
#[no_mangle]
pub unsafe extern "C" fn pbdcae_encode(
    model: *const PbdcaeModel,
    pixels: *const u8,
    height: usize,
    width: usize,
    features: *mut f32,
    feature_len: usize,
) -> PbdcaeStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let img = frame(slice(pixels, height * width * 3, "pixels")?, height, width)?;
        let f = lib(m.encoder().forward(&lib(m.preprocess(&img))?))?.into_data();
        if features.is_null() {
            return Err(null("features"));
        }
        if feature_len != f.len() {
            return Err((PbdcaeStatus::ShapeMismatch, format!("feature buffer holds {feature_len}, model emits {}", f.len())));
        }
        std::slice::from_raw_parts_mut(features, feature_len).copy_from_slice(&f);
        Ok(())
    })
}

/// Starts a session with zero recurrent state.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pbdcae_session_new(model: *const PbdcaeModel, out: *mut *mut PbdcaeSession) -> PbdcaeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let s = PbdcaeSession { state: m.lstm().initial_state(), model: Arc::clone(m) };
        *out = Box::into_raw(Box::new(s));
        Ok(())
    })
}

/// # Safety
/// `session` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pbdcae_session_free(session: *mut PbdcaeSession) {
    if !session.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(session))));
    }
}

/// Clears the recurrent state.
///
/// # Safety
/// `session` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pbdcae_session_reset(session: *mut PbdcaeSession) -> PbdcaeStatus {
    guard(|| {
        let s = session.as_mut().ok_or_else(|| null("session"))?;
        s.state = s.model.lstm().initial_state();
        Ok(())
    })
}

/// Feeds the current frame and motor vector, advances the state and writes
/// the predicted next motor vector. The state is unchanged on failure.
///
/// # Safety
/// `pixels` must hold `height * width * 3` bytes; `motor` and `next_motor`
/// must each hold `motor_len` floats.
#[no_mangle]
pub unsafe extern "C" fn pbdcae_session_step(
    session: *mut PbdcaeSession,
    pixels: *const u8,
    height: usize,
    width: usize,
    motor: *const f32,
    next_motor: *mut f32,
    motor_len: usize,
) -> PbdcaeStatus {
    guard(|| {
        let s = session.as_mut().ok_or_else(|| null("session"))?;
        if motor_len != MOTOR_DIM {
            return Err((PbdcaeStatus::ShapeMismatch, format!("motor vectors have {MOTOR_DIM} values, got {motor_len}")));
        }
        if next_motor.is_null() {
            return Err(null("next_motor"));
        }
        let img = frame(slice(pixels, height * width * 3, "pixels")?, height, width)?;
        let m_in = slice(motor, motor_len, "motor")?;
        let mut normalized: Vec<f32> = m_in[..JOINTS].iter().map(|d| d / 180.0).collect();
        normalized.push(m_in[JOINTS]);
        let (y, state) = lib(s.model.step(&img, &normalized, &s.state))?;
        s.state = state;
        let off = s.model.arch().feature_dim;
        let dst = std::slice::from_raw_parts_mut(next_motor, motor_len);
        for (d, v) in dst[..JOINTS].iter_mut().zip(&y[off..]) {
            *d = v * 180.0;
        }
        dst[JOINTS] = y[off + JOINTS].clamp(0.0, 1.0);
        Ok(())
    })
}

/// Message of the last failure on this thread; empty if none. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pbdcae_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn pbdcae_status_str(status: PbdcaeStatus) -> *const c_char {
    let s: &'static CStr = match status {
        PbdcaeStatus::Ok => c"ok",
        PbdcaeStatus::NullPointer => c"null pointer",
        PbdcaeStatus::InvalidArgument => c"invalid argument",
        PbdcaeStatus::ShapeMismatch => c"shape mismatch",
        PbdcaeStatus::Io => c"i/o error",
        PbdcaeStatus::Format => c"format error",
        PbdcaeStatus::Checksum => c"checksum mismatch",
        PbdcaeStatus::UnsupportedVersion => c"unsupported version",
        PbdcaeStatus::Internal => c"internal error",
        PbdcaeStatus::Panic => c"panic",
    };
    s.as_ptr()
}
