//! C ABI over the `rsm` crate.
//!
//! Models and spectrograms are opaque heap handles owned by the caller and
//! released with the matching `*_free`. Every entry point returns an
//! [`RsmStatus`]; on failure a description is available from
//! [`rsm_last_error`] on the same thread. Output buffers are caller-allocated
//! and must hold at least the documented number of elements.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rsm::control::{self, EditScript, WeightMatrix};
use rsm::features::{self, AudioClip, MelExtractor, MelSpectrogram, Normalization};
use rsm::model::Checkpoint;
use rsm::numerics::Matrix;
use rsm::RsmError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RsmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Io = 4,
    Format = 5,
    Config = 6,
    Validation = 7,
    Numeric = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RsmNormalization {
    Peak = 0,
    Rms = 1,
    None = 2,
}

impl From<RsmNormalization> for Normalization {
    fn from(n: RsmNormalization) -> Self {
        match n {
            RsmNormalization::Peak => Normalization::Peak,
            RsmNormalization::Rms => Normalization::Rms,
            RsmNormalization::None => Normalization::None,
        }
    }
}

/// Shape of a loaded model.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RsmModelInfo {
    /// Embedding dimension.
    pub dim: usize,
    /// Tokens per layer.
    pub tokens: usize,
    /// Number of residual layers.
    pub layers: usize,
    /// Mel bins expected on input.
    pub mel_bins: usize,
}

/// A trained checkpoint.
pub struct RsmModel {
    checkpoint: Checkpoint,
}

/// A log-mel spectrogram.
pub struct RsmMel {
    mel: MelSpectrogram,
}

struct Failure(RsmStatus, String);

impl From<RsmError> for Failure {
    fn from(e: RsmError) -> Self {
        let status = match &e {
            RsmError::Config { .. } | RsmError::Edit { .. } => RsmStatus::Config,
            RsmError::File { .. } | RsmError::Io(_) => RsmStatus::Io,
            RsmError::Format(_) | RsmError::Json(_) => RsmStatus::Format,
            RsmError::Validation(_) => RsmStatus::Validation,
            RsmError::NonFinite(_) | RsmError::NonFiniteLoss { .. } => RsmStatus::Numeric,
            _ => RsmStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RsmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RsmStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {message}"));
            RsmStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(RsmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(RsmStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out(values: &[f64], out: *mut f64, out_len: usize, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    if out_len < values.len() {
        return Err(Failure(
            RsmStatus::BufferTooSmall,
            format!("{what} holds {out_len} values, {} required", values.len()),
        ));
    }
    std::ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn store<T>(value: T, out: *mut *mut T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn weights_in(model: &RsmModel, p: *const f64, len: usize, what: &str) -> Result<WeightMatrix, Failure> {
    let cfg = &model.checkpoint.model.config;
    if len != cfg.n_layers * cfg.n_tokens {
        return Err(Failure(
            RsmStatus::InvalidArgument,
            format!("{what} has {len} values, expected {} x {}", cfg.n_layers, cfg.n_tokens),
        ));
    }
    let data = input(p, len, what)?.to_vec();
    Ok(WeightMatrix::new(Matrix::from_vec(cfg.n_layers, cfg.n_tokens, data)?)?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rsm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on the calling thread, or an empty
/// string. Valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn rsm_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads an RSMC checkpoint from `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rsm_model_load(path: *const c_char, out: *mut *mut RsmModel) -> RsmStatus {
    guard(|| {
        let path = as_str(path, "path")?;
        let checkpoint = Checkpoint::load(Path::new(path))?;
        store(RsmModel { checkpoint }, out, "out")
    })
}

/// Loads an RSMC checkpoint from an in-memory buffer.
///
/// # Safety
/// `bytes` must point to `len` readable bytes and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn rsm_model_load_bytes(bytes: *const u8, len: usize, out: *mut *mut RsmModel) -> RsmStatus {
    guard(|| {
        let checkpoint = Checkpoint::from_bytes(input(bytes, len, "bytes")?)?;
        store(RsmModel { checkpoint }, out, "out")
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from `rsm_model_load*` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rsm_model_free(model: *mut RsmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `info` writable.
#[no_mangle]
pub unsafe extern "C" fn rsm_model_info(model: *const RsmModel, info: *mut RsmModelInfo) -> RsmStatus {
    guard(|| {
        let cfg = &deref(model, "model")?.checkpoint.model.config;
        if info.is_null() {
            return Err(null("info"));
        }
        *info = RsmModelInfo {
            dim: cfg.d_s,
            tokens: cfg.n_tokens,
            layers: cfg.n_layers,
            mel_bins: cfg.encoder.mel_bins,
        };
        Ok(())
    })
}

/// Computes the log-mel spectrogram of mono samples in [-1, 1] using the
/// model's feature configuration.
///
/// # Safety
/// `samples` must point to `len` floats; `model` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rsm_mel_from_samples(
    model: *const RsmModel,
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    normalization: RsmNormalization,
    out: *mut *mut RsmMel,
) -> RsmStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let samples = input(samples, len, "samples")?.iter().map(|&s| f64::from(s)).collect();
        let clip = features::normalize_audio(&AudioClip::new(samples, sample_rate)?, normalization.into())?;
        let mel = MelExtractor::new(&model.checkpoint.mel)?.compute(&clip)?;
        store(RsmMel { mel }, out, "out")
    })
}

/// Reads a MELF feature file.
///
/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rsm_mel_load(path: *const c_char, out: *mut *mut RsmMel) -> RsmStatus {
    guard(|| {
        let mel = features::read_melf(Path::new(as_str(path, "path")?))?;
        store(RsmMel { mel }, out, "out")
    })
}

/// Releases a spectrogram. Null is ignored.
///
/// # Safety
/// `mel` must come from `rsm_mel_*` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rsm_mel_free(mel: *mut RsmMel) {
    if !mel.is_null() {
        drop(Box::from_raw(mel));
    }
}

/// # Safety
/// `mel` must be live; `frames` and `bins` writable.
#[no_mangle]
pub unsafe extern "C" fn rsm_mel_shape(mel: *const RsmMel, frames: *mut usize, bins: *mut usize) -> RsmStatus {
    guard(|| {
        let mel = &deref(mel, "mel")?.mel;
        if frames.is_null() || bins.is_null() {
            return Err(null("frames or bins"));
        }
        *frames = mel.num_frames();
        *bins = mel.num_bins();
        Ok(())
    })
}

/// Writes the `dim`-length speaker embedding.
///
/// # Safety
/// Handles must be live; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rsm_embed(
    model: *const RsmModel,
    mel: *const RsmMel,
    out: *mut f64,
    out_len: usize,
) -> RsmStatus {
    guard(|| {
        let ck = &deref(model, "model")?.checkpoint;
        let mel = &deref(mel, "mel")?.mel;
        ck.check_features(mel)?;
        write_out(&ck.model.forward(mel)?.embedding, out, out_len, "out")
    })
}

/// Writes the `layers x tokens` attention weights, row-major.
///
/// # Safety
/// Handles must be live; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rsm_extract_weights(
    model: *const RsmModel,
    mel: *const RsmMel,
    out: *mut f64,
    out_len: usize,
) -> RsmStatus {
    guard(|| {
        let ck = &deref(model, "model")?.checkpoint;
        let w = control::extract_weights(&deref(mel, "mel")?.mel, ck)?;
        write_out(w.flattened(), out, out_len, "out")
    })
}

/// Rebuilds an embedding from row-major `layers x tokens` weights.
///
/// # Safety
/// `weights` must hold `len` doubles; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rsm_recompose(
    model: *const RsmModel,
    weights: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> RsmStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let w = weights_in(model, weights, len, "weights")?;
        write_out(&control::recompose(&w, &model.checkpoint.model)?, out, out_len, "out")
    })
}

/// Applies a JSON edit script to source and target weights and writes the
/// edited `layers x tokens` weights.
///
/// # Safety
/// `src` and `tgt` must hold `len` doubles each; `script` must be
/// NUL-terminated; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rsm_apply_edits(
    model: *const RsmModel,
    src: *const f64,
    tgt: *const f64,
    len: usize,
    script: *const c_char,
    out: *mut f64,
    out_len: usize,
) -> RsmStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let src = weights_in(model, src, len, "src")?;
        let tgt = weights_in(model, tgt, len, "tgt")?;
        let script = EditScript::from_json(as_str(script, "script")?)?;
        let edited = control::apply_edits(&src, &tgt, &script)?;
        write_out(edited.flattened(), out, out_len, "out")
    })
}
