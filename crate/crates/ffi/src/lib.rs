//! C ABI for `avseg-core`.
//!
//! Models and clips are opaque heap handles released with their `_free`
//! function. Every fallible call returns an [`AvsegStatus`]; on failure the
//! message is available from [`avseg_last_error`] on the same thread.
//! Strings passed in are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use avseg_core::data::{generate_clip, Clip};
use avseg_core::model::Model;
use avseg_core::tensor::Tensor;
use avseg_core::trainer::{load_model, save_checkpoint, train, TrainConfig};
use avseg_core::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AvsegStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Dimension = 3,
    Contract = 4,
    Config = 5,
    Format = 6,
    NonFinite = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// A model together with the run configuration it was built from.
pub struct AvsegModel {
    model: Model,
    config: TrainConfig,
}

/// A generated clip.
pub struct AvsegClip {
    clip: Clip,
}

/// Extents needed to size buffers for [`avseg_model_predict`].
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AvsegModelInfo {
    /// Frames per clip the model was configured for.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Audio embedding width.
    pub audio_dim: usize,
    /// Output channels: 1 for binary tasks.
    pub n_class: usize,
    pub mask_height: usize,
    pub mask_width: usize,
}

/// Shape of a clip: frames `[frames, 3, height, width]`, audio
/// `[frames, audio_dim]`, labels `[frames, height / 4, width / 4]`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AvsegClipShape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub audio_dim: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("NUL bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> AvsegStatus {
    match e {
        Error::Dimension(_) => AvsegStatus::Dimension,
        Error::Contract(_) => AvsegStatus::Contract,
        Error::Config(_) => AvsegStatus::Config,
        Error::Format { .. } => AvsegStatus::Format,
        Error::NonFinite { .. } => AvsegStatus::NonFinite,
        Error::Io(_) => AvsegStatus::Io,
    }
}

struct Fail(AvsegStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AvsegStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AvsegStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AvsegStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(AvsegStatus::NullArgument, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Fail(
            AvsegStatus::InvalidUtf8,
            format!("`{what}` is not valid UTF-8"),
        )
    })
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn copy_out<T: Copy>(
    src: &[T],
    dst: *mut T,
    capacity: usize,
    what: &str,
) -> Result<(), Fail> {
    if dst.is_null() {
        return Err(null(what));
    }
    if capacity < src.len() {
        return Err(Fail(
            AvsegStatus::BufferTooSmall,
            format!("`{what}` holds {capacity} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

fn boxed_model(model: Model, config: TrainConfig) -> *mut AvsegModel {
    Box::into_raw(Box::new(AvsegModel { model, config }))
}

/// Message of the last failed call on this thread ("" after a success).
/// The pointer stays valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn avseg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn avseg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a freshly initialized model from `key = value` config text.
///
/// # Safety
/// `config` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn avseg_model_new(
    config: *const c_char,
    seed: u64,
    out: *mut *mut AvsegModel,
) -> AvsegStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = TrainConfig::parse(str_arg(config, "config")?)?;
        let model = Model::new(config.model.clone(), seed)?;
        *out = boxed_model(model, config);
        Ok(())
    })
}

/// Trains a model as described by `config` text (checkpoint and log paths
/// in the config are honoured).
///
/// # Safety
/// As [`avseg_model_new`].
#[no_mangle]
pub unsafe extern "C" fn avseg_train(
    config: *const c_char,
    out: *mut *mut AvsegModel,
) -> AvsegStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = TrainConfig::parse(str_arg(config, "config")?)?;
        let outcome = train(&config)?;
        *out = boxed_model(outcome.model, outcome.config);
        Ok(())
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn avseg_model_load(
    path: *const c_char,
    out: *mut *mut AvsegModel,
) -> AvsegStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (model, config) = load_model(Path::new(str_arg(path, "path")?))?;
        *out = boxed_model(model, config);
        Ok(())
    })
}

/// Writes a checkpoint file.
///
/// # Safety
/// `model` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn avseg_model_save(
    model: *const AvsegModel,
    path: *const c_char,
) -> AvsegStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        save_checkpoint(
            &m.model.params,
            &m.config,
            Path::new(str_arg(path, "path")?),
        )?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn avseg_model_info(
    model: *const AvsegModel,
    out: *mut AvsegModelInfo,
) -> AvsegStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let c = &m.model.config;
        let (mh, mw) = c.mask_extent();
        *out = AvsegModelInfo {
            frames: c.frames,
            height: c.height,
            width: c.width,
            audio_dim: c.d_model,
            n_class: c.n_class,
            mask_height: mh,
            mask_width: mw,
        };
        Ok(())
    })
}

/// Mask logits for `n_frames` frames.
///
/// `frames` holds `n_frames·3·height·width` values, `audio` holds
/// `n_frames·audio_dim`, and `logits` receives `n_frames·n_class·mask_height·mask_width`.
///
/// # Safety
/// Buffers must hold at least the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn avseg_model_predict(
    model: *const AvsegModel,
    n_frames: usize,
    frames: *const f64,
    audio: *const f64,
    logits: *mut f64,
    logits_len: usize,
) -> AvsegStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        if frames.is_null() || audio.is_null() {
            return Err(null(if frames.is_null() { "frames" } else { "audio" }));
        }
        if n_frames == 0 {
            return Err(Fail(
                AvsegStatus::Dimension,
                "n_frames must be at least 1".into(),
            ));
        }
        let c = &m.model.config;
        let nf = n_frames * 3 * c.height * c.width;
        let na = n_frames * c.d_model;
        let f = Tensor::new(
            &[n_frames, 3, c.height, c.width],
            std::slice::from_raw_parts(frames, nf).to_vec(),
        )?;
        let a = Tensor::new(
            &[n_frames, c.d_model],
            std::slice::from_raw_parts(audio, na).to_vec(),
        )?;
        let out = m.model.predict(&f, &a)?;
        copy_out(out.data(), logits, logits_len, "logits")
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn avseg_model_free(model: *mut AvsegModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Generates the synthetic clip `seed` for the model's task and extents.
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn avseg_clip_generate(
    model: *const AvsegModel,
    seed: u64,
    out: *mut *mut AvsegClip,
) -> AvsegStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let clip = generate_clip(m.config.task, &m.config.synth(), seed)?;
        *out = Box::into_raw(Box::new(AvsegClip { clip }));
        Ok(())
    })
}

/// # Safety
/// `clip` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn avseg_clip_shape(
    clip: *const AvsegClip,
    out: *mut AvsegClipShape,
) -> AvsegStatus {
    guard(|| {
        let c = &ref_arg(clip, "clip")?.clip;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = c.frames.shape();
        *out = AvsegClipShape {
            frames: s[0],
            height: s[2],
            width: s[3],
            audio_dim: c.audio.shape()[1],
        };
        Ok(())
    })
}

/// Copies the clip's frames `[T, 3, H, W]` into `out`.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn avseg_clip_frames(
    clip: *const AvsegClip,
    out: *mut f64,
    len: usize,
) -> AvsegStatus {
    guard(|| copy_out(ref_arg(clip, "clip")?.clip.frames.data(), out, len, "out"))
}

/// Copies the clip's audio `[T, D]` into `out`.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn avseg_clip_audio(
    clip: *const AvsegClip,
    out: *mut f64,
    len: usize,
) -> AvsegStatus {
    guard(|| copy_out(ref_arg(clip, "clip")?.clip.audio.data(), out, len, "out"))
}

/// Copies the clip's labels `[T, H/4, W/4]` into `out`.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn avseg_clip_labels(
    clip: *const AvsegClip,
    out: *mut u16,
    len: usize,
) -> AvsegStatus {
    guard(|| copy_out(&ref_arg(clip, "clip")?.clip.gt.data, out, len, "out"))
}

/// Releases a clip; null is ignored.
///
/// # Safety
/// `clip` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn avseg_clip_free(clip: *mut AvsegClip) {
    if !clip.is_null() {
        drop(Box::from_raw(clip));
    }
}
