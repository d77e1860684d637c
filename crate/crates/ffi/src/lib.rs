//! C ABI over the dstdnn library.
//!
//! Every entry point returns a [`DstStatus`]. On failure, a message is kept per
//! thread and can be copied out with [`dst_last_error`]. Models are opaque
//! handles created by [`dst_model_load`] and released by [`dst_model_free`].
//! Array arguments are caller-owned and row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use dstdnn::eval::compute_metrics;
use dstdnn::frontend::{compute_log_mel, Waveform};
use dstdnn::network::{load_checkpoint, Model};
use dstdnn::spectral::{gf_forward, GlobalFilter};
use dstdnn::training::{FRAME_HOP, FRAME_WIN};
use dstdnn::{Error, Tensor};
use num_complex::Complex64;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DstStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Shape = 3,
    Numeric = 4,
    Io = 5,
    Checkpoint = 6,
    BufferTooSmall = 7,
    Panic = 8,
    Other = 9,
}

/// Opaque model handle.
pub struct DstModel {
    model: Model,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DstMetrics {
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: f64,
    pub dcf_threshold: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> DstStatus {
    match e {
        Error::InvalidInput(_) | Error::InvalidSpec(_) | Error::Config(_) => DstStatus::InvalidInput,
        Error::Shape(_) => DstStatus::Shape,
        Error::Numeric(_) | Error::Diverged { .. } | Error::DegenerateCohort(_) => DstStatus::Numeric,
        Error::Io(_) | Error::Wav(_) | Error::Csv(_) | Error::Json(_) => DstStatus::Io,
        Error::Integrity(_) | Error::Version { .. } => DstStatus::Checkpoint,
        _ => DstStatus::Other,
    }
}

enum Fail {
    Null(&'static str),
    Small(usize),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DstStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            DstStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            DstStatus::NullPointer
        }
        Ok(Err(Fail::Small(need))) => {
            set_error(format!("output buffer too small, need {need} values"));
            DstStatus::BufferTooSmall
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DstStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

fn checked(dims: &[usize]) -> Result<usize, Fail> {
    dims.iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Fail::Lib(Error::InvalidInput("dimensions overflow".into())))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dst_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf`, truncated and
/// NUL-terminated. Returns the full message length in bytes, excluding the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dst_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads a checkpoint. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dst_model_load(path: *const c_char, out: *mut *mut DstModel) -> DstStatus {
    guard(|| {
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = std::ptr::null_mut();
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::InvalidInput("path is not valid UTF-8".into()))?;
        let (store, cfg) = load_checkpoint(Path::new(p))?;
        let model = Model::from_store(&cfg, store)?;
        *out = Box::into_raw(Box::new(DstModel { model }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`dst_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dst_model_free(model: *mut DstModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dst_model_embedding_dim(model: *const DstModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config().embedding_dim)
}

/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dst_model_n_mels(model: *const DstModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config().n_mels)
}

/// Embeds `batch × n_mels × frames` features into `out` (`batch × embedding_dim`).
///
/// # Safety
/// `features` must hold `batch * n_mels * frames` values and `out` `out_len`.
#[no_mangle]
pub unsafe extern "C" fn dst_model_embed_features(
    model: *const DstModel,
    features: *const f64,
    batch: usize,
    n_mels: usize,
    frames: usize,
    out: *mut f64,
    out_len: usize,
) -> DstStatus {
    guard(|| {
        let m = &model.as_ref().ok_or(Fail::Null("model"))?.model;
        let x = slice(features, checked(&[batch, n_mels, frames])?, "features")?;
        let need = checked(&[batch, m.config().embedding_dim])?;
        if out_len < need {
            return Err(Fail::Small(need));
        }
        let out = slice_mut(out, need, "out")?;
        let e = m.embed(&Tensor::from_vec(&[batch, n_mels, frames], x.to_vec())?)?;
        out.copy_from_slice(e.data());
        Ok(())
    })
}

/// Embeds a mono waveform through the standard log-Mel front end.
///
/// # Safety
/// `samples` must hold `n` values and `out` `out_len`.
#[no_mangle]
pub unsafe extern "C" fn dst_model_embed_waveform(
    model: *const DstModel,
    samples: *const f32,
    n: usize,
    sample_rate: u32,
    out: *mut f64,
    out_len: usize,
) -> DstStatus {
    guard(|| {
        let m = &model.as_ref().ok_or(Fail::Null("model"))?.model;
        let s = slice(samples, n, "samples")?;
        let need = m.config().embedding_dim;
        if out_len < need {
            return Err(Fail::Small(need));
        }
        let out = slice_mut(out, need, "out")?;
        let w = Waveform::new(s.iter().map(|&v| v as f64).collect(), sample_rate)?;
        let f = compute_log_mel(&w, m.config().n_mels, FRAME_WIN, FRAME_HOP)?;
        out.copy_from_slice(m.embed(&f.data)?.data());
        Ok(())
    })
}

/// Circular global filtering of `x` (`batch × channels × len`) by a complex
/// half-spectrum filter given as separate real and imaginary planes of
/// `channels × (len / 2 + 1)`. Writes `batch × channels × len` values to `out`.
///
/// # Safety
/// All pointers must reference arrays of the sizes above.
#[no_mangle]
pub unsafe extern "C" fn dst_gf_forward(
    x: *const f64,
    batch: usize,
    channels: usize,
    len: usize,
    filter_re: *const f64,
    filter_im: *const f64,
    out: *mut f64,
) -> DstStatus {
    guard(|| {
        let n = checked(&[batch, channels, len])?;
        let bins = len / 2 + 1;
        let xs = slice(x, n, "x")?;
        let re = slice(filter_re, checked(&[channels, bins])?, "filter_re")?;
        let im = slice(filter_im, re.len(), "filter_im")?;
        let out = slice_mut(out, n, "out")?;
        let f = GlobalFilter::new(channels, bins, re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect())?;
        let y = gf_forward(&Tensor::from_vec(&[batch, channels, len], xs.to_vec())?, &f)?;
        out.copy_from_slice(y.data());
        Ok(())
    })
}

/// EER and minimum detection cost over `n` scored trials. `labels[i]` is
/// nonzero for target trials.
///
/// # Safety
/// `scores` and `labels` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dst_compute_metrics(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut DstMetrics,
) -> DstStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let l = slice(labels, n, "labels")?;
        let out = out.as_mut().ok_or(Fail::Null("out"))?;
        let pairs: Vec<(f64, bool)> = s.iter().zip(l).map(|(&v, &t)| (v, t != 0)).collect();
        let m = compute_metrics(&pairs)?;
        *out = DstMetrics { eer: m.eer, eer_threshold: m.eer_threshold, min_dcf: m.min_dcf, dcf_threshold: m.dcf_threshold };
        Ok(())
    })
}
