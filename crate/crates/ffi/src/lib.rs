//! C ABI over the `fsdn` denoiser.
//!
//! Every function returns an [`FsdnStatus`]; on failure a message is
//! available from [`fsdn_last_error`] on the same thread. Images are
//! row-major `f32` planes in `[0, 1]`, `width * height` values long.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fsdn::eval::{denoise_dual, denoise_single, psnr, ssim, LoadedModel};
use fsdn::frequency::decompose;
use fsdn::{Error, ErrorClass, MappingMode, Plane};

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsdnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Numeric = 4,
    Panic = 5,
}

/// A loaded network. Create with [`fsdn_model_load`], release with
/// [`fsdn_model_free`].
pub struct FsdnModel {
    inner: LoadedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    let c = CString::new(msg).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(FsdnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.class() {
            ErrorClass::Usage => FsdnStatus::InvalidArgument,
            ErrorClass::Io => FsdnStatus::Io,
            ErrorClass::Numeric => FsdnStatus::Numeric,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FsdnStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FsdnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FsdnStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FsdnStatus::Panic
        }
    }
}

fn pixel_count(width: usize, height: usize) -> Result<usize, Failure> {
    match width.checked_mul(height) {
        Some(n) if n > 0 => Ok(n),
        _ => Err(Failure(
            FsdnStatus::InvalidArgument,
            format!("invalid image size {width}x{height}"),
        )),
    }
}

/// # Safety
/// `data` must be null or point to `width * height` readable floats.
unsafe fn read_plane(data: *const f32, width: usize, height: usize, what: &str) -> Result<Plane<f32>, Failure> {
    let n = pixel_count(width, height)?;
    if data.is_null() {
        return Err(null(what));
    }
    let values = std::slice::from_raw_parts(data, n).to_vec();
    Ok(Plane::new(width, height, values)?)
}

/// # Safety
/// `out` must be null or point to `plane.len()` writable floats.
unsafe fn write_plane(plane: &Plane<f32>, out: *mut f32, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    ptr::copy_nonoverlapping(plane.data().as_ptr(), out, plane.len());
    Ok(())
}

/// # Safety
/// `model` must be null or a live handle from [`fsdn_model_load`].
unsafe fn model_ref<'a>(model: *const FsdnModel, what: &str) -> Result<&'a FsdnModel, Failure> {
    model.as_ref().ok_or_else(|| null(what))
}

/// Message for the last failed call on this thread, or null after a
/// success. Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fsdn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fsdn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint and stores a new handle in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fsdn_model_load(path: *const c_char, out: *mut *mut FsdnModel) -> FsdnStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(FsdnStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
        let inner = LoadedModel::load(path)?;
        *out = Box::into_raw(Box::new(FsdnModel { inner }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from [`fsdn_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fsdn_model_free(model: *mut FsdnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of trainable parameters.
///
/// # Safety
/// `model` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fsdn_model_parameter_count(model: *const FsdnModel, out: *mut usize) -> FsdnStatus {
    guard(|| {
        let m = model_ref(model, "model")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m.inner.network.parameter_count();
        Ok(())
    })
}

/// Receptive field side length in pixels.
///
/// # Safety
/// `model` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fsdn_model_receptive_field(model: *const FsdnModel, out: *mut usize) -> FsdnStatus {
    guard(|| {
        let m = model_ref(model, "model")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m.inner.network.receptive_field();
        Ok(())
    })
}

/// Writes 1 to `*out` if the network predicts the noise, 0 if it predicts
/// the clean signal.
///
/// # Safety
/// `model` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fsdn_model_is_residual(model: *const FsdnModel, out: *mut i32) -> FsdnStatus {
    guard(|| {
        let m = model_ref(model, "model")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = i32::from(m.inner.network.mapping_mode() == MappingMode::Residual);
        Ok(())
    })
}

/// Denoises with a low/high network pair; the result is clamped to `[0, 1]`.
///
/// # Safety
/// `low` and `high` must be live handles; `noisy` and `out` must each hold
/// `width * height` floats.
#[no_mangle]
pub unsafe extern "C" fn fsdn_denoise_dual(
    low: *const FsdnModel,
    high: *const FsdnModel,
    noisy: *const f32,
    width: usize,
    height: usize,
    out: *mut f32,
) -> FsdnStatus {
    guard(|| {
        let low = model_ref(low, "low")?;
        let high = model_ref(high, "high")?;
        let noisy = read_plane(noisy, width, height, "noisy")?;
        let clean = denoise_dual(&noisy, &low.inner.network, &high.inner.network)?;
        write_plane(&clean, out, "out")
    })
}

/// Denoises with one network, subtracting its output for residual models.
///
/// # Safety
/// `model` must be a live handle; `noisy` and `out` must each hold
/// `width * height` floats.
#[no_mangle]
pub unsafe extern "C" fn fsdn_denoise_single(
    model: *const FsdnModel,
    noisy: *const f32,
    width: usize,
    height: usize,
    out: *mut f32,
) -> FsdnStatus {
    guard(|| {
        let m = model_ref(model, "model")?;
        let noisy = read_plane(noisy, width, height, "noisy")?;
        let clean = denoise_single(&noisy, &m.inner.network)?;
        write_plane(&clean, out, "out")
    })
}

/// Splits `image` into a Gaussian-blurred low part and the high residual.
///
/// # Safety
/// `image`, `low_out` and `high_out` must each hold `width * height` floats.
#[no_mangle]
pub unsafe extern "C" fn fsdn_decompose(
    image: *const f32,
    width: usize,
    height: usize,
    sigma: f64,
    low_out: *mut f32,
    high_out: *mut f32,
) -> FsdnStatus {
    guard(|| {
        let img = read_plane(image, width, height, "image")?;
        let pair = decompose(&img, sigma)?;
        write_plane(&pair.low, low_out, "low_out")?;
        write_plane(&pair.high, high_out, "high_out")
    })
}

/// Peak signal-to-noise ratio in dB for unit peak.
///
/// # Safety
/// `reference` and `test` must each hold `width * height` floats; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn fsdn_psnr(
    reference: *const f32,
    test: *const f32,
    width: usize,
    height: usize,
    out: *mut f64,
) -> FsdnStatus {
    guard(|| {
        let a = read_plane(reference, width, height, "reference")?;
        let b = read_plane(test, width, height, "test")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = psnr(&a, &b)?;
        Ok(())
    })
}

/// Mean structural similarity.
///
/// # Safety
/// `reference` and `test` must each hold `width * height` floats; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn fsdn_ssim(
    reference: *const f32,
    test: *const f32,
    width: usize,
    height: usize,
    out: *mut f64,
) -> FsdnStatus {
    guard(|| {
        let a = read_plane(reference, width, height, "reference")?;
        let b = read_plane(test, width, height, "test")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ssim(&a, &b)?;
        Ok(())
    })
}
