//! C ABI over the `bsrdm` library.
//!
//! Images and kernels are opaque handles owned by the caller and released
//! with the matching `*_free` function. Every fallible call returns a
//! [`BsrdmStatus`]; on failure [`bsrdm_last_error`] describes the problem
//! for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use bsrdm::degradation::{synthesize_pair, DegradationSpec};
use bsrdm::ekp::{generate_kernel, EkpParams, Kernel};
use bsrdm::em::{run_em, SolverConfig};
use bsrdm::metrics::{psnr, ssim};
use bsrdm::noise::PatchSize;
use bsrdm::tensor::Tensor;
use bsrdm::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BsrdmStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or out-of-range argument.
    InvalidArgument = 1,
    Io = 2,
    Dimension = 3,
    Validation = 4,
    /// The solver produced non-finite values.
    Divergence = 5,
    DegenerateKernel = 6,
    Internal = 7,
}

/// Image with `channels × height × width` values in [0, 1].
pub struct BsrdmImage(Tensor);

pub struct BsrdmKernel(Kernel);

/// Solver settings. `patch == 0` means one shared noise variance for the
/// whole image; otherwise it is the odd side of the variance window.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct BsrdmSolverConfig {
    pub scale: u32,
    pub rho: f64,
    pub gamma: f64,
    pub patch: u32,
    pub lr_net: f64,
    pub lr_kernel: f64,
    pub langevin_steps: u32,
    pub langevin_delta: f64,
    pub iterations: u32,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("nul bytes removed"));
}

fn status_of(err: &Error) -> BsrdmStatus {
    match err {
        Error::Dimension(_) => BsrdmStatus::Dimension,
        Error::Validation(_) | Error::Json(_) => BsrdmStatus::Validation,
        Error::DegenerateKernel { .. } => BsrdmStatus::DegenerateKernel,
        Error::Divergence { .. } => BsrdmStatus::Divergence,
        Error::Io { .. } | Error::Image { .. } => BsrdmStatus::Io,
    }
}

enum Failure {
    Arg(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BsrdmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            BsrdmStatus::Ok
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(msg);
            BsrdmStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            BsrdmStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Arg(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Arg("string argument is not UTF-8"))
}

unsafe fn image_arg<'a>(p: *const BsrdmImage) -> Result<&'a Tensor, Failure> {
    p.as_ref().map(|i| &i.0).ok_or(Failure::Arg("null image handle"))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Arg("null output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn bsrdm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bsrdm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `channels × height × width` values (channel-major) into a new image.
///
/// # Safety
/// `data` must point to that many readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsrdm_image_new(
    channels: usize,
    height: usize,
    width: usize,
    data: *const f64,
    out: *mut *mut BsrdmImage,
) -> BsrdmStatus {
    guard(|| {
        if data.is_null() {
            return Err(Failure::Arg("null data pointer"));
        }
        let n = channels.checked_mul(height).and_then(|v| v.checked_mul(width)).ok_or(Failure::Arg("image too large"))?;
        let values = std::slice::from_raw_parts(data, n).to_vec();
        put(out, BsrdmImage(Tensor::new(vec![channels, height, width], values)?))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsrdm_image_read_png(path: *const c_char, out: *mut *mut BsrdmImage) -> BsrdmStatus {
    guard(|| {
        let path = str_arg(path, "null path")?;
        put(out, BsrdmImage(bsrdm::io::read_png(Path::new(path))?))
    })
}

/// # Safety
/// `image` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bsrdm_image_write_png(image: *const BsrdmImage, path: *const c_char) -> BsrdmStatus {
    guard(|| {
        let img = image_arg(image)?;
        let path = str_arg(path, "null path")?;
        Ok(bsrdm::io::write_png(Path::new(path), img)?)
    })
}

/// # Safety
/// `image` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsrdm_image_dims(
    image: *const BsrdmImage,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> BsrdmStatus {
    guard(|| {
        let (c, h, w) = image_arg(image)?.dims3()?;
        if channels.is_null() || height.is_null() || width.is_null() {
            return Err(Failure::Arg("null output pointer"));
        }
        (*channels, *height, *width) = (c, h, w);
        Ok(())
    })
}

/// Copies the image values into `dst`, which must hold exactly
/// `channels × height × width` doubles.
///
/// # Safety
/// `image` must be a live handle; `dst` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bsrdm_image_copy(image: *const BsrdmImage, dst: *mut f64, len: usize) -> BsrdmStatus {
    guard(|| {
        let img = image_arg(image)?;
        if dst.is_null() {
            return Err(Failure::Arg("null destination"));
        }
        if len != img.len() {
            return Err(Failure::Arg("destination length does not match the image"));
        }
        ptr::copy_nonoverlapping(img.data().as_ptr(), dst, len);
        Ok(())
    })
}

/// # Safety
/// `image` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn bsrdm_image_free(image: *mut BsrdmImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Kernel of side `2·radius + 1` from the Cholesky entries of its precision matrix.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsrdm_kernel_generate(
    q11: f64,
    q21: f64,
    q22: f64,
    radius: usize,
    out: *mut *mut BsrdmKernel,
) -> BsrdmStatus {
    guard(|| put(out, BsrdmKernel(generate_kernel(EkpParams::new(q11, q21, q22), radius)?)))
}

/// # Safety
/// `kernel` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bsrdm_kernel_side(kernel: *const BsrdmKernel) -> usize {
    kernel.as_ref().map_or(0, |k| k.0.side())
}

/// Copies the `side × side` kernel values row by row into `dst`.
///
/// # Safety
/// `kernel` must be a live handle; `dst` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bsrdm_kernel_copy(kernel: *const BsrdmKernel, dst: *mut f64, len: usize) -> BsrdmStatus {
    guard(|| {
        let k = &kernel.as_ref().ok_or(Failure::Arg("null kernel handle"))?.0;
        if dst.is_null() {
            return Err(Failure::Arg("null destination"));
        }
        if len != k.values().len() {
            return Err(Failure::Arg("destination length does not match the kernel"));
        }
        ptr::copy_nonoverlapping(k.values().as_ptr(), dst, len);
        Ok(())
    })
}

/// # Safety
/// `kernel` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn bsrdm_kernel_free(kernel: *mut BsrdmKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

#[no_mangle]
pub extern "C" fn bsrdm_solver_config_default() -> BsrdmSolverConfig {
    let d = SolverConfig::default();
    BsrdmSolverConfig {
        scale: d.scale as u32,
        rho: d.rho,
        gamma: d.gamma,
        patch: match d.patch {
            PatchSize::Square(p) => p as u32,
            PatchSize::WholeImage => 0,
        },
        lr_net: d.lr_net,
        lr_kernel: d.lr_kernel,
        langevin_steps: d.langevin_steps as u32,
        langevin_delta: d.langevin_delta,
        iterations: d.iterations as u32,
        seed: d.seed,
    }
}

impl From<&BsrdmSolverConfig> for SolverConfig {
    fn from(c: &BsrdmSolverConfig) -> Self {
        SolverConfig {
            scale: c.scale as usize,
            rho: c.rho,
            gamma: c.gamma,
            patch: if c.patch == 0 { PatchSize::WholeImage } else { PatchSize::Square(c.patch as usize) },
            lr_net: c.lr_net,
            lr_kernel: c.lr_kernel,
            langevin_steps: c.langevin_steps as usize,
            langevin_delta: c.langevin_delta,
            iterations: c.iterations as usize,
            seed: c.seed,
            ..SolverConfig::default()
        }
    }
}

/// Super-resolves `lr`, returning the HR estimate and the estimated kernel.
/// Either output pointer may be null if that result is not wanted.
///
/// # Safety
/// `lr` and `config` must be valid; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsrdm_super_resolve(
    lr: *const BsrdmImage,
    config: *const BsrdmSolverConfig,
    hr_out: *mut *mut BsrdmImage,
    kernel_out: *mut *mut BsrdmKernel,
) -> BsrdmStatus {
    guard(|| {
        let y = image_arg(lr)?;
        let cfg = config.as_ref().ok_or(Failure::Arg("null config"))?;
        let result = run_em(y, &SolverConfig::from(cfg))?;
        if !hr_out.is_null() {
            put(hr_out, BsrdmImage(result.hr))?;
        }
        if !kernel_out.is_null() {
            put(kernel_out, BsrdmKernel(result.kernel))?;
        }
        Ok(())
    })
}

/// Degrades `hr` according to a JSON degradation spec (the `degradation`
/// object of the CLI run config; `"{}"` selects the defaults).
///
/// # Safety
/// `hr` must be a live handle, `spec_json` a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bsrdm_degrade(
    hr: *const BsrdmImage,
    spec_json: *const c_char,
    out: *mut *mut BsrdmImage,
) -> BsrdmStatus {
    guard(|| {
        let img = image_arg(hr)?;
        let spec: DegradationSpec = serde_json::from_str(str_arg(spec_json, "null spec")?).map_err(Error::from)?;
        put(out, BsrdmImage(synthesize_pair(img, &spec)?.lr))
    })
}

/// PSNR on luminance in dB, excluding `crop_border` pixels per side.
///
/// # Safety
/// `a` and `b` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bsrdm_psnr(
    a: *const BsrdmImage,
    b: *const BsrdmImage,
    crop_border: usize,
    out: *mut f64,
) -> BsrdmStatus {
    guard(|| {
        let v = psnr(image_arg(a)?, image_arg(b)?, crop_border)?;
        *out.as_mut().ok_or(Failure::Arg("null output pointer"))? = v;
        Ok(())
    })
}

/// SSIM on luminance, excluding `crop_border` pixels per side.
///
/// # Safety
/// `a` and `b` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bsrdm_ssim(
    a: *const BsrdmImage,
    b: *const BsrdmImage,
    crop_border: usize,
    out: *mut f64,
) -> BsrdmStatus {
    guard(|| {
        let v = ssim(image_arg(a)?, image_arg(b)?, crop_border)?;
        *out.as_mut().ok_or(Failure::Arg("null output pointer"))? = v;
        Ok(())
    })
}
