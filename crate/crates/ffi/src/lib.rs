//! C interface to `fsdehaze`.
//!
//! Every fallible function returns an [`FsdStatus`]; on failure a message describing the error is
//! available from [`fsd_last_error`] on the same thread. Images cross the boundary as interleaved
//! `height × width × channels` float arrays with values in [0,1].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fsdehaze::checkpoint::{load_generator, save_generator};
use fsdehaze::generator::GeneratorNet;
use fsdehaze::haze::{recover_clear, synthesize_haze, AtmosphericLight, TransmissionMap};
use fsdehaze::inference::dehaze_any_size;
use fsdehaze::metrics::detection::{categories_of, read_detections};
use fsdehaze::metrics::{mean_average_precision, psnr, ssim, SsimConfig};
use fsdehaze::{Error, ImageTensor};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FsdStatus {
    Ok = 0,
    InvalidArgument = 1,
    Config = 2,
    DatasetIntegrity = 3,
    Fingerprint = 4,
    NonFinite = 5,
    Parse = 6,
    Format = 7,
    Io = 8,
    Image = 9,
    /// A required pointer argument was null.
    NullPointer = 10,
    /// The library panicked; this indicates a bug.
    Internal = 11,
}

impl From<&Error> for FsdStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_) => FsdStatus::InvalidArgument,
            Error::Config(_) => FsdStatus::Config,
            Error::DatasetIntegrity(_) => FsdStatus::DatasetIntegrity,
            Error::Fingerprint { .. } => FsdStatus::Fingerprint,
            Error::NonFinite { .. } => FsdStatus::NonFinite,
            Error::Parse { .. } => FsdStatus::Parse,
            Error::Format { .. } => FsdStatus::Format,
            Error::Io { .. } => FsdStatus::Io,
            Error::Image { .. } => FsdStatus::Image,
        }
    }
}

/// Opaque handle to a loaded generator network.
pub struct FsdGenerator {
    net: GeneratorNet<f32>,
}

/// SSIM options; zero-initialize for the defaults (global statistics on luma).
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct FsdSsimOptions {
    /// Non-zero for sliding-window SSIM.
    pub windowed: u8,
    /// Window side in windowed mode; 0 means 11.
    pub window: usize,
    /// Non-zero to average per-channel SSIM instead of comparing luma.
    pub per_channel: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into a status and the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FsdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FsdStatus::Ok
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            FsdStatus::from(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("{what} must not be null"));
            FsdStatus::NullPointer
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal error: {msg}"));
            FsdStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<*const T, Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(p)
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    let p = non_null(p, what)?;
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidArgument(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn image_arg(data: *const f32, height: usize, width: usize, channels: usize, what: &'static str) -> Result<ImageTensor, Failure> {
    let p = non_null(data, what)?;
    let n = height
        .checked_mul(width)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::InvalidArgument(format!("{what}: size overflows")))?;
    let v = std::slice::from_raw_parts(p, n).to_vec();
    Ok(ImageTensor::new(height, width, channels, v)?)
}

unsafe fn write_image(img: &ImageTensor, out: *mut f32) {
    ptr::copy_nonoverlapping(img.data().as_ptr(), out, img.data().len());
}

/// Message of the last failed call on this thread, or null after a successful call.
///
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fsd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fsd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a generator with seeded random weights.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn fsd_generator_new_random(seed: u64, out: *mut *mut FsdGenerator) -> FsdStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = Box::into_raw(Box::new(FsdGenerator {
            net: GeneratorNet::new(seed),
        }));
        Ok(())
    })
}

/// Loads a generator from a generator or training checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn fsd_generator_load(path: *const c_char, out: *mut *mut FsdGenerator) -> FsdStatus {
    guard(|| {
        non_null(out, "out")?;
        let net = load_generator(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(FsdGenerator { net }));
        Ok(())
    })
}

/// Writes the generator's weights to `path`.
///
/// # Safety
/// `generator` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fsd_generator_save(generator: *const FsdGenerator, path: *const c_char) -> FsdStatus {
    guard(|| {
        let g = &*non_null(generator, "generator")?;
        save_generator(&path_arg(path, "path")?, &g.net)?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `generator` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fsd_generator_free(generator: *mut FsdGenerator) {
    if !generator.is_null() {
        drop(Box::from_raw(generator));
    }
}

/// Dehazes an RGB image of any size. `tile` 0 processes the whole image at once; otherwise larger
/// images are processed in overlapping tiles of that side (a multiple of 4 above 64).
///
/// # Safety
/// `input` and `output` must each hold `height * width * 3` floats.
#[no_mangle]
pub unsafe extern "C" fn fsd_generator_dehaze(
    generator: *const FsdGenerator,
    input: *const f32,
    height: usize,
    width: usize,
    tile: usize,
    output: *mut f32,
) -> FsdStatus {
    guard(|| {
        let g = &*non_null(generator, "generator")?;
        non_null(output, "output")?;
        let img = image_arg(input, height, width, 3, "input")?;
        let out = dehaze_any_size(&g.net, &img, (tile > 0).then_some(tile))?;
        write_image(&out, output);
        Ok(())
    })
}

unsafe fn haze_args(
    image: *const f32,
    height: usize,
    width: usize,
    channels: usize,
    transmission: *const f32,
    light: *const f32,
) -> Result<(ImageTensor, TransmissionMap, AtmosphericLight), Failure> {
    let img = image_arg(image, height, width, channels, "image")?;
    let t = std::slice::from_raw_parts(non_null(transmission, "transmission")?, height * width).to_vec();
    let a = std::slice::from_raw_parts(non_null(light, "light")?, 3);
    Ok((img, TransmissionMap::new(height, width, t)?, AtmosphericLight::new([a[0], a[1], a[2]])?))
}

/// Renders haze: `I = J·t + A·(1 − t)`, clamped to [0,1].
///
/// # Safety
/// `clean` and `output` hold `height * width * channels` floats, `transmission` holds
/// `height * width` and `light` holds 3.
#[no_mangle]
pub unsafe extern "C" fn fsd_synthesize_haze(
    clean: *const f32,
    height: usize,
    width: usize,
    channels: usize,
    transmission: *const f32,
    light: *const f32,
    output: *mut f32,
) -> FsdStatus {
    guard(|| {
        non_null(output, "output")?;
        let (img, t, a) = haze_args(clean, height, width, channels, transmission, light)?;
        write_image(&synthesize_haze(&img, &t, &a)?, output);
        Ok(())
    })
}

/// Inverts the scattering model with transmission floored at 0.05, clamped to [0,1].
///
/// # Safety
/// As for [`fsd_synthesize_haze`].
#[no_mangle]
pub unsafe extern "C" fn fsd_recover_clear(
    hazy: *const f32,
    height: usize,
    width: usize,
    channels: usize,
    transmission: *const f32,
    light: *const f32,
    output: *mut f32,
) -> FsdStatus {
    guard(|| {
        non_null(output, "output")?;
        let (img, t, a) = haze_args(hazy, height, width, channels, transmission, light)?;
        write_image(&recover_clear(&img, &t, &a)?, output);
        Ok(())
    })
}

/// PSNR in dB of `test` against `reference` for pixel values scaled to `peak`. Identical images
/// give positive infinity.
///
/// # Safety
/// Both images hold `height * width * channels` floats; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn fsd_psnr(
    reference: *const f32,
    test: *const f32,
    height: usize,
    width: usize,
    channels: usize,
    peak: f64,
    out: *mut f64,
) -> FsdStatus {
    guard(|| {
        non_null(out, "out")?;
        let r = image_arg(reference, height, width, channels, "reference")?;
        let t = image_arg(test, height, width, channels, "test")?;
        *out = psnr(&r, &t, peak)?;
        Ok(())
    })
}

/// SSIM of `test` against `reference`. `options` may be null for the defaults.
///
/// # Safety
/// Both images hold `height * width * channels` floats; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn fsd_ssim(
    reference: *const f32,
    test: *const f32,
    height: usize,
    width: usize,
    channels: usize,
    options: *const FsdSsimOptions,
    out: *mut f64,
) -> FsdStatus {
    guard(|| {
        non_null(out, "out")?;
        let o = if options.is_null() { FsdSsimOptions::default() } else { *options };
        let mut cfg = SsimConfig {
            per_channel: o.per_channel != 0,
            ..SsimConfig::default()
        };
        if o.windowed != 0 {
            cfg = cfg.windowed(if o.window == 0 { 11 } else { o.window });
        }
        let r = image_arg(reference, height, width, channels, "reference")?;
        let t = image_arg(test, height, width, channels, "test")?;
        *out = ssim(&r, &t, &cfg)?;
        Ok(())
    })
}

/// mAP over every category present in either detection file.
///
/// # Safety
/// Paths are NUL-terminated strings; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn fsd_map_from_files(
    predictions: *const c_char,
    truths: *const c_char,
    iou_threshold: f64,
    out: *mut f64,
) -> FsdStatus {
    guard(|| {
        non_null(out, "out")?;
        let p = read_detections(&path_arg(predictions, "predictions")?)?;
        let t = read_detections(&path_arg(truths, "truths")?)?;
        let cats = categories_of(&p, &t);
        *out = mean_average_precision(&p, &t, &cats, iou_threshold)?.map;
        Ok(())
    })
}
