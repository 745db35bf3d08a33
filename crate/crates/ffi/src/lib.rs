//! C ABI over `pact-core`.
//!
//! Every fallible function returns a [`PactStatus`] and writes results
//! through out-pointers. Objects cross the boundary as opaque handles that
//! the caller releases with the matching `*_free` function. After a
//! non-`OK` status, `pact_last_error` returns a message for the calling
//! thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use pact_core::beamform::das;
use pact_core::config::{parse_value, ConfigLayers, RunConfig};
use pact_core::geometry::water_sos;
use pact_core::optimize::{joint_reconstruct, JointProblem};
use pact_core::phantom::{generate_phantom, simulate_signals, PhantomSpec};
use pact_core::raster::{GridSpec, RasterGrid};
use pact_core::signals::SignalSet;
use pact_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PactStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Domain = 4,
    Format = 5,
    Numerical = 6,
    Io = 7,
    BufferSize = 8,
    Panic = 9,
}

/// Resolved run configuration.
pub struct PactConfig {
    layers: ConfigLayers,
    resolved: RunConfig,
}

/// Two-dimensional raster with its grid geometry.
pub struct PactRaster {
    inner: RasterGrid,
}

/// Recorded channel data from a transducer ring.
pub struct PactSignals {
    inner: SignalSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: PactStatus, msg: impl Into<String>) -> PactStatus {
    set_error(msg.into());
    status
}

fn from_core(e: Error) -> PactStatus {
    let status = match &e {
        Error::Config(_) => PactStatus::Config,
        Error::Domain(_) => PactStatus::Domain,
        Error::Format(_) => PactStatus::Format,
        Error::Numerical { .. } => PactStatus::Numerical,
        Error::Io(_) => PactStatus::Io,
    };
    fail(status, e.to_string())
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), PactStatus>) -> PactStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PactStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(PactStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

trait IntoStatus<T> {
    fn status(self) -> Result<T, PactStatus>;
}

impl<T> IntoStatus<T> for pact_core::Result<T> {
    fn status(self) -> Result<T, PactStatus> {
        self.map_err(from_core)
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, PactStatus> {
    if p.is_null() {
        return Err(fail(PactStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(PactStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, PactStatus> {
    p.as_ref()
        .ok_or_else(|| fail(PactStatus::NullPointer, format!("{what} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

fn check_out<T>(out: *mut *mut T, what: &str) -> Result<(), PactStatus> {
    if out.is_null() {
        Err(fail(PactStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Message describing the most recent failure on this thread, or null.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pact_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pact_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Sound speed of pure water (m/s) at `celsius`.
///
/// # Safety
/// `out` must be a valid pointer to a `double`.
#[no_mangle]
pub unsafe extern "C" fn pact_water_sos(celsius: f64, out: *mut f64) -> PactStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(PactStatus::NullPointer, "out is null"));
        }
        *out = water_sos(celsius).status()?;
        Ok(())
    })
}

/// Build a configuration from an optional TOML document (null for defaults).
///
/// # Safety
/// `toml` must be null or a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pact_config_new(toml: *const c_char, out: *mut *mut PactConfig) -> PactStatus {
    guard(|| {
        check_out(out, "out")?;
        let mut layers = ConfigLayers::new();
        if !toml.is_null() {
            layers.file_text(str_arg(toml, "toml")?, "toml argument").status()?;
        }
        let resolved = layers.resolve().status()?;
        put(out, PactConfig { layers, resolved });
        Ok(())
    })
}

/// Override one key; `value` is parsed as a TOML value.
///
/// # Safety
/// `cfg` must come from `pact_config_new`; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pact_config_set(cfg: *mut PactConfig, key: *const c_char, value: *const c_char) -> PactStatus {
    guard(|| {
        let cfg = cfg
            .as_mut()
            .ok_or_else(|| fail(PactStatus::NullPointer, "config is null"))?;
        let key = str_arg(key, "key")?;
        let value = str_arg(value, "value")?;
        let mut layers = cfg.layers.clone();
        layers.flag(key, parse_value(value)).status()?;
        cfg.resolved = layers.resolve().status()?;
        cfg.layers = layers;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or come from `pact_config_new`, and is not used again.
#[no_mangle]
pub unsafe extern "C" fn pact_config_free(cfg: *mut PactConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Raster of `width` by `height` pixels at `pitch` mm, centered on the
/// origin and filled with `fill`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pact_raster_new(
    width: usize,
    height: usize,
    pitch: f64,
    fill: f64,
    out: *mut *mut PactRaster,
) -> PactStatus {
    guard(|| {
        check_out(out, "out")?;
        let spec = GridSpec::centered(width, height, pitch).status()?;
        put(
            out,
            PactRaster {
                inner: RasterGrid::filled(spec, fill),
            },
        );
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pact_raster_load(path: *const c_char, out: *mut *mut PactRaster) -> PactStatus {
    guard(|| {
        check_out(out, "out")?;
        let inner = RasterGrid::load(PathBuf::from(str_arg(path, "path")?)).status()?;
        put(out, PactRaster { inner });
        Ok(())
    })
}

/// # Safety
/// `raster` must be a live handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pact_raster_save(raster: *const PactRaster, path: *const c_char) -> PactStatus {
    guard(|| {
        let r = ref_arg(raster, "raster")?;
        r.inner.save(PathBuf::from(str_arg(path, "path")?)).status()
    })
}

/// Width, height and pitch of a raster; any out-pointer may be null.
///
/// # Safety
/// `raster` must be a live handle; non-null out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pact_raster_shape(
    raster: *const PactRaster,
    width: *mut usize,
    height: *mut usize,
    pitch: *mut f64,
) -> PactStatus {
    guard(|| {
        let spec = ref_arg(raster, "raster")?.inner.spec;
        if !width.is_null() {
            *width = spec.width;
        }
        if !height.is_null() {
            *height = spec.height;
        }
        if !pitch.is_null() {
            *pitch = spec.pitch;
        }
        Ok(())
    })
}

/// Copy the row-major pixel values into `buf`, which must hold exactly
/// `width * height` doubles.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pact_raster_read(raster: *const PactRaster, buf: *mut f64, len: usize) -> PactStatus {
    guard(|| {
        let r = ref_arg(raster, "raster")?;
        if buf.is_null() {
            return Err(fail(PactStatus::NullPointer, "buffer is null"));
        }
        if len != r.inner.values.len() {
            return Err(fail(
                PactStatus::BufferSize,
                format!("buffer holds {len} values, raster has {}", r.inner.values.len()),
            ));
        }
        ptr::copy_nonoverlapping(r.inner.values.as_ptr(), buf, len);
        Ok(())
    })
}

/// Overwrite the pixel values from `buf` (row-major, `width * height`).
///
/// # Safety
/// `buf` must point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn pact_raster_write(raster: *mut PactRaster, buf: *const f64, len: usize) -> PactStatus {
    guard(|| {
        let r = raster
            .as_mut()
            .ok_or_else(|| fail(PactStatus::NullPointer, "raster is null"))?;
        if buf.is_null() {
            return Err(fail(PactStatus::NullPointer, "buffer is null"));
        }
        if len != r.inner.values.len() {
            return Err(fail(
                PactStatus::BufferSize,
                format!("buffer holds {len} values, raster has {}", r.inner.values.len()),
            ));
        }
        r.inner.values.copy_from_slice(std::slice::from_raw_parts(buf, len));
        Ok(())
    })
}

/// # Safety
/// `raster` must be null or a live handle, and is not used again.
#[no_mangle]
pub unsafe extern "C" fn pact_raster_free(raster: *mut PactRaster) {
    if !raster.is_null() {
        drop(Box::from_raw(raster));
    }
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pact_signals_load(path: *const c_char, out: *mut *mut PactSignals) -> PactStatus {
    guard(|| {
        check_out(out, "out")?;
        let inner = SignalSet::load(PathBuf::from(str_arg(path, "path")?)).status()?;
        put(out, PactSignals { inner });
        Ok(())
    })
}

/// # Safety
/// `signals` must be a live handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pact_signals_save(signals: *const PactSignals, path: *const c_char) -> PactStatus {
    guard(|| {
        let s = ref_arg(signals, "signals")?;
        s.inner.save(PathBuf::from(str_arg(path, "path")?)).status()
    })
}

/// Channel count and samples per channel; either out-pointer may be null.
///
/// # Safety
/// `signals` must be a live handle; non-null out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pact_signals_shape(
    signals: *const PactSignals,
    channels: *mut usize,
    samples: *mut usize,
) -> PactStatus {
    guard(|| {
        let s = &ref_arg(signals, "signals")?.inner;
        if !channels.is_null() {
            *channels = s.geom.n_transducers;
        }
        if !samples.is_null() {
            *samples = s.n_samples;
        }
        Ok(())
    })
}

/// # Safety
/// `signals` must be null or a live handle, and is not used again.
#[no_mangle]
pub unsafe extern "C" fn pact_signals_free(signals: *mut PactSignals) {
    if !signals.is_null() {
        drop(Box::from_raw(signals));
    }
}

/// Generate the configured built-in phantom and simulate its signals.
/// `pressure` and `sos` may be null when those rasters are not wanted.
///
/// # Safety
/// `cfg` must be a live handle; out-pointers must be valid or null as noted.
#[no_mangle]
pub unsafe extern "C" fn pact_simulate(
    cfg: *const PactConfig,
    signals: *mut *mut PactSignals,
    pressure: *mut *mut PactRaster,
    sos: *mut *mut PactRaster,
) -> PactStatus {
    guard(|| {
        let cfg = &ref_arg(cfg, "config")?.resolved;
        check_out(signals, "signals")?;
        let mut spec = PhantomSpec::named(&cfg.phantom)
            .ok_or_else(|| fail(PactStatus::Config, format!("unknown built-in phantom `{}`", cfg.phantom)))?;
        spec.background_sos = cfg.background().status()?;
        let ph = generate_phantom(&spec, cfg.grid().status()?, cfg.seed).status()?;
        let sig = simulate_signals(&ph, &cfg.geometry().status()?, &cfg.sim_config()).status()?;
        put(signals, PactSignals { inner: sig });
        if !pressure.is_null() {
            put(pressure, PactRaster { inner: ph.pressure });
        }
        if !sos.is_null() {
            put(sos, PactRaster { inner: ph.sos });
        }
        Ok(())
    })
}

/// Delay-and-sum image on the configured grid at uniform SOS `v0` (m/s)
/// and extra delay `delay` (mm).
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pact_das(
    cfg: *const PactConfig,
    signals: *const PactSignals,
    v0: f64,
    delay: f64,
    out: *mut *mut PactRaster,
) -> PactStatus {
    guard(|| {
        let cfg = &ref_arg(cfg, "config")?.resolved;
        let sig = &ref_arg(signals, "signals")?.inner;
        check_out(out, "out")?;
        let img = das(sig, cfg.grid().status()?, v0, delay).status()?;
        put(out, PactRaster { inner: img });
        Ok(())
    })
}

/// Multichannel deconvolution of the configured DAS stack with a known SOS map.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pact_deconvolve(
    cfg: *const PactConfig,
    signals: *const PactSignals,
    sos: *const PactRaster,
    out: *mut *mut PactRaster,
) -> PactStatus {
    guard(|| {
        let cfg = &ref_arg(cfg, "config")?.resolved;
        let sig = &ref_arg(signals, "signals")?.inner;
        let sos = &ref_arg(sos, "sos")?.inner;
        check_out(out, "out")?;
        let problem = JointProblem::new(sig, cfg.train_config().status()?).status()?;
        put(
            out,
            PactRaster {
                inner: problem.deconvolve(sos).status()?,
            },
        );
        Ok(())
    })
}

/// Joint reconstruction of the image and the SOS map. `sos` may be null.
///
/// # Safety
/// Handles must be live; `image` must be valid, `sos` valid or null.
#[no_mangle]
pub unsafe extern "C" fn pact_joint_reconstruct(
    cfg: *const PactConfig,
    signals: *const PactSignals,
    image: *mut *mut PactRaster,
    sos: *mut *mut PactRaster,
) -> PactStatus {
    guard(|| {
        let cfg = &ref_arg(cfg, "config")?.resolved;
        let sig = &ref_arg(signals, "signals")?.inner;
        check_out(image, "image")?;
        let r = joint_reconstruct(sig, cfg.train_config().status()?).status()?;
        put(image, PactRaster { inner: r.image });
        if !sos.is_null() {
            put(sos, PactRaster { inner: r.sos });
        }
        Ok(())
    })
}
