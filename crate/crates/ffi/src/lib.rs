//! C ABI for the segmentation lab: opaque model handles, status codes, and a
//! per-thread last-error message. All buffers are caller-allocated; strings
//! are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use modeseg::checkpoint;
use modeseg::config::ExperimentConfig;
use modeseg::data::{self, Raster, StandardizationStats, SynthConfig};
use modeseg::error::Error;
use modeseg::experiments;
use modeseg::models::Model;
use modeseg::objectives;
use modeseg::runner;

/// Status code returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MsStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Invalid configuration or argument value.
    Config = 3,
    Io = 4,
    /// Malformed on-disk artifact (raster, checkpoint, config document).
    Format = 5,
    Runtime = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(e: &Error) -> MsStatus {
    match e {
        Error::Config(_) | Error::Json(_) => MsStatus::Config,
        Error::Io(_) => MsStatus::Io,
        Error::Format(_) => MsStatus::Format,
        _ => MsStatus::Runtime,
    }
}

fn run_guarded(f: impl FnOnce() -> Result<(), (MsStatus, String)>) -> MsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MsStatus::Runtime
        }
    }
}

fn fail(e: Error) -> (MsStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Result<&'a str, (MsStatus, String)> {
    if ptr.is_null() {
        return Err((MsStatus::NullArgument, "NULL string argument".into()));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| (MsStatus::InvalidUtf8, "argument is not valid UTF-8".into()))
}

/// Message describing the most recent failure on this thread. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ms_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ms_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Opaque handle to a loaded model plus its training-set standardization.
pub struct MsModel {
    model: Model<f32>,
    standardization: Option<StandardizationStats>,
}

/// Load a model checkpoint produced by training. On success writes a handle
/// to `out`; release it with `ms_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_model_load(path: *const c_char, out: *mut *mut MsModel) -> MsStatus {
    run_guarded(|| {
        if out.is_null() {
            return Err((MsStatus::NullArgument, "out handle is NULL".into()));
        }
        let path = cstr_arg(path)?;
        let (model, standardization) =
            checkpoint::load_checkpoint::<f32>(Path::new(path)).map_err(fail)?;
        *out = Box::into_raw(Box::new(MsModel {
            model,
            standardization,
        }));
        Ok(())
    })
}

/// Release a model handle. NULL is a no-op.
///
/// # Safety
/// `model` must be a pointer returned by `ms_model_load`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_model_free(model: *mut MsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Segment a raw backscatter raster (row-major dB values, `width*height`).
/// The raster is tiled with `tile_size`, standardized with the transform
/// stored in the checkpoint, and stitched back. `mask_out` (caller-allocated,
/// `width*height`) receives 1 = water, 0 = non-water, 255 = no prediction
/// (grid margin).
///
/// # Safety
/// `model`, `values`, `mask_out` must be valid for the stated extents.
#[no_mangle]
pub unsafe extern "C" fn ms_model_predict(
    model: *const MsModel,
    values: *const f32,
    width: usize,
    height: usize,
    tile_size: usize,
    threshold: f64,
    mask_out: *mut u8,
) -> MsStatus {
    run_guarded(|| {
        if model.is_null() || values.is_null() || mask_out.is_null() {
            return Err((MsStatus::NullArgument, "NULL buffer argument".into()));
        }
        let handle = &*model;
        let input = std::slice::from_raw_parts(values, width * height);
        let raster = Raster::new(width, height, input.to_vec()).map_err(fail)?;
        let mask = experiments::predict_raster(
            &handle.model,
            &raster,
            handle.standardization.as_ref(),
            tile_size,
            threshold,
        )
        .map_err(fail)?;
        let out = std::slice::from_raw_parts_mut(mask_out, width * height);
        let nodata = mask.nodata_mask.as_deref().unwrap_or(&[]);
        for (i, v) in mask.values.iter().enumerate() {
            out[i] = if nodata.get(i).copied().unwrap_or(false) {
                255
            } else {
                u8::from(*v >= 0.5)
            };
        }
        Ok(())
    })
}

/// Generate a synthetic bimodal scene. `image_out` receives `width*height`
/// dB values and `mask_out` the 0/1 water mask.
///
/// # Safety
/// Output buffers must hold `width*height` elements.
#[no_mangle]
pub unsafe extern "C" fn ms_synth_scene(
    width: usize,
    height: usize,
    coverage: f64,
    seed: u64,
    image_out: *mut f32,
    mask_out: *mut u8,
) -> MsStatus {
    run_guarded(|| {
        if image_out.is_null() || mask_out.is_null() {
            return Err((MsStatus::NullArgument, "NULL buffer argument".into()));
        }
        let cfg = SynthConfig {
            coverage,
            ..SynthConfig::default()
        };
        let (raster, mask) = data::synth_scene(width, height, &cfg, seed).map_err(fail)?;
        std::slice::from_raw_parts_mut(image_out, width * height).copy_from_slice(&raster.values);
        std::slice::from_raw_parts_mut(mask_out, width * height).copy_from_slice(&mask.data);
        Ok(())
    })
}

/// The six confusion-count metrics.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct MsMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub dsc: f64,
    /// 1 when a zero denominator forced some metric to 0.
    pub degenerate: u8,
}

/// Score predicted probabilities against a 0/1 mask at `threshold`.
///
/// # Safety
/// `pred` and `target` must hold `len` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ms_metrics(
    pred: *const f32,
    target: *const u8,
    len: usize,
    threshold: f64,
    out: *mut MsMetrics,
) -> MsStatus {
    run_guarded(|| {
        if pred.is_null() || target.is_null() || out.is_null() {
            return Err((MsStatus::NullArgument, "NULL buffer argument".into()));
        }
        let pred = std::slice::from_raw_parts(pred, len);
        let target: Vec<f32> = std::slice::from_raw_parts(target, len)
            .iter()
            .map(|&v| f32::from(v.min(1)))
            .collect();
        let cm = objectives::confusion(pred, &target, threshold).map_err(fail)?;
        let m = objectives::metrics(&cm).map_err(fail)?;
        *out = MsMetrics {
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            iou: m.iou,
            dsc: m.dsc,
            degenerate: u8::from(m.degenerate),
        };
        Ok(())
    })
}

/// Run a full training experiment from a JSON config document (same schema
/// as the CLI `--config` file) writing run artifacts into `run_dir`.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ms_run_experiment(
    config_json: *const c_char,
    run_dir: *const c_char,
) -> MsStatus {
    run_guarded(|| {
        let config_json = cstr_arg(config_json)?;
        let run_dir = cstr_arg(run_dir)?;
        let cfg: ExperimentConfig =
            serde_json::from_str(config_json).map_err(|e| fail(Error::Json(e)))?;
        runner::run_train(&cfg, Path::new(run_dir)).map(|_| ()).map_err(fail)
    })
}
