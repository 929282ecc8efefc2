//! C interface to the motionseg labeling pipeline.
//!
//! Every entry point returns an [`MsStatus`]. On failure a human-readable
//! message is kept per thread and can be read with [`ms_last_error`].
//! Rasters are row-major `width × height` arrays; invalid flow or depth is
//! passed as NaN. Panics never cross the boundary: they surface as
//! [`MsStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use motionseg::egomotion::{estimate_egomotion, EgomotionEstimate};
use motionseg::error::Error;
use motionseg::events::{build_volume, Event, EventSlice};
use motionseg::geometry::{rigid_flow_at, CameraIntrinsics, CameraVelocity};
use motionseg::grid::Grid;
use motionseg::io::fields::{depth_from_plane, flow_from_planes};
use motionseg::io::{load_config, PipelineConfig};
use motionseg::labeler::RejectionReason;
use motionseg::metrics::event_masked_iou;
use motionseg::pipeline::{label_slice, SliceStatus};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    InsufficientData = 4,
    EstimationFailed = 5,
    DegenerateSample = 6,
    EventOrder = 7,
    EventOutOfBounds = 8,
    Format = 9,
    Config = 10,
    Io = 11,
    Panic = 12,
    Internal = 13,
}

/// Outcome of labeling one slice.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsSliceStatus {
    Accepted = 0,
    Rejected = 1,
    Failed = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsRejection {
    None = 0,
    TotalVarianceTooHigh = 1,
    TotalVarianceTooLow = 2,
    SeparationTooLow = 3,
}

/// Camera twist and consensus statistics.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MsEgomotion {
    /// `v_x, v_y, v_z` (depth units per second) then `ω_x, ω_y, ω_z` (rad/s).
    pub twist: [f64; 6],
    pub inlier_count: u64,
    pub candidate_count: u64,
    pub iterations: u64,
    /// Mean flow residual over inliers, pixels per slice.
    pub mean_inlier_residual: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MsSliceResult {
    pub status: MsSliceStatus,
    /// Valid unless `status` is failed.
    pub egomotion: MsEgomotion,
    /// Decision fields are NaN when no decision was reached.
    pub threshold: f64,
    pub total_variance: f64,
    pub between_class_variance: f64,
    pub rejection: MsRejection,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MsEvent {
    /// Seconds.
    pub t: f64,
    pub x: u16,
    pub y: u16,
    /// `+1` or `-1`.
    pub p: i8,
}

/// Opaque pipeline handle: configuration plus camera intrinsics.
pub struct MsPipeline {
    cfg: PipelineConfig,
    intr: CameraIntrinsics,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(MsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Domain(_) | Error::Unit(..) | Error::Empty(_) | Error::Invariant(_) => MsStatus::InvalidArgument,
            Error::Shape { .. } => MsStatus::ShapeMismatch,
            Error::InsufficientData { .. } | Error::EmptyHistogram => MsStatus::InsufficientData,
            Error::EstimationFailed { .. } | Error::RejectedDecision(_) => MsStatus::EstimationFailed,
            Error::DegenerateSample(_) => MsStatus::DegenerateSample,
            Error::Ordering { .. } => MsStatus::EventOrder,
            Error::OutOfBounds { .. } => MsStatus::EventOutOfBounds,
            Error::Format(_) => MsStatus::Format,
            Error::Config(_) => MsStatus::Config,
            Error::File { .. } | Error::Io(_) => MsStatus::Io,
        };
        Failure(code, e.to_string())
    }
}

impl From<motionseg::error::ConfigError> for Failure {
    fn from(e: motionseg::error::ConfigError) -> Self {
        Failure(MsStatus::Config, e.to_string())
    }
}

fn fail(code: MsStatus, msg: impl Into<String>) -> Failure {
    Failure(code, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MsStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            MsStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(MsStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MsStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

unsafe fn pipeline<'a>(p: *const MsPipeline) -> Result<&'a MsPipeline, Failure> {
    non_null(p, "pipeline")?;
    Ok(&*p)
}

unsafe fn plane(p: *const f32, w: usize, h: usize, name: &str) -> Result<Grid<f32>, Failure> {
    non_null(p, name)?;
    Ok(Grid::from_vec(w, h, std::slice::from_raw_parts(p, w * h).to_vec())?)
}

unsafe fn bool_plane(p: *const u8, w: usize, h: usize, name: &str) -> Result<Grid<bool>, Failure> {
    non_null(p, name)?;
    let bytes = std::slice::from_raw_parts(p, w * h);
    Ok(Grid::from_vec(w, h, bytes.iter().map(|&b| b != 0).collect())?)
}

fn egomotion_out(e: &EgomotionEstimate) -> MsEgomotion {
    let mut twist = [0.0; 6];
    twist.copy_from_slice(e.velocity.to_vector().as_slice());
    MsEgomotion {
        twist,
        inlier_count: e.inlier_count as u64,
        candidate_count: e.candidate_count as u64,
        iterations: e.iterations_used as u64,
        mean_inlier_residual: e.mean_inlier_residual,
    }
}

fn new_handle(cfg: PipelineConfig, width: u32, height: u32, out: *mut *mut MsPipeline) -> Result<(), Failure> {
    let intr = cfg.intrinsics.resolve(width as usize, height as usize)?;
    let handle = Box::new(MsPipeline { cfg, intr });
    unsafe { *out = Box::into_raw(handle) };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ms_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ms_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Calibrated image motion `(ẋ, ẏ)` of a static point at depth `z` under
/// the camera twist `twist[6]`.
///
/// # Safety
/// `twist` must point to 6 doubles and `out` to 2 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ms_rigid_flow_at(x: f64, y: f64, z: f64, twist: *const f64, out: *mut f64) -> MsStatus {
    guard(|| {
        non_null(twist, "twist")?;
        non_null(out, "out")?;
        let t = std::slice::from_raw_parts(twist, 6);
        let vel = CameraVelocity::new([t[0], t[1], t[2]], [t[3], t[4], t[5]]);
        let f = rigid_flow_at(x, y, z, &vel)?;
        *out = f.x;
        *out.add(1) = f.y;
        Ok(())
    })
}

/// Pipeline with default settings for a `width × height` sensor. Intrinsics
/// default to a centered pinhole until set.
///
/// # Safety
/// `out` must be writable. Release the handle with [`ms_pipeline_free`].
#[no_mangle]
pub unsafe extern "C" fn ms_pipeline_new(width: u32, height: u32, out: *mut *mut MsPipeline) -> MsStatus {
    guard(|| {
        non_null(out, "out")?;
        new_handle(PipelineConfig::default(), width, height, out)
    })
}

/// Pipeline configured from a TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_pipeline_load(
    path: *const c_char,
    width: u32,
    height: u32,
    out: *mut *mut MsPipeline,
) -> MsStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = load_config(c_str(path, "path")?)?;
        new_handle(cfg, width, height, out)
    })
}

/// Sets one configuration key, e.g. `("ransac.seed", "7")`. The value uses
/// TOML literal syntax. Intrinsics keys are applied immediately.
///
/// # Safety
/// `p` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ms_pipeline_set(p: *mut MsPipeline, key: *const c_char, value: *const c_char) -> MsStatus {
    guard(|| {
        non_null(p, "pipeline")?;
        let (key, value) = (c_str(key, "key")?, c_str(value, "value")?);
        let handle = &mut *p;
        let mut cfg = handle.cfg.clone();
        cfg.set_str(key, value)?;
        let intr = cfg.intrinsics.resolve(handle.intr.width, handle.intr.height)?;
        handle.cfg = cfg;
        handle.intr = intr;
        Ok(())
    })
}

/// # Safety
/// `p` must be a handle from this library or NULL; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ms_pipeline_free(p: *mut MsPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Robust camera twist from one slice of flow (pixels per `dt` seconds)
/// and depth. `inlier_mask` may be NULL; otherwise it receives 1 for
/// consensus pixels and 0 elsewhere.
///
/// # Safety
/// `u`, `v`, `depth` must hold `width × height` floats, `inlier_mask` (if
/// not NULL) as many bytes, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_estimate_egomotion(
    p: *const MsPipeline,
    u: *const f32,
    v: *const f32,
    depth: *const f32,
    dt: f64,
    out: *mut MsEgomotion,
    inlier_mask: *mut u8,
) -> MsStatus {
    guard(|| {
        let h = pipeline(p)?;
        non_null(out, "out")?;
        let (w, ht) = h.intr.dims();
        let flow = flow_from_planes(&plane(u, w, ht, "u")?, &plane(v, w, ht, "v")?, dt)?;
        let mut z = depth_from_plane(&plane(depth, w, ht, "depth")?, h.cfg.z_max);
        z.clip(h.cfg.z_max);
        let est = estimate_egomotion(&flow, &z, &h.intr, &h.cfg.ransac)?;
        *out = egomotion_out(&est);
        if !inlier_mask.is_null() {
            let dst = std::slice::from_raw_parts_mut(inlier_mask, w * ht);
            for (d, &b) in dst.iter_mut().zip(est.inlier_mask.as_slice()) {
                *d = b as u8;
            }
        }
        Ok(())
    })
}

/// Full labeling of one slice. `mask` receives 0 (background), 1 (moving
/// object) or 255 (invalid); rejected and failed slices are all 255.
/// A rejected slice still returns OK with `result.status` set; a failed one
/// returns the underlying error code.
///
/// # Safety
/// `u`, `v`, `depth` must hold `width × height` floats, `mask` as many
/// writable bytes, and `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_label_slice(
    p: *const MsPipeline,
    u: *const f32,
    v: *const f32,
    depth: *const f32,
    dt: f64,
    mask: *mut u8,
    result: *mut MsSliceResult,
) -> MsStatus {
    guard(|| {
        let h = pipeline(p)?;
        non_null(mask, "mask")?;
        non_null(result, "result")?;
        let (w, ht) = h.intr.dims();
        let dst = std::slice::from_raw_parts_mut(mask, w * ht);
        dst.fill(255);
        *result = MsSliceResult {
            status: MsSliceStatus::Failed,
            egomotion: MsEgomotion::default(),
            threshold: f64::NAN,
            total_variance: f64::NAN,
            between_class_variance: f64::NAN,
            rejection: MsRejection::None,
        };
        let flow = flow_from_planes(&plane(u, w, ht, "u")?, &plane(v, w, ht, "v")?, dt)?;
        let z = depth_from_plane(&plane(depth, w, ht, "depth")?, h.cfg.z_max);
        let label = label_slice(&flow, &z, &h.intr, &h.cfg, 0, 0.0);
        let r = &mut *result;
        r.status = match label.status {
            SliceStatus::Accepted => MsSliceStatus::Accepted,
            SliceStatus::Rejected => MsSliceStatus::Rejected,
            SliceStatus::Failed => MsSliceStatus::Failed,
        };
        if let Ok(e) = &label.estimate {
            r.egomotion = egomotion_out(e);
        }
        if let Some(d) = &label.decision {
            r.threshold = d.threshold;
            r.total_variance = d.total_variance;
            r.between_class_variance = d.between_class_variance;
            r.rejection = match d.rejection_reason {
                RejectionReason::None => MsRejection::None,
                RejectionReason::TotalVarianceTooHigh => MsRejection::TotalVarianceTooHigh,
                RejectionReason::TotalVarianceTooLow => MsRejection::TotalVarianceTooLow,
                RejectionReason::SeparationTooLow => MsRejection::SeparationTooLow,
            };
        }
        dst.copy_from_slice(label.mask_bytes(w, ht).as_slice());
        match label.estimate {
            Err(e) => Err(e.into()),
            Ok(_) if label.status == SliceStatus::Failed => {
                Err(fail(MsStatus::Internal, "labeling failed after egomotion"))
            }
            Ok(_) => Ok(()),
        }
    })
}

/// Event volume of the events in `[t_start, t_end)` with the configured
/// number of bins. `out` receives `bins × height × width` floats, bin-major.
///
/// # Safety
/// `events` must hold `count` records (may be NULL when `count == 0`) and
/// `out` must hold `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn ms_event_volume(
    p: *const MsPipeline,
    events: *const MsEvent,
    count: usize,
    t_start: f64,
    t_end: f64,
    out: *mut f32,
    out_len: usize,
) -> MsStatus {
    guard(|| {
        let h = pipeline(p)?;
        non_null(out, "out")?;
        let (w, ht) = h.intr.dims();
        let bins = h.cfg.events.bins;
        if out_len != bins * w * ht {
            return Err(fail(
                MsStatus::ShapeMismatch,
                format!("output holds {out_len} floats, volume needs {}", bins * w * ht),
            ));
        }
        let events: Vec<Event> = if count == 0 {
            Vec::new()
        } else {
            non_null(events, "events")?;
            std::slice::from_raw_parts(events, count)
                .iter()
                .map(|e| {
                    let ev = Event::new(e.t, e.x, e.y, e.p);
                    ev.validate().map(|_| ev)
                })
                .collect::<Result<_, _>>()?
        };
        let slice = EventSlice::new(events, t_start, t_end)?;
        let vol = build_volume(&slice, bins, w, ht)?;
        let dst = std::slice::from_raw_parts_mut(out, out_len);
        for (d, &s) in dst.iter_mut().zip(&vol.data) {
            *d = s as f32;
        }
        Ok(())
    })
}

/// IoU of `pred` against `gt`, restricted to pixels where `events` is set.
/// All three are `width × height` byte masks (nonzero = set). When no
/// masked pixel belongs to either mask, `has_object` is 0 and `iou` NaN.
///
/// # Safety
/// The masks must hold `width × height` bytes; `iou` and `has_object`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_event_masked_iou(
    gt: *const u8,
    pred: *const u8,
    events: *const u8,
    width: u32,
    height: u32,
    iou: *mut f64,
    has_object: *mut i32,
) -> MsStatus {
    guard(|| {
        non_null(iou, "iou")?;
        non_null(has_object, "has_object")?;
        let (w, h) = (width as usize, height as usize);
        let r = event_masked_iou(
            &bool_plane(gt, w, h, "gt")?,
            &bool_plane(pred, w, h, "pred")?,
            &bool_plane(events, w, h, "events")?,
        )?;
        *iou = r.unwrap_or(f64::NAN);
        *has_object = r.is_some() as i32;
        Ok(())
    })
}
