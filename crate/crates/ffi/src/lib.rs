//! C ABI over `fpsnet`.
//!
//! Models are opaque handles created by `fpsn_model_load`/`fpsn_model_new`
//! and released with `fpsn_model_free`. Every fallible call returns an
//! `FpsnStatus`; on failure `fpsn_last_error` describes the problem (per
//! thread, valid until the next failing call on that thread). Images are
//! interleaved 8-bit RGB, row-major. Label outputs are one `uint16_t` class
//! and one `uint32_t` instance id per pixel; void is class 65535.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use fpsnet::data::coco::{decode_id, encode_id, MAX_SEGMENT_ID};
use fpsnet::metrics::compute_pq;
use fpsnet::model::{checkpoint, DetectorKind};
use fpsnet::pipeline::predict;
use fpsnet::{BoxXywh, Detection, Error, FpsNet, LabelSpace, ModelConfig, PanopticLabelMap};
use ndarray::Array3;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FpsnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Shape = 5,
    Runtime = 6,
    Panic = 7,
}

/// Opaque model handle.
pub struct FpsnModel {
    net: FpsNet<f32>,
    labels: LabelSpace,
}

/// A detection box in input pixels, centre/size form.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct FpsnBox {
    pub x_c: f64,
    pub y_c: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
    pub class_id: u16,
}

/// Aggregate panoptic quality of one prediction.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct FpsnPq {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub pq_things: f64,
    pub pq_stuff: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> FpsnStatus {
    match e {
        Error::Config(_) => FpsnStatus::InvalidArgument,
        Error::Shape(_) => FpsnStatus::Shape,
        Error::Checkpoint { .. } => FpsnStatus::Checkpoint,
        Error::Io { .. } | Error::Image { .. } | Error::Json { .. } => FpsnStatus::Io,
        _ => FpsnStatus::Runtime,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (FpsnStatus, String)>) -> FpsnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FpsnStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FpsnStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (FpsnStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (FpsnStatus, String) {
    (FpsnStatus::NullPointer, format!("{what} is NULL"))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fpsn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fpsn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, (FpsnStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (FpsnStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
    Ok(Path::new(s))
}

fn into_handle(net: FpsNet<f32>) -> *mut FpsnModel {
    let labels = LabelSpace::generic(net.config.n_things, net.config.n_stuff);
    Box::into_raw(Box::new(FpsnModel { net, labels }))
}

/// Load a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn fpsn_model_load(path: *const c_char, out: *mut *mut FpsnModel) -> FpsnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let net = checkpoint::load::<f32>(path).map_err(lib_err)?;
        *out = into_handle(net);
        Ok(())
    })
}

/// Freshly initialized model from a JSON model configuration (`NULL` or `"{}"` for defaults).
///
/// # Safety
/// `config_json` must be NULL or NUL-terminated; `out` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn fpsn_model_new(config_json: *const c_char, seed: u64, out: *mut *mut FpsnModel) -> FpsnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config: ModelConfig = if config_json.is_null() {
            ModelConfig::default()
        } else {
            let text = CStr::from_ptr(config_json)
                .to_str()
                .map_err(|_| (FpsnStatus::InvalidArgument, "config is not UTF-8".to_string()))?;
            serde_json::from_str(text).map_err(|e| (FpsnStatus::InvalidArgument, format!("config: {e}")))?
        };
        let net = FpsNet::new(config, seed).map_err(lib_err)?;
        *out = into_handle(net);
        Ok(())
    })
}

/// Save a model to a checkpoint file.
///
/// # Safety
/// `model` must be a live handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fpsn_model_save(model: *mut FpsnModel, path: *const c_char) -> FpsnStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        let path = path_arg(path)?;
        checkpoint::save(&mut m.net, path).map_err(lib_err)
    })
}

/// Release a model. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fpsn_model_free(model: *mut FpsnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of things and stuff classes the model predicts. Things use class
/// ids `0..things`, stuff `things..things + stuff`.
///
/// # Safety
/// `model` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fpsn_model_classes(model: *const FpsnModel, things: *mut usize, stuff: *mut usize) -> FpsnStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if things.is_null() || stuff.is_null() {
            return Err(null("output"));
        }
        *things = m.labels.num_things();
        *stuff = m.labels.num_stuff();
        Ok(())
    })
}

unsafe fn run_predict(
    model: *mut FpsnModel,
    rgb: *const u8,
    height: usize,
    width: usize,
    boxes: Option<Vec<Detection>>,
    class_out: *mut u16,
    instance_out: *mut u32,
) -> Result<(), (FpsnStatus, String)> {
    let m = model.as_mut().ok_or_else(|| null("model"))?;
    if rgb.is_null() || class_out.is_null() || instance_out.is_null() {
        return Err(null("buffer"));
    }
    if height == 0 || width == 0 {
        return Err((FpsnStatus::InvalidArgument, "image has no pixels".into()));
    }
    let n = height
        .checked_mul(width)
        .filter(|n| n.checked_mul(3).is_some())
        .ok_or_else(|| (FpsnStatus::InvalidArgument, "image too large".to_string()))?;
    let px = std::slice::from_raw_parts(rgb, n * 3);
    let image = Array3::from_shape_fn((height, width, 3), |(y, x, c)| px[(y * width + x) * 3 + c] as f32 / 255.0);
    if boxes.is_none() && m.net.config.detector == DetectorKind::Oracle {
        return Err((
            FpsnStatus::InvalidArgument,
            "model expects external boxes; use fpsn_predict_with_boxes".into(),
        ));
    }
    let pred = predict(&mut m.net, &image, boxes.as_deref(), &m.labels).map_err(lib_err)?;
    std::slice::from_raw_parts_mut(class_out, n).copy_from_slice(&pred.panoptic.class);
    std::slice::from_raw_parts_mut(instance_out, n).copy_from_slice(&pred.panoptic.instance);
    Ok(())
}

/// Segment one image with the model's own detector.
///
/// # Safety
/// `rgb` must hold `height * width * 3` bytes; `class_out` and
/// `instance_out` must hold `height * width` elements each.
#[no_mangle]
pub unsafe extern "C" fn fpsn_predict(
    model: *mut FpsnModel,
    rgb: *const u8,
    height: usize,
    width: usize,
    class_out: *mut u16,
    instance_out: *mut u32,
) -> FpsnStatus {
    guard(|| run_predict(model, rgb, height, width, None, class_out, instance_out))
}

/// Segment one image using caller-provided boxes instead of the detector.
///
/// # Safety
/// As [`fpsn_predict`]; `boxes` must hold `n_boxes` elements (may be NULL when `n_boxes` is 0).
#[no_mangle]
pub unsafe extern "C" fn fpsn_predict_with_boxes(
    model: *mut FpsnModel,
    rgb: *const u8,
    height: usize,
    width: usize,
    boxes: *const FpsnBox,
    n_boxes: usize,
    class_out: *mut u16,
    instance_out: *mut u32,
) -> FpsnStatus {
    guard(|| {
        let list: &[FpsnBox] = if n_boxes == 0 {
            &[]
        } else if boxes.is_null() {
            return Err(null("boxes"));
        } else {
            std::slice::from_raw_parts(boxes, n_boxes)
        };
        let dets = list
            .iter()
            .map(|b| Detection {
                class_id: b.class_id,
                score: b.score,
                bbox: BoxXywh::new(b.x_c, b.y_c, b.w, b.h),
            })
            .collect();
        run_predict(model, rgb, height, width, Some(dets), class_out, instance_out)
    })
}

/// Panoptic quality of one predicted map against ground truth. `gt_crowd`
/// may be NULL (no crowd regions).
///
/// # Safety
/// Every non-NULL array must hold `height * width` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fpsn_pq(
    pred_class: *const u16,
    pred_instance: *const u32,
    gt_class: *const u16,
    gt_instance: *const u32,
    gt_crowd: *const u8,
    height: usize,
    width: usize,
    num_things: usize,
    num_stuff: usize,
    out: *mut FpsnPq,
) -> FpsnStatus {
    guard(|| {
        if [pred_class.is_null(), gt_class.is_null(), out.is_null()].contains(&true)
            || pred_instance.is_null()
            || gt_instance.is_null()
        {
            return Err(null("argument"));
        }
        let n = height
            .checked_mul(width)
            .ok_or_else(|| (FpsnStatus::InvalidArgument, "map too large".to_string()))?;
        let map = |c: *const u16, i: *const u32, crowd: *const u8| {
            let mut m = PanopticLabelMap::void(height, width);
            m.class.copy_from_slice(std::slice::from_raw_parts(c, n));
            m.instance.copy_from_slice(std::slice::from_raw_parts(i, n));
            if !crowd.is_null() {
                for (d, &v) in m.crowd.iter_mut().zip(std::slice::from_raw_parts(crowd, n)) {
                    *d = v != 0;
                }
            }
            m
        };
        let pred = map(pred_class, pred_instance, std::ptr::null());
        let gt = map(gt_class, gt_instance, gt_crowd);
        let labels = LabelSpace::generic(num_things, num_stuff);
        let r = compute_pq(&pred, &gt, &labels).map_err(lib_err)?;
        *out = FpsnPq {
            pq: r.pq(),
            sq: r.sq(),
            rq: r.rq(),
            pq_things: r.pq_things(),
            pq_stuff: r.pq_stuff(),
        };
        Ok(())
    })
}

/// COCO-panoptic color of a segment id: `rgb_out[0] + 256 * rgb_out[1] + 65536 * rgb_out[2] == id`.
///
/// # Safety
/// `rgb_out` must hold 3 bytes.
#[no_mangle]
pub unsafe extern "C" fn fpsn_encode_id(id: u32, rgb_out: *mut u8) -> FpsnStatus {
    guard(|| {
        if rgb_out.is_null() {
            return Err(null("rgb_out"));
        }
        if id > MAX_SEGMENT_ID {
            return Err((FpsnStatus::InvalidArgument, format!("segment id {id} exceeds 2^24 - 1")));
        }
        std::slice::from_raw_parts_mut(rgb_out, 3).copy_from_slice(&encode_id(id));
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn fpsn_decode_id(r: u8, g: u8, b: u8) -> u32 {
    decode_id([r, g, b])
}
