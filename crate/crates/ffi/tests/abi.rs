use std::ffi::{CStr, CString};
use std::ptr;

use fpsnet_ffi::*;

const SMALL: &str = r#"{"n_att":4,"n_things":2,"n_stuff":2,"f_dim":8,"backbone_width":8,"head_width":16,"pad_multiple":32}"#;

fn new_model(json: &str) -> *mut FpsnModel {
    let cfg = CString::new(json).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { fpsn_model_new(cfg.as_ptr(), 3, &mut m) }, FpsnStatus::Ok);
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(fpsn_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_cargo_version() {
    let v = unsafe { CStr::from_ptr(fpsn_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn predict_save_load_round_trip() {
    let m = new_model(SMALL);
    let (h, w) = (40usize, 56usize);
    let rgb: Vec<u8> = (0..h * w * 3).map(|i| (i * 37 % 251) as u8).collect();
    let mut class = vec![0u16; h * w];
    let mut inst = vec![0u32; h * w];
    let st = unsafe { fpsn_predict(m, rgb.as_ptr(), h, w, class.as_mut_ptr(), inst.as_mut_ptr()) };
    assert_eq!(st, FpsnStatus::Ok, "{}", last_error());
    assert!(class.iter().all(|&c| c < 4 || c == u16::MAX));

    let (mut t, mut s) = (0, 0);
    assert_eq!(unsafe { fpsn_model_classes(m, &mut t, &mut s) }, FpsnStatus::Ok);
    assert_eq!((t, s), (2, 2));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { fpsn_model_save(m, path.as_ptr()) }, FpsnStatus::Ok);
    let mut m2 = ptr::null_mut();
    assert_eq!(unsafe { fpsn_model_load(path.as_ptr(), &mut m2) }, FpsnStatus::Ok);
    let mut class2 = vec![0u16; h * w];
    let mut inst2 = vec![0u32; h * w];
    let st = unsafe { fpsn_predict(m2, rgb.as_ptr(), h, w, class2.as_mut_ptr(), inst2.as_mut_ptr()) };
    assert_eq!(st, FpsnStatus::Ok);
    assert_eq!(class, class2);
    assert_eq!(inst, inst2);
    unsafe {
        fpsn_model_free(m);
        fpsn_model_free(m2);
        fpsn_model_free(ptr::null_mut());
    }
}

#[test]
fn external_boxes_drive_oracle_models() {
    let json = SMALL.replace('}', r#","detector":"oracle"}"#);
    let m = new_model(&json);
    let (h, w) = (32usize, 32usize);
    let rgb = vec![128u8; h * w * 3];
    let mut class = vec![0u16; h * w];
    let mut inst = vec![0u32; h * w];
    let st = unsafe { fpsn_predict(m, rgb.as_ptr(), h, w, class.as_mut_ptr(), inst.as_mut_ptr()) };
    assert_eq!(st, FpsnStatus::InvalidArgument);
    assert!(last_error().contains("boxes"));

    let boxes = [FpsnBox { x_c: 10.0, y_c: 12.0, w: 8.0, h: 10.0, score: 1.0, class_id: 1 }];
    let st = unsafe {
        fpsn_predict_with_boxes(m, rgb.as_ptr(), h, w, boxes.as_ptr(), 1, class.as_mut_ptr(), inst.as_mut_ptr())
    };
    assert_eq!(st, FpsnStatus::Ok, "{}", last_error());
    let st = unsafe {
        fpsn_predict_with_boxes(m, rgb.as_ptr(), h, w, ptr::null(), 0, class.as_mut_ptr(), inst.as_mut_ptr())
    };
    assert_eq!(st, FpsnStatus::Ok);
    unsafe { fpsn_model_free(m) };
}

#[test]
fn errors_are_reported_not_raised() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { fpsn_model_new(ptr::null(), 0, ptr::null_mut()) }, FpsnStatus::NullPointer);
    let bad = CString::new(r#"{"n_att":0}"#).unwrap();
    assert_eq!(unsafe { fpsn_model_new(bad.as_ptr(), 0, &mut m) }, FpsnStatus::InvalidArgument);
    let unknown = CString::new(r#"{"bogus":1}"#).unwrap();
    assert_eq!(unsafe { fpsn_model_new(unknown.as_ptr(), 0, &mut m) }, FpsnStatus::InvalidArgument);
    assert!(last_error().contains("bogus"));
    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    let st = unsafe { fpsn_model_load(missing.as_ptr(), &mut m) };
    assert!(matches!(st, FpsnStatus::Io | FpsnStatus::Checkpoint));
    assert!(!last_error().is_empty());
    assert!(m.is_null());
    let mut class = [0u16; 1];
    let mut inst = [0u32; 1];
    let st = unsafe { fpsn_predict(ptr::null_mut(), [0u8; 3].as_ptr(), 1, 1, class.as_mut_ptr(), inst.as_mut_ptr()) };
    assert_eq!(st, FpsnStatus::NullPointer);
}

#[test]
fn pq_of_identical_maps_is_one() {
    let class = [0u16, 0, 1, 1, 2, 2, 3, 3];
    let inst = [1u32, 1, 2, 2, 0, 0, 0, 0];
    let mut out = FpsnPq::default();
    let st = unsafe {
        fpsn_pq(class.as_ptr(), inst.as_ptr(), class.as_ptr(), inst.as_ptr(), ptr::null(), 2, 4, 2, 2, &mut out)
    };
    assert_eq!(st, FpsnStatus::Ok, "{}", last_error());
    assert_eq!((out.pq, out.sq, out.rq, out.pq_things, out.pq_stuff), (1.0, 1.0, 1.0, 1.0, 1.0));
}

#[test]
fn segment_id_colors_round_trip() {
    for id in [0u32, 1, 255, 256, 65_535, 65_536, 0xAB_CDEF, (1 << 24) - 1] {
        let mut rgb = [0u8; 3];
        assert_eq!(unsafe { fpsn_encode_id(id, rgb.as_mut_ptr()) }, FpsnStatus::Ok);
        assert_eq!(rgb[0] as u32 + 256 * rgb[1] as u32 + 65_536 * rgb[2] as u32, id);
        assert_eq!(fpsn_decode_id(rgb[0], rgb[1], rgb[2]), id);
    }
    let mut rgb = [0u8; 3];
    assert_eq!(unsafe { fpsn_encode_id(1 << 24, rgb.as_mut_ptr()) }, FpsnStatus::InvalidArgument);
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/fpsnet.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in ["fpsn_model_load", "fpsn_predict_with_boxes", "fpsn_pq", "FPSN_STATUS_OK", "typedef struct FpsnModel FpsnModel"] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(&src, format!("#include \"{header}\"\nint main(void) {{ FpsnModel *m = 0; fpsn_model_free(m); return FPSN_STATUS_OK; }}\n")).unwrap();
    match std::process::Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).output() {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(_) => eprintln!("no C compiler found; syntax check skipped"),
    }
}
