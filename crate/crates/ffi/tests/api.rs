use std::ffi::{CStr, CString};
use std::ptr;

use motionseg::geometry::{render_rigid_field, CameraIntrinsics, CameraVelocity, DepthMap};
use motionseg::grid::Grid;
use motionseg_ffi::*;

const W: u32 = 64;
const H: u32 = 48;

fn last_error() -> String {
    let p = ms_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn pipeline() -> *mut MsPipeline {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { ms_pipeline_new(W, H, &mut p) }, MsStatus::Ok);
    assert!(!p.is_null());
    p
}

struct Slice {
    u: Vec<f32>,
    v: Vec<f32>,
    z: Vec<f32>,
    twist: [f64; 6],
}

/// Rigid scene plus a box shifted by `offset` pixels.
fn slice(offset: f32) -> Slice {
    let (w, h) = (W as usize, H as usize);
    let intr = CameraIntrinsics::centered(w, h);
    let depth = DepthMap::from_depths(Grid::from_fn(w, h, |c, r| 1.0 + 0.01 * ((c * 7 + r * 3) % 50) as f64), 3.0);
    let twist = [0.2, -0.1, 0.3, 0.05, 0.1, -0.05];
    let vel = CameraVelocity::new([twist[0], twist[1], twist[2]], [twist[3], twist[4], twist[5]]);
    let flow = render_rigid_field(&depth, &vel, &intr, 0.025).unwrap();
    let mut u: Vec<f32> = flow.u.as_slice().iter().map(|&x| x as f32).collect();
    let v = flow.v.as_slice().iter().map(|&x| x as f32).collect();
    for r in 10..25 {
        for c in 10..30 {
            u[r * w + c] += offset;
        }
    }
    let z = depth.z.as_slice().iter().map(|&x| x as f32).collect();
    Slice { u, v, z, twist }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(ms_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn rigid_flow_matches_hand_value() {
    let twist = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
    let mut out = [0.0; 2];
    assert_eq!(unsafe { ms_rigid_flow_at(0.2, 0.1, 2.0, twist.as_ptr(), out.as_mut_ptr()) }, MsStatus::Ok);
    assert_eq!(out, [0.1, -0.2]);
    assert!(ms_last_error().is_null());
}

#[test]
fn rigid_flow_rejects_bad_depth_with_message() {
    let twist = [0.0; 6];
    let mut out = [0.0; 2];
    let s = unsafe { ms_rigid_flow_at(0.0, 0.0, -1.0, twist.as_ptr(), out.as_mut_ptr()) };
    assert_eq!(s, MsStatus::InvalidArgument);
    assert!(last_error().contains("depth"));
    let s = unsafe { ms_rigid_flow_at(0.0, 0.0, 1.0, ptr::null(), out.as_mut_ptr()) };
    assert_eq!(s, MsStatus::NullPointer);
}

#[test]
fn egomotion_recovers_twist() {
    let p = pipeline();
    let s = slice(0.0);
    let mut est = MsEgomotion::default();
    let mut inliers = vec![7u8; (W * H) as usize];
    let status = unsafe {
        ms_estimate_egomotion(p, s.u.as_ptr(), s.v.as_ptr(), s.z.as_ptr(), 0.025, &mut est, inliers.as_mut_ptr())
    };
    assert_eq!(status, MsStatus::Ok, "{}", last_error());
    for (a, b) in est.twist.iter().zip(s.twist) {
        assert!((a - b).abs() < 1e-4, "{:?}", est.twist);
    }
    assert_eq!(est.inlier_count, est.candidate_count);
    assert!(inliers.iter().all(|&b| b == 1));
    unsafe { ms_pipeline_free(p) };
}

#[test]
fn label_slice_marks_moving_box() {
    let p = pipeline();
    let s = slice(3.0);
    let mut mask = vec![0u8; (W * H) as usize];
    let mut res = std::mem::MaybeUninit::<MsSliceResult>::uninit();
    let status =
        unsafe { ms_label_slice(p, s.u.as_ptr(), s.v.as_ptr(), s.z.as_ptr(), 0.025, mask.as_mut_ptr(), res.as_mut_ptr()) };
    assert_eq!(status, MsStatus::Ok, "{}", last_error());
    let res = unsafe { res.assume_init() };
    assert_eq!(res.status, MsSliceStatus::Accepted);
    assert_eq!(res.rejection, MsRejection::None);
    for r in 0..H as usize {
        for c in 0..W as usize {
            let inside = (10..30).contains(&c) && (10..25).contains(&r);
            assert_eq!(mask[r * W as usize + c], inside as u8, "({c}, {r})");
        }
    }
    unsafe { ms_pipeline_free(p) };
}

#[test]
fn rigid_slice_is_rejected_and_masked_invalid() {
    let p = pipeline();
    let s = slice(0.0);
    let mut mask = vec![0u8; (W * H) as usize];
    let mut res = std::mem::MaybeUninit::<MsSliceResult>::uninit();
    let status =
        unsafe { ms_label_slice(p, s.u.as_ptr(), s.v.as_ptr(), s.z.as_ptr(), 0.025, mask.as_mut_ptr(), res.as_mut_ptr()) };
    assert_eq!(status, MsStatus::Ok);
    let res = unsafe { res.assume_init() };
    assert_eq!(res.status, MsSliceStatus::Rejected);
    assert_eq!(res.rejection, MsRejection::SeparationTooLow);
    assert!(mask.iter().all(|&b| b == 255));
}

#[test]
fn label_slice_failure_reports_code() {
    let p = pipeline();
    let s = slice(0.0);
    let far = vec![f32::NAN; (W * H) as usize];
    let mut mask = vec![0u8; (W * H) as usize];
    let mut res = std::mem::MaybeUninit::<MsSliceResult>::uninit();
    let status =
        unsafe { ms_label_slice(p, s.u.as_ptr(), s.v.as_ptr(), far.as_ptr(), 0.025, mask.as_mut_ptr(), res.as_mut_ptr()) };
    assert_eq!(status, MsStatus::InsufficientData);
    assert_eq!(unsafe { res.assume_init() }.status, MsSliceStatus::Failed);
    assert!(mask.iter().all(|&b| b == 255));
    assert!(last_error().contains("insufficient"));
    unsafe { ms_pipeline_free(p) };
}

#[test]
fn config_keys_can_be_set() {
    let p = pipeline();
    let set = |k: &str, v: &str| {
        let (k, v) = (CString::new(k).unwrap(), CString::new(v).unwrap());
        unsafe { ms_pipeline_set(p, k.as_ptr(), v.as_ptr()) }
    };
    assert_eq!(set("events.bins", "3"), MsStatus::Ok);
    assert_eq!(set("ransac.seed", "11"), MsStatus::Ok);
    assert_eq!(set("no.such_key", "1"), MsStatus::Config);
    assert!(last_error().contains("no.such_key"));
    assert_eq!(set("events.bins", "0"), MsStatus::Config);
    // Bins stay at 3 after the failed update.
    let mut out = vec![0f32; 3 * (W * H) as usize];
    let ev = [MsEvent { t: 0.5, x: 2, y: 3, p: 1 }];
    let s = unsafe { ms_event_volume(p, ev.as_ptr(), 1, 0.0, 1.0, out.as_mut_ptr(), out.len()) };
    assert_eq!(s, MsStatus::Ok);
    unsafe { ms_pipeline_free(p) };
}

#[test]
fn config_file_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.toml");
    std::fs::write(&path, "[events]\nbins = 2\n").unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { ms_pipeline_load(c.as_ptr(), 4, 4, &mut p) }, MsStatus::Ok);
    let mut out = vec![0f32; 2 * 16];
    assert_eq!(unsafe { ms_event_volume(p, ptr::null(), 0, 0.0, 1.0, out.as_mut_ptr(), out.len()) }, MsStatus::Ok);
    unsafe { ms_pipeline_free(p) };

    let missing = CString::new(dir.path().join("nope.toml").to_str().unwrap()).unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { ms_pipeline_load(missing.as_ptr(), 4, 4, &mut p) }, MsStatus::Io);
    assert!(p.is_null());
}

#[test]
fn event_volume_conserves_mass() {
    let p = pipeline();
    let events: Vec<MsEvent> = (0..200)
        .map(|i| MsEvent {
            t: i as f64 * 0.005,
            x: (i * 7 % W as usize) as u16,
            y: (i * 3 % H as usize) as u16,
            p: if i % 3 == 0 { -1 } else { 1 },
        })
        .collect();
    let mut out = vec![0f32; 15 * (W * H) as usize];
    let s = unsafe { ms_event_volume(p, events.as_ptr(), events.len(), 0.0, 1.0, out.as_mut_ptr(), out.len()) };
    assert_eq!(s, MsStatus::Ok, "{}", last_error());
    let signed: i32 = events.iter().map(|e| e.p as i32).sum();
    let total: f64 = out.iter().map(|&x| x as f64).sum();
    assert!((total - signed as f64).abs() < 1e-3, "{total} vs {signed}");

    let s = unsafe { ms_event_volume(p, events.as_ptr(), events.len(), 0.0, 1.0, out.as_mut_ptr(), 5) };
    assert_eq!(s, MsStatus::ShapeMismatch);
    let late = [MsEvent { t: 0.5, x: 0, y: 0, p: 1 }, MsEvent { t: 0.1, x: 0, y: 0, p: 1 }];
    let s = unsafe { ms_event_volume(p, late.as_ptr(), 2, 0.0, 1.0, out.as_mut_ptr(), out.len()) };
    assert_eq!(s, MsStatus::EventOrder);
    let outside = [MsEvent { t: 0.5, x: W as u16, y: 0, p: 1 }];
    let s = unsafe { ms_event_volume(p, outside.as_ptr(), 1, 0.0, 1.0, out.as_mut_ptr(), out.len()) };
    assert_eq!(s, MsStatus::EventOutOfBounds);
    let bad_polarity = [MsEvent { t: 0.5, x: 0, y: 0, p: 0 }];
    let s = unsafe { ms_event_volume(p, bad_polarity.as_ptr(), 1, 0.0, 1.0, out.as_mut_ptr(), out.len()) };
    assert_eq!(s, MsStatus::InvalidArgument);
    unsafe { ms_pipeline_free(p) };
}

#[test]
fn masked_iou_counts_only_event_pixels() {
    // 2x2: gt = {0,1}, pred = {1,2}, events everywhere except pixel 2.
    let gt = [1u8, 1, 0, 0];
    let pred = [0u8, 1, 1, 0];
    let ev = [1u8, 1, 0, 1];
    let (mut iou, mut has) = (0.0, 0);
    let s = unsafe { ms_event_masked_iou(gt.as_ptr(), pred.as_ptr(), ev.as_ptr(), 2, 2, &mut iou, &mut has) };
    assert_eq!(s, MsStatus::Ok);
    assert_eq!((iou, has), (0.5, 1));
    let none = [0u8; 4];
    let s = unsafe { ms_event_masked_iou(none.as_ptr(), none.as_ptr(), ev.as_ptr(), 2, 2, &mut iou, &mut has) };
    assert_eq!(s, MsStatus::Ok);
    assert!(iou.is_nan() && has == 0);
}

#[test]
fn null_handles_are_rejected() {
    let mut est = MsEgomotion::default();
    let s = unsafe { ms_estimate_egomotion(ptr::null(), ptr::null(), ptr::null(), ptr::null(), 0.025, &mut est, ptr::null_mut()) };
    assert_eq!(s, MsStatus::NullPointer);
    unsafe { ms_pipeline_free(ptr::null_mut()) };
    assert_eq!(unsafe { ms_pipeline_new(4, 4, ptr::null_mut()) }, MsStatus::NullPointer);
}
