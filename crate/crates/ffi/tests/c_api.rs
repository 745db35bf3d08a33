use std::ffi::{CStr, CString};
use std::ptr;

use pact_ffi::*;

fn last_error() -> String {
    let p = pact_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_config() -> *mut PactConfig {
    let toml = CString::new("grid_size = 32\ngrid_pitch = 0.5\nn_transducers = 64\nmask_radius = 6.0").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { pact_config_new(toml.as_ptr(), &mut cfg) }, PactStatus::Ok);
    cfg
}

#[test]
fn water_sos_and_null_out() {
    let mut v = 0.0;
    assert_eq!(unsafe { pact_water_sos(26.0, &mut v) }, PactStatus::Ok);
    assert!((v - 1499.4).abs() < 0.1);
    assert_eq!(unsafe { pact_water_sos(26.0, ptr::null_mut()) }, PactStatus::NullPointer);
    assert!(last_error().contains("null"));
    assert_eq!(unsafe { pact_water_sos(500.0, &mut v) }, PactStatus::Domain);
}

#[test]
fn raster_round_trip() {
    let mut r = ptr::null_mut();
    assert_eq!(unsafe { pact_raster_new(4, 3, 0.1, 0.0, &mut r) }, PactStatus::Ok);
    let vals: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
    assert_eq!(unsafe { pact_raster_write(r, vals.as_ptr(), 12) }, PactStatus::Ok);
    assert_eq!(unsafe { pact_raster_write(r, vals.as_ptr(), 11) }, PactStatus::BufferSize);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("r.pgrid").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { pact_raster_save(r, path.as_ptr()) }, PactStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { pact_raster_load(path.as_ptr(), &mut back) }, PactStatus::Ok);
    let (mut w, mut h, mut pitch) = (0, 0, 0.0);
    assert_eq!(unsafe { pact_raster_shape(back, &mut w, &mut h, &mut pitch) }, PactStatus::Ok);
    assert_eq!((w, h), (4, 3));
    assert!((pitch - 0.1).abs() < 1e-12);
    let mut got = vec![0.0; 12];
    assert_eq!(unsafe { pact_raster_read(back, got.as_mut_ptr(), 12) }, PactStatus::Ok);
    assert_eq!(got, vals);
    unsafe {
        pact_raster_free(r);
        pact_raster_free(back);
        pact_raster_free(ptr::null_mut());
    }

    let missing = CString::new(dir.path().join("none.pgrid").to_str().unwrap()).unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { pact_raster_load(missing.as_ptr(), &mut none) }, PactStatus::Io);
    assert!(none.is_null());
}

#[test]
fn config_rejects_unknown_keys_and_keeps_state() {
    let cfg = small_config();
    let key = CString::new("no_such_key").unwrap();
    let val = CString::new("1").unwrap();
    assert_eq!(unsafe { pact_config_set(cfg, key.as_ptr(), val.as_ptr()) }, PactStatus::Config);
    assert!(last_error().contains("no_such_key"));
    let key = CString::new("epochs").unwrap();
    let bad = CString::new("\"many\"").unwrap();
    assert_eq!(unsafe { pact_config_set(cfg, key.as_ptr(), bad.as_ptr()) }, PactStatus::Config);
    let two = CString::new("2").unwrap();
    assert_eq!(unsafe { pact_config_set(cfg, key.as_ptr(), two.as_ptr()) }, PactStatus::Ok);
    unsafe { pact_config_free(cfg) };
}

#[test]
fn simulate_beamform_and_deconvolve() {
    let cfg = small_config();
    let (mut sig, mut sos) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(
        unsafe { pact_simulate(cfg, &mut sig, ptr::null_mut(), &mut sos) },
        PactStatus::Ok,
        "{}",
        last_error()
    );
    let (mut ch, mut ns) = (0, 0);
    assert_eq!(unsafe { pact_signals_shape(sig, &mut ch, &mut ns) }, PactStatus::Ok);
    assert_eq!(ch, 64);
    assert!(ns > 0);

    let mut img = ptr::null_mut();
    assert_eq!(unsafe { pact_das(cfg, sig, 1500.0, 0.0, &mut img) }, PactStatus::Ok);
    let mut vals = vec![0.0; 32 * 32];
    assert_eq!(unsafe { pact_raster_read(img, vals.as_mut_ptr(), vals.len()) }, PactStatus::Ok);
    assert!(vals.iter().all(|v| v.is_finite()));
    assert!(vals.iter().any(|v| *v != 0.0));

    let mut dec = ptr::null_mut();
    assert_eq!(unsafe { pact_deconvolve(cfg, sig, sos, &mut dec) }, PactStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { pact_raster_read(dec, vals.as_mut_ptr(), vals.len()) }, PactStatus::Ok);
    assert!(vals.iter().all(|v| v.is_finite()));

    let mut wrong = ptr::null_mut();
    assert_eq!(unsafe { pact_raster_new(8, 8, 0.5, 1500.0, &mut wrong) }, PactStatus::Ok);
    let mut none = ptr::null_mut();
    assert_ne!(unsafe { pact_deconvolve(cfg, sig, wrong, &mut none) }, PactStatus::Ok);
    assert!(!last_error().is_empty());

    unsafe {
        pact_raster_free(img);
        pact_raster_free(dec);
        pact_raster_free(sos);
        pact_raster_free(wrong);
        pact_signals_free(sig);
        pact_config_free(cfg);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/pact.h")).unwrap();
    for name in [
        "typedef struct PactRaster PactRaster",
        "typedef struct PactSignals PactSignals",
        "typedef struct PactConfig PactConfig",
        "PACT_STATUS_OK = 0",
        "pact_last_error",
        "pact_water_sos",
        "pact_joint_reconstruct",
    ] {
        assert!(header.contains(name), "header lacks `{name}`");
    }
}
