use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use hoelderflow_ffi::*;

fn last_error() -> String {
    let p = hf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn path_round_trip_and_norms() {
    unsafe {
        let mut path = ptr::null_mut();
        assert_eq!(hf_fbm_sample(0.75, 1.0, 256, 5, &mut path), HfStatus::HfOk);
        let (mut len, mut dim) = (0, 0);
        assert_eq!(hf_path_shape(path, &mut len, &mut dim), HfStatus::HfOk);
        assert_eq!((len, dim), (257, 1));

        let mut needed = 0;
        let mut small = [0.0; 4];
        assert_eq!(hf_path_values(path, small.as_mut_ptr(), 4, &mut needed), HfStatus::HfBufferTooSmall);
        assert_eq!(needed, 257);
        let mut buf = vec![0.0; needed];
        assert_eq!(hf_path_values(path, buf.as_mut_ptr(), buf.len(), &mut needed), HfStatus::HfOk);
        assert_eq!(buf[0], 0.0);

        let mut copy = ptr::null_mut();
        let st = hf_path_from_values(0.0, 1.0 / 256.0, 1, buf.as_ptr(), buf.len(), 0.7, &mut copy);
        assert_eq!(st, HfStatus::HfOk);
        let (mut s1, mut u1, mut s2, mut u2) = (0.0, 0.0, 0.0, 0.0);
        assert_eq!(hf_holder_norms(path, 0.6, 0.0, 1.0, &mut s1, &mut u1), HfStatus::HfOk);
        assert_eq!(hf_holder_norms(copy, 0.6, 0.0, 1.0, &mut s2, &mut u2), HfStatus::HfOk);
        assert_eq!((s1, u1), (s2, u2));
        assert!(s1 > 0.0);
        hf_path_free(copy);
        hf_path_free(path);
        hf_path_free(ptr::null_mut());
    }
}

#[test]
fn errors_map_to_codes() {
    unsafe {
        let mut path = ptr::null_mut();
        assert_eq!(hf_fbm_sample(0.4, 1.0, 16, 0, &mut path), HfStatus::HfConfig);
        assert!(last_error().contains("Hurst"));
        assert!(path.is_null());
        assert_eq!(hf_fbm_sample(0.75, 1.0, 16, 0, ptr::null_mut()), HfStatus::HfNullPointer);
        let mut v = 0.0;
        assert_eq!(hf_eps_hat_max(1.0, 1.5, &mut v), HfStatus::HfDomain);
        assert_eq!(hf_eps_hat_max(1.0, 0.5, &mut v), HfStatus::HfOk);
        assert!((v - (-0.5f64).exp()).abs() < 1e-14);
        let vals = [0.0, 0.1, 0.2];
        let mut p = ptr::null_mut();
        assert_eq!(hf_path_from_values(0.0, 0.5, 1, vals.as_ptr(), 3, 0.3, &mut p), HfStatus::HfConfig);
    }
}

#[test]
fn young_integral_of_linear_path() {
    unsafe {
        let n = 1024;
        let vals: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let mut p = ptr::null_mut();
        assert_eq!(hf_path_from_values(0.0, 1.0 / n as f64, 1, vals.as_ptr(), vals.len(), 0.9, &mut p), HfStatus::HfOk);
        let name = CString::new("one").unwrap();
        let (mut rs, mut fr) = (0.0, 0.0);
        assert_eq!(hf_young_integral(p, name.as_ptr(), 0.0, 1.0, f64::NAN, &mut rs, &mut fr), HfStatus::HfOk);
        assert!((rs - 1.0).abs() < 1e-12);
        assert!((fr - 1.0).abs() < 1e-4, "{fr}");
        let bad = CString::new("cubic").unwrap();
        assert_eq!(hf_young_integral(p, bad.as_ptr(), 0.0, 1.0, 0.3, &mut rs, &mut fr), HfStatus::HfConfig);
        assert!(last_error().contains("cubic"));
        hf_path_free(p);
    }
}

#[test]
fn gronwall_through_abi() {
    let v: Vec<f64> = (0..10).map(|n| (-(n as f64)).exp()).collect();
    let (mut h, mut c, mut slack) = (0, 0, 0.0);
    let st = unsafe { hf_gronwall_check(v.as_ptr(), v.len(), 1.0, 1.0, 1.0, 0.5, 0.6, &mut h, &mut c, &mut slack) };
    assert_eq!(st, HfStatus::HfOk);
    assert_eq!((h, c), (1, 1));
    assert!(slack >= 0.0);
}

#[test]
fn run_experiment_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = CString::new("sample-fbm").unwrap();
    let cfg = CString::new(r#"{"experiment": {"sample-fbm": {"hurst": 0.7, "horizon": 1.0, "steps": 64}}, "seeds": [3, 4]}"#).unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut manifest = ptr::null_mut();
    let st = unsafe { hf_run_experiment(cmd.as_ptr(), cfg.as_ptr(), out.as_ptr(), ptr::null(), 1, &mut manifest) };
    assert_eq!(st, HfStatus::HfOk);
    let json = unsafe { CStr::from_ptr(manifest) }.to_string_lossy().into_owned();
    unsafe { hf_string_free(manifest) };
    assert!(json.contains("fbm_seed3.csv") && json.contains("fbm_seed4.json"));
    assert!(dir.path().join("fbm_seed4.csv").exists());

    let wrong = CString::new("stability").unwrap();
    let st = unsafe { hf_run_experiment(wrong.as_ptr(), cfg.as_ptr(), out.as_ptr(), ptr::null(), 1, &mut manifest) };
    assert_eq!(st, HfStatus::HfConfig);
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(hf_version()) }.to_str().unwrap().to_owned();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

/// The generated header must be valid C and C++.
#[test]
fn header_compiles() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/hoelderflow.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"hoelderflow.h\"\nint main(void) { HfPath *p = 0; HfStatus s = hf_fbm_sample(0.7, 1.0, 8, 1, &p); hf_path_free(p); return s == HF_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let include = std::path::Path::new(header).parent().unwrap();
    for compiler in ["cc", "c++"] {
        let status = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", if compiler == "cc" { "c" } else { "c++" }])
            .arg("-I")
            .arg(include)
            .arg(&src)
            .status();
        match status {
            Ok(s) => assert!(s.success(), "{compiler} rejected the header"),
            Err(_) => eprintln!("{compiler} not available; header check skipped"),
        }
    }
}
