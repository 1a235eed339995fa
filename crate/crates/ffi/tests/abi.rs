//! Round trips through the C ABI from Rust.

use std::ffi::{CStr, CString};
use std::ptr;

use interlace_ffi::*;

fn last_error() -> String {
    let p = interlace_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn potential_and_capacity() {
    let mut table = ptr::null_mut();
    unsafe {
        assert_eq!(interlace_potential_new(32, 1e-10, &mut table), InterlaceStatus::Ok);
        let mut a = 0.0;
        assert_eq!(interlace_potential_value(table, 1, 1, &mut a), InterlaceStatus::Ok);
        assert!((a - 4.0 / std::f64::consts::PI).abs() < 1e-6);
        // two neighbouring sites: hm = 1/2 each and cap = a(e₁)/2 = 1/2
        let (xs, ys) = ([0, 1], [0, 0]);
        let mut cap = 0.0;
        assert_eq!(interlace_capacity(table, xs.as_ptr(), ys.as_ptr(), 2, &mut cap), InterlaceStatus::Ok);
        assert!((cap - 0.5).abs() < 1e-9, "{cap}");
        let mut hm = [0.0; 2];
        assert_eq!(
            interlace_harmonic_measure(table, xs.as_ptr(), ys.as_ptr(), 2, hm.as_mut_ptr()),
            InterlaceStatus::Ok
        );
        assert!((hm[0] - 0.5).abs() < 1e-12 && (hm[1] - 0.5).abs() < 1e-12);
        let dup = [0, 0];
        assert_eq!(
            interlace_harmonic_measure(table, dup.as_ptr(), dup.as_ptr(), 2, hm.as_mut_ptr()),
            InterlaceStatus::InvalidArgument
        );
        interlace_potential_free(table);
    }
}

#[test]
fn config_run_and_report() {
    let name = CString::new("xi-law").unwrap();
    let mut config = ptr::null_mut();
    unsafe {
        assert_eq!(interlace_config_new(name.as_ptr(), 11, &mut config), InterlaceStatus::Ok);
        let set = CString::new("replicas=4").unwrap();
        assert_eq!(interlace_config_set(config, set.as_ptr()), InterlaceStatus::Ok);
        let mut toml = ptr::null_mut();
        assert_eq!(interlace_config_to_toml(config, &mut toml), InterlaceStatus::Ok);
        let text = CStr::from_ptr(toml).to_str().unwrap().to_owned();
        interlace_string_free(toml);
        assert!(text.contains("replicas = 4"), "{text}");

        let mut result = ptr::null_mut();
        assert_eq!(interlace_run(config, &mut result), InterlaceStatus::Ok);
        let (mut jobs, mut truncated) = (0, 0);
        assert_eq!(interlace_result_jobs(result, &mut jobs, &mut truncated), InterlaceStatus::Ok);
        assert_eq!((jobs, truncated), (12, 0));

        let (case, metric) = (CString::new("fixture=pair").unwrap(), CString::new("xi").unwrap());
        let (mut est, mut lo, mut hi) = (0.0, 0.0, 0.0);
        assert_eq!(
            interlace_result_aggregate(result, case.as_ptr(), metric.as_ptr(), &mut est, &mut lo, &mut hi),
            InterlaceStatus::Ok
        );
        assert!(lo <= est && est <= hi);
        let missing = CString::new("nope").unwrap();
        assert_eq!(
            interlace_result_aggregate(result, case.as_ptr(), missing.as_ptr(), &mut est, ptr::null_mut(), ptr::null_mut()),
            InterlaceStatus::InvalidArgument
        );

        let mut csv = ptr::null_mut();
        assert_eq!(interlace_result_csv(result, &mut csv), InterlaceStatus::Ok);
        assert_eq!(CStr::from_ptr(csv).to_str().unwrap().lines().count(), 13);
        interlace_string_free(csv);
        let mut json = ptr::null_mut();
        assert_eq!(interlace_result_json(result, &mut json), InterlaceStatus::Ok);
        assert!(CStr::from_ptr(json).to_str().unwrap().contains("\"experiment\": \"xi-law\""));
        interlace_string_free(json);

        interlace_result_free(result);
        interlace_config_free(config);
    }
}

#[test]
fn invalid_inputs_set_statuses() {
    unsafe {
        let bad = CString::new("no-such-experiment").unwrap();
        let mut config = ptr::null_mut();
        assert_eq!(interlace_config_new(bad.as_ptr(), 1, &mut config), InterlaceStatus::Validation);
        assert!(last_error().contains("no-such-experiment"));
        assert!(config.is_null());

        let toml = CString::new("experiment = \"hm-close\"\n[params]\nn = 0\n").unwrap();
        assert_eq!(interlace_config_from_toml(toml.as_ptr(), &mut config), InterlaceStatus::Ok);
        let mut result = ptr::null_mut();
        assert_eq!(interlace_run(config, &mut result), InterlaceStatus::Validation);
        let msg = last_error();
        assert!(msg.contains("seed") && msg.contains("n"), "{msg}");
        interlace_config_free(config);

        let not_utf8 = [0xffu8, 0];
        assert_eq!(
            interlace_config_from_toml(not_utf8.as_ptr().cast(), &mut config),
            InterlaceStatus::InvalidUtf8
        );
        assert_eq!(interlace_run(ptr::null(), &mut result), InterlaceStatus::NullPointer);
        interlace_config_free(ptr::null_mut());
        interlace_result_free(ptr::null_mut());
        interlace_string_free(ptr::null_mut());
    }
}

#[test]
fn version_names_the_build() {
    let v = unsafe { CStr::from_ptr(interlace_version()) }.to_str().unwrap();
    assert!(v.starts_with(env!("CARGO_PKG_VERSION")), "{v}");
}
