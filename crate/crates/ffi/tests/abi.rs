use std::ffi::CStr;
use std::os::raw::c_char;
use std::ptr;

use mmhp::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    unsafe {
        mmhp_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn two_state_model() -> *mut MmhpModel {
    let a = [-0.01, 0.01, 0.01, -0.01];
    let alpha = [6.0, 18.0];
    let beta = [1.0, 0.01];
    let gamma = [10.0 / 7.0, 0.1];
    let mut m = ptr::null_mut();
    let st = unsafe {
        mmhp_model_new(2, a.as_ptr(), alpha.as_ptr(), beta.as_ptr(), gamma.as_ptr(), ptr::null(), ptr::null(), &mut m)
    };
    assert_eq!(st, MmhpStatus::Ok, "{}", last_error());
    m
}

#[test]
fn invalid_rate_matrix_is_reported() {
    let a = [-1.0, 1.0, 0.5, -0.5];
    let one = [1.0, 1.0];
    let mut m = ptr::null_mut();
    let st = unsafe {
        mmhp_model_new(2, a.as_ptr(), one.as_ptr(), one.as_ptr(), [2.0, 2.0].as_ptr(), ptr::null(), ptr::null(), &mut m)
    };
    assert_eq!(st, MmhpStatus::InvalidInput);
    assert!(m.is_null());
    assert!(last_error().starts_with("invalid-input"), "{}", last_error());
}

#[test]
fn null_pointers_are_rejected() {
    let mut m = ptr::null_mut();
    let st = unsafe { mmhp_model_new(1, ptr::null(), ptr::null(), ptr::null(), ptr::null(), ptr::null(), ptr::null(), &mut m) };
    assert_eq!(st, MmhpStatus::NullPointer);
    let mut p = ptr::null_mut();
    let st = unsafe { mmhp_filter_counts(ptr::null(), 0.0, 0.1, ptr::null(), 0, &mut p) };
    assert_eq!(st, MmhpStatus::NullPointer);
    unsafe {
        mmhp_model_free(ptr::null_mut());
        mmhp_path_free(ptr::null_mut());
        mmhp_events_free(ptr::null_mut());
        assert_eq!(mmhp_path_len(ptr::null()), 0);
    }
}

#[test]
fn simulate_filter_and_smooth_round_trip() {
    let m = two_state_model();
    unsafe {
        assert_eq!(mmhp_model_n_states(m), 2);
        let cps = [5.0];
        let labels = [0usize, 1];
        let mut ev = ptr::null_mut();
        assert_eq!(mmhp_simulate_events(m, cps.as_ptr(), labels.as_ptr(), 1, 10.0, 7, &mut ev), MmhpStatus::Ok);
        let n = mmhp_events_len(ev);
        assert!(n > 50);
        let mut times = vec![0.0; n];
        assert_eq!(mmhp_events_copy(ev, times.as_mut_ptr(), n), n);
        assert!(times.windows(2).all(|w| w[0] < w[1]));

        let mut counts = vec![0.0; 100];
        for &t in &times {
            counts[((t / 0.1).ceil() as usize).clamp(1, 100) - 1] += 1.0;
        }
        let mut f = ptr::null_mut();
        let mut s = ptr::null_mut();
        assert_eq!(mmhp_filter_counts(m, 0.0, 0.1, counts.as_ptr(), 100, &mut f), MmhpStatus::Ok);
        assert_eq!(mmhp_smooth_counts(m, 0.0, 0.1, counts.as_ptr(), 100, &mut s), MmhpStatus::Ok);
        assert_eq!(mmhp_path_len(f), 101);
        assert_eq!(mmhp_path_n_states(s), 2);
        assert!(mmhp_path_log_evidence(f).is_finite());

        let mut pf = vec![0.0; 202];
        let mut ps = vec![0.0; 202];
        assert_eq!(mmhp_path_probs(f, pf.as_mut_ptr(), 202), MmhpStatus::Ok);
        assert_eq!(mmhp_path_probs(s, ps.as_mut_ptr(), 202), MmhpStatus::Ok);
        for row in pf.chunks(2).chain(ps.chunks(2)) {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
        }
        assert!((pf[200] - ps[200]).abs() < 1e-9);
        assert_eq!(mmhp_path_probs(f, pf.as_mut_ptr(), 10), MmhpStatus::InvalidInput);

        let mut t = vec![0.0; 101];
        assert_eq!(mmhp_path_times(f, t.as_mut_ptr(), 101), MmhpStatus::Ok);
        assert!((t[100] - 10.0).abs() < 1e-12);

        let mut fe = ptr::null_mut();
        assert_eq!(mmhp_filter_events(m, ev, 10.0, 0.0, &mut fe), MmhpStatus::Ok);
        assert_eq!(mmhp_path_len(fe), n + 2);

        mmhp_path_free(fe);
        mmhp_path_free(f);
        mmhp_path_free(s);
        mmhp_events_free(ev);
        mmhp_model_free(m);
    }
}

#[test]
fn unsorted_events_are_rejected() {
    let mut ev = ptr::null_mut();
    let st = unsafe { mmhp_events_new([2.0, 1.0].as_ptr(), 2, &mut ev) };
    assert_eq!(st, MmhpStatus::InvalidInput);
    assert!(ev.is_null());
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/mmhp.h")).unwrap();
    for name in [
        "mmhp_model_new",
        "mmhp_filter_counts",
        "mmhp_smooth_counts",
        "mmhp_filter_events",
        "mmhp_simulate_events",
        "mmhp_path_probs",
        "mmhp_last_error_message",
        "MMHP_STATUS_NUMERICAL",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    // compile the header as C when a compiler is available
    if let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-std=c99"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include/mmhp.h"))
        .output()
    {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
