use std::ffi::{c_char, CStr};
use std::path::Path;
use std::process::Command;
use std::ptr;

use sepcross_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    unsafe {
        sep_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn duffing() -> *mut SepSystem {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { sep_system_new(SEP_DUFFING, SEP_FRICTION, ptr::null(), &mut s) }, SEP_OK);
    assert!(!s.is_null());
    s
}

#[test]
fn orbit_and_theta() {
    let s = duffing();
    let z = [1.0];
    let mut o = SepOrbit::default();
    unsafe {
        assert_eq!(sep_system_z_dim(s), 1);
        assert_eq!(sep_orbit(s, SEP_B1, -0.24999, z.as_ptr(), 1, &mut o), SEP_OK);
        // near the well bottom the period tends to pi sqrt 2
        assert!((o.period - std::f64::consts::PI * 2f64.sqrt()).abs() < 1e-2, "{o:?}");
        let mut th = [0.0; 3];
        let mut p = [0.0; 2];
        assert_eq!(sep_theta(s, z.as_ptr(), 1, 1e-3, 32, th.as_mut_ptr(), p.as_mut_ptr()), SEP_OK);
        assert!((th[0] - 0.1 * 4.0 / 3.0).abs() < 1e-8, "{th:?}");
        assert!((p[0] - 0.5).abs() < 1e-9);
        sep_system_free(s);
    }
}

#[test]
fn chart_roundtrip() {
    let s = duffing();
    let z = [1.0];
    let mut c = ptr::null_mut();
    unsafe {
        assert_eq!(sep_chart_new(s, z.as_ptr(), 1, 1e-6, 1.0, 30, &mut c), SEP_OK);
        let mut o = SepOrbit::default();
        assert_eq!(sep_chart_eval(c, SEP_B3, 0.1, &mut o), SEP_OK);
        let mut h = 0.0;
        assert_eq!(sep_chart_h_for_omega(c, SEP_B3, o.omega, &mut h), SEP_OK);
        assert!((h - 0.1).abs() < 1e-4, "{h}");
        sep_chart_free(c);
        sep_system_free(s);
    }
}

#[test]
fn errors_are_reported() {
    let s = duffing();
    let z = [1.0, 2.0];
    let mut o = SepOrbit::default();
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(sep_system_new(7, SEP_FRICTION, ptr::null(), &mut out), SEP_BAD_ARGUMENT);
        assert!(out.is_null());
        assert!(last_error().contains("hamiltonian"));
        assert_eq!(sep_system_new(SEP_DUFFING, SEP_FRICTION, ptr::null(), ptr::null_mut()), SEP_NULL_POINTER);
        assert_eq!(sep_orbit(s, SEP_B1, -0.1, z.as_ptr(), 2, &mut o), SEP_BAD_ARGUMENT);
        assert_eq!(sep_orbit(ptr::null(), SEP_B1, -0.1, z.as_ptr(), 1, &mut o), SEP_NULL_POINTER);
        assert_eq!(sep_orbit(s, 9, -0.1, z.as_ptr(), 1, &mut o), SEP_BAD_ARGUMENT);
        // a positive offset has no orbit inside a loop
        let rc = sep_orbit(s, SEP_B1, 0.1, z.as_ptr(), 1, &mut o);
        assert!(rc > 0 && rc < 100, "{rc}");
        assert!(!last_error().is_empty());
        sep_system_free(s);
        sep_system_free(ptr::null_mut());
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(sep_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/sepcross.h");
    assert!(header.exists());
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"sepcross.h\"\nint main(void) { SepSystem *s = 0; SepOrbit o; \
         int rc = sep_system_new(SEP_DUFFING, SEP_FRICTION, 0, &s); (void)o; sep_system_free(s); return rc; }\n",
    )
    .unwrap();
    let Ok(status) = Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&src)
        .status()
    else {
        eprintln!("no C compiler, skipping");
        return;
    };
    assert!(status.success());
}
