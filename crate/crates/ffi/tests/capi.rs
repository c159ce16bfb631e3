use std::ffi::{CStr, CString};
use std::ptr;

use shadow_inversion_ffi::*;

fn last_error() -> String {
    let p = si_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(si_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn counting() {
    let mut n = 0u64;
    unsafe {
        assert_eq!(si_variable_count([3usize, 3].as_ptr(), 2, 3, &mut n), SiStatus::Ok);
        assert_eq!(n, 2304);
        assert_eq!(si_variable_count([1usize, 1].as_ptr(), 2, 1, &mut n), SiStatus::Ok);
        assert_eq!(n, 8);
        assert_eq!(si_variable_count_bound(2, 3, &mut n), SiStatus::Ok);
        assert_eq!(n, 2304);
        assert_eq!(si_variable_count(ptr::null(), 2, 1, &mut n), SiStatus::NullPointer);
        assert_eq!(si_variable_count([1usize, 0].as_ptr(), 2, 1, &mut n), SiStatus::InvalidArgument);
    }
    assert!(!last_error().is_empty());
}

#[test]
fn circuit_check() {
    let (mut res, mut ok) = (1.0, false);
    unsafe {
        assert_eq!(si_verify_circuit(10, 3, 1, 1e-10, &mut res, &mut ok), SiStatus::Ok);
        assert!(ok && res < 1e-10);
        assert_eq!(si_verify_circuit(0, 3, 1, 1e-10, &mut res, &mut ok), SiStatus::InvalidArgument);
    }
    assert!(last_error().contains("trials"));
}

#[test]
fn solve_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let comb_path = CString::new(dir.path().join("comb.json").to_str().unwrap()).unwrap();
    let conic_path = CString::new(dir.path().join("conic.json").to_str().unwrap()).unwrap();
    let z = [1.0, -1.0];
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(
            si_problem_assemble(2, 1, SiArchitecture::Sequential, z.as_ptr(), 2, 50, 3, false, &mut p),
            SiStatus::Ok
        );
        let mut nv = 0;
        assert_eq!(si_problem_variable_count(p, &mut nv), SiStatus::Ok);
        assert_eq!(nv, 8);
        assert_eq!(si_problem_export_conic(p, conic_path.as_ptr()), SiStatus::Ok);

        let (mut c, mut obj, mut conv) = (ptr::null_mut(), 0.0, false);
        assert_eq!(si_solve(p, 1e-7, 100_000, &mut c, &mut obj, &mut conv), SiStatus::Ok);
        assert!(conv);
        assert!((obj - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4, "{obj}");
        assert_eq!(si_comb_save(c, comb_path.as_ptr()), SiStatus::Ok);
        si_comb_free(c);
        si_problem_free(p);

        let mut c = ptr::null_mut();
        assert_eq!(si_comb_load(comb_path.as_ptr(), &mut c), SiStatus::Ok);
        let (mut d, mut t, mut arch) = (0, 0, SiArchitecture::Parallel);
        assert_eq!(si_comb_shape(c, &mut d, &mut t, &mut arch), SiStatus::Ok);
        assert_eq!((d, t, arch), (2, 1, SiArchitecture::Sequential));
        let (mut valid, mut worst) = (false, 1.0);
        assert_eq!(si_comb_validate(c, 1e-4, &mut valid, &mut worst), SiStatus::Ok);
        assert!(valid && worst < 1e-4);
        let mut est = 0.0;
        assert_eq!(si_comb_objective(c, z.as_ptr(), 2, 200, 9, &mut est), SiStatus::Ok);
        assert!((est - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3, "{est}");
        assert_eq!(si_comb_objective(c, [1.0, 0.0, -1.0].as_ptr(), 3, 10, 9, &mut est), SiStatus::Dimension);
        si_comb_free(c);
    }
}

#[test]
fn errors_are_reported() {
    let z = [1.0, -1.0];
    unsafe {
        let mut p = ptr::null_mut();
        let st = si_problem_assemble(2, 3, SiArchitecture::Sequential, z.as_ptr(), 2, 10, 0, true, &mut p);
        assert_eq!(st, SiStatus::SizeCap);
        assert!(p.is_null());
        assert!(last_error().contains("too large"));

        let missing = CString::new("/nonexistent/comb.json").unwrap();
        let mut c = ptr::null_mut();
        assert_eq!(si_comb_load(missing.as_ptr(), &mut c), SiStatus::Io);
        assert_eq!(si_comb_load(ptr::null(), &mut c), SiStatus::NullPointer);
        let mut n = 0;
        assert_eq!(si_problem_variable_count(ptr::null(), &mut n), SiStatus::NullPointer);
        si_comb_free(ptr::null_mut());
        si_problem_free(ptr::null_mut());
    }
    si_clear_error();
    assert!(si_last_error_message().is_null());
}

#[test]
fn header_is_generated_and_compiles() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/shadow_inversion.h");
    let text = std::fs::read_to_string(&header).expect("header generated by build script");
    for sym in ["si_version", "si_solve", "si_comb_free", "typedef struct SiComb SiComb", "SI_STATUS_SIZE_CAP"] {
        assert!(text.contains(sym), "missing {sym}");
    }
    // Syntax check with the system C compiler when one is available.
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(&src, "#include \"shadow_inversion.h\"\nint main(void) { return si_version() == 0; }\n").unwrap();
    let status = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status();
    if let Ok(s) = status {
        assert!(s.success(), "header does not compile");
    }
}
