use std::ffi::{c_char, CStr, CString};
use std::ptr;

use radcine_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { radcine_last_error(buf.as_mut_ptr(), buf.len()) };
    let s = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned();
    assert_eq!(n == 0, s.is_empty());
    s
}

fn spoke_coords(n_spokes: usize, n_ro: usize) -> Vec<f64> {
    let mut c = Vec::new();
    for s in 0..n_spokes {
        let a = s as f64 * 111.246_f64.to_radians();
        for r in 0..n_ro {
            let k = (r as f64 - n_ro as f64 / 2.0) / n_ro as f64;
            c.extend([k * a.cos(), k * a.sin()]);
        }
    }
    c
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(radcine_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn nufft_handle_satisfies_the_adjoint_identity() {
    let n = 16;
    let coords = spoke_coords(10, n);
    let m = coords.len() / 2;
    let mut plan = ptr::null_mut();
    assert_eq!(unsafe { radcine_nufft_new(n, coords.as_ptr(), m, 2.0, 6, &mut plan) }, RadcineStatus::Ok);
    let (mut dn, mut dm) = (0, 0);
    assert_eq!(unsafe { radcine_nufft_dims(plan, &mut dn, &mut dm) }, RadcineStatus::Ok);
    assert_eq!((dn, dm), (n, m));

    let x: Vec<f64> = (0..2 * n * n).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
    let y: Vec<f64> = (0..2 * m).map(|i| ((i * 53 % 97) as f64 / 48.0) - 1.0).collect();
    let mut ax = vec![0.0; 2 * m];
    let mut ahy = vec![0.0; 2 * n * n];
    assert_eq!(unsafe { radcine_nufft_forward(plan, x.as_ptr(), ax.as_mut_ptr()) }, RadcineStatus::Ok);
    assert_eq!(unsafe { radcine_nufft_adjoint(plan, y.as_ptr(), ptr::null(), ahy.as_mut_ptr()) }, RadcineStatus::Ok);
    // <Ax, y> = <x, A^H y>
    let dot = |a: &[f64], b: &[f64]| {
        a.chunks(2).zip(b.chunks(2)).fold((0.0, 0.0), |(re, im), (p, q)| (re + p[0] * q[0] + p[1] * q[1], im + p[1] * q[0] - p[0] * q[1]))
    };
    let (l, r) = (dot(&ax, &y), dot(&x, &ahy));
    let scale = l.0.hypot(l.1);
    assert!((l.0 - r.0).hypot(l.1 - r.1) < 1e-10 * scale, "{l:?} vs {r:?}");
    unsafe { radcine_nufft_free(plan) };
}

#[test]
fn errors_carry_status_and_message() {
    let mut plan = ptr::null_mut();
    let coords = [0.7, 0.0];
    let st = unsafe { radcine_nufft_new(8, coords.as_ptr(), 1, 2.0, 6, &mut plan) };
    assert_eq!(st, RadcineStatus::InvalidArgument);
    assert!(plan.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { radcine_nufft_forward(ptr::null(), ptr::null(), ptr::null_mut()) }, RadcineStatus::NullPointer);
    assert!(last_error().contains("plan"));

    // success clears the message
    let (a, b) = ([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]);
    let mut v = 0.0;
    assert_eq!(unsafe { radcine_psnr(a.as_ptr(), b.as_ptr(), 3, &mut v) }, RadcineStatus::Ok);
    assert!(v.is_infinite());
    assert_eq!(last_error(), "");

    let mut cfg = ptr::null_mut();
    let missing = CString::new("/nonexistent/radcine.cfg").unwrap();
    assert_eq!(unsafe { radcine_config_from_file(missing.as_ptr(), &mut cfg) }, RadcineStatus::Io);
    assert!(cfg.is_null());
}

#[test]
fn config_handle_validates_updates() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { radcine_config_new(32, &mut cfg) }, RadcineStatus::Ok);
    assert_eq!(unsafe { radcine_config_set_seed(cfg, 7) }, RadcineStatus::Ok);
    let bad = [0.5];
    assert_eq!(unsafe { radcine_config_set_r_values(cfg, bad.as_ptr(), 1) }, RadcineStatus::Config);
    assert!(last_error().contains("undersampling"));
    let good = [2.0, 4.0];
    assert_eq!(unsafe { radcine_config_set_r_values(cfg, good.as_ptr(), 2) }, RadcineStatus::Ok);
    unsafe { radcine_config_free(cfg) };
    unsafe { radcine_config_free(ptr::null_mut()) };
}

#[test]
fn ssim_of_identical_images_is_one() {
    let img: Vec<f64> = (0..64).map(|i| (i % 9) as f64).collect();
    let mut v = 0.0;
    assert_eq!(unsafe { radcine_ssim(img.as_ptr(), img.as_ptr(), 8, 8, &mut v) }, RadcineStatus::Ok);
    assert!((v - 1.0).abs() < 1e-12);
    assert_eq!(unsafe { radcine_ssim(img.as_ptr(), img.as_ptr(), 8, 8, ptr::null_mut()) }, RadcineStatus::NullPointer);
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use_header.c");
    std::fs::write(
        &src,
        "#include \"radcine.h\"\nint main(void) { RadcineNufft *p = 0; size_t n; return radcine_nufft_dims(p, &n, 0) == RADCINE_STATUS_NULL_POINTER ? 0 : 1; }\n",
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match std::process::Command::new(&cc).args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", header]).arg(&src).status() {
        Ok(s) => assert!(s.success(), "{cc} rejected the header"),
        Err(e) => eprintln!("skipping: no C compiler ({e})"),
    }
}
