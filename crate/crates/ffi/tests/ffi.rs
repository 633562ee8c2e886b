use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use fsdehaze_ffi::*;

fn last_error() -> String {
    let p = fsd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn ramp(n: usize) -> Vec<f32> {
    (0..n).map(|i| (i % 23) as f32 / 22.0).collect()
}

#[test]
fn haze_round_trip_and_bad_transmission() {
    let (h, w) = (4, 5);
    let clean = ramp(h * w * 3);
    let t = vec![0.4f32; h * w];
    let light = [0.8f32, 0.9, 1.0];
    let mut hazy = vec![0.0f32; h * w * 3];
    let mut back = vec![0.0f32; h * w * 3];
    unsafe {
        assert_eq!(fsd_synthesize_haze(clean.as_ptr(), h, w, 3, t.as_ptr(), light.as_ptr(), hazy.as_mut_ptr()), FsdStatus::Ok);
        assert_eq!(fsd_recover_clear(hazy.as_ptr(), h, w, 3, t.as_ptr(), light.as_ptr(), back.as_mut_ptr()), FsdStatus::Ok);
    }
    assert!(fsd_last_error().is_null());
    assert!(clean.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-5));
    let bad_t = vec![1.5f32; h * w];
    let s = unsafe { fsd_synthesize_haze(clean.as_ptr(), h, w, 3, bad_t.as_ptr(), light.as_ptr(), hazy.as_mut_ptr()) };
    assert_eq!(s, FsdStatus::InvalidArgument);
    assert!(last_error().contains("transmission"), "{}", last_error());
}

#[test]
fn null_pointers_are_reported() {
    let light = [0.8f32; 3];
    let mut out = 0.0f64;
    let s = unsafe { fsd_psnr(ptr::null(), light.as_ptr(), 1, 1, 3, 1.0, &mut out) };
    assert_eq!(s, FsdStatus::NullPointer);
    assert!(last_error().contains("reference"));
    assert_eq!(unsafe { fsd_generator_new_random(0, ptr::null_mut()) }, FsdStatus::NullPointer);
    unsafe { fsd_generator_free(ptr::null_mut()) };
}

#[test]
fn metrics_match_the_library() {
    let (h, w) = (12, 10);
    let a = ramp(h * w * 3);
    let b: Vec<f32> = a.iter().map(|v| (v * 0.9 + 0.05).min(1.0)).collect();
    let (mut p, mut s, mut sw) = (0.0, 0.0, 0.0);
    let opts = FsdSsimOptions {
        windowed: 1,
        window: 5,
        per_channel: 0,
    };
    unsafe {
        assert_eq!(fsd_psnr(a.as_ptr(), b.as_ptr(), h, w, 3, 1.0, &mut p), FsdStatus::Ok);
        assert_eq!(fsd_ssim(a.as_ptr(), b.as_ptr(), h, w, 3, ptr::null(), &mut s), FsdStatus::Ok);
        assert_eq!(fsd_ssim(a.as_ptr(), b.as_ptr(), h, w, 3, &opts, &mut sw), FsdStatus::Ok);
    }
    let ia = fsdehaze::ImageTensor::new(h, w, 3, a).unwrap();
    let ib = fsdehaze::ImageTensor::new(h, w, 3, b).unwrap();
    let cfg = fsdehaze::metrics::SsimConfig::default();
    assert_eq!(p, fsdehaze::metrics::psnr(&ia, &ib, 1.0).unwrap());
    assert_eq!(s, fsdehaze::metrics::ssim(&ia, &ib, &cfg).unwrap());
    assert_eq!(sw, fsdehaze::metrics::ssim(&ia, &ib, &cfg.windowed(5)).unwrap());
}

#[test]
fn generator_save_load_and_dehaze() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("g.fsd").to_str().unwrap()).unwrap();
    let mut g = ptr::null_mut();
    let (h, w) = (9, 14);
    let input = ramp(h * w * 3);
    let mut out1 = vec![0.0f32; h * w * 3];
    let mut out2 = vec![0.0f32; h * w * 3];
    unsafe {
        assert_eq!(fsd_generator_new_random(5, &mut g), FsdStatus::Ok);
        assert_eq!(fsd_generator_save(g, path.as_ptr()), FsdStatus::Ok);
        assert_eq!(fsd_generator_dehaze(g, input.as_ptr(), h, w, 0, out1.as_mut_ptr()), FsdStatus::Ok);
        fsd_generator_free(g);
        let mut g2 = ptr::null_mut();
        assert_eq!(fsd_generator_load(path.as_ptr(), &mut g2), FsdStatus::Ok);
        assert_eq!(fsd_generator_dehaze(g2, input.as_ptr(), h, w, 0, out2.as_mut_ptr()), FsdStatus::Ok);
        assert_eq!(fsd_generator_dehaze(g2, input.as_ptr(), h, w, 30, out2.as_mut_ptr()), FsdStatus::Config);
        fsd_generator_free(g2);
    }
    assert_eq!(out1, out2);
    assert!(out1.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn load_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("junk.fsd");
    std::fs::write(&p, b"junk").unwrap();
    let path = CString::new(p.to_str().unwrap()).unwrap();
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { fsd_generator_load(path.as_ptr(), &mut g) }, FsdStatus::Format);
    assert!(g.is_null());
}

#[test]
fn map_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("p.txt");
    let truths = dir.path().join("t.txt");
    std::fs::write(&preds, "a\tcar\t0.9\t0\t0\t10\t10\na\tcar\t0.4\t20\t20\t30\t30\n").unwrap();
    std::fs::write(&truths, "a\tcar\t-\t0\t0\t10\t10\na\tcar\t-\t40\t40\t50\t50\n").unwrap();
    let (p, t) = (CString::new(preds.to_str().unwrap()).unwrap(), CString::new(truths.to_str().unwrap()).unwrap());
    let mut m = 0.0;
    assert_eq!(unsafe { fsd_map_from_files(p.as_ptr(), t.as_ptr(), 0.5, &mut m) }, FsdStatus::Ok);
    assert_eq!(m, 0.5);
    std::fs::write(&preds, "a\tcar\tx\t0\t0\t10\t10\n").unwrap();
    assert_eq!(unsafe { fsd_map_from_files(p.as_ptr(), t.as_ptr(), 0.5, &mut m) }, FsdStatus::Parse);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/fsdehaze.h")).unwrap();
    for f in [
        "fsd_last_error", "fsd_version", "fsd_generator_new_random", "fsd_generator_load", "fsd_generator_save",
        "fsd_generator_free", "fsd_generator_dehaze", "fsd_synthesize_haze", "fsd_recover_clear", "fsd_psnr",
        "fsd_ssim", "fsd_map_from_files",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct FsdGenerator FsdGenerator;"));
}

/// Compiles a C program against the generated header and static library, then runs it.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler available; skipping");
        return;
    };
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libfsdehaze_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new(cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C smoke test exited with {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc);
        }
    }
    Err(())
}
