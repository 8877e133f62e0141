use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use unit_insight_ffi::*;

fn last_error() -> String {
    let p = ui_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

#[test]
fn dedup_matches_worked_example() {
    let units = [12u32, 12, 25, 31, 31, 31];
    let mut u = [0u32; 6];
    let mut d = [0u32; 6];
    let mut n = 0usize;
    let s = unsafe { ui_dedup(units.as_ptr(), units.len(), u.as_mut_ptr(), d.as_mut_ptr(), &mut n) };
    assert_eq!(s, UiStatus::Ok);
    assert_eq!(&u[..n], &[12, 25, 31]);
    assert_eq!(&d[..n], &[2, 1, 3]);
}

#[test]
fn null_pointers_and_errors_are_reported() {
    let s = unsafe { ui_dedup(ptr::null(), 3, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(s, UiStatus::NullPointer);
    assert!(last_error().contains("NULL"));

    let mut out = 0.0;
    let s = unsafe { ui_ued(ptr::null(), 0, [1u32].as_ptr(), 1, &mut out) };
    assert_eq!(s, UiStatus::InvalidArgument);

    let path = CString::new("/nonexistent/cb.cbok").unwrap();
    let mut cb = ptr::null_mut();
    assert_eq!(unsafe { ui_codebook_load(path.as_ptr(), &mut cb) }, UiStatus::Io);
    assert!(cb.is_null());

    assert_eq!(unsafe { ui_codebook_k(ptr::null()) }, 0);
    unsafe { ui_codebook_free(ptr::null_mut()) };

    // A successful call clears the message.
    let mut v = UiVMeasure::default();
    assert_eq!(unsafe { ui_v_measure([3u64, 0, 0, 4].as_ptr(), 2, 2, &mut v) }, UiStatus::Ok);
    assert!(ui_last_error_message().is_null());
    assert_eq!(v.v, 100.0);
}

#[test]
fn kmeans_quantize_save_load_merge() {
    let pts: Vec<f64> = [[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0], [10.0, 0.0], [10.1, 0.0]].concat();
    let mut cb = ptr::null_mut();
    assert_eq!(unsafe { ui_kmeans_fit(pts.as_ptr(), 6, 2, 3, 0, &mut cb) }, UiStatus::Ok);
    unsafe {
        assert_eq!(ui_codebook_k(cb), 3);
        assert_eq!(ui_codebook_dim(cb), 2);
        let mut small = [0.0; 2];
        assert_eq!(ui_codebook_centroids(cb, small.as_mut_ptr(), 2), UiStatus::BufferTooSmall);

        let mut units = [0u32; 6];
        assert_eq!(ui_quantize(cb, pts.as_ptr(), 6, 2, units.as_mut_ptr()), UiStatus::Ok);
        assert_eq!(units[0], units[1]);
        assert_ne!(units[0], units[2]);
        assert_eq!(ui_quantize(cb, pts.as_ptr(), 4, 3, units.as_mut_ptr()), UiStatus::DimensionMismatch);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("cb.cbok").to_str().unwrap()).unwrap();
        assert_eq!(ui_codebook_save(cb, path.as_ptr()), UiStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(ui_codebook_load(path.as_ptr(), &mut back), UiStatus::Ok);
        let (mut a, mut b) = ([0.0; 6], [0.0; 6]);
        ui_codebook_centroids(cb, a.as_mut_ptr(), 6);
        ui_codebook_centroids(back, b.as_mut_ptr(), 6);
        assert_eq!(a.map(|x| x as f32 as f64), b);

        // CR = 1 between the two farthest units makes them merge first.
        let far = {
            let c = |i: usize| [a[2 * i], a[2 * i + 1]];
            let d = |i: usize, j: usize| (c(i)[0] - c(j)[0]).powi(2) + (c(i)[1] - c(j)[1]).powi(2);
            let mut best = (0, 1);
            for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                if d(i, j) > d(best.0, best.1) {
                    best = (i, j);
                }
            }
            best
        };
        let mut cr = [0.0; 9];
        cr[far.0 * 3 + far.1] = 1.0;
        cr[far.1 * 3 + far.0] = 1.0;
        let mut merged = ptr::null_mut();
        let mut map = [0u32; 3];
        assert_eq!(ui_merge(back, UiMergeMethod::Kwh, 2, cr.as_ptr(), 0, &mut merged, map.as_mut_ptr()), UiStatus::Ok);
        assert_eq!(ui_codebook_k(merged), 2);
        assert_eq!(map[far.0], map[far.1]);
        assert_eq!(
            ui_merge(back, UiMergeMethod::Kwh, 2, ptr::null(), 0, &mut merged, map.as_mut_ptr()),
            UiStatus::NullPointer
        );
        ui_codebook_free(merged);
        ui_codebook_free(back);
        ui_codebook_free(cb);
    }
}

fn target_dir() -> PathBuf {
    // .../target/<profile>/deps/c_abi-<hash>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_is_generated_and_declares_the_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/unit_insight.h")).unwrap();
    for name in [
        "ui_codebook_load", "ui_codebook_save", "ui_codebook_free", "ui_kmeans_fit", "ui_quantize", "ui_dedup",
        "ui_ued", "ui_v_measure", "ui_merge", "ui_last_error_message", "typedef struct ui_codebook ui_codebook",
        "UI_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn c_program_links_against_the_static_library() {
    let lib = target_dir().join("libunit_insight_ffi.a");
    assert!(lib.exists(), "static library not built at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "unit_insight.h"
int main(void) {
    uint32_t units[] = {12, 12, 25, 31, 31, 31}, u[6], d[6];
    size_t n = 0;
    if (ui_dedup(units, 6, u, d, &n) != UI_STATUS_OK) return 1;
    printf("%zu:%u,%u,%u:%u,%u,%u\n", n, u[0], u[1], u[2], d[0], d[1], d[2]);
    ui_codebook *cb = NULL;
    if (ui_codebook_load("/nonexistent.cbok", &cb) != UI_STATUS_IO) return 2;
    printf("%s\n", ui_last_error_message() ? "err" : "none");
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let cc = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(Path::new(env!("CARGO_MANIFEST_DIR")).join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .expect("C compiler available");
    assert!(cc.status.success(), "{}", String::from_utf8_lossy(&cc.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success());
    assert_eq!(String::from_utf8(run.stdout).unwrap(), "3:12,25,31:2,1,3\nerr\n");
}
