use std::ffi::{CStr, CString};
use std::ptr;

use arf_ffi::*;

fn last_error() -> String {
    let p = arf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_grid(density: f32, rgb: [f32; 3]) -> *mut ArfGrid {
    let mut g = ptr::null_mut();
    let st = unsafe { arf_grid_new([4usize, 4, 4].as_ptr(), 1.0, density, rgb.as_ptr(), &mut g) };
    assert_eq!(st, ArfStatus::Ok);
    g
}

fn render(g: *const ArfGrid, size: usize, bg: [f32; 3]) -> Vec<f32> {
    let mut out = vec![0.0f32; size * size * 3];
    let st = unsafe {
        arf_grid_render(g, [0.0, 0.5, 3.0].as_ptr(), [0.0; 3].as_ptr(), size, size, 0.8, bg.as_ptr(), out.as_mut_ptr(), out.len())
    };
    assert_eq!(st, ArfStatus::Ok, "{}", last_error());
    out
}

#[test]
fn render_empty_and_dense() {
    let empty = new_grid(0.0, [0.2, 0.4, 0.6]);
    assert!(render(empty, 6, [0.1, 0.9, 0.3]).chunks(3).all(|p| p == [0.1, 0.9, 0.3]));
    let dense = new_grid(500.0, [0.2, 0.4, 0.6]);
    let img = render(dense, 6, [1.0; 3]);
    let center = &img[(3 * 6 + 3) * 3..][..3];
    for (c, want) in center.iter().zip([0.2, 0.4, 0.6]) {
        assert!((c - want).abs() < 1e-3, "{center:?}");
    }
    unsafe {
        arf_grid_free(empty);
        arf_grid_free(dense);
    }
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("g.arfg").to_str().unwrap()).unwrap();
    let g = new_grid(3.0, [0.7, 0.1, 0.5]);
    assert_eq!(unsafe { arf_grid_save(g, path.as_ptr()) }, ArfStatus::Ok);
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { arf_grid_load(path.as_ptr(), &mut h) }, ArfStatus::Ok);
    let mut dims = [0usize; 3];
    assert_eq!(unsafe { arf_grid_dims(h, dims.as_mut_ptr()) }, ArfStatus::Ok);
    assert_eq!(dims, [4, 4, 4]);
    assert_eq!(render(g, 5, [0.0; 3]), render(h, 5, [0.0; 3]));
    unsafe {
        arf_grid_free(g);
        arf_grid_free(h);
    }
}

#[test]
fn errors_set_status_and_message() {
    let missing = CString::new("/nonexistent/dir/grid.arfg").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { arf_grid_load(missing.as_ptr(), &mut h) }, ArfStatus::Io);
    assert!(h.is_null());
    assert!(last_error().contains("grid.arfg"));

    assert_eq!(unsafe { arf_grid_load(ptr::null(), &mut h) }, ArfStatus::NullPointer);
    assert!(last_error().contains("path"));

    let g = new_grid(1.0, [0.5; 3]);
    assert!(arf_last_error().is_null(), "success clears the message");
    let mut small = vec![0.0f32; 10];
    let st = unsafe {
        arf_grid_render(g, [0.0, 0.0, 3.0].as_ptr(), [0.0; 3].as_ptr(), 4, 4, 0.8, [0.0; 3].as_ptr(), small.as_mut_ptr(), small.len())
    };
    assert_eq!(st, ArfStatus::InvalidArgument);
    assert!(last_error().contains("48"));
    unsafe { arf_grid_free(g) };

    let mut bad = ptr::null_mut();
    let st = unsafe { arf_grid_new([0usize, 4, 4].as_ptr(), 1.0, 1.0, [0.5f32; 3].as_ptr(), &mut bad) };
    assert_eq!(st, ArfStatus::InvalidArgument);
    unsafe { arf_grid_free(ptr::null_mut()) };
}

#[test]
fn truncated_checkpoint_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.arfg");
    std::fs::write(&p, b"ARFG\x01").unwrap();
    let path = CString::new(p.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { arf_grid_load(path.as_ptr(), &mut h) }, ArfStatus::Format);
}

#[test]
fn color_transform_matches_statistics() {
    let content: Vec<f32> = (0..300).map(|i| ((i * 37 % 101) as f32) / 100.0 * 0.5).collect();
    let style: Vec<f32> = (0..300).map(|i| 0.3 + ((i * 53 % 97) as f32) / 97.0 * 0.4).collect();
    let mut t = ptr::null_mut();
    let st = unsafe { arf_color_transform_solve(content.as_ptr(), 100, style.as_ptr(), 100, &mut t) };
    assert_eq!(st, ArfStatus::Ok, "{}", last_error());
    let (mut a, mut b) = ([0.0f64; 9], [0.0f64; 3]);
    assert_eq!(unsafe { arf_color_transform_coefficients(t, a.as_mut_ptr(), b.as_mut_ptr()) }, ArfStatus::Ok);

    let mean = |v: &[f32]| -> [f64; 3] {
        let mut m = [0.0; 3];
        for p in v.chunks(3) {
            for c in 0..3 {
                m[c] += p[c] as f64 / (v.len() / 3) as f64;
            }
        }
        m
    };
    let (mc, ms) = (mean(&content), mean(&style));
    for r in 0..3 {
        let mapped = (0..3).map(|k| a[3 * r + k] * mc[k]).sum::<f64>() + b[r];
        assert!((mapped - ms[r]).abs() < 1e-9, "row {r}: {mapped} vs {}", ms[r]);
    }

    let mut px = content.clone();
    assert_eq!(unsafe { arf_color_transform_apply(t, px.as_mut_ptr(), 100) }, ArfStatus::Ok);
    for (i, p) in px.chunks(3).enumerate() {
        for r in 0..3 {
            let want = ((0..3).map(|k| a[3 * r + k] * content[3 * i + k] as f64).sum::<f64>() + b[r]).clamp(0.0, 1.0);
            assert!((p[r] as f64 - want).abs() < 1e-6);
        }
    }
    unsafe { arf_color_transform_free(t) };
}

#[test]
fn color_transform_rejects_empty_input() {
    let mut t = ptr::null_mut();
    let px = [0.5f32; 3];
    let st = unsafe { arf_color_transform_solve(px.as_ptr(), 0, px.as_ptr(), 1, &mut t) };
    assert_eq!(st, ArfStatus::InvalidArgument);
    assert!(t.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/arf.h")).unwrap();
    for name in [
        "arf_last_error",
        "arf_version",
        "arf_grid_load",
        "arf_grid_new",
        "arf_grid_save",
        "arf_grid_dims",
        "arf_grid_render",
        "arf_grid_free",
        "arf_color_transform_solve",
        "arf_color_transform_apply",
        "arf_color_transform_coefficients",
        "arf_color_transform_free",
        "typedef struct ArfGrid ArfGrid",
    ] {
        assert!(header.contains(name), "{name} missing from arf.h");
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(arf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
