//! C ABI over `arf-core`.
//!
//! Every fallible function returns an [`ArfStatus`]; on failure the message
//! is kept per thread and read with [`arf_last_error`]. Objects are opaque
//! handles released with their `_free` function. Images are interleaved RGB
//! `float` buffers, row-major, three values per pixel.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use arf_core::color::{solve_color_transform, ColorStats, ColorTransform};
use arf_core::field::{render_image, Aabb, Camera, VoxelGrid};
use arf_core::raster::Image;
use arf_core::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidState = 3,
    Io = 4,
    Format = 5,
    NonFinite = 6,
    Panic = 7,
}

/// Opaque voxel radiance field.
pub struct ArfGrid(VoxelGrid);

/// Opaque affine color transform.
pub struct ArfColorTransform(ColorTransform);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ArfStatus {
    match e {
        Error::InvalidArgument(_) => ArfStatus::InvalidArgument,
        Error::InvalidState(_) => ArfStatus::InvalidState,
        Error::Load { .. } | Error::Format { .. } | Error::Json { .. } => ArfStatus::Format,
        Error::NonFinite(_) => ArfStatus::NonFinite,
        Error::Io { .. } | Error::Image { .. } => ArfStatus::Io,
    }
}

struct Fail(ArfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(ArfStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(ArfStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording its error and turning panics into `Panic`.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ArfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ArfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            ArfStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a str, Fail> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))
}

unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn array3<T: Copy>(ptr: *const T, what: &str) -> Result<[T; 3], Fail> {
    let s = slice_arg(ptr, 3, what)?;
    Ok([s[0], s[1], s[2]])
}

fn pixels(rgb: &[f32]) -> Vec<[f64; 3]> {
    rgb.chunks_exact(3)
        .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
        .collect()
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn arf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn arf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads a grid checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn arf_grid_load(path: *const c_char, out: *mut *mut ArfGrid) -> ArfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let grid = VoxelGrid::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(ArfGrid(grid)));
        Ok(())
    })
}

/// Grid of `dims` voxels filling the cube `[-half_extent, half_extent]³`
/// with constant density and color.
///
/// # Safety
/// `dims` and `rgb` must point to three values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn arf_grid_new(
    dims: *const usize,
    half_extent: f64,
    density: f32,
    rgb: *const f32,
    out: *mut *mut ArfGrid,
) -> ArfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dims = array3(dims, "dims")?;
        let rgb = array3(rgb, "rgb")?;
        if !(half_extent > 0.0 && half_extent.is_finite()) {
            return Err(invalid(format!("half_extent must be positive, got {half_extent}")));
        }
        let grid = VoxelGrid::new(dims, Aabb::cube(half_extent), density, rgb)?;
        *out = Box::into_raw(Box::new(ArfGrid(grid)));
        Ok(())
    })
}

/// Writes a grid checkpoint.
///
/// # Safety
/// `grid` must come from this library and `path` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn arf_grid_save(grid: *const ArfGrid, path: *const c_char) -> ArfStatus {
    guard(|| {
        let grid = grid.as_ref().ok_or_else(|| null("grid"))?;
        grid.0.save(path_arg(path)?)?;
        Ok(())
    })
}

/// Voxel counts along x, y and z.
///
/// # Safety
/// `grid` must come from this library and `out` point to three writable values.
#[no_mangle]
pub unsafe extern "C" fn arf_grid_dims(grid: *const ArfGrid, out: *mut usize) -> ArfStatus {
    guard(|| {
        let grid = grid.as_ref().ok_or_else(|| null("grid"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, 3).copy_from_slice(&grid.0.dims());
        Ok(())
    })
}

/// Renders a `width × height` view from `eye` towards `target` (world up
/// +y, vertical field of view `fov_y` in radians) into `out_rgb`, which
/// must hold `width · height · 3` floats. The default step of the grid is
/// used.
///
/// # Safety
/// `grid` must come from this library, `eye`, `target` and `bg` must point to
/// three floats and `out_rgb` to `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn arf_grid_render(
    grid: *const ArfGrid,
    eye: *const f32,
    target: *const f32,
    width: usize,
    height: usize,
    fov_y: f32,
    bg: *const f32,
    out_rgb: *mut f32,
    out_len: usize,
) -> ArfStatus {
    guard(|| {
        let grid = grid.as_ref().ok_or_else(|| null("grid"))?;
        let (eye, target, bg) = (array3(eye, "eye")?, array3(target, "target")?, array3(bg, "bg")?);
        if out_rgb.is_null() {
            return Err(null("out_rgb"));
        }
        let need = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| invalid("image size overflows"))?;
        if out_len != need {
            return Err(invalid(format!("{width}×{height} image needs {need} floats, buffer has {out_len}")));
        }
        let cam = Camera::look_at(eye, target, [0.0, 1.0, 0.0], width, height, fov_y)?;
        let image = render_image(&grid.0, &cam, grid.0.default_step(), bg);
        std::slice::from_raw_parts_mut(out_rgb, out_len).copy_from_slice(image.data());
        Ok(())
    })
}

/// Releases a grid; null is ignored.
///
/// # Safety
/// `grid` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn arf_grid_free(grid: *mut ArfGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Solves the affine map taking the color statistics of `content_pixels`
/// RGB triples to those of `style_pixels` triples.
///
/// # Safety
/// The pixel pointers must hold `3 · count` floats each and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn arf_color_transform_solve(
    content_rgb: *const f32,
    content_pixels: usize,
    style_rgb: *const f32,
    style_pixels: usize,
    out: *mut *mut ArfColorTransform,
) -> ArfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let content = slice_arg(content_rgb, 3 * content_pixels, "content_rgb")?;
        let style = slice_arg(style_rgb, 3 * style_pixels, "style_rgb")?;
        let t = solve_color_transform(
            &ColorStats::from_pixels(&pixels(content))?,
            &ColorStats::from_pixels(&pixels(style))?,
        )?;
        *out = Box::into_raw(Box::new(ArfColorTransform(t)));
        Ok(())
    })
}

/// Maps `count` RGB triples in place, clipping to `[0, 1]`.
///
/// # Safety
/// `t` must come from this library and `rgb` hold `3 · count` floats.
#[no_mangle]
pub unsafe extern "C" fn arf_color_transform_apply(
    t: *const ArfColorTransform,
    rgb: *mut f32,
    count: usize,
) -> ArfStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("transform"))?;
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        let data = std::slice::from_raw_parts_mut(rgb, 3 * count);
        if count > 0 {
            let image = t.0.apply_image(&Image::new(count, 1, data.to_vec())?);
            data.copy_from_slice(image.data());
        }
        Ok(())
    })
}

/// Copies the row-major 3×3 matrix into `a` and the offset into `b`.
///
/// # Safety
/// `t` must come from this library, `a` hold 9 and `b` 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn arf_color_transform_coefficients(
    t: *const ArfColorTransform,
    a: *mut f64,
    b: *mut f64,
) -> ArfStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("transform"))?;
        if a.is_null() || b.is_null() {
            return Err(null("output"));
        }
        let a = std::slice::from_raw_parts_mut(a, 9);
        for (row, m) in a.chunks_exact_mut(3).zip(&t.0.a) {
            row.copy_from_slice(m);
        }
        std::slice::from_raw_parts_mut(b, 3).copy_from_slice(&t.0.b);
        Ok(())
    })
}

/// Releases a transform; null is ignored.
///
/// # Safety
/// `t` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn arf_color_transform_free(t: *mut ArfColorTransform) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}
