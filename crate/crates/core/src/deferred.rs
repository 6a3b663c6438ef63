//! Deferred back-propagation of full-image losses into the voxel grid.
//!
//! The image is rendered once without a graph, the loss gradient with
//! respect to its pixels is cached, and every patch is then re-rendered
//! differentiably and back-propagated with its slice of the cached
//! gradient as the seed. Only one patch graph is alive at a time.

use crate::autodiff::{meter, GradStore, Graph, Var};
use crate::error::{Error, Result};
use crate::field::{register_grid, render_image, render_patch_with_grad, Camera, GridLeaves, VoxelGrid};
use crate::raster::{Image, Rect};
use crate::tensor::Tensor;

pub const DEFAULT_PATCH_SIZE: usize = 32;

/// Scalar loss of a 3×H×W image node.
pub type ImageLoss<'a> = dyn Fn(&mut Graph, Var) -> Result<Var> + 'a;

/// `∂L/∂pixel` for a whole image, stored planar (3×H×W).
#[derive(Debug, Clone, PartialEq)]
pub struct CachedGradientImage {
    pub width: usize,
    pub height: usize,
    pub grad: Tensor,
}

impl CachedGradientImage {
    /// Gradient slice for one patch, planar.
    pub fn patch(&self, rect: Rect) -> Tensor {
        let plane = self.width * self.height;
        let mut out = Vec::with_capacity(3 * rect.area());
        for c in 0..3 {
            for y in rect.y..rect.y + rect.height {
                let start = c * plane + y * self.width + rect.x;
                out.extend_from_slice(&self.grad.data()[start..start + rect.width]);
            }
        }
        Tensor::new(&[3, rect.height, rect.width], out).expect("patch shape")
    }
}

/// Disjoint rectangles covering an image exactly once.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTiling {
    width: usize,
    height: usize,
    patch_size: usize,
    rects: Vec<Rect>,
}

impl PatchTiling {
    /// Row-major square patches; the last row and column are truncated.
    pub fn new(width: usize, height: usize, patch_size: usize) -> Result<Self> {
        if width == 0 || height == 0 || patch_size == 0 {
            return Err(Error::invalid(format!(
                "tiling needs positive sizes, got {width}×{height} with patch {patch_size}"
            )));
        }
        let mut rects = Vec::new();
        for y in (0..height).step_by(patch_size) {
            for x in (0..width).step_by(patch_size) {
                rects.push(Rect::new(x, y, patch_size.min(width - x), patch_size.min(height - y)));
            }
        }
        Ok(PatchTiling {
            width,
            height,
            patch_size,
            rects,
        })
    }

    /// Arbitrary rectangles, checked to cover the image exactly once.
    pub fn from_rects(width: usize, height: usize, rects: Vec<Rect>) -> Result<Self> {
        let mut hits = vec![0u8; width * height];
        for r in &rects {
            if r.area() == 0 || !r.fits_in(width, height) {
                return Err(Error::invalid(format!("patch {r:?} outside {width}×{height} image")));
            }
            for y in r.y..r.y + r.height {
                for x in r.x..r.x + r.width {
                    hits[y * width + x] += 1;
                    if hits[y * width + x] > 1 {
                        return Err(Error::invalid(format!("patches overlap at pixel ({x}, {y})")));
                    }
                }
            }
        }
        if let Some(p) = hits.iter().position(|&h| h == 0) {
            return Err(Error::invalid(format!(
                "pixel ({}, {}) not covered by any patch",
                p % width,
                p / width
            )));
        }
        let patch_size = rects.iter().map(|r| r.width.max(r.height)).max().unwrap_or(0);
        Ok(PatchTiling {
            width,
            height,
            patch_size,
            rects,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn rects(&self) -> &[Rect] {
        &self.rects
    }
}

/// Loss value and pixel gradients of `loss_fn` at `image`; the image is
/// the only differentiable input.
pub fn cached_pixel_gradients(image: &Image, loss_fn: &ImageLoss<'_>) -> Result<(f32, CachedGradientImage)> {
    let mut g = Graph::new();
    let x = g.leaf(image.to_tensor());
    let loss = loss_fn(&mut g, x)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("image loss evaluated to {value}")));
    }
    let mut grads = g.backward(loss)?;
    let grad = grads
        .take(x)
        .unwrap_or_else(|| Tensor::zeros(&[3, image.height(), image.width()]));
    Ok((
        value,
        CachedGradientImage {
            width: image.width(),
            height: image.height(),
            grad,
        },
    ))
}

/// Result of one gradient evaluation over the grid parameters.
#[derive(Debug)]
pub struct GridGradient {
    pub loss: f32,
    /// Keyed by the indices in `leaves`.
    pub grads: GradStore,
    pub leaves: GridLeaves,
    /// The image the loss was evaluated on.
    pub render: Image,
    /// Live-node high-water mark above the level at entry.
    pub peak_nodes: usize,
}

impl GridGradient {
    pub fn color_logits(&self) -> Option<&Tensor> {
        self.grads.get(self.leaves.color_logits)
    }

    pub fn density(&self) -> Option<&Tensor> {
        self.leaves.density.and_then(|d| self.grads.get(d))
    }
}

/// Gradient of `loss_fn(render(grid, cam))` with respect to the grid
/// parameters, computed patch by patch.
pub fn deferred_backprop_step(
    grid: &VoxelGrid,
    cam: &Camera,
    loss_fn: &ImageLoss<'_>,
    tiling: &PatchTiling,
    step: f32,
    bg: [f32; 3],
) -> Result<GridGradient> {
    if tiling.width() != cam.width || tiling.height() != cam.height {
        return Err(Error::invalid(format!(
            "tiling is {}×{} but the camera renders {}×{}",
            tiling.width(),
            tiling.height(),
            cam.width,
            cam.height
        )));
    }
    let base = meter::live_nodes();
    meter::reset_peak();

    let render = render_image(grid, cam, step, bg);
    let (loss, cached) = cached_pixel_gradients(&render, loss_fn)?;

    let mut grads = GradStore::default();
    let mut leaves = None;
    for &rect in tiling.rects() {
        let mut g = Graph::new();
        let l = register_grid(&mut g, grid);
        let patch = render_patch_with_grad(&mut g, grid, l, cam, rect, step, bg)?;
        grads.accumulate(&g.backward_with_seed(patch, &cached.patch(rect))?);
        leaves = Some(l);
    }
    Ok(GridGradient {
        loss,
        grads,
        leaves: leaves.expect("tiling has at least one patch"),
        render,
        peak_nodes: meter::peak_nodes() - base,
    })
}

/// Reference path: one graph holding the full differentiable render and
/// the loss.
pub fn monolithic_backprop_step(
    grid: &VoxelGrid,
    cam: &Camera,
    loss_fn: &ImageLoss<'_>,
    step: f32,
    bg: [f32; 3],
) -> Result<GridGradient> {
    let base = meter::live_nodes();
    meter::reset_peak();
    let mut g = Graph::new();
    let leaves = register_grid(&mut g, grid);
    let full = Rect::new(0, 0, cam.width, cam.height);
    let image = render_patch_with_grad(&mut g, grid, leaves, cam, full, step, bg)?;
    let render = Image::from_tensor(g.value(image))?;
    let loss_var = loss_fn(&mut g, image)?;
    let loss = g.value(loss_var).item();
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("image loss evaluated to {loss}")));
    }
    let grads = g.backward(loss_var)?;
    Ok(GridGradient {
        loss,
        grads,
        leaves,
        render,
        peak_nodes: meter::peak_nodes() - base,
    })
}
