//! Emission-absorption volume rendering with midpoint quadrature.
//!
//! Samples sit at `t_near + (k + ½)·step`; the last interval is truncated at
//! `t_far` and its sample moved to the middle of the shortened interval.
//! Opacity is `α = 1 − exp(−σδ)` and the pixel is
//! `Σ T_k α_k c_k + T_final · background`.

use super::camera::{dot, Camera, Ray};
use super::grid::{sigmoid, VoxelGrid};
use crate::autodiff::{CustomOp, GradSink, Graph, Var};
use crate::error::{Error, Result};
use crate::raster::{Image, Rect};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
struct TraceSample {
    corners: [u32; 8],
    weights: [f32; 8],
    delta: f32,
    alpha: f32,
    trans: f32,
    rgb: [f32; 3],
}

/// Per-sample forward state kept for the backward pass of one ray.
#[derive(Debug, Default)]
struct RayTrace {
    samples: Vec<TraceSample>,
    t_final: f32,
}

/// Iterates `(t, δ)` sample positions along a clipped ray.
fn sample_positions(t_near: f32, t_far: f32, step: f32) -> impl Iterator<Item = (f32, f32)> {
    let length = t_far - t_near;
    let count = if length > 0.0 {
        (length / step).ceil() as usize
    } else {
        0
    };
    (0..count).map(move |k| {
        let start = k as f32 * step;
        let delta = if k + 1 == count { length - start } else { step };
        (t_near + start + 0.5 * delta, delta)
    })
}

/// Shared forward loop for plain and recorded rendering.
fn march(
    grid: &VoxelGrid,
    ray: &Ray,
    step: f32,
    bg: [f32; 3],
    mut trace: Option<(&mut RayTrace, bool)>,
) -> [f32; 3] {
    let Some((t_near, t_far)) = ray.hit else {
        if let Some((tr, _)) = trace {
            tr.t_final = 1.0;
        }
        return bg;
    };
    let mut color = [0.0f32; 3];
    let mut trans = 1.0f32;
    for (t, delta) in sample_positions(t_near, t_far, step) {
        let Some(corners) = grid.corners(ray.at(t)) else {
            continue;
        };
        let (sigma, logits) = grid.interpolate(&corners);
        let record_empty = trace.as_ref().is_some_and(|(_, e)| *e);
        if sigma <= 0.0 && !record_empty {
            continue;
        }
        let alpha = 1.0 - (-sigma * delta).exp();
        let rgb = logits.map(sigmoid);
        let w = trans * alpha;
        for c in 0..3 {
            color[c] += w * rgb[c];
        }
        if let Some((tr, _)) = trace.as_mut() {
            tr.samples.push(TraceSample {
                corners: corners.index.map(|i| i as u32),
                weights: corners.weight,
                delta,
                alpha,
                trans,
                rgb,
            });
        }
        trans *= 1.0 - alpha;
    }
    if let Some((tr, _)) = trace {
        tr.t_final = trans;
    }
    for c in 0..3 {
        color[c] += trans * bg[c];
    }
    color
}

/// Color of one ray; a ray that misses the grid returns the background.
pub fn render_ray(grid: &VoxelGrid, ray: &Ray, step: f32, bg: [f32; 3]) -> [f32; 3] {
    march(grid, ray, step, bg, None)
}

/// Compositing weights `T_k α_k` of every sample plus the final
/// transmittance. They sum to one.
pub fn compositing_weights(grid: &VoxelGrid, ray: &Ray, step: f32) -> (Vec<f32>, f32) {
    let mut trace = RayTrace::default();
    march(grid, ray, step, [0.0; 3], Some((&mut trace, true)));
    let weights = trace.samples.iter().map(|s| s.trans * s.alpha).collect();
    (weights, trace.t_final)
}

/// Full image without recording anything for differentiation.
pub fn render_image(grid: &VoxelGrid, cam: &Camera, step: f32, bg: [f32; 3]) -> Image {
    render_region(grid, cam, Rect::new(0, 0, cam.width, cam.height), step, bg)
}

pub fn render_region(grid: &VoxelGrid, cam: &Camera, rect: Rect, step: f32, bg: [f32; 3]) -> Image {
    let mut data = Vec::with_capacity(rect.area() * 3);
    for y in rect.y..rect.y + rect.height {
        for x in rect.x..rect.x + rect.width {
            data.extend(render_ray(grid, &cam.ray(x, y, grid.aabb()), step, bg));
        }
    }
    Image::new(rect.width, rect.height, data).expect("region shape")
}

/// Graph leaves standing for a grid's parameters.
#[derive(Debug, Clone, Copy)]
pub struct GridLeaves {
    /// `[voxels, 3]` color logits.
    pub color_logits: Var,
    /// `[voxels]` density; absent while the density is frozen.
    pub density: Option<Var>,
}

/// Registers the grid parameters as leaves: color logits first, then
/// density unless it is frozen. The fixed order gives the leaves the same
/// indices in every graph built this way.
pub fn register_grid(g: &mut Graph, grid: &VoxelGrid) -> GridLeaves {
    let n = grid.voxel_count();
    let color_logits = g.leaf(Tensor::new(&[n, 3], grid.color_logits().to_vec()).expect("grid shape"));
    let density = (!grid.is_density_frozen())
        .then(|| g.leaf(Tensor::new(&[n], grid.density().to_vec()).expect("grid shape")));
    GridLeaves {
        color_logits,
        density,
    }
}

struct RayOp {
    leaves: GridLeaves,
    trace: RayTrace,
    bg: [f32; 3],
}

impl CustomOp for RayOp {
    fn name(&self) -> &'static str {
        "render_ray"
    }

    fn parents(&self) -> Vec<Var> {
        let mut p = vec![self.leaves.color_logits];
        p.extend(self.leaves.density);
        p
    }

    fn backward(&self, out_grad: &[f32], sink: &mut GradSink<'_>) {
        let g = [out_grad[0], out_grad[1], out_grad[2]];
        if let Some(dlogits) = sink.grad_mut(self.leaves.color_logits) {
            for s in &self.trace.samples {
                let w = s.trans * s.alpha;
                let dl = [0, 1, 2].map(|c| w * g[c] * s.rgb[c] * (1.0 - s.rgb[c]));
                for (&i, &wt) in s.corners.iter().zip(&s.weights) {
                    let base = 3 * i as usize;
                    for c in 0..3 {
                        dlogits[base + c] += wt * dl[c];
                    }
                }
            }
        }
        let Some(density) = self.leaves.density else {
            return;
        };
        if let Some(dsigma) = sink.grad_mut(density) {
            // remaining = g · (Σ_{j>k} w_j c_j + T_final · bg)
            let mut remaining = self.trace.t_final * dot(g, self.bg);
            for s in self.trace.samples.iter().rev() {
                let gc = dot(g, s.rgb);
                let d = s.delta * (s.trans * (1.0 - s.alpha) * gc - remaining);
                remaining += s.trans * s.alpha * gc;
                for (&i, &wt) in s.corners.iter().zip(&s.weights) {
                    dsigma[i as usize] += wt * d;
                }
            }
        }
    }
}

/// Gathers per-ray RGB nodes into one 3×H×W image node.
struct StackPixels {
    rays: Vec<Var>,
}

impl CustomOp for StackPixels {
    fn name(&self) -> &'static str {
        "stack_pixels"
    }

    fn parents(&self) -> Vec<Var> {
        self.rays.clone()
    }

    fn backward(&self, out_grad: &[f32], sink: &mut GradSink<'_>) {
        let plane = self.rays.len();
        for (p, &ray) in self.rays.iter().enumerate() {
            if let Some(g) = sink.grad_mut(ray) {
                for c in 0..3 {
                    g[c] += out_grad[c * plane + p];
                }
            }
        }
    }
}

/// Differentiable render of `rect`, recorded as one node per ray plus a
/// gather node. Pixel values are bitwise identical to [`render_image`].
pub fn render_patch_with_grad(
    g: &mut Graph,
    grid: &VoxelGrid,
    leaves: GridLeaves,
    cam: &Camera,
    rect: Rect,
    step: f32,
    bg: [f32; 3],
) -> Result<Var> {
    if !rect.fits_in(cam.width, cam.height) {
        return Err(Error::invalid(format!(
            "patch {rect:?} outside {}×{} image",
            cam.width, cam.height
        )));
    }
    if !(step > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {step}")));
    }
    let record_empty = leaves.density.is_some();
    let plane = rect.area();
    let mut rays = Vec::with_capacity(plane);
    let mut image = vec![0.0f32; 3 * plane];
    let mut p = 0;
    for y in rect.y..rect.y + rect.height {
        for x in rect.x..rect.x + rect.width {
            let ray = cam.ray(x, y, grid.aabb());
            let mut trace = RayTrace::default();
            let rgb = march(grid, &ray, step, bg, Some((&mut trace, record_empty)));
            for c in 0..3 {
                image[c * plane + p] = rgb[c];
            }
            let op = RayOp { leaves, trace, bg };
            rays.push(g.custom(Box::new(op), Tensor::new(&[3], rgb.to_vec())?));
            p += 1;
        }
    }
    let value = Tensor::new(&[3, rect.height, rect.width], image)?;
    Ok(g.custom(Box::new(StackPixels { rays }), value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::grid::Aabb;

    fn camera(size: usize) -> Camera {
        Camera::look_at([0.0, 0.3, 3.0], [0.0; 3], [0.0, 1.0, 0.0], size, size, 0.9).unwrap()
    }

    #[test]
    fn empty_grid_renders_background() {
        let grid = VoxelGrid::new([4, 4, 4], Aabb::cube(1.0), 0.0, [0.3; 3]).unwrap();
        let img = render_image(&grid, &camera(6), 0.05, [0.2, 0.4, 0.6]);
        assert!(img.pixels().all(|p| p == [0.2, 0.4, 0.6]));
    }

    #[test]
    fn opaque_region_saturates_to_its_color() {
        let grid = VoxelGrid::new([4, 4, 4], Aabb::cube(1.0), 1000.0, [0.25, 0.5, 0.75]).unwrap();
        let cam = camera(5);
        let rgb = render_ray(&grid, &cam.ray(2, 2, grid.aabb()), 0.05, [1.0; 3]);
        for (a, b) in rgb.iter().zip([0.25, 0.5, 0.75]) {
            assert!((a - b).abs() < 1e-6, "{rgb:?}");
        }
    }

    #[test]
    fn out_of_bounds_patch_rejected() {
        let grid = VoxelGrid::new([2, 2, 2], Aabb::cube(1.0), 0.0, [0.3; 3]).unwrap();
        let mut g = Graph::new();
        let leaves = register_grid(&mut g, &grid);
        let r = render_patch_with_grad(&mut g, &grid, leaves, &camera(4), Rect::new(2, 2, 3, 1), 0.1, [1.0; 3]);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sample_positions_cover_interval() {
        let s: Vec<_> = sample_positions(1.0, 2.0, 0.3).collect();
        assert_eq!(s.len(), 4);
        let total: f32 = s.iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert!((s[0].0 - 1.15).abs() < 1e-6);
        assert!((s[3].0 - 1.95).abs() < 1e-5);
    }
}
