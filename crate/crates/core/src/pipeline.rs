//! Reconstruction, stylization and novel-view rendering.

use std::cell::Cell;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::color::{match_colors, solve_color_transform, ColorStats, ColorTransform};
use crate::dataset::{read_json, write_json, Dataset, View};
use crate::deferred::{cached_pixel_gradients, deferred_backprop_step, GridGradient, ImageLoss, PatchTiling};
use crate::error::{Error, Result};
use crate::field::{logit, register_grid, render_image, render_patch_with_grad, render_region, sigmoid, Camera, VoxelGrid};
use crate::losses::{content_loss, total_loss, StyleTarget};
use crate::optim::Adam;
use crate::raster::{Image, Rect};
use crate::vgg::{FeatureBlock, VggNetwork};

pub use crate::optim::lr_schedule;

/// Mean squared error against a fixed target image.
fn l2_loss(target: &Image) -> impl Fn(&mut Graph, Var) -> Result<Var> + '_ {
    move |g: &mut Graph, x: Var| {
        let t = g.constant(target.to_tensor());
        content_loss(g, x, t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub iters: usize,
    /// Color learning rate, decayed exponentially to `lr_end`.
    pub lr: f32,
    pub lr_end: f32,
    /// Density learning rate relative to the color rate.
    pub density_lr_scale: f32,
    pub patch_size: usize,
    pub seed: u64,
    pub background: [f32; 3],
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iters: 1000,
            lr: 0.1,
            lr_end: 0.01,
            density_lr_scale: 5.0,
            patch_size: 32,
            seed: 0,
            background: [1.0; 3],
        }
    }
}

/// Photometric fit on random patches of random views. Density and color
/// are optimized with Adam unless the density is frozen; density is clamped
/// to be non-negative after every update. Returns the per-iteration loss.
pub fn fit_photometric(grid: &mut VoxelGrid, views: &[View], cfg: &FitConfig) -> Result<Vec<f32>> {
    if views.is_empty() {
        return Err(Error::invalid("fit_photometric needs at least one view"));
    }
    if cfg.patch_size == 0 || !(cfg.lr > 0.0 && cfg.lr_end > 0.0) {
        return Err(Error::invalid("patch size and learning rates must be positive"));
    }
    let step = grid.default_step();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut color_opt = Adam::new(grid.color_logits().len());
    let mut density_opt = Adam::new(grid.voxel_count());
    let mut losses = Vec::with_capacity(cfg.iters);
    for it in 0..cfg.iters {
        let view = &views[rng.random_range(0..views.len())];
        let cam = &view.camera;
        let (pw, ph) = (cfg.patch_size.min(cam.width), cfg.patch_size.min(cam.height));
        let rect = Rect::new(
            rng.random_range(0..=cam.width - pw),
            rng.random_range(0..=cam.height - ph),
            pw,
            ph,
        );
        let target = view.image.crop(rect);
        let render = render_region(grid, cam, rect, step, cfg.background);
        let (loss, cached) = cached_pixel_gradients(&render, &l2_loss(&target))?;
        let mut g = Graph::new();
        let leaves = register_grid(&mut g, grid);
        let patch = render_patch_with_grad(&mut g, grid, leaves, cam, rect, step, cfg.background)?;
        let grads = g.backward_with_seed(patch, &cached.grad)?;

        let lr = lr_schedule(it, cfg.iters, cfg.lr, cfg.lr_end);
        if let Some(gl) = grads.get(leaves.color_logits) {
            color_opt.step(grid.color_logits_mut(), gl.data(), lr)?;
        }
        if let Some(gd) = leaves.density.and_then(|d| grads.get(d)) {
            let density = grid.density_mut()?;
            density_opt.step(density, gd.data(), lr * cfg.density_lr_scale)?;
            for v in density.iter_mut() {
                *v = v.max(0.0);
            }
        }
        losses.push(loss);
    }
    Ok(losses)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaptureKind {
    #[serde(rename = "forward-facing")]
    ForwardFacing,
    #[serde(rename = "360")]
    Full360,
}

impl CaptureKind {
    /// Content weight used when none is given.
    pub fn default_lambda(self) -> f32 {
        match self {
            CaptureKind::ForwardFacing => 0.001,
            CaptureKind::Full360 => 0.005,
        }
    }
}

impl std::str::FromStr for CaptureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward-facing" => Ok(CaptureKind::ForwardFacing),
            "360" => Ok(CaptureKind::Full360),
            other => Err(Error::invalid(format!(
                "capture kind must be forward-facing or 360, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StyleConfig {
    /// Content weight; `None` picks the default for `capture_kind`.
    pub lambda: Option<f32>,
    pub epochs: usize,
    pub lr_start: f32,
    pub lr_end: f32,
    pub block_id: usize,
    pub patch_size: usize,
    pub seed: u64,
    pub capture_kind: CaptureKind,
    /// Photometric color pre-optimization on the recolored views.
    pub pre_epochs: usize,
    pub pre_lr: f32,
    pub background: [f32; 3],
}

impl Default for StyleConfig {
    fn default() -> Self {
        StyleConfig {
            lambda: None,
            epochs: 10,
            lr_start: 0.1,
            lr_end: 0.01,
            block_id: 3,
            patch_size: 32,
            seed: 0,
            capture_kind: CaptureKind::ForwardFacing,
            pre_epochs: 2,
            pre_lr: 0.05,
            background: [1.0; 3],
        }
    }
}

impl StyleConfig {
    pub fn lambda(&self) -> f32 {
        self.lambda.unwrap_or(self.capture_kind.default_lambda())
    }

    pub fn validate(&self) -> Result<()> {
        let lambda = self.lambda();
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be a finite value ≥ 0, got {lambda}")));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end) || !self.lr_start.is_finite() {
            return Err(Error::invalid(format!(
                "need lr_start ≥ lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        if !(1..=5).contains(&self.block_id) {
            return Err(Error::invalid(format!("block_id must be in 1..=5, got {}", self.block_id)));
        }
        if self.patch_size == 0 {
            return Err(Error::invalid("patch_size must be positive"));
        }
        if !(self.pre_lr > 0.0) {
            return Err(Error::invalid("pre_lr must be positive"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: StyleConfig = read_json(path.as_ref())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

/// Everything produced by [`stylize_radiance_field`].
#[derive(Debug, Clone)]
pub struct Stylized {
    pub grid: VoxelGrid,
    /// Background after both color transforms; render the stylized grid
    /// against this.
    pub background: [f32; 3],
    pub pre_transform: ColorTransform,
    pub final_transform: ColorTransform,
    /// Mean NNFM term per stylization epoch.
    pub epoch_nnfm: Vec<f32>,
    /// Mean total loss per stylization epoch.
    pub epoch_loss: Vec<f32>,
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// The background is a render parameter rather than a stored color, so it
/// is transformed without clipping.
fn transform_background(t: &ColorTransform, bg: [f32; 3]) -> [f32; 3] {
    t.apply_unclipped(bg.map(f64::from)).map(|v| v as f32)
}

/// Bakes `c ↦ A·c + b` into every voxel color (in color space, re-encoded
/// as logits clipped to (1e-4, 1 − 1e-4)).
pub fn bake_color_transform(grid: &mut VoxelGrid, t: &ColorTransform) {
    for px in grid.color_logits_mut().chunks_exact_mut(3) {
        let c = [px[0], px[1], px[2]].map(|l| sigmoid(l) as f64);
        let mapped = t.apply_unclipped(c);
        for (dst, v) in px.iter_mut().zip(mapped) {
            *dst = logit((v as f32).clamp(1e-4, 1.0 - 1e-4));
        }
    }
}

/// Photometric color fit over whole views with deferred back-propagation;
/// density stays frozen.
fn pre_optimize_colors(
    grid: &mut VoxelGrid,
    views: &[View],
    cfg: &StyleConfig,
    tiling: &PatchTiling,
    bg: [f32; 3],
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let step = grid.default_step();
    let mut opt = Adam::new(grid.color_logits().len());
    for _ in 0..cfg.pre_epochs {
        for i in shuffled(views.len(), rng) {
            let loss = l2_loss(&views[i].image);
            let gg = deferred_backprop_step(grid, &views[i].camera, &loss, tiling, step, bg)?;
            apply_color_step(grid, &gg, &mut opt, cfg.pre_lr)?;
        }
    }
    Ok(())
}

fn apply_color_step(grid: &mut VoxelGrid, gg: &GridGradient, opt: &mut Adam, lr: f32) -> Result<()> {
    match gg.color_logits() {
        Some(g) => opt.step(grid.color_logits_mut(), g.data(), lr),
        None => Ok(()),
    }
}

/// The stylization pipeline:
/// (a) recolor the training views to the style image's color statistics,
/// (b) pre-optimize the grid colors to the recolored views,
/// (c) extract style and per-view content features,
/// (d) minimize NNFM + λ·content with deferred back-propagation and Adam,
///     one random permutation of the views per epoch,
/// (e) match the colors of the stylized renders to the style once more and
///     bake that transform into the voxel colors.
///
/// Density is frozen for the whole run and restored to its prior frozen
/// state afterwards; the returned grid is frozen.
pub fn stylize_radiance_field(
    grid: &VoxelGrid,
    dataset: &Dataset,
    net: &VggNetwork,
    cfg: &StyleConfig,
) -> Result<Stylized> {
    cfg.validate()?;
    dataset.validate()?;
    let style = dataset
        .style
        .as_ref()
        .ok_or_else(|| Error::invalid("stylization needs a style image"))?;
    let cameras = dataset.cameras();
    let (w, h) = (cameras[0].width, cameras[0].height);
    let tiling = PatchTiling::new(w, h, cfg.patch_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut grid = grid.clone();
    grid.freeze_density();
    let step = grid.default_step();

    // (a)
    let (recolored, pre_transform) = match_colors(&dataset.images(), style)?;
    let bg = transform_background(&pre_transform, cfg.background);
    let recolored_views: Vec<View> = cameras
        .iter()
        .zip(recolored)
        .map(|(&camera, image)| View { camera, image })
        .collect();

    // (b)
    pre_optimize_colors(&mut grid, &recolored_views, cfg, &tiling, bg, &mut rng)?;

    // (c)
    let style_target = StyleTarget::new(FeatureBlock::from_image(net, &style.to_tensor(), cfg.block_id)?.data)?;
    let content: Vec<Arc<crate::tensor::Tensor>> = recolored_views
        .iter()
        .map(|v| FeatureBlock::from_image(net, &v.image.to_tensor(), cfg.block_id).map(|f| f.data))
        .collect::<Result<_>>()?;

    // (d)
    let lambda = cfg.lambda();
    let total_iters = cfg.epochs * cameras.len();
    let mut opt = Adam::new(grid.color_logits().len());
    let mut epoch_nnfm = Vec::with_capacity(cfg.epochs);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut t = 0;
    for _ in 0..cfg.epochs {
        let (mut nnfm_sum, mut loss_sum) = (0.0f64, 0.0f64);
        for i in shuffled(cameras.len(), &mut rng) {
            let nnfm_value = Cell::new(0.0f32);
            let loss_fn = |g: &mut Graph, image: Var| -> Result<Var> {
                let f = net.image_features(g, image, cfg.block_id)?;
                let c = g.shared_constant(content[i].clone());
                let terms = total_loss(g, f, &style_target, c, lambda)?;
                nnfm_value.set(g.value(terms.nnfm).item());
                Ok(terms.total)
            };
            let loss_ref: &ImageLoss<'_> = &loss_fn;
            let gg = deferred_backprop_step(&grid, &cameras[i], loss_ref, &tiling, step, bg)?;
            apply_color_step(&mut grid, &gg, &mut opt, lr_schedule(t, total_iters, cfg.lr_start, cfg.lr_end))?;
            nnfm_sum += nnfm_value.get() as f64;
            loss_sum += gg.loss as f64;
            t += 1;
        }
        epoch_nnfm.push((nnfm_sum / cameras.len() as f64) as f32);
        epoch_loss.push((loss_sum / cameras.len() as f64) as f32);
    }

    // (e)
    let renders: Vec<Image> = cameras.iter().map(|c| render_image(&grid, c, step, bg)).collect();
    let final_transform = solve_color_transform(
        &ColorStats::from_images(&renders)?,
        &ColorStats::from_images(std::slice::from_ref(style))?,
    )?;
    bake_color_transform(&mut grid, &final_transform);
    let background = transform_background(&final_transform, bg);

    Ok(Stylized {
        grid,
        background,
        pre_transform,
        final_transform,
        epoch_nnfm,
        epoch_loss,
    })
}

/// Render settings stored next to a grid checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub background: [f32; 3],
}

/// `scene.arfg` → `scene.arfg.json`.
pub fn settings_path(grid_path: &Path) -> PathBuf {
    let mut name = grid_path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

impl RenderSettings {
    pub fn save_for(&self, grid_path: &Path) -> Result<()> {
        write_json(&settings_path(grid_path), self)
    }

    /// Settings stored for `grid_path`, if any.
    pub fn load_for(grid_path: &Path) -> Result<Option<Self>> {
        let p = settings_path(grid_path);
        if p.exists() {
            read_json(&p).map(Some)
        } else {
            Ok(None)
        }
    }
}

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:04}.png")
}

/// One PNG per camera, `frame_0000.png`, ... in `out_dir`.
pub fn render_novel_path(
    grid: &VoxelGrid,
    path: &[Camera],
    out_dir: impl AsRef<Path>,
    bg: [f32; 3],
) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let step = grid.default_step();
    path.iter()
        .enumerate()
        .map(|(i, cam)| {
            let file = out_dir.join(frame_file_name(i));
            render_image(grid, cam, step, bg).save_png(&file)?;
            Ok(file)
        })
        .collect()
}

/// Deferred-versus-monolithic gradient comparison for NNFM + content loss.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_abs_diff: f32,
    /// Largest gradient magnitude, for scale.
    pub max_abs_grad: f32,
    pub loss_deferred: f32,
    pub loss_monolithic: f32,
    pub peak_nodes_deferred: usize,
    pub peak_nodes_monolithic: usize,
    pub patches: usize,
}

/// Compares deferred and monolithic gradients of
/// `nnfm(render, style) + λ·content(render, content)` for one camera.
#[allow(clippy::too_many_arguments)]
pub fn grad_check(
    grid: &VoxelGrid,
    cam: &Camera,
    net: &VggNetwork,
    style: &Image,
    content: &Image,
    block: usize,
    lambda: f32,
    patch_size: usize,
    bg: [f32; 3],
) -> Result<GradCheckReport> {
    let style_target = StyleTarget::new(FeatureBlock::from_image(net, &style.to_tensor(), block)?.data)?;
    let content_features = FeatureBlock::from_image(net, &content.to_tensor(), block)?.data;
    let loss_fn = |g: &mut Graph, image: Var| -> Result<Var> {
        let f = net.image_features(g, image, block)?;
        let c = g.shared_constant(content_features.clone());
        Ok(total_loss(g, f, &style_target, c, lambda)?.total)
    };
    let step = grid.default_step();
    let tiling = PatchTiling::new(cam.width, cam.height, patch_size)?;
    let deferred = deferred_backprop_step(grid, cam, &loss_fn, &tiling, step, bg)?;
    let mono = crate::deferred::monolithic_backprop_step(grid, cam, &loss_fn, step, bg)?;
    let mut max_abs_diff = 0.0f32;
    let mut max_abs_grad = 0.0f32;
    let pairs = [
        (deferred.color_logits(), mono.color_logits()),
        (deferred.density(), mono.density()),
    ];
    for (a, b) in pairs {
        match (a, b) {
            (Some(a), Some(b)) => {
                max_abs_diff = max_abs_diff.max(a.max_abs_diff(b));
                max_abs_grad = b.data().iter().fold(max_abs_grad, |m, v| m.max(v.abs()));
            }
            (None, None) => {}
            _ => return Err(Error::InvalidState("deferred and monolithic paths produced different leaves".into())),
        }
    }
    Ok(GradCheckReport {
        max_abs_diff,
        max_abs_grad,
        loss_deferred: deferred.loss,
        loss_monolithic: mono.loss,
        peak_nodes_deferred: deferred.peak_nodes,
        peak_nodes_monolithic: mono.peak_nodes,
        patches: tiling.rects().len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults() {
        let cfg = StyleConfig::default();
        assert_eq!(cfg.lambda(), 0.001);
        assert_eq!(cfg.epochs, 10);
        assert_eq!(cfg.block_id, 3);
        let c360 = StyleConfig {
            capture_kind: CaptureKind::Full360,
            ..cfg
        };
        assert_eq!(c360.lambda(), 0.005);
    }

    #[test]
    fn config_json_roundtrip_and_partial() {
        let cfg: StyleConfig = serde_json::from_str(r#"{"capture_kind": "360", "epochs": 3}"#).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.lambda(), 0.005);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<StyleConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn config_validation() {
        let bad = StyleConfig {
            lr_start: 0.001,
            ..StyleConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = StyleConfig {
            lambda: Some(-1.0),
            ..StyleConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = StyleConfig {
            block_id: 6,
            ..StyleConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn settings_path_appends_suffix() {
        assert_eq!(settings_path(Path::new("a/b.arfg")), PathBuf::from("a/b.arfg.json"));
    }
}
