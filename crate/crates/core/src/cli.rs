//! Command-line front end of the `arf` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::color::match_colors;
use crate::dataset::{
    generate_synthetic_scene, synthetic_style_image, write_json, Dataset, SceneSpec, GRID_FILE,
};
use crate::field::{render_image, Aabb, Camera, VoxelGrid};
use crate::pipeline::{
    fit_photometric, grad_check, render_novel_path, stylize_radiance_field, CaptureKind, FitConfig,
    RenderSettings, StyleConfig,
};
use crate::raster::Image;
use crate::vgg::{FeatureBlock, VggNetwork};

/// Environment variable naming the default VGG weight file.
pub const WEIGHTS_ENV: &str = "ARF_WEIGHTS";

/// File name of the ground-truth grid written by `make-scene`.
pub const GROUND_TRUTH_FILE: &str = "ground_truth.arfg";

#[derive(Debug, Parser)]
#[command(name = "arf", version, about = "Artistic radiance fields on voxel grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset: cameras.json, view PNGs, style.png and the ground-truth grid.
    MakeScene(MakeSceneArgs),
    /// Fit a voxel grid to the views of a dataset.
    Reconstruct(ReconstructArgs),
    /// Stylize a reconstructed grid with a style image.
    Stylize(StylizeArgs),
    /// Render a grid along an orbit or the cameras of a dataset.
    Render(RenderArgs),
    /// Recolor images to the color statistics of a style image.
    ColorTransfer(ColorTransferArgs),
    /// Print statistics of a VGG feature block of an image.
    Features(FeaturesArgs),
    /// Compare deferred and monolithic gradients on one view.
    GradCheck(GradCheckArgs),
    /// Write a seeded random VGG weight file.
    MakeWeights(MakeWeightsArgs),
}

#[derive(Debug, Args)]
struct WeightsArg {
    /// VGG weight file; defaults to $ARF_WEIGHTS, then to seeded random weights.
    #[arg(long)]
    weights: Option<PathBuf>,
}

impl WeightsArg {
    fn load(&self, err: &mut dyn Write) -> anyhow::Result<VggNetwork> {
        let path = self
            .weights
            .clone()
            .or_else(|| std::env::var_os(WEIGHTS_ENV).map(PathBuf::from));
        match path {
            Some(p) => VggNetwork::load(&p).with_context(|| format!("loading weights {}", p.display())),
            None => {
                writeln!(err, "note: no weight file given, using seeded random VGG weights (seed 0)")?;
                Ok(VggNetwork::seeded(0))
            }
        }
    }
}

fn parse_rgb(s: &str) -> Result<[f32; 3], String> {
    let parts: Vec<f32> = s
        .split(',')
        .map(|p| p.trim().parse::<f32>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [r, g, b] => Ok([r, g, b]),
        _ => Err(format!("expected r,g,b, got {s:?}")),
    }
}

#[derive(Debug, Args)]
struct MakeSceneArgs {
    #[arg(long, default_value = "two-spheres")]
    preset: String,
    #[arg(long)]
    out: PathBuf,
    /// Seed of the synthetic style image.
    #[arg(long, default_value_t = 0)]
    style_seed: u64,
    /// Side of the square style image.
    #[arg(long, default_value_t = 64)]
    style_size: usize,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint; defaults to <data>/scene.arfg.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    resolution: usize,
    /// Half side of the cubic scene box.
    #[arg(long, default_value_t = 1.0)]
    extent: f64,
    #[arg(long, default_value_t = FitConfig::default().iters)]
    iters: usize,
    #[arg(long, default_value_t = FitConfig::default().lr)]
    lr: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_rgb, default_value = "1,1,1")]
    bg: [f32; 3],
}

#[derive(Debug, Args)]
struct StylizeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    style: PathBuf,
    /// Input grid; defaults to <data>/scene.arfg.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// JSON file with StyleConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f32>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    block: Option<usize>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    capture_kind: Option<CaptureKind>,
    #[arg(long, value_parser = parse_rgb)]
    bg: Option<[f32; 3]>,
    #[command(flatten)]
    weights: WeightsArg,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Render the cameras of this dataset instead of an orbit.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 3.0)]
    radius: f32,
    #[arg(long, default_value_t = 0.7)]
    elevation: f32,
    #[arg(long, default_value_t = 0.75)]
    fov: f32,
    /// Background; defaults to the value stored next to the grid, then white.
    #[arg(long, value_parser = parse_rgb)]
    bg: Option<[f32; 3]>,
}

#[derive(Debug, Args)]
struct ColorTransferArgs {
    #[arg(long)]
    style: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value_t = 3)]
    block: usize,
    #[command(flatten)]
    weights: WeightsArg,
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long, default_value_t = 48)]
    size: usize,
    #[arg(long, default_value_t = 16)]
    patch: usize,
    #[arg(long, default_value_t = 3)]
    block: usize,
    #[arg(long, default_value_t = 0.001)]
    lambda: f32,
    /// Style image; defaults to the synthetic style image.
    #[arg(long)]
    style: Option<PathBuf>,
    #[arg(long, value_parser = parse_rgb, default_value = "1,1,1")]
    bg: [f32; 3],
    #[command(flatten)]
    weights: WeightsArg,
}

#[derive(Debug, Args)]
struct MakeWeightsArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 1 on failure, 2 on usage errors.
pub fn run_cli<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    match cmd {
        Command::MakeScene(a) => make_scene(a, out),
        Command::Reconstruct(a) => reconstruct(a, out),
        Command::Stylize(a) => stylize(a, out, err),
        Command::Render(a) => render(a, out),
        Command::ColorTransfer(a) => color_transfer(a, out),
        Command::Features(a) => features(a, out, err),
        Command::GradCheck(a) => grad_check_cmd(a, out, err),
        Command::MakeWeights(a) => {
            VggNetwork::seeded(a.seed).save(&a.out)?;
            writeln!(out, "wrote {}", a.out.display())?;
            Ok(())
        }
    }
}

fn make_scene(a: MakeSceneArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let spec = SceneSpec::preset(&a.preset)?;
    let (grid, mut ds) = generate_synthetic_scene(&spec)?;
    ds.style = Some(synthetic_style_image(a.style_size, a.style_size, a.style_seed));
    ds.save(&a.out)?;
    grid.save(a.out.join(GROUND_TRUTH_FILE))?;
    write_json(&a.out.join("scene_spec.json"), &spec)?;
    writeln!(
        out,
        "wrote {} views, style.png and {} to {}",
        ds.views.len(),
        GROUND_TRUTH_FILE,
        a.out.display()
    )?;
    Ok(())
}

fn reconstruct(a: ReconstructArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let ds = Dataset::load(&a.data)?;
    if a.resolution == 0 {
        bail!("--resolution must be positive");
    }
    let mut grid = VoxelGrid::new([a.resolution; 3], Aabb::cube(a.extent), 0.5, [0.5; 3])?;
    let cfg = FitConfig {
        iters: a.iters,
        lr: a.lr,
        seed: a.seed,
        background: a.bg,
        ..FitConfig::default()
    };
    let losses = fit_photometric(&mut grid, &ds.views, &cfg)?;
    let path = a.out.unwrap_or_else(|| a.data.join(GRID_FILE));
    grid.save(&path)?;
    RenderSettings { background: a.bg }.save_for(&path)?;
    let step = grid.default_step();
    let psnr: f64 = ds
        .views
        .iter()
        .map(|v| render_image(&grid, &v.camera, step, a.bg).psnr(&v.image))
        .sum::<f64>()
        / ds.views.len() as f64;
    let tail = losses.len().saturating_sub(50);
    let recent = losses[tail..].iter().sum::<f32>() / (losses.len() - tail).max(1) as f32;
    writeln!(out, "iterations: {}", losses.len())?;
    writeln!(out, "recent loss: {recent:.6}")?;
    writeln!(out, "training PSNR: {psnr:.2} dB")?;
    writeln!(out, "wrote {}", path.display())?;
    Ok(())
}

fn stylize(a: StylizeArgs, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    let mut cfg = match &a.config {
        Some(p) => StyleConfig::load(p)?,
        None => StyleConfig::default(),
    };
    if let Some(v) = a.lambda {
        cfg.lambda = Some(v);
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.block {
        cfg.block_id = v;
    }
    if let Some(v) = a.patch {
        cfg.patch_size = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.capture_kind {
        cfg.capture_kind = v;
    }
    let mut ds = Dataset::load(&a.data)?;
    let grid_path = a
        .grid
        .clone()
        .or_else(|| ds.grid_path.clone())
        .context("no grid: pass --grid or run `arf reconstruct` first")?;
    cfg.background = match a.bg {
        Some(bg) => bg,
        None => RenderSettings::load_for(&grid_path)?.map_or(cfg.background, |s| s.background),
    };
    ds.style = Some(Image::load_png(&a.style)?);
    let grid = VoxelGrid::load(&grid_path)?;
    let net = a.weights.load(err)?;
    let result = stylize_radiance_field(&grid, &ds, &net, &cfg)?;
    result.grid.save(&a.out)?;
    RenderSettings {
        background: result.background,
    }
    .save_for(&a.out)?;
    for (i, v) in result.epoch_nnfm.iter().enumerate() {
        writeln!(out, "epoch {:>3}: nnfm {v:.6}  total {:.6}", i + 1, result.epoch_loss[i])?;
    }
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

fn render(a: RenderArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let grid = VoxelGrid::load(&a.grid)?;
    let bg = match a.bg {
        Some(bg) => bg,
        None => RenderSettings::load_for(&a.grid)?.map_or([1.0; 3], |s| s.background),
    };
    let cameras: Vec<Camera> = match &a.data {
        Some(dir) => Dataset::load(dir)?.cameras(),
        None => Camera::orbit(a.frames, a.radius, a.elevation, a.size, a.size, a.fov, 0.0)?,
    };
    let files = render_novel_path(&grid, &cameras, &a.out, bg)?;
    writeln!(out, "wrote {} frames to {}", files.len(), a.out.display())?;
    Ok(())
}

fn color_transfer(a: ColorTransferArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let style = Image::load_png(&a.style)?;
    let images = a
        .images
        .iter()
        .map(Image::load_png)
        .collect::<crate::Result<Vec<_>>>()?;
    let (recolored, t) = match_colors(&images, &style)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (src, img) in a.images.iter().zip(&recolored) {
        let name = src.file_name().context("input path has no file name")?;
        img.save_png(a.out.join(name))?;
    }
    writeln!(out, "A = {:?}", t.a)?;
    writeln!(out, "b = {:?}", t.b)?;
    writeln!(out, "wrote {} images to {}", recolored.len(), a.out.display())?;
    Ok(())
}

fn features(a: FeaturesArgs, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    let net = a.weights.load(err)?;
    let image = Image::load_png(&a.image)?;
    let f = FeatureBlock::from_image(&net, &image.to_tensor(), a.block)?;
    let data = f.data.data();
    let n = data.len() as f64;
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let zeros = data.iter().filter(|&&v| v == 0.0).count() as f64 / n;
    let max = data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    writeln!(out, "block {}: {}×{}×{}", a.block, f.channels(), f.height(), f.width())?;
    writeln!(out, "mean {mean:.6}  std {:.6}  max {max:.6}  zero fraction {zeros:.4}", var.sqrt())?;
    Ok(())
}

fn grad_check_cmd(a: GradCheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    let grid = VoxelGrid::load(&a.grid)?;
    let net = a.weights.load(err)?;
    let style = match &a.style {
        Some(p) => Image::load_png(p)?,
        None => synthetic_style_image(a.size, a.size, 0),
    };
    let cams = Camera::orbit(2, 3.0, 0.7, a.size, a.size, 0.75, 0.3)?;
    let step = grid.default_step();
    let content = render_image(&grid, &cams[1], step, a.bg);
    let report = grad_check(&grid, &cams[0], &net, &style, &content, a.block, a.lambda, a.patch, a.bg)?;
    writeln!(out, "patches: {}", report.patches)?;
    writeln!(out, "loss: deferred {:.8} monolithic {:.8}", report.loss_deferred, report.loss_monolithic)?;
    writeln!(out, "max |grad|: {:.6e}", report.max_abs_grad)?;
    writeln!(out, "max gradient deviation: {:.6e}", report.max_abs_diff)?;
    writeln!(
        out,
        "peak live graph nodes: deferred {} monolithic {}",
        report.peak_nodes_deferred, report.peak_nodes_monolithic
    )?;
    Ok(())
}

/// Convenience for tests: runs the CLI and captures both streams.
pub fn run_cli_captured<I, T>(argv: I) -> (i32, String, String)
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_cli(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8_lossy(&out).into_owned(),
        String::from_utf8_lossy(&err).into_owned(),
    )
}
