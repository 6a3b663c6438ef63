//! Synthetic scenes and the on-disk dataset layout.
//!
//! A dataset directory holds `cameras.json` (an array of cameras),
//! `view_0000.png`, `view_0001.png`, ..., and optionally `style.png` and a
//! grid checkpoint `scene.arfg`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{render_image, Aabb, Camera, VoxelGrid};
use crate::raster::Image;

pub const CAMERAS_FILE: &str = "cameras.json";
pub const STYLE_FILE: &str = "style.png";
pub const GRID_FILE: &str = "scene.arfg";

pub fn view_file_name(i: usize) -> String {
    format!("view_{i:04}.png")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Shape {
    Sphere { radius: f32 },
    Box { half_extent: [f32; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub center: [f32; 3],
    pub albedo: [f32; 3],
    pub sigma: f32,
}

impl Primitive {
    fn validate(&self) -> Result<()> {
        let ok = match self.shape {
            Shape::Sphere { radius } => radius > 0.0,
            Shape::Box { half_extent } => half_extent.iter().all(|&h| h > 0.0),
        };
        if !ok {
            return Err(Error::invalid(format!("degenerate primitive {:?}", self.shape)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid(format!("primitive density {} must be ≥ 0", self.sigma)));
        }
        if self.albedo.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::invalid(format!("albedo {:?} outside [0, 1]", self.albedo)));
        }
        Ok(())
    }

    /// Signed distance (exact for spheres, a lower bound for boxes).
    pub fn distance(&self, p: [f32; 3]) -> f32 {
        let d = [0, 1, 2].map(|a| p[a] - self.center[a]);
        match self.shape {
            Shape::Sphere { radius } => d.iter().map(|v| v * v).sum::<f32>().sqrt() - radius,
            Shape::Box { half_extent } => (0..3)
                .map(|a| d[a].abs() - half_extent[a])
                .fold(f32::NEG_INFINITY, f32::max),
        }
    }

    pub fn contains(&self, p: [f32; 3]) -> bool {
        self.distance(p) <= 0.0
    }
}

/// Orbit of cameras around the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitSpec {
    pub count: usize,
    pub radius: f32,
    pub elevation: f32,
    pub width: usize,
    pub height: usize,
    pub fov_y: f32,
    /// Angle of the first camera, radians.
    pub phase: f32,
}

impl OrbitSpec {
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        Camera::orbit(
            self.count,
            self.radius,
            self.elevation,
            self.width,
            self.height,
            self.fov_y,
            self.phase,
        )
    }

    /// Same ring, shifted by half the camera spacing.
    pub fn interleaved(&self) -> OrbitSpec {
        OrbitSpec {
            phase: self.phase + std::f32::consts::PI / self.count.max(1) as f32,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub dims: [usize; 3],
    /// Half side of the cubic scene box centered at the origin.
    pub half_extent: f64,
    pub orbit: OrbitSpec,
    pub background: [f32; 3],
}

impl SceneSpec {
    /// Two disjoint spheres at different heights, 8 views at 64×64 and a
    /// 32³ grid.
    pub fn two_spheres() -> Self {
        SceneSpec {
            primitives: vec![
                Primitive {
                    shape: Shape::Sphere { radius: 0.5 },
                    center: [-0.42, -0.3, -0.2],
                    albedo: [0.85, 0.3, 0.2],
                    sigma: 80.0,
                },
                Primitive {
                    shape: Shape::Sphere { radius: 0.45 },
                    center: [0.42, 0.32, 0.22],
                    albedo: [0.2, 0.45, 0.85],
                    sigma: 80.0,
                },
            ],
            dims: [32, 32, 32],
            half_extent: 1.0,
            orbit: OrbitSpec {
                count: 8,
                radius: 3.0,
                elevation: 0.7,
                width: 64,
                height: 64,
                fov_y: 0.75,
                phase: 0.0,
            },
            background: [1.0; 3],
        }
    }

    /// A single sphere in a smaller 16³ grid, for quick runs.
    pub fn one_sphere() -> Self {
        SceneSpec {
            primitives: vec![Primitive {
                shape: Shape::Sphere { radius: 0.5 },
                center: [0.0; 3],
                albedo: [0.9, 0.6, 0.1],
                sigma: 60.0,
            }],
            dims: [16, 16, 16],
            orbit: OrbitSpec {
                count: 4,
                width: 32,
                height: 32,
                ..SceneSpec::two_spheres().orbit
            },
            ..SceneSpec::two_spheres()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "two-spheres" => Ok(SceneSpec::two_spheres()),
            "one-sphere" => Ok(SceneSpec::one_sphere()),
            other => Err(Error::invalid(format!(
                "unknown preset {other:?} (expected two-spheres or one-sphere)"
            ))),
        }
    }
}

/// Posed training view.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub views: Vec<View>,
    pub style: Option<Image>,
    pub grid_path: Option<PathBuf>,
}

impl Dataset {
    pub fn new(views: Vec<View>, style: Option<Image>) -> Result<Self> {
        let ds = Dataset {
            views,
            style,
            grid_path: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.views.first() else {
            return Err(Error::invalid("dataset has no views"));
        };
        let (w, h) = (first.camera.width, first.camera.height);
        for (i, v) in self.views.iter().enumerate() {
            if v.camera.width != w || v.camera.height != h {
                return Err(Error::invalid(format!(
                    "view {i} is {}×{}, expected {w}×{h}",
                    v.camera.width, v.camera.height
                )));
            }
            if v.image.width() != w || v.image.height() != h {
                return Err(Error::invalid(format!(
                    "image {i} is {}×{} but its camera is {w}×{h}",
                    v.image.width(),
                    v.image.height()
                )));
            }
        }
        Ok(())
    }

    pub fn cameras(&self) -> Vec<Camera> {
        self.views.iter().map(|v| v.camera).collect()
    }

    pub fn images(&self) -> Vec<Image> {
        self.views.iter().map(|v| v.image.clone()).collect()
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let cameras: Vec<Camera> = read_json(&dir.join(CAMERAS_FILE))?;
        let mut views = Vec::with_capacity(cameras.len());
        for (i, camera) in cameras.into_iter().enumerate() {
            camera.validate()?;
            let image = Image::load_png(dir.join(view_file_name(i)))?;
            views.push(View { camera, image });
        }
        let style_path = dir.join(STYLE_FILE);
        let style = if style_path.exists() {
            Some(Image::load_png(&style_path)?)
        } else {
            None
        };
        let grid_path = Some(dir.join(GRID_FILE)).filter(|p| p.exists());
        let ds = Dataset {
            views,
            style,
            grid_path,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join(CAMERAS_FILE), &self.cameras())?;
        for (i, v) in self.views.iter().enumerate() {
            v.image.save_png(dir.join(view_file_name(i)))?;
        }
        if let Some(style) = &self.style {
            style.save_png(dir.join(STYLE_FILE))?;
        }
        Ok(())
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Ground-truth grid: voxels whose centers fall inside a primitive take its
/// density (later primitives win), all others are empty. Every voxel takes
/// the albedo of the primitive it is inside or closest to, so colors do not
/// bleed across surfaces under interpolation.
pub fn voxelize(spec: &SceneSpec) -> Result<VoxelGrid> {
    if spec.primitives.is_empty() {
        return Err(Error::invalid("scene needs at least one primitive"));
    }
    for p in &spec.primitives {
        p.validate()?;
    }
    let mut grid = VoxelGrid::new(spec.dims, Aabb::cube(spec.half_extent), 0.0, [0.5; 3])?;
    let [nx, ny, nz] = spec.dims;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let c = grid.voxel_center(x, y, z);
                let i = grid.index(x, y, z);
                if let Some(p) = spec.primitives.iter().rev().find(|p| p.contains(c)) {
                    grid.set_voxel(i, p.sigma, p.albedo)?;
                } else {
                    let nearest = spec
                        .primitives
                        .iter()
                        .min_by(|a, b| a.distance(c).total_cmp(&b.distance(c)))
                        .expect("non-empty");
                    grid.set_voxel(i, 0.0, nearest.albedo)?;
                }
            }
        }
    }
    Ok(grid)
}

/// Voxelizes the primitives and renders one training view per orbit camera.
pub fn generate_synthetic_scene(spec: &SceneSpec) -> Result<(VoxelGrid, Dataset)> {
    if spec.orbit.count == 0 {
        return Err(Error::invalid("scene needs at least one camera"));
    }
    let grid = voxelize(spec)?;
    let step = grid.default_step();
    let views = spec
        .orbit
        .cameras()?
        .into_iter()
        .map(|camera| View {
            image: render_image(&grid, &camera, step, spec.background),
            camera,
        })
        .collect();
    Ok((grid, Dataset::new(views, None)?))
}

/// High-contrast style image: thin diagonal stripes alternating between
/// near-black and saturated color. The colored stripes cycle through three
/// hues on a coarse checkerboard and brighten from left to right, so the
/// color covariance has full rank. The hues are drawn from `seed`.
pub fn synthetic_style_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h0: f32 = rng.random_range(0.0..1.0);
    let palette = [0.0, 0.2, 0.5].map(|d| hue_to_rgb(h0 + d + rng.random_range(0.0..0.1)));
    let period = (width.max(height) / 16).max(1);
    let mut img = Image::filled(width, height, [0.0; 3]);
    for y in 0..height {
        for x in 0..width {
            let c = if ((x + y) / period).is_multiple_of(2) {
                [0.05; 3]
            } else {
                let gain = 0.5 + 0.5 * x as f32 / width as f32;
                palette[(x / (2 * period) + y / (2 * period)) % 3].map(|v| v * gain)
            };
            img.set_pixel(x, y, c);
        }
    }
    img
}

/// Fully saturated color of hue `h` (in turns).
fn hue_to_rgb(h: f32) -> [f32; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    match h as u32 {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}
