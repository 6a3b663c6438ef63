use arf_core::color::{ColorTransform, IDENTITY};
use arf_core::dataset::{generate_synthetic_scene, synthetic_style_image, Dataset, SceneSpec};
use arf_core::field::{render_image, sigmoid, Aabb, VoxelGrid};
use arf_core::pipeline::{
    bake_color_transform, fit_photometric, frame_file_name, render_novel_path, settings_path,
    stylize_radiance_field, CaptureKind, FitConfig, RenderSettings, StyleConfig,
};
use arf_core::vgg::VggNetwork;

fn small_scene() -> (VoxelGrid, Dataset) {
    let (gt, mut ds) = generate_synthetic_scene(&SceneSpec::one_sphere()).unwrap();
    ds.style = Some(synthetic_style_image(32, 32, 1));
    (gt, ds)
}

fn quick_style() -> StyleConfig {
    StyleConfig {
        epochs: 2,
        pre_epochs: 1,
        patch_size: 16,
        block_id: 2,
        ..StyleConfig::default()
    }
}

#[test]
fn photometric_fit_improves_psnr() {
    let (gt, ds) = small_scene();
    let mut grid = VoxelGrid::new(gt.dims(), *gt.aabb(), 0.5, [0.5; 3]).unwrap();
    let psnr = |g: &VoxelGrid| -> f64 {
        ds.views.iter().map(|v| render_image(g, &v.camera, g.default_step(), [1.0; 3]).psnr(&v.image)).sum::<f64>()
            / ds.views.len() as f64
    };
    let before = psnr(&grid);
    let cfg = FitConfig { iters: 150, patch_size: 16, ..FitConfig::default() };
    let losses = fit_photometric(&mut grid, &ds.views, &cfg).unwrap();
    assert_eq!(losses.len(), 150);
    let after = psnr(&grid);
    assert!(after > before + 5.0, "{before} → {after}");
    assert!(grid.density().iter().all(|&d| d >= 0.0));
}

#[test]
fn fit_rejects_empty_views() {
    let mut grid = VoxelGrid::new([2, 2, 2], Aabb::cube(1.0), 0.0, [0.5; 3]).unwrap();
    assert!(fit_photometric(&mut grid, &[], &FitConfig::default()).is_err());
}

#[test]
fn stylization_keeps_density_and_is_reproducible() {
    let (gt, ds) = small_scene();
    let net = VggNetwork::seeded(0);
    let cfg = quick_style();
    let a = stylize_radiance_field(&gt, &ds, &net, &cfg).unwrap();
    let b = stylize_radiance_field(&gt, &ds, &net, &cfg).unwrap();
    assert_eq!(a.grid.density(), gt.density());
    assert!(a.grid.is_density_frozen());
    assert_eq!(a.grid.to_bytes(), b.grid.to_bytes());
    assert_eq!(a.background, b.background);
    assert_eq!(a.epoch_nnfm.len(), 2);
    assert_eq!(a.epoch_loss.len(), 2);
    assert!(a.grid.color_logits() != gt.color_logits());
    assert!(!gt.is_density_frozen());
}

#[test]
fn stylization_requires_style_image() {
    let (gt, mut ds) = small_scene();
    ds.style = None;
    assert!(stylize_radiance_field(&gt, &ds, &VggNetwork::seeded(0), &quick_style()).is_err());
}

#[test]
fn stylization_seed_changes_result() {
    let (gt, ds) = small_scene();
    let net = VggNetwork::seeded(0);
    let a = stylize_radiance_field(&gt, &ds, &net, &quick_style()).unwrap();
    let b = stylize_radiance_field(&gt, &ds, &net, &StyleConfig { seed: 9, ..quick_style() }).unwrap();
    assert_ne!(a.grid.to_bytes(), b.grid.to_bytes());
}

#[test]
fn baking_identity_preserves_colors() {
    let (gt, _) = small_scene();
    let mut g = gt.clone();
    bake_color_transform(&mut g, &ColorTransform::identity());
    for (a, b) in g.color_logits().iter().zip(gt.color_logits()) {
        assert!((sigmoid(*a) - sigmoid(*b)).abs() < 1e-4);
    }
    let invert = ColorTransform {
        a: IDENTITY.map(|r| r.map(|v| -v)),
        b: [1.0; 3],
    };
    bake_color_transform(&mut g, &invert);
    for i in 0..g.voxel_count() {
        let (c, o) = (g.voxel_color(i), gt.voxel_color(i));
        for k in 0..3 {
            assert!((c[k] - (1.0 - o[k]).clamp(1e-4, 1.0 - 1e-4)).abs() < 1e-3);
        }
    }
}

#[test]
fn capture_kind_defaults() {
    assert_eq!(StyleConfig::default().lambda(), 0.001);
    let cfg = StyleConfig { capture_kind: CaptureKind::Full360, ..StyleConfig::default() };
    assert_eq!(cfg.lambda(), 0.005);
    assert_eq!(StyleConfig { lambda: Some(0.3), ..cfg }.lambda(), 0.3);
    assert_eq!("360".parse::<CaptureKind>().unwrap(), CaptureKind::Full360);
    assert!("sideways".parse::<CaptureKind>().is_err());
}

#[test]
fn config_and_settings_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = StyleConfig { lambda: Some(0.02), epochs: 3, ..StyleConfig::default() };
    let p = dir.path().join("style.json");
    cfg.save(&p).unwrap();
    assert_eq!(StyleConfig::load(&p).unwrap(), cfg);

    let grid_path = dir.path().join("g.arfg");
    assert_eq!(RenderSettings::load_for(&grid_path).unwrap(), None);
    let s = RenderSettings { background: [0.1, -0.2, 1.3] };
    s.save_for(&grid_path).unwrap();
    assert!(settings_path(&grid_path).exists());
    assert_eq!(RenderSettings::load_for(&grid_path).unwrap(), Some(s));
}

#[test]
fn invalid_config_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"lambda": -1.0}"#).unwrap();
    assert!(StyleConfig::load(&p).is_err());
    std::fs::write(&p, r#"{"block_id": 9}"#).unwrap();
    assert!(StyleConfig::load(&p).is_err());
}

#[test]
fn novel_path_writes_deterministic_frames() {
    let (gt, ds) = small_scene();
    let dir = tempfile::tempdir().unwrap();
    let cams = ds.cameras();
    let a = render_novel_path(&gt, &cams, dir.path().join("a"), [1.0; 3]).unwrap();
    let b = render_novel_path(&gt, &cams, dir.path().join("b"), [1.0; 3]).unwrap();
    assert_eq!(a.len(), cams.len());
    assert!(a[0].ends_with(frame_file_name(0)));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
}

#[test]
fn dataset_round_trip() {
    let (_, ds) = small_scene();
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(back.views.len(), ds.views.len());
    for (a, b) in back.views.iter().zip(&ds.views) {
        assert_eq!(a.camera, b.camera);
        assert!(a.image.mean_abs_diff(&b.image) <= 0.5 / 255.0 + 1e-6);
    }
    assert!(back.style.is_some());
}
