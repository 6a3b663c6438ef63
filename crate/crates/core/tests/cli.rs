use arf_core::cli::run_cli_captured;
use arf_core::field::VoxelGrid;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut argv = vec!["arf"];
    argv.extend_from_slice(args);
    run_cli_captured(argv)
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["no-such-command"]).0, 2);
    assert_eq!(run(&["stylize", "--data", "x"]).0, 2);
    assert_eq!(run(&["render", "--grid", "g", "--out", "o", "--size", "big"]).0, 2);
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("reconstruct"));
}

#[test]
fn runtime_errors_exit_with_one() {
    let (code, _, err) = run(&["render", "--grid", "/nonexistent/g.arfg", "--out", "/tmp/x"]);
    assert_eq!(code, 1);
    assert!(err.contains("error"));
}

#[test]
fn scene_reconstruct_render_and_stylize() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let d = data.to_str().unwrap();
    assert_eq!(run(&["make-scene", "--preset", "one-sphere", "--out", d, "--style-size", "32"]).0, 0);
    for f in ["cameras.json", "style.png", "view_0000.png", "ground_truth.arfg"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let (code, out, err) = run(&["reconstruct", "--data", d, "--resolution", "8", "--iters", "20"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("training PSNR"));
    assert!(data.join("scene.arfg").exists());

    let styl = dir.path().join("styl.arfg");
    let style = data.join("style.png");
    let (code, out, err) = run(&[
        "stylize", "--data", d, "--style", style.to_str().unwrap(), "--out", styl.to_str().unwrap(),
        "--epochs", "1", "--block", "2", "--patch", "16", "--capture-kind", "360",
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("epoch   1"));
    let g = VoxelGrid::load(&styl).unwrap();
    assert_eq!(g.density(), VoxelGrid::load(data.join("scene.arfg")).unwrap().density());

    let frames = dir.path().join("frames");
    let (code, _, err) = run(&["render", "--grid", styl.to_str().unwrap(), "--out", frames.to_str().unwrap(), "--frames", "2", "--size", "16"]);
    assert_eq!(code, 0, "{err}");
    assert!(frames.join("frame_0001.png").exists());

    let (code, _, err) = run(&["render", "--grid", styl.to_str().unwrap(), "--out", frames.to_str().unwrap(), "--data", d]);
    assert_eq!(code, 0, "{err}");
    assert!(frames.join("frame_0003.png").exists());
}

#[test]
fn color_transfer_and_features() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let d = data.to_str().unwrap();
    assert_eq!(run(&["make-scene", "--preset", "one-sphere", "--out", d]).0, 0);
    let out_dir = dir.path().join("ct");
    let v0 = data.join("view_0000.png");
    let v1 = data.join("view_0001.png");
    let (code, out, err) = run(&[
        "color-transfer", "--style", data.join("style.png").to_str().unwrap(), "--out", out_dir.to_str().unwrap(),
        v0.to_str().unwrap(), v1.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("A = "));
    assert!(out_dir.join("view_0001.png").exists());

    let weights = dir.path().join("w.bin");
    assert_eq!(run(&["make-weights", "--out", weights.to_str().unwrap(), "--seed", "4"]).0, 0);
    let (code, out, err) = run(&["features", "--image", v0.to_str().unwrap(), "--block", "2", "--weights", weights.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("block 2: 256×16×16"), "{out}");
}

#[test]
fn grad_check_reports_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(run(&["make-scene", "--preset", "one-sphere", "--out", data.to_str().unwrap()]).0, 0);
    let grid = data.join("ground_truth.arfg");
    let (code, out, err) = run(&["grad-check", "--grid", grid.to_str().unwrap(), "--size", "24", "--patch", "8"]);
    assert_eq!(code, 0, "{err}");
    let line = out.lines().find(|l| l.starts_with("max gradient deviation")).unwrap();
    let v: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(v <= 1e-4, "{out}");
    assert!(out.contains("patches: 9"));
}
