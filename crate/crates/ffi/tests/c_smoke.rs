//! Compiles tests/c/smoke.c against include/arf.h and the shared library
//! and runs it. Skipped when no C compiler is on PATH.

use std::path::PathBuf;
use std::process::Command;

#[test]
fn c_program_links_and_runs() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler, skipping");
        return;
    }
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // `cargo test` leaves the cdylib in target/<profile>/deps next to this
    // binary; `cargo build` also copies it to target/<profile>.
    let deps = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    let has_lib = |d: &std::path::Path| ["libarf_ffi.so", "libarf_ffi.dylib"].iter().any(|f| d.join(f).exists());
    let lib_dir = [deps.clone(), deps.parent().unwrap().to_path_buf()]
        .into_iter()
        .find(|d| has_lib(d))
        .unwrap_or_else(|| panic!("shared library not found near {}", deps.display()));
    let out = tempfile::tempdir().unwrap();
    let exe = out.path().join("smoke");
    let status = Command::new(&cc)
        .args(["-Wall", "-Werror", "-I"])
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-L")
        .arg(&lib_dir)
        .args(["-larf_ffi", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let run = Command::new(&exe)
        .env("LD_LIBRARY_PATH", &lib_dir)
        .env("DYLD_LIBRARY_PATH", &lib_dir)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "{stdout}{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout.contains("center 0.200 0.400 0.600"), "{stdout}");
    assert!(stdout.contains("err: path is null"), "{stdout}");
}
