//! The generated header declares the whole API and compiles as C.

use std::path::{Path, PathBuf};
use std::process::Command;

fn crate_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn header() -> String {
    std::fs::read_to_string(crate_dir().join("include/mcfg.h")).expect("header generated by build.rs")
}

#[test]
fn header_declares_api() {
    let h = header();
    for name in [
        "mcfg_last_error",
        "mcfg_version",
        "mcfg_schedule_new",
        "mcfg_schedule_free",
        "mcfg_schedule_alpha_bar",
        "mcfg_world_new",
        "mcfg_world_new_default",
        "mcfg_world_free",
        "mcfg_world_eps_conditional",
        "mcfg_world_eps_unconditional",
        "mcfg_perturb",
        "mcfg_evaluate",
        "mcfg_cfg_combine",
        "mcfg_motioncfg_combine",
        "mcfg_motioncfg_anchored",
        "mcfg_tweedie",
        "mcfg_effective_noise",
        "mcfg_omega_from_gamma",
        "mcfg_sweep_run_json",
        "mcfg_sweep_row",
        "mcfg_sweep_policy",
        "mcfg_sweep_write_csv",
        "mcfg_sweep_free",
        "typedef struct McfgSchedule McfgSchedule;",
        "typedef struct McfgWorld McfgWorld;",
        "typedef struct McfgSweep McfgSweep;",
        "MCFG_STATUS_OK = 0",
        "MCFG_STATUS_PANIC = 9",
        "MCFG_GROUP_MOTION = 1",
        "#ifndef MCFG_H",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

/// `target/<profile>` holding the freshly built static library.
fn profile_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let lib = profile_dir().join("libmcfg_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("run cc");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
