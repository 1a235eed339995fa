//! The generated header compiles and links from C.

use std::path::{Path, PathBuf};
use std::process::Command;

fn manifest_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

/// Directory holding the static library: two levels above the test binary.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(manifest_dir().join("include/interlace.h")).unwrap();
    for name in [
        "typedef struct InterlacePotential InterlacePotential;",
        "typedef struct InterlaceConfig InterlaceConfig;",
        "typedef struct InterlaceResult InterlaceResult;",
        "INTERLACE_STATUS_OK = 0",
        "interlace_last_error(void)",
        "interlace_run(",
        "interlace_result_free(",
        "interlace_string_free(",
    ] {
        assert!(header.contains(name), "missing `{name}`");
    }
}

#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler on PATH; skipping");
        return;
    };
    let lib = artifact_dir().join("libinterlace_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let out_dir = tempfile::tempdir().unwrap();
    let exe = out_dir.path().join("smoke");
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest_dir().join("include"))
        .arg(manifest_dir().join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}

fn which_cc() -> Result<String, ()> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match Command::new(&cc).arg("--version").output() {
        Ok(o) if o.status.success() => Ok(cc),
        _ => Err(()),
    }
}
