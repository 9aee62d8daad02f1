use std::collections::BTreeSet;
use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn crate_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn header() -> String {
    fs::read_to_string(crate_dir().join("include/abc.h")).expect("header generated by build.rs")
}

fn exported_functions() -> BTreeSet<String> {
    let src = fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    let mut names = BTreeSet::new();
    let mut exported = false;
    for line in src.lines() {
        let line = line.trim();
        if line == "#[no_mangle]" {
            exported = true;
        } else if exported && line.contains("extern \"C\" fn ") {
            let rest = line.split("fn ").nth(1).unwrap();
            names.insert(rest.split('(').next().unwrap().to_string());
            exported = false;
        }
    }
    names
}

fn c_compiler() -> Option<String> {
    let cc = env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc)
        .arg("--version")
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|_| cc)
}

#[test]
fn header_declares_every_export() {
    let h = header();
    let names = exported_functions();
    assert!(names.len() > 30, "found only {} exports", names.len());
    let missing: Vec<_> = names
        .iter()
        .filter(|n| ![" ", "*"].iter().any(|p| h.contains(&format!("{p}{n}("))))
        .collect();
    assert!(missing.is_empty(), "missing from header: {missing:?}");
}

#[test]
fn status_codes_are_stable() {
    let h = header();
    for (name, code) in [("OK", 0), ("INVALID_ARGUMENT", 1), ("DIVERGED", 6), ("NULL_POINTER", 12), ("PANIC", 13)] {
        assert!(h.contains(&format!("ABC_STATUS_{name} = {code},")), "ABC_STATUS_{name}");
    }
}

#[test]
fn header_compiles_as_c99() {
    let Some(cc) = c_compiler() else {
        eprintln!("skipped: no C compiler");
        return;
    };
    let out = Command::new(cc)
        .args(["-std=c99", "-fsyntax-only", "-Wall", "-Wextra", "-Werror", "-x", "c"])
        .arg(crate_dir().join("include/abc.h"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn static_lib() -> Option<PathBuf> {
    let target = env::var_os("CARGO_TARGET_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| crate_dir().join("../../target"));
    let lib = target.join("debug/libabc_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_and_runs() {
    let (Some(cc), Some(lib)) = (c_compiler(), static_lib()) else {
        eprintln!("skipped: no C compiler or static library");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let build = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("converged"));
}
