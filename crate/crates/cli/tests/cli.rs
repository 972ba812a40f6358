use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn wrdyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wrdyn")).args(args).output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let p = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&p);
    std::fs::create_dir_all(&p).unwrap();
    p
}

fn free_config(dir: &Path) -> PathBuf {
    let p = dir.join("free.ini");
    std::fs::write(
        &p,
        "[domain]\nd = 1\nL = 10\n\n[kernel.a0]\nfamily = top-hat\nmass = 1\nradius = 1\n\n[initial]\nlaw = poisson\nkappa0 = 0.5\nkappa1 = 0.5\n\n\
         [dynamics]\nt_end = 0.5\n\n[hierarchy]\nmax_order = 2\ngrid = 16\n\n[run]\npaths = 100\nseed = 3\n\n[report]\nchecks = structure, moments, type\ntimes = 0, 0.5\n",
    )
    .unwrap();
    p
}

#[test]
fn identities_exit_zero() {
    let o = wrdyn(&["verify-identities"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().any(|l| l.starts_with("PASS")));
    assert!(!text.contains("FAIL"));
}

#[test]
fn simulate_then_verify() {
    let d = scratch("cli_sim");
    let cfg = free_config(&d);
    let out = d.join("run");
    let o = wrdyn(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--gzip"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("traces").join("paths.jsonl.gz").exists());
    assert!(out.join("manifest.sha256").exists());

    let o = wrdyn(&["verify", "--config", cfg.to_str().unwrap(), "--traces", out.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(out.join("reports").join("gates.csv").exists());

    let o = wrdyn(&["report", "--dir", out.to_str().unwrap()]);
    assert!(o.status.success());
}

#[test]
fn bad_input_exits_two() {
    let d = scratch("cli_bad");
    let bad = d.join("bad.ini");
    std::fs::write(&bad, "[domain]\nd = 7\n").unwrap();
    let o = wrdyn(&["run", "--config", bad.to_str().unwrap(), "--out", d.join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));

    let o = wrdyn(&["report", "--dir", d.join("nowhere").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
