use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use wrdyn::config::ExperimentConfig;
use wrdyn::io::verify_manifest;
use wrdyn::orchestrator::{emit_plots, load_traces, run_experiment, verify, Experiment};

const SMALL: &str = "
[domain]
d = 1
L = 10

[kernel.a0]
family = gaussian
mass = 1
width = 1

[kernel.phi0]
family = gaussian
height = 0.26
width = 0.5

[initial]
law = poisson
kappa0 = 0.5
kappa1 = 0.5

[dynamics]
sigma = 0.5
t_end = 0.5

[hierarchy]
max_order = 2
grid = 16

[run]
paths = 200
seed = 11

[report]
checks = structure, moments, type, identities
times = 0, 0.5
";

fn scratch(name: &str) -> PathBuf {
    let p = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&p);
    std::fs::create_dir_all(&p).unwrap();
    p
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run.log" {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn same_seed_gives_identical_run_directories() {
    let exp = Experiment::new(ExperimentConfig::parse(SMALL).unwrap(), None).unwrap();
    let (a, b) = (scratch("run_a"), scratch("run_b"));
    let sa = run_experiment(&exp, &a).unwrap();
    run_experiment(&exp, &b).unwrap();
    assert!(sa.all_pass(), "{:?}", sa.gates);
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (k, v) in &fa {
        assert!(v == &fb[k], "{k} differs");
    }
    assert!(verify_manifest(&a).unwrap().is_empty());

    // saved traces re-verify to the same gates
    let (_, tr) = load_traces(&a).unwrap();
    assert_eq!(tr.len(), 200);
    let v = verify(&exp, &tr).unwrap();
    assert!(v.gates.iter().all(|g| g.pass));

    std::fs::write(a.join("config.ini"), "tampered\n").unwrap();
    assert_eq!(verify_manifest(&a).unwrap(), vec!["config.ini".to_string()]);
}

#[test]
fn plots_on_an_empty_directory_are_headers_only() {
    let d = scratch("empty_run");
    let written = emit_plots(&d).unwrap();
    assert!(!written.is_empty());
    for p in written {
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1, "{}", p.display());
    }
    assert!(emit_plots(&d.join("missing")).is_err());
}
