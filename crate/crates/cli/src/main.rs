use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use wrdyn::combinatorics::verify_identities;
use wrdyn::config::ExperimentConfig;
use wrdyn::estimators::{chentsov_sweep, Z_GATE};
use wrdyn::io::{fmt, log_line, write_manifest, write_traces, Csv};
use wrdyn::observables::PathMetric;
use wrdyn::orchestrator::{
    chentsov_csv, compare_dual_vs_mc, dual_run, emit_plots, gates_csv, hierarchy_run, load_traces, read_gates, run_experiment, trace_file, verify,
    write_metadata, write_verify, Experiment, Gate,
};

/// Two-type jump dynamics with cross-type repulsion: simulate, evolve
/// correlation functions, and verify. Worker count: WRDYN_WORKERS.
#[derive(Parser)]
#[command(name = "wrdyn", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Full experiment: traces, fields, the configured checks, plots, manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a batch of paths and write traces.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long = "t-end")]
        t_end: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gzip: bool,
    },
    /// Evolve the configured quasi-observable by the dual series.
    DualEvolve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evolve the correlation functions of the initial law.
    Hierarchy {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated times (default: [report] times).
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured checks on saved traces.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Run directory or trace file.
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact combinatorial identities.
    VerifyIdentities,
    /// Chentsov product-moment scaling sweep.
    Chentsov {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dual expectation against Monte Carlo on a horizon-fraction grid.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot-ready CSV for a run directory; fails if any recorded gate failed.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn print_gates(gates: &[Gate]) {
    for g in gates {
        println!("{} {:<12} {}  value={} se={} target={}", if g.pass { "PASS" } else { "FAIL" }, g.check, g.label, g.value, g.se, g.target);
    }
}

fn exit_for(gates: &[Gate]) -> ExitCode {
    print_gates(gates);
    if gates.iter().all(|g| g.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn experiment(path: &Path) -> Result<Experiment> {
    Experiment::from_file(path).with_context(|| format!("loading {}", path.display()))
}

fn traces_for(exp: &Experiment, given: Option<&Path>, t_end: f64, sigma: f64) -> Result<Vec<wrdyn::sim::EventTrace>> {
    match given {
        Some(p) => Ok(load_traces(p)?.1),
        None => Ok(exp.simulate(exp.cfg.run.paths, t_end, sigma, exp.cfg.run.seed)?),
    }
}

fn finish(out: &Path) -> Result<()> {
    write_manifest(out)?;
    log_line(out, "done")?;
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    Ok(match cli.cmd {
        Cmd::Run { config, out } => {
            let exp = experiment(&config)?;
            let s = run_experiment(&exp, &out)?;
            exit_for(&s.gates)
        }
        Cmd::Simulate { config, seed, paths, t_end, sigma, out, gzip } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            if let Some(p) = paths {
                cfg.run.paths = p;
            }
            if let Some(t) = t_end {
                cfg.dynamics.t_end = t;
            }
            if let Some(s) = sigma {
                cfg.dynamics.sigma = s;
            }
            cfg.run.gzip |= gzip;
            let exp = Experiment::new(cfg, config.parent())?;
            std::fs::create_dir_all(out.join("traces"))?;
            write_metadata(&exp, &out)?;
            let tr = exp.simulate_default()?;
            let file = trace_file(&out, exp.cfg.run.gzip);
            write_traces(&file, &exp.trace_header(&tr, exp.cfg.run.seed), &tr, exp.cfg.run.gzip)?;
            let events: usize = tr.iter().map(|t| t.events.len()).sum();
            let bad: u64 = tr.iter().map(|t| t.stats.simplicity_violations + t.stats.cell_violations + t.stats.hard_core_violations).sum();
            println!("{} paths, {events} events -> {}", tr.len(), file.display());
            finish(&out)?;
            let g = Gate { check: "structure".into(), label: "violations".into(), value: bad as f64, se: 0.0, target: 0.0, pass: bad == 0 };
            exit_for(&[g])
        }
        Cmd::DualEvolve { config, t, out } => {
            let exp = experiment(&config)?;
            std::fs::create_dir_all(out.join("fields"))?;
            write_metadata(&exp, &out)?;
            let (_, e) = dual_run(&exp, t, Some(&out.join("fields")))?;
            let mut c = Csv::new("dual", &["t", "value", "remainder", "rounding", "truncation", "substeps"]);
            if let Some(e) = &e {
                println!("t = {t}: <<k0, G_t>> = {} (remainder {}, truncation {})", e.value, e.remainder, e.truncation);
                c.push([fmt(t), fmt(e.value), fmt(e.remainder), fmt(e.rounding), fmt(e.truncation), e.report.steps.len().to_string()]);
            }
            c.write(&out.join("dual.csv"))?;
            finish(&out)?;
            ExitCode::SUCCESS
        }
        Cmd::Hierarchy { config, times, out } => {
            let exp = experiment(&config)?;
            let times = times.unwrap_or_else(|| exp.cfg.report.times.clone());
            std::fs::create_dir_all(out.join("fields"))?;
            std::fs::create_dir_all(out.join("reports"))?;
            write_metadata(&exp, &out)?;
            let (tab, prof, gates) = hierarchy_run(&exp, &times, Some(&out.join("fields")))?;
            tab.write(&out.join("reports").join("hierarchy.csv"))?;
            prof.write(&out.join("reports").join("radial_profile.csv"))?;
            gates_csv(&gates).write(&out.join("reports").join("gates.csv"))?;
            finish(&out)?;
            exit_for(&gates)
        }
        Cmd::Verify { config, traces, out } => {
            let exp = experiment(&config)?;
            let (_, tr) = load_traces(&traces)?;
            let v = verify(&exp, &tr)?;
            if let Some(out) = out {
                write_verify(&out.join("reports"), &v)?;
                emit_plots(&out)?;
            }
            exit_for(&v.gates)
        }
        Cmd::VerifyIdentities => {
            let t0 = std::time::Instant::now();
            let checks = verify_identities();
            let gates: Vec<Gate> = checks
                .iter()
                .map(|c| Gate { check: "identities".into(), label: format!("{} [{} cases]", c.name, c.cases), value: c.passed as u8 as f64, se: 0.0, target: 1.0, pass: c.passed })
                .collect();
            println!("elapsed {:.3} s", t0.elapsed().as_secs_f64());
            exit_for(&gates)
        }
        Cmd::Chentsov { config, traces, sigma, out } => {
            let exp = experiment(&config)?;
            let rep = &exp.cfg.report;
            let need = rep.origins.iter().cloned().fold(0.0, f64::max) + rep.spacings.iter().cloned().fold(0.0, f64::max);
            let tr = traces_for(&exp, traces.as_deref(), need, sigma.unwrap_or(exp.cfg.dynamics.sigma))?;
            let s = chentsov_sweep(&tr, &PathMetric::new(exp.domain()), &rep.spacings, &rep.origins)?;
            std::fs::create_dir_all(out.join("reports"))?;
            chentsov_csv(Some(&s)).write(&out.join("reports").join("chentsov.csv"))?;
            emit_plots(&out)?;
            finish(&out)?;
            let g = Gate { check: "chentsov".into(), label: "log-log slope".into(), value: s.slope, se: 0.0, target: 1.7, pass: s.slope >= 1.7 };
            exit_for(&[g])
        }
        Cmd::Compare { config, traces, out } => {
            let exp = experiment(&config)?;
            let h = exp.dual_horizon()?;
            let ts: Vec<f64> = exp.cfg.report.compare_fractions.iter().map(|f| f * h).collect();
            let t_end = ts.iter().cloned().fold(0.0, f64::max).max(1e-9);
            let tr = traces_for(&exp, traces.as_deref(), t_end, exp.cfg.dynamics.sigma)?;
            if tr.iter().any(|t| t.t_end < t_end) {
                bail!("traces end before the last comparison time {t_end}");
            }
            let (c, gates) = compare_dual_vs_mc(&exp, &tr, &ts)?;
            std::fs::create_dir_all(out.join("reports"))?;
            c.write(&out.join("reports").join("compare.csv"))?;
            finish(&out)?;
            println!("|z| gate: {Z_GATE}");
            exit_for(&gates)
        }
        Cmd::Report { dir } => {
            for p in emit_plots(&dir)? {
                println!("{}", p.display());
            }
            let gates_path = dir.join("reports").join("gates.csv");
            let gates = if gates_path.exists() { read_gates(&gates_path)? } else { Vec::new() };
            exit_for(&gates)
        }
    })
}
