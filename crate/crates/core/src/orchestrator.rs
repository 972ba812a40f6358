//! Experiment execution: simulation, hierarchy and dual runs, the
//! verification battery, and the run directory layout
//!
//! ```text
//! <out>/config.ini        resolved configuration
//! <out>/constants.json    kernel constants and version stamp
//! <out>/traces/           paths.jsonl[.gz]
//! <out>/fields/           *.bin + *.hdr
//! <out>/reports/          CSV tables, gates.csv
//! <out>/plots/            plot-ready CSV
//! <out>/manifest.sha256   content hashes
//! <out>/run.log           timestamps (not hashed)
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;

use crate::combinatorics::verify_identities;
use crate::config::{Check, ExperimentConfig, InitialSpec, ObservableSpec};
use crate::error::{Error, Result};
use crate::estimators::{
    chentsov_sweep, empirical_chi, exp_moment_check, martingale_residual, moment_bound_check, poisson_chi, sigma_convergence_sweep,
    sigma_monotone, type_estimate, ChentsovSweep, SigmaRow, Z_GATE,
};
use crate::generator::QuadParams;
use crate::geometry::{BoxRegion, Configuration, Domain};
use crate::grid::Grid;
use crate::hierarchy::{evolve_dual, evolve_forward, expectation_via_dual, pair_profile, CorrelationField, DualExpectation, Operators, QuasiObservable};
use crate::io::{fmt, log_line, read_field, read_traces, write_field, write_manifest, write_traces, Csv, FieldHeader, TraceHeader, SCHEMA_VERSION};
use crate::kernels::KernelSet;
use crate::observables::{Fhat, Ftilde, Observable, PathMetric};
use crate::sim::{batch_simulate, default_workers, EventTrace, InitialLaw};
use crate::theta::TestFunction;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One pass/fail line of a report.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub check: String,
    pub label: String,
    pub value: f64,
    pub se: f64,
    pub target: f64,
    pub pass: bool,
}

impl Gate {
    fn new(check: Check, label: impl Into<String>, value: f64, se: f64, target: f64, pass: bool) -> Self {
        Gate { check: check.name().into(), label: label.into(), value, se, target, pass }
    }

    fn error(check: Check, label: impl Into<String>, e: &Error) -> Self {
        Gate { check: check.name().into(), label: format!("{} ({e})", label.into()), value: f64::NAN, se: f64::NAN, target: f64::NAN, pass: false }
    }
}

pub fn gates_csv(gates: &[Gate]) -> Csv {
    let mut c = Csv::new("gates", &["check", "label", "value", "se", "target", "pass"]);
    for g in gates {
        c.push([g.check.clone(), g.label.clone(), fmt(g.value), fmt(g.se), fmt(g.target), g.pass.to_string()]);
    }
    c
}

/// A parsed configuration with everything built from it.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub ks: KernelSet,
    pub law: InitialLaw,
    pub theta: [TestFunction; 2],
}

impl Experiment {
    /// `base` resolves a relative initial-configuration file.
    pub fn new(cfg: ExperimentConfig, base: Option<&Path>) -> Result<Self> {
        let ks = cfg.kernel_set()?;
        let law = cfg.initial_law(base)?;
        let theta = cfg.test_functions()?;
        Ok(Experiment { cfg, ks, law, theta })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::new(ExperimentConfig::from_file(path)?, path.parent())
    }

    pub fn domain(&self) -> Domain {
        self.ks.domain
    }

    /// κ_t = e^{ϑ₀+αt}.
    pub fn kappa_t(&self, t: f64) -> f64 {
        (self.cfg.theta0() + self.ks.constants.alpha * t).exp()
    }

    pub fn simulate(&self, paths: usize, t_end: f64, sigma: f64, seed: u64) -> Result<Vec<EventTrace>> {
        batch_simulate(&self.law, &self.ks, paths, t_end, sigma, seed, default_workers())
    }

    /// Traces from the [run] and [dynamics] blocks.
    pub fn simulate_default(&self) -> Result<Vec<EventTrace>> {
        self.simulate(self.cfg.run.paths, self.cfg.dynamics.t_end, self.cfg.dynamics.sigma, self.cfg.run.seed)
    }

    pub fn constants_json(&self) -> serde_json::Value {
        json!({
            "version": VERSION,
            "schema_version": SCHEMA_VERSION,
            "domain": self.ks.domain,
            "jump": self.cfg.jump,
            "repulsion": self.cfg.repulsion,
            "constants": self.ks.constants,
            "theta0": self.cfg.theta0(),
            "grid": self.cfg.hierarchy.grid,
            "theta_functions": [
                {"mean": self.theta[0].mean, "c": self.theta[0].c, "cbar": self.theta[0].cbar},
                {"mean": self.theta[1].mean, "c": self.theta[1].c, "cbar": self.theta[1].cbar},
            ],
        })
    }

    pub fn trace_header(&self, traces: &[EventTrace], seed: u64) -> TraceHeader {
        let (sigma, t_end) = traces.first().map(|t| (t.sigma, t.t_end)).unwrap_or((self.cfg.dynamics.sigma, self.cfg.dynamics.t_end));
        TraceHeader { schema_version: SCHEMA_VERSION, domain: self.ks.domain, sigma, t_end, master_seed: seed, n_paths: traces.len(), meta: self.constants_json() }
    }

    pub fn grid(&self) -> Grid {
        Grid::new(&self.ks.domain, self.cfg.hierarchy.grid)
    }

    /// k₀ matching the initial law (Poisson or modulated Poisson).
    pub fn initial_field(&self) -> Result<CorrelationField> {
        let grid = self.grid();
        let m = self.cfg.hierarchy.max_order;
        let mut k0 = match &self.cfg.initial {
            InitialSpec::Poisson { kappa } => CorrelationField::poisson(grid, m, *kappa)?,
            InitialSpec::Modulated { kappa, eps, freq } => {
                let rho = [0, 1].map(|i| grid.sample(|x| kappa[i] * (1.0 + eps[i] * (2.0 * std::f64::consts::PI * *freq as f64 * x[0] / grid.l).cos())));
                CorrelationField::product(grid, m, rho)?
            }
            InitialSpec::File { .. } => return Err(Error::Invalid("the hierarchy needs a Poisson or modulated initial law".into())),
        };
        if let Some(t) = self.cfg.hierarchy.theta0 {
            k0.theta = t;
        }
        Ok(k0)
    }

    pub fn operators(&self, sigma: f64) -> Result<Operators> {
        Ok(Operators::new(&self.ks, self.cfg.hierarchy.grid, sigma, self.cfg.hierarchy.n_max)?.with_workers(default_workers()))
    }

    pub fn quasi_observable(&self) -> Result<QuasiObservable> {
        quasi_observable(&self.cfg.observable, &self.theta, self.grid(), self.cfg.hierarchy.max_order)
    }

    pub fn kg_observable(&self) -> KgObservable {
        KgObservable { spec: self.cfg.observable.clone(), theta: self.theta.clone(), domain: self.ks.domain }
    }

    pub fn ftilde(&self) -> Result<Ftilde> {
        Ftilde::new(self.theta.clone(), self.cfg.observable.tau)
    }

    /// Time horizon for the dual route: T_*(ϑ₀) when φ̄ > 0, else t_end.
    pub fn dual_horizon(&self) -> Result<f64> {
        if self.ks.constants.phibar > 0.0 {
            Ok(self.ks.t_star(self.cfg.theta0())?.1)
        } else {
            Ok(self.cfg.dynamics.t_end)
        }
    }
}

fn pair_kernel(dom: &Domain, w: f64, x: &crate::Point, y: &crate::Point) -> f64 {
    let r = dom.dist(x, y);
    (-r * r / (2.0 * w * w)).exp()
}

/// G with G^(0,0) = c, G^(1,0) = g10 θ₀, G^(0,1) = g01 θ₁,
/// G^(1,1)(x, y) = g11 θ₀(x) e^{−|x−y|²/2w²}.
pub fn quasi_observable(spec: &ObservableSpec, theta: &[TestFunction; 2], grid: Grid, max_order: usize) -> Result<QuasiObservable> {
    let mut g = QuasiObservable::constant(grid, max_order, spec.constant);
    let s0: Vec<f64> = theta[0].sample_on(&grid).iter().map(|v| spec.g10 * v).collect();
    let s1: Vec<f64> = theta[1].sample_on(&grid).iter().map(|v| spec.g01 * v).collect();
    g.tower.set((1, 0), s0)?;
    g.tower.set((0, 1), s1)?;
    if spec.g11 != 0.0 {
        if max_order < 2 {
            return Err(Error::Invalid("g11 needs max_order ≥ 2".into()));
        }
        let dom = theta[0].domain;
        g.tower.set_fn((1, 1), |p| spec.g11 * theta[0].eval(&p[0]) * pair_kernel(&dom, spec.pair_width, &p[0], &p[1]))?;
    }
    Ok(g)
}

/// The same KG evaluated with the analytic functions, for Monte Carlo.
#[derive(Debug, Clone)]
pub struct KgObservable {
    pub spec: ObservableSpec,
    pub theta: [TestFunction; 2],
    pub domain: Domain,
}

impl Observable for KgObservable {
    fn eval(&self, cfg: &Configuration) -> f64 {
        let s = &self.spec;
        let mut v = s.constant;
        v += s.g10 * cfg.points(0).map(|x| self.theta[0].eval(x)).sum::<f64>();
        v += s.g01 * cfg.points(1).map(|x| self.theta[1].eval(x)).sum::<f64>();
        if s.g11 != 0.0 {
            for x in cfg.points(0) {
                let tx = self.theta[0].eval(x);
                for y in cfg.points(1) {
                    v += s.g11 * tx * pair_kernel(&self.domain, s.pair_width, x, y);
                }
            }
        }
        v
    }

    fn name(&self) -> String {
        "KG".into()
    }
}

/// Rows (t, dual, remainder, rounding, truncation, mc, se, z, status).
pub fn compare_dual_vs_mc(exp: &Experiment, traces: &[EventTrace], times: &[f64]) -> Result<(Csv, Vec<Gate>)> {
    let mut csv = Csv::new("compare", &["t", "dual", "remainder", "rounding", "truncation", "mc", "se", "z", "status"]);
    let mut gates = Vec::new();
    let k0 = exp.initial_field()?;
    let g = exp.quasi_observable()?;
    let mut params = exp.cfg.hierarchy_params();
    params.sigma = traces.first().map(|t| t.sigma).unwrap_or(params.sigma);
    let ops = exp.operators(params.sigma)?;
    let kg = exp.kg_observable();
    for &t in times {
        let mc = crate::estimators::par_estimate(traces, t, &kg);
        let dual = expectation_via_dual(&ops, &exp.ks, &k0, &g, t, &params);
        match (dual, mc) {
            (Ok(d), Ok(mc)) => {
                let z = mc.z(d.value);
                let pass = z < Z_GATE;
                csv.push([fmt(t), fmt(d.value), fmt(d.remainder), fmt(d.rounding), fmt(d.truncation), fmt(mc.mean), fmt(mc.se), fmt(z), "ok".into()]);
                gates.push(Gate::new(Check::Compare, format!("t={t}"), mc.mean, mc.se, d.value, pass));
            }
            (Err(e), _) | (_, Err(e)) => {
                let status = match e {
                    Error::Horizon { .. } => "horizon",
                    _ => "error",
                };
                csv.push([fmt(t), "".into(), "".into(), "".into(), "".into(), "".into(), "".into(), "".into(), status.into()]);
                gates.push(Gate::error(Check::Compare, format!("t={t}"), &e));
            }
        }
    }
    Ok((csv, gates))
}

/// Forward evolution of k₀ to each time: optional field dumps and radial
/// profiles, plus Ruelle-bound gates.
pub fn hierarchy_run(exp: &Experiment, times: &[f64], fields_dir: Option<&Path>) -> Result<(Csv, Csv, Vec<Gate>)> {
    let mut table = Csv::new("hierarchy", &["t", "substeps", "terms", "remainder", "ruelle_min", "ruelle_excess", "one_point_mean0", "one_point_mean1", "status"]);
    let mut prof = Csv::new("radial_profile", &["t", "r", "k11"]);
    let mut gates = Vec::new();
    let k0 = exp.initial_field()?;
    let params = exp.cfg.hierarchy_params();
    let ops = exp.operators(params.sigma)?;
    for (idx, &t) in times.iter().enumerate() {
        match evolve_forward(&ops, &exp.ks, &k0, t, &params) {
            Ok((k, rep)) => {
                let (min, excess) = k.ruelle_excess(k0.theta + exp.ks.constants.alpha * t);
                let rho = k.one_point()?;
                let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
                let terms: usize = rep.terms.iter().sum();
                table.push([fmt(t), rep.steps.len().to_string(), terms.to_string(), fmt(rep.remainder), fmt(min), fmt(excess), fmt(mean(&rho[0])), fmt(mean(&rho[1])), "ok".into()]);
                let pass = min >= -1e-6 && excess <= 1e-6;
                gates.push(Gate::new(Check::Ruelle, format!("t={t} min/excess"), excess, 0.0, 1e-6, pass));
                if params.max_order >= 2 {
                    for (r, v) in pair_profile(&k, (1, 1))? {
                        prof.push([fmt(t), fmt(r), fmt(v)]);
                    }
                }
                if let Some(dir) = fields_dir {
                    let h = FieldHeader { kind: "correlation".into(), grid: k.tower.grid, max_order: k.tower.max_order, theta: k.theta, t, sigma: params.sigma };
                    write_field(dir, &format!("k_{idx:02}"), &h, &k.tower)?;
                }
            }
            Err(e) => {
                table.push([fmt(t), "".into(), "".into(), "".into(), "".into(), "".into(), "".into(), "".into(), "error".into()]);
                gates.push(Gate::error(Check::Ruelle, format!("t={t}"), &e));
            }
        }
    }
    Ok((table, prof, gates))
}

/// Σ(t)G for the configured observable; optional dumps of G and Σ(t)G.
pub fn dual_run(exp: &Experiment, t: f64, fields_dir: Option<&Path>) -> Result<(QuasiObservable, Option<DualExpectation>)> {
    let g = exp.quasi_observable()?;
    let params = exp.cfg.hierarchy_params();
    let ops = exp.operators(params.sigma)?;
    let theta0 = exp.cfg.theta0();
    let (gt, _) = evolve_dual(&ops, &exp.ks, &g, theta0, t, &params)?;
    let expct = match exp.initial_field() {
        Ok(k0) => Some(expectation_via_dual(&ops, &exp.ks, &k0, &g, t, &params)?),
        Err(_) => None,
    };
    if let Some(dir) = fields_dir {
        for (stem, q, tt) in [("g_0", &g, 0.0), ("g_t", &gt, t)] {
            let h = FieldHeader { kind: "quasi-observable".into(), grid: q.tower.grid, max_order: q.tower.max_order, theta: theta0, t: tt, sigma: params.sigma };
            write_field(dir, stem, &h, &q.tower)?;
        }
    }
    Ok((gt, expct))
}

/// Structural checks: conservation, simplicity, cell lists, replay, and
/// bitwise agreement with a single-worker re-simulation of the first paths.
fn structure_gates(exp: &Experiment, traces: &[EventTrace]) -> Vec<Gate> {
    let mut events = 0u64;
    let mut bad = 0u64;
    for tr in traces {
        events += tr.events.len() as u64;
        bad += tr.stats.simplicity_violations + tr.stats.cell_violations + tr.stats.hard_core_violations;
        let fin = tr.final_configuration();
        if fin.len(0) != tr.initial.len(0) || fin.len(1) != tr.initial.len(1) || !tr.replay_consistent() {
            bad += 1;
        }
    }
    let mut gates = vec![Gate::new(Check::Structure, format!("violations over {events} events"), bad as f64, 0.0, 0.0, bad == 0)];
    if let Some(first) = traces.first() {
        let k = traces.len().min(8);
        let same = batch_simulate(&exp.law, &exp.ks, k, first.t_end, first.sigma, first.seed, 1).map(|r| r[..] == traces[..k]).unwrap_or(false);
        gates.push(Gate::new(Check::Structure, format!("bitwise re-simulation of {k} paths"), same as u8 as f64, 0.0, 1.0, same));
    }
    gates
}

/// Tables written next to the gates.
#[derive(Debug, Default)]
pub struct VerifyOutput {
    pub gates: Vec<Gate>,
    pub tables: Vec<(String, Csv)>,
    pub chentsov: Option<ChentsovSweep>,
    pub sigma: Option<Vec<SigmaRow>>,
}

pub fn chentsov_csv(sweep: Option<&ChentsovSweep>) -> Csv {
    let mut c = Csv::new("chentsov", &["kind", "spacing", "value", "se"]);
    if let Some(s) = sweep {
        for (sp, e) in &s.points {
            c.push(["point".into(), fmt(*sp), fmt(e.mean), fmt(e.se)]);
        }
        c.push(["slope".into(), "".into(), fmt(s.slope), "".into()]);
    }
    c
}

pub fn sigma_csv(rows: Option<&[SigmaRow]>) -> Csv {
    let mut c = Csv::new("sigma_sweep", &["sigma", "estimate", "se", "lo", "hi", "diff", "diff_se"]);
    for r in rows.unwrap_or(&[]) {
        let e = r.estimate;
        c.push([fmt(r.sigma), fmt(e.mean), fmt(e.se), fmt(e.mean - Z_GATE * e.se), fmt(e.mean + Z_GATE * e.se), fmt(r.diff.mean), fmt(r.diff.se)]);
    }
    c
}

/// The battery selected by `[report] checks`, run on a trace collection.
pub fn verify(exp: &Experiment, traces: &[EventTrace]) -> Result<VerifyOutput> {
    let cfg = &exp.cfg;
    let rep = &cfg.report;
    let dom = exp.domain();
    let th = [&exp.theta[0], &exp.theta[1]];
    let mut out = VerifyOutput::default();
    let t_max = traces.iter().map(|t| t.t_end).fold(f64::INFINITY, f64::min);
    let times: Vec<f64> = rep.times.iter().copied().filter(|t| *t <= t_max).collect();

    if cfg.wants(Check::Identities) {
        for c in verify_identities() {
            out.gates.push(Gate::new(Check::Identities, format!("{} [{} cases]", c.name, c.cases), c.passed as u8 as f64, 0.0, 1.0, c.passed));
        }
    }
    if cfg.wants(Check::Structure) {
        out.gates.extend(structure_gates(exp, traces));
    }
    if traces.is_empty() {
        return Ok(out);
    }
    if cfg.wants(Check::Chi) {
        let mut c = Csv::new("chi", &["t", "m0", "m1", "estimate", "se", "poisson_t0", "bound"]);
        let kappa = cfg.initial.kappa();
        for &t in &times {
            for m in [(1, 0), (0, 1), (1, 1)] {
                let e = empirical_chi(traces, t, m, th)?;
                let bound = poisson_chi([exp.kappa_t(t); 2], m, th);
                c.push([fmt(t), m.0.to_string(), m.1.to_string(), fmt(e.mean), fmt(e.se), fmt(poisson_chi(kappa, m, th)), fmt(bound)]);
                out.gates.push(Gate::new(Check::Chi, format!("t={t} m=({},{}) sub-Poisson", m.0, m.1), e.mean, e.se, bound, e.mean - Z_GATE * e.se <= bound));
            }
        }
        out.tables.push(("chi".into(), c));
    }
    if cfg.wants(Check::Moments) {
        let mut c = Csv::new("moments", &["t", "n", "estimate", "se", "bound", "pass"]);
        let region = BoxRegion::centered(&dom, rep.region_half);
        for &t in &times {
            for r in moment_bound_check(traces, t, &region, rep.moment_n, exp.kappa_t(t), dom.d)? {
                c.push([fmt(t), r.n.to_string(), fmt(r.estimate.mean), fmt(r.estimate.se), fmt(r.bound), r.pass.to_string()]);
                out.gates.push(Gate::new(Check::Moments, format!("t={t} n={}", r.n), r.estimate.mean, r.estimate.se, r.bound, r.pass));
            }
        }
        out.tables.push(("moments".into(), c));
    }
    if cfg.wants(Check::ExpMoments) {
        let mut c = Csv::new("exp_moments", &["t", "beta", "estimate", "se", "bound", "pass"]);
        for &t in &times {
            for &b in &rep.betas {
                let r = exp_moment_check(traces, t, b, exp.kappa_t(t), &dom)?;
                c.push([fmt(t), fmt(b), fmt(r.estimate.mean), fmt(r.estimate.se), fmt(r.bound), r.pass.to_string()]);
                out.gates.push(Gate::new(Check::ExpMoments, format!("t={t} beta={b}"), r.estimate.mean, r.estimate.se, r.bound, r.pass));
            }
        }
        out.tables.push(("exp_moments".into(), c));
    }
    if cfg.wants(Check::Martingale) {
        let mut c = Csv::new("martingale", &["observable", "t1", "t2", "weighted", "mean", "se", "quad_tol", "pass"]);
        let ft = exp.ftilde()?;
        let fh = Fhat::new(cfg.observable.tau, [vec![Arc::new(exp.theta[0].clone())], vec![]], dom)?;
        let q = QuadParams::default();
        let s1 = 0.5 * rep.t1;
        let obs: [&dyn Observable; 2] = [&ft, &fh];
        for f in obs {
            let r = martingale_residual(traces, &exp.ks, f, rep.t1, rep.t2, &q, Some((&ft as &dyn Observable, s1)))?;
            let w = r.weighted.unwrap();
            for (lab, e) in [("no", r.residual), ("yes", w)] {
                let pass = e.within(0.0, Z_GATE);
                c.push([r.name.clone(), fmt(r.t1), fmt(r.t2), lab.into(), fmt(e.mean), fmt(e.se), fmt(r.quad_tol), pass.to_string()]);
                out.gates.push(Gate::new(Check::Martingale, format!("{} weighted={lab}", r.name), e.mean, e.se, 0.0, pass));
            }
        }
        out.tables.push(("martingale".into(), c));
    }
    if cfg.wants(Check::Chentsov) {
        match chentsov_sweep(traces, &PathMetric::new(dom), &rep.spacings, &rep.origins) {
            Ok(s) => {
                out.gates.push(Gate::new(Check::Chentsov, "log-log slope", s.slope, 0.0, 1.7, s.slope >= 1.7));
                out.chentsov = Some(s);
            }
            Err(e) => out.gates.push(Gate::error(Check::Chentsov, "sweep", &e)),
        }
        out.tables.push(("chentsov".into(), chentsov_csv(out.chentsov.as_ref())));
    }
    if cfg.wants(Check::Sigma) {
        let ft = exp.ftilde()?;
        let t = cfg.dynamics.t_end;
        let rows = sigma_convergence_sweep(&exp.law, &exp.ks, &ft, t, &rep.sigmas, traces.len(), cfg.run.seed, default_workers())?;
        let mono = sigma_monotone(&rows);
        out.gates.push(Gate::new(Check::Sigma, format!("monotone discrepancy at t={t}"), mono as u8 as f64, 0.0, 1.0, mono));
        out.tables.push(("sigma".into(), sigma_csv(Some(&rows))));
        out.sigma = Some(rows);
    }
    if cfg.wants(Check::Type) {
        let mut c = Csv::new("type", &["t", "estimate", "se", "argmax0", "argmax1", "envelope_alpha", "envelope_alpha1"]);
        let th0 = cfg.theta0();
        let alpha = exp.ks.constants.alpha;
        for &t in &times {
            let r = type_estimate(traces, t, th, rep.m_max)?;
            let e1 = (th0 + alpha * t).exp();
            let e2 = (th0 + (alpha + 1.0) * t).exp();
            c.push([fmt(t), fmt(r.value.mean), fmt(r.value.se), r.argmax.0.to_string(), r.argmax.1.to_string(), fmt(e1), fmt(e2)]);
            out.gates.push(Gate::new(Check::Type, format!("t={t}"), r.value.mean, r.value.se, e2, r.value.mean <= e2 + Z_GATE * r.value.se));
        }
        out.tables.push(("type".into(), c));
    }
    if cfg.wants(Check::Compare) {
        let h = exp.dual_horizon()?;
        let ts: Vec<f64> = rep.compare_fractions.iter().map(|f| f * h).filter(|t| *t <= t_max).collect();
        let (c, g) = compare_dual_vs_mc(exp, traces, &ts)?;
        out.gates.extend(g);
        out.tables.push(("compare".into(), c));
    }
    if cfg.wants(Check::Ruelle) {
        let (tab, _, g) = hierarchy_run(exp, &times, None)?;
        out.gates.extend(g);
        out.tables.push(("hierarchy".into(), tab));
    }
    Ok(out)
}

pub fn write_verify(dir: &Path, v: &VerifyOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, c) in &v.tables {
        c.write(&dir.join(format!("{name}.csv")))?;
    }
    gates_csv(&v.gates).write(&dir.join("gates.csv"))
}

#[derive(Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub gates: Vec<Gate>,
}

impl RunSummary {
    pub fn all_pass(&self) -> bool {
        self.gates.iter().all(|g| g.pass)
    }
}

pub fn trace_file(dir: &Path, gzip: bool) -> PathBuf {
    dir.join("traces").join(if gzip { "paths.jsonl.gz" } else { "paths.jsonl" })
}

/// Finds `traces/paths.jsonl[.gz]` under a run directory (or a direct file).
pub fn load_traces(path: &Path) -> Result<(TraceHeader, Vec<EventTrace>)> {
    if path.is_file() {
        return read_traces(path);
    }
    for gz in [false, true] {
        let p = trace_file(path, gz);
        if p.exists() {
            return read_traces(&p);
        }
    }
    Err(Error::Format(format!("no trace file under {}", path.display())))
}

fn prepare_dir(out: &Path) -> Result<()> {
    for sub in ["traces", "fields", "reports", "plots"] {
        std::fs::create_dir_all(out.join(sub))?;
    }
    Ok(())
}

/// Writes the resolved config and constants.json.
pub fn write_metadata(exp: &Experiment, out: &Path) -> Result<()> {
    std::fs::write(out.join("config.ini"), exp.cfg.serialize())?;
    std::fs::write(out.join("constants.json"), serde_json::to_string_pretty(&exp.constants_json())? + "\n")?;
    Ok(())
}

/// Full run: traces, field dumps, the battery, plot tables and the manifest.
pub fn run_experiment(exp: &Experiment, out: &Path) -> Result<RunSummary> {
    prepare_dir(out)?;
    log_line(out, "run start")?;
    write_metadata(exp, out)?;
    let traces = exp.simulate_default()?;
    log_line(out, &format!("simulated {} paths", traces.len()))?;
    if exp.cfg.run.save_traces {
        write_traces(&trace_file(out, exp.cfg.run.gzip), &exp.trace_header(&traces, exp.cfg.run.seed), &traces, exp.cfg.run.gzip)?;
    }
    let mut gates = Vec::new();
    match exp.initial_field() {
        Ok(_) if Operators::new(&exp.ks, 4, 0.0, 1).is_ok() => {
            let (tab, prof, g) = hierarchy_run(exp, &exp.cfg.report.times, Some(&out.join("fields")))?;
            tab.write(&out.join("reports").join("hierarchy.csv"))?;
            prof.write(&out.join("reports").join("radial_profile.csv"))?;
            if !exp.cfg.wants(Check::Ruelle) {
                gates.extend(g.into_iter().filter(|g| !g.pass && g.value.is_nan()));
            }
            dual_run(exp, exp.cfg.report.times.iter().copied().fold(0.0, f64::max).min(0.99 * exp.dual_horizon()?), Some(&out.join("fields")))?;
        }
        _ => log_line(out, "hierarchy skipped: initial law or kernels not supported")?,
    }
    log_line(out, "hierarchy done")?;
    let v = verify(exp, &traces)?;
    gates.extend(v.gates.iter().cloned());
    write_verify(&out.join("reports"), &VerifyOutput { gates: gates.clone(), tables: v.tables, chentsov: None, sigma: None })?;
    emit_plots(out)?;
    write_manifest(out)?;
    log_line(out, "run done")?;
    Ok(RunSummary { dir: out.to_path_buf(), gates })
}

/// Plot-ready tables under `plots/`: radial profiles, Chentsov points with
/// the fitted slope, σ-sweep curves. Missing inputs give headers only.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Format(format!("{} is not a run directory", dir.display())));
    }
    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    let reports = dir.join("reports");
    let mut written = Vec::new();

    let mut prof = Csv::new("radial_profile", &["t", "r", "k11"]);
    let fields = dir.join("fields");
    if fields.is_dir() {
        let mut stems: Vec<String> = std::fs::read_dir(&fields)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|s| s.strip_suffix(".hdr")).map(String::from))
            .filter(|s| s.starts_with("k_"))
            .collect();
        stems.sort();
        for s in stems {
            let (h, tower) = read_field(&fields, &s)?;
            if h.max_order >= 2 {
                let k = CorrelationField { tower, theta: h.theta };
                for (r, v) in pair_profile(&k, (1, 1))? {
                    prof.push([fmt(h.t), fmt(r), fmt(v)]);
                }
            }
        }
    }
    let p = plots.join("radial_profile.csv");
    prof.write(&p)?;
    written.push(p);

    let mut ch = Csv::new("chentsov_scaling", &["kind", "spacing", "value", "se"]);
    if let Ok(src) = Csv::read(&reports.join("chentsov.csv")) {
        ch.rows = src.rows;
    }
    let p = plots.join("chentsov_scaling.csv");
    ch.write(&p)?;
    written.push(p);

    let mut sg = Csv::new("sigma_curves", &["sigma", "estimate", "lo", "hi", "diff", "diff_lo", "diff_hi"]);
    if let Ok(src) = Csv::read(&reports.join("sigma.csv")) {
        let col = |n: &str| src.column(n).unwrap_or_default().iter().map(|s| s.parse::<f64>().unwrap_or(f64::NAN)).collect::<Vec<_>>();
        let (s, e, lo, hi, d, dse) = (col("sigma"), col("estimate"), col("lo"), col("hi"), col("diff"), col("diff_se"));
        for k in 0..s.len() {
            sg.push([fmt(s[k]), fmt(e[k]), fmt(lo[k]), fmt(hi[k]), fmt(d[k]), fmt(d[k] - dse[k]), fmt(d[k] + dse[k])]);
        }
    }
    let p = plots.join("sigma_curves.csv");
    sg.write(&p)?;
    written.push(p);
    Ok(written)
}

/// Gates from a `gates.csv`.
pub fn read_gates(path: &Path) -> Result<Vec<Gate>> {
    let c = Csv::read(path)?;
    Ok(c.rows
        .iter()
        .map(|r| Gate {
            check: r[0].clone(),
            label: r[1].clone(),
            value: r[2].parse().unwrap_or(f64::NAN),
            se: r[3].parse().unwrap_or(f64::NAN),
            target: r[4].parse().unwrap_or(f64::NAN),
            pass: r[5] == "true",
        })
        .collect())
}
