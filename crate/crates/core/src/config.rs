//! Experiment files: sectioned `key = value` text.
//!
//! Unknown sections and keys are errors carrying the line number. Comments
//! start with `#` or `;`. Lists are comma separated.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Configuration, Domain, Point, PsiMode};
use crate::hierarchy::{Closure, HierarchyParams};
use crate::kernels::{JumpFamily, KernelSet, RepulsionFamily};
use crate::sim::InitialLaw;
use crate::theta::{TestFunction, ThetaFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialSpec {
    Poisson { kappa: [f64; 2] },
    Modulated { kappa: [f64; 2], eps: [f64; 2], freq: usize },
    File { path: PathBuf, kappa: [f64; 2] },
}

impl InitialSpec {
    /// Intensities used for κ_t envelopes and the Poisson k₀.
    pub fn kappa(&self) -> [f64; 2] {
        match self {
            InitialSpec::Poisson { kappa } | InitialSpec::Modulated { kappa, .. } | InitialSpec::File { kappa, .. } => *kappa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSpec {
    pub sigma: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchySpec {
    pub max_order: usize,
    pub grid: usize,
    pub n_max: usize,
    pub closure: Closure,
    /// ϑ₀; None means ln max κ_i.
    pub theta0: Option<f64>,
    pub safety: f64,
    pub leak_estimate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub paths: usize,
    pub seed: u64,
    pub gzip: bool,
    pub save_traces: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Check {
    Structure,
    Chi,
    Moments,
    ExpMoments,
    Martingale,
    Chentsov,
    Sigma,
    Type,
    Compare,
    Ruelle,
    Identities,
}

impl Check {
    pub const ALL: [Check; 11] = [
        Check::Structure,
        Check::Chi,
        Check::Moments,
        Check::ExpMoments,
        Check::Martingale,
        Check::Chentsov,
        Check::Sigma,
        Check::Type,
        Check::Compare,
        Check::Ruelle,
        Check::Identities,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Structure => "structure",
            Check::Chi => "chi",
            Check::Moments => "moments",
            Check::ExpMoments => "exp-moments",
            Check::Martingale => "martingale",
            Check::Chentsov => "chentsov",
            Check::Sigma => "sigma",
            Check::Type => "type",
            Check::Compare => "compare",
            Check::Ruelle => "ruelle",
            Check::Identities => "identities",
        }
    }

    pub fn parse(s: &str) -> Option<Check> {
        Check::ALL.iter().copied().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSpec {
    pub checks: Vec<Check>,
    /// Evaluation times for χ, moment and type checks.
    pub times: Vec<f64>,
    /// Fractions of the dual horizon for `compare`.
    pub compare_fractions: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub spacings: Vec<f64>,
    pub origins: Vec<f64>,
    pub moment_n: usize,
    pub betas: Vec<f64>,
    /// Half side of the central counting box Λ.
    pub region_half: f64,
    pub m_max: usize,
    /// Martingale window.
    pub t1: f64,
    pub t2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSpec {
    pub family: String,
    pub amp: f64,
    /// None means the box center.
    pub center: Option<Vec<f64>>,
    /// Width (gaussian-bump) or radius (cosine-bump); ignored for scaled-psi.
    pub width: f64,
}

impl Default for ThetaSpec {
    fn default() -> Self {
        ThetaSpec { family: "gaussian-bump".into(), amp: 0.5, center: None, width: 1.0 }
    }
}

impl ThetaSpec {
    pub fn build(&self, dom: Domain) -> Result<TestFunction> {
        let mut c = dom.center();
        if let Some(v) = &self.center {
            if v.len() != dom.d {
                return Err(Error::Invalid(format!("θ center has {} coordinates, d = {}", v.len(), dom.d)));
            }
            c[..dom.d].copy_from_slice(v);
            c = dom.wrap(c);
        }
        let fam = match self.family.as_str() {
            "gaussian-bump" => ThetaFamily::GaussianBump { amp: self.amp, center: c, width: self.width },
            "cosine-bump" => ThetaFamily::CosineBump { amp: self.amp, center: c, radius: self.width },
            "scaled-psi" => ThetaFamily::ScaledPsi { amp: self.amp },
            f => return Err(Error::Invalid(format!("unknown θ family '{f}'"))),
        };
        TestFunction::new(fam, dom)
    }
}

/// Quasi-observable for `compare`:
/// KG(γ) = c + g10 Σθ₀ + g01 Σθ₁ + g11 Σ_{x∈γ₀,y∈γ₁} θ₀(x) e^{−|x−y|²/2w²};
/// `tau` sets the F̃ test function used by martingale and σ checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableSpec {
    pub constant: f64,
    pub g10: f64,
    pub g01: f64,
    pub g11: f64,
    pub pair_width: f64,
    pub tau: [f64; 2],
}

impl Default for ObservableSpec {
    fn default() -> Self {
        ObservableSpec { constant: 0.0, g10: 1.0, g01: 0.0, g11: 0.3, pair_width: 0.8, tau: [1.0, 1.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub d: usize,
    pub l: f64,
    pub psi_mode: PsiMode,
    pub jump: [JumpFamily; 2],
    pub repulsion: [RepulsionFamily; 2],
    pub initial: InitialSpec,
    pub dynamics: DynamicsSpec,
    pub hierarchy: HierarchySpec,
    pub run: RunSpec,
    pub report: ReportSpec,
    pub theta: [ThetaSpec; 2],
    pub observable: ObservableSpec,
}

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

struct Section {
    line: usize,
    keys: BTreeMap<String, Entry>,
}

struct Raw {
    sections: BTreeMap<String, Section>,
}

const SECTIONS: [&str; 13] = [
    "domain",
    "kernel.a0",
    "kernel.a1",
    "kernel.phi0",
    "kernel.phi1",
    "initial",
    "dynamics",
    "hierarchy",
    "run",
    "report",
    "theta0",
    "theta1",
    "observable",
];

fn cerr<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Config { line, msg: msg.into() })
}

impl Raw {
    fn parse(text: &str) -> Result<Raw> {
        let mut sections: BTreeMap<String, Section> = BTreeMap::new();
        let mut cur: Option<String> = None;
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
                continue;
            }
            if let Some(rest) = s.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return cerr(line, "unterminated section header");
                };
                let name = name.trim().to_string();
                if !SECTIONS.contains(&name.as_str()) {
                    return cerr(line, format!("unknown section [{name}]"));
                }
                if sections.contains_key(&name) {
                    return cerr(line, format!("duplicate section [{name}]"));
                }
                sections.insert(name.clone(), Section { line, keys: BTreeMap::new() });
                cur = Some(name);
                continue;
            }
            let Some((key, val)) = s.split_once('=') else {
                return cerr(line, format!("expected key = value, got '{s}'"));
            };
            let Some(sec) = &cur else {
                return cerr(line, "key outside any section");
            };
            let key = key.trim().to_string();
            let entry = Entry { value: val.trim().to_string(), line, used: false };
            let keys = &mut sections.get_mut(sec).unwrap().keys;
            if keys.contains_key(&key) {
                return cerr(line, format!("duplicate key '{key}'"));
            }
            keys.insert(key, entry);
        }
        Ok(Raw { sections })
    }

    fn has(&self, sec: &str) -> bool {
        self.sections.contains_key(sec)
    }

    fn section_line(&self, sec: &str) -> usize {
        self.sections.get(sec).map(|s| s.line).unwrap_or(0)
    }

    fn take(&mut self, sec: &str, key: &str) -> Option<(String, usize)> {
        let e = self.sections.get_mut(sec)?.keys.get_mut(key)?;
        e.used = true;
        Some((e.value.clone(), e.line))
    }

    fn get<T: std::str::FromStr>(&mut self, sec: &str, key: &str, default: Option<T>) -> Result<T> {
        match self.take(sec, key) {
            Some((v, line)) => v.parse::<T>().or_else(|_| cerr(line, format!("cannot parse {key} = '{v}'"))),
            None => match default {
                Some(d) => Ok(d),
                None => cerr(self.section_line(sec), format!("[{sec}] is missing required key '{key}'")),
            },
        }
    }

    fn get_f64(&mut self, sec: &str, key: &str, default: Option<f64>) -> Result<f64> {
        self.get(sec, key, default)
    }

    fn get_list(&mut self, sec: &str, key: &str, default: Vec<f64>) -> Result<Vec<f64>> {
        match self.take(sec, key) {
            Some((v, line)) => parse_list(&v).or_else(|_| cerr(line, format!("cannot parse list {key} = '{v}'"))),
            None => Ok(default),
        }
    }

    fn line_of(&self, sec: &str, key: &str) -> usize {
        self.sections.get(sec).and_then(|s| s.keys.get(key)).map(|e| e.line).unwrap_or_else(|| self.section_line(sec))
    }

    fn finish(&self) -> Result<()> {
        for (name, s) in &self.sections {
            for (k, e) in &s.keys {
                if !e.used {
                    return cerr(e.line, format!("unknown key '{k}' in [{name}]"));
                }
            }
        }
        Ok(())
    }
}

fn parse_list(v: &str) -> std::result::Result<Vec<f64>, ()> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| x.trim().parse::<f64>().map_err(|_| ())).collect()
}

fn parse_jump(raw: &mut Raw, sec: &str) -> Result<JumpFamily> {
    let fam: String = raw.get(sec, "family", None)?;
    let mass = raw.get_f64(sec, "mass", Some(1.0))?;
    Ok(match fam.as_str() {
        "gaussian" => JumpFamily::Gaussian { mass, width: raw.get_f64(sec, "width", None)? },
        "exponential" => JumpFamily::Exponential { mass, length: raw.get_f64(sec, "length", None)? },
        "top-hat" => JumpFamily::TopHat { mass, radius: raw.get_f64(sec, "radius", None)? },
        f => return cerr(raw.line_of(sec, "family"), format!("unknown jump family '{f}'")),
    })
}

fn parse_repulsion(raw: &mut Raw, sec: &str) -> Result<RepulsionFamily> {
    let fam: String = raw.get(sec, "family", Some("zero".into()))?;
    Ok(match fam.as_str() {
        "zero" => RepulsionFamily::Zero,
        "gaussian" => RepulsionFamily::Gaussian { height: raw.get_f64(sec, "height", None)?, width: raw.get_f64(sec, "width", None)? },
        "exponential" => RepulsionFamily::Exponential { height: raw.get_f64(sec, "height", None)?, length: raw.get_f64(sec, "length", None)? },
        "hard-core" => RepulsionFamily::HardCore { radius: raw.get_f64(sec, "radius", None)? },
        f => return cerr(raw.line_of(sec, "family"), format!("unknown repulsion family '{f}'")),
    })
}

fn parse_theta(raw: &mut Raw, sec: &str) -> Result<ThetaSpec> {
    let def = ThetaSpec::default();
    let family: String = raw.get(sec, "family", Some(def.family))?;
    if !["gaussian-bump", "cosine-bump", "scaled-psi"].contains(&family.as_str()) {
        return cerr(raw.line_of(sec, "family"), format!("unknown θ family '{family}'"));
    }
    let amp = raw.get_f64(sec, "amp", Some(def.amp))?;
    let width = raw.get_f64(sec, "width", Some(def.width))?;
    let center = match raw.take(sec, "center") {
        Some((v, line)) => Some(parse_list(&v).or_else(|_| cerr(line, format!("cannot parse center '{v}'")))?),
        None => None,
    };
    Ok(ThetaSpec { family, amp, center, width })
}

fn parse_bool(raw: &mut Raw, sec: &str, key: &str, default: bool) -> Result<bool> {
    match raw.take(sec, key) {
        Some((v, line)) => match v.as_str() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => cerr(line, format!("{key} must be true or false")),
        },
        None => Ok(default),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = Raw::parse(text)?;
        for req in ["domain", "kernel.a0", "initial", "dynamics"] {
            if !raw.has(req) {
                return cerr(0, format!("missing section [{req}]"));
            }
        }
        let d: usize = raw.get("domain", "d", Some(1))?;
        let l = raw.get_f64("domain", "L", None)?;
        let psi: String = raw.get("domain", "psi", Some("centered".into()))?;
        let psi_mode = PsiMode::parse(&psi).or_else(|e| cerr(raw.line_of("domain", "psi"), e.to_string()))?;

        let a0 = parse_jump(&mut raw, "kernel.a0")?;
        let a1 = if raw.has("kernel.a1") { parse_jump(&mut raw, "kernel.a1")? } else { a0 };
        let p0 = if raw.has("kernel.phi0") { parse_repulsion(&mut raw, "kernel.phi0")? } else { RepulsionFamily::Zero };
        let p1 = if raw.has("kernel.phi1") { parse_repulsion(&mut raw, "kernel.phi1")? } else { p0 };

        let law: String = raw.get("initial", "law", Some("poisson".into()))?;
        let kappa = [raw.get_f64("initial", "kappa0", None)?, raw.get_f64("initial", "kappa1", None)?];
        let initial = match law.as_str() {
            "poisson" => InitialSpec::Poisson { kappa },
            "modulated" => InitialSpec::Modulated {
                kappa,
                eps: [raw.get_f64("initial", "eps0", Some(0.0))?, raw.get_f64("initial", "eps1", Some(0.0))?],
                freq: raw.get("initial", "freq", Some(1))?,
            },
            "file" => InitialSpec::File { path: PathBuf::from(raw.get::<String>("initial", "file", None)?), kappa },
            f => return cerr(raw.line_of("initial", "law"), format!("unknown initial law '{f}'")),
        };

        let dynamics = DynamicsSpec { sigma: raw.get_f64("dynamics", "sigma", Some(0.0))?, t_end: raw.get_f64("dynamics", "t_end", None)? };

        let hd = HierarchyParams::default();
        let closure_s: String = raw.get("hierarchy", "closure", Some(hd.closure.name().into()))?;
        let closure = Closure::parse(&closure_s).or_else(|e| cerr(raw.line_of("hierarchy", "closure"), e.to_string()))?;
        let theta0 = match raw.take("hierarchy", "theta0") {
            Some((v, line)) => Some(v.parse::<f64>().or_else(|_| cerr(line, format!("cannot parse theta0 = '{v}'")))?),
            None => None,
        };
        let hierarchy = HierarchySpec {
            max_order: raw.get("hierarchy", "max_order", Some(hd.max_order))?,
            grid: raw.get("hierarchy", "grid", Some(hd.grid_n))?,
            n_max: raw.get("hierarchy", "n_max", Some(hd.n_max))?,
            closure,
            theta0,
            safety: raw.get_f64("hierarchy", "safety", Some(hd.safety))?,
            leak_estimate: parse_bool(&mut raw, "hierarchy", "leak_estimate", true)?,
        };

        let run = RunSpec {
            paths: raw.get("run", "paths", Some(1000))?,
            seed: raw.get("run", "seed", Some(1))?,
            gzip: parse_bool(&mut raw, "run", "gzip", false)?,
            save_traces: parse_bool(&mut raw, "run", "save_traces", true)?,
        };

        let checks = match raw.take("report", "checks") {
            Some((v, line)) => {
                let mut out = Vec::new();
                for name in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    match Check::parse(name) {
                        Some(c) => out.push(c),
                        None => return cerr(line, format!("unknown check '{name}'")),
                    }
                }
                out
            }
            None => vec![Check::Structure, Check::Chi, Check::Moments, Check::ExpMoments],
        };
        let t_end = dynamics.t_end;
        let report = ReportSpec {
            checks,
            times: raw.get_list("report", "times", vec![0.0, t_end])?,
            compare_fractions: raw.get_list("report", "compare_fractions", vec![0.0, 0.2, 0.4, 0.6, 0.8])?,
            sigmas: raw.get_list("report", "sigmas", vec![1.0, 0.3, 0.1, 0.03, 0.0])?,
            spacings: raw.get_list("report", "spacings", vec![0.02, 0.04, 0.08, 0.16])?,
            origins: raw.get_list("report", "origins", vec![0.1])?,
            moment_n: raw.get("report", "moment_n", Some(4))?,
            betas: raw.get_list("report", "betas", vec![0.5, 1.0])?,
            region_half: raw.get_f64("report", "region_half", Some(1.0))?,
            m_max: raw.get("report", "m_max", Some(2))?,
            t1: raw.get_f64("report", "t1", Some(0.25 * t_end))?,
            t2: raw.get_f64("report", "t2", Some(0.75 * t_end))?,
        };

        let theta = [parse_theta(&mut raw, "theta0")?, parse_theta(&mut raw, "theta1")?];
        let od = ObservableSpec::default();
        let observable = ObservableSpec {
            constant: raw.get_f64("observable", "constant", Some(od.constant))?,
            g10: raw.get_f64("observable", "g10", Some(od.g10))?,
            g01: raw.get_f64("observable", "g01", Some(od.g01))?,
            g11: raw.get_f64("observable", "g11", Some(od.g11))?,
            pair_width: raw.get_f64("observable", "pair_width", Some(od.pair_width))?,
            tau: [raw.get_f64("observable", "tau0", Some(od.tau[0]))?, raw.get_f64("observable", "tau1", Some(od.tau[1]))?],
        };
        raw.finish()?;

        let cfg = ExperimentConfig { d, l, psi_mode, jump: [a0, a1], repulsion: [p0, p1], initial, dynamics, hierarchy, run, report, theta, observable };
        cfg.validate(&raw)?;
        Ok(cfg)
    }

    fn validate(&self, raw: &Raw) -> Result<()> {
        self.kernel_set().map_err(|e| Error::Config { line: raw.section_line("kernel.a0"), msg: e.to_string() })?;
        let k = self.initial.kappa();
        if !(k[0] >= 0.0 && k[1] >= 0.0) {
            return cerr(raw.line_of("initial", "kappa0"), "intensities must be nonnegative");
        }
        if !(self.dynamics.t_end > 0.0) {
            return cerr(raw.line_of("dynamics", "t_end"), "t_end must be positive");
        }
        if !(0.0..=1.0).contains(&self.dynamics.sigma) {
            return cerr(raw.line_of("dynamics", "sigma"), "σ must lie in [0, 1]");
        }
        if self.run.paths == 0 {
            return cerr(raw.line_of("run", "paths"), "paths must be ≥ 1");
        }
        if self.hierarchy.max_order == 0 || self.hierarchy.max_order > 3 {
            return cerr(raw.line_of("hierarchy", "max_order"), "max_order must be 1, 2 or 3");
        }
        Ok(())
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn domain(&self) -> Result<Domain> {
        Ok(Domain::new(self.d, self.l)?.with_psi_mode(self.psi_mode))
    }

    pub fn kernel_set(&self) -> Result<KernelSet> {
        KernelSet::new(self.domain()?, self.jump, self.repulsion)
    }

    pub fn initial_law(&self, base: Option<&std::path::Path>) -> Result<InitialLaw> {
        Ok(match &self.initial {
            InitialSpec::Poisson { kappa } => InitialLaw::Poisson { kappa: *kappa },
            InitialSpec::Modulated { kappa, eps, freq } => InitialLaw::Modulated { kappa: *kappa, eps: *eps, freq: *freq },
            InitialSpec::File { path, .. } => {
                let p = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                let (dom, cfg) = Configuration::from_text(&std::fs::read_to_string(p)?)?;
                if dom.d != self.d || dom.l != self.l {
                    return Err(Error::Invalid("initial configuration file has a different domain".into()));
                }
                InitialLaw::Fixed(cfg)
            }
        })
    }

    /// ϑ₀, defaulting to ln max κ_i.
    pub fn theta0(&self) -> f64 {
        self.hierarchy.theta0.unwrap_or_else(|| {
            let k = self.initial.kappa();
            k[0].max(k[1]).ln()
        })
    }

    pub fn hierarchy_params(&self) -> HierarchyParams {
        HierarchyParams {
            max_order: self.hierarchy.max_order,
            grid_n: self.hierarchy.grid,
            n_max: self.hierarchy.n_max,
            closure: self.hierarchy.closure,
            safety: self.hierarchy.safety,
            sigma: self.dynamics.sigma,
            leak_estimate: self.hierarchy.leak_estimate,
            ..HierarchyParams::default()
        }
    }

    pub fn test_functions(&self) -> Result<[TestFunction; 2]> {
        let dom = self.domain()?;
        Ok([self.theta[0].build(dom)?, self.theta[1].build(dom)?])
    }

    pub fn wants(&self, c: Check) -> bool {
        self.report.checks.contains(&c)
    }

    /// Canonical text; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "[domain]\nd = {}\nL = {:?}\npsi = {}\n", self.d, self.l, self.psi_mode.name());
        for (i, a) in self.jump.iter().enumerate() {
            let _ = writeln!(s, "[kernel.a{i}]\nfamily = {}", a.name());
            let _ = match *a {
                JumpFamily::Gaussian { mass, width } => writeln!(s, "mass = {mass:?}\nwidth = {width:?}\n"),
                JumpFamily::Exponential { mass, length } => writeln!(s, "mass = {mass:?}\nlength = {length:?}\n"),
                JumpFamily::TopHat { mass, radius } => writeln!(s, "mass = {mass:?}\nradius = {radius:?}\n"),
            };
        }
        for (i, p) in self.repulsion.iter().enumerate() {
            let _ = writeln!(s, "[kernel.phi{i}]\nfamily = {}", p.name());
            let _ = match *p {
                RepulsionFamily::Zero => writeln!(s),
                RepulsionFamily::Gaussian { height, width } => writeln!(s, "height = {height:?}\nwidth = {width:?}\n"),
                RepulsionFamily::Exponential { height, length } => writeln!(s, "height = {height:?}\nlength = {length:?}\n"),
                RepulsionFamily::HardCore { radius } => writeln!(s, "radius = {radius:?}\n"),
            };
        }
        let k = self.initial.kappa();
        let _ = writeln!(s, "[initial]");
        let _ = match &self.initial {
            InitialSpec::Poisson { .. } => writeln!(s, "law = poisson"),
            InitialSpec::Modulated { eps, freq, .. } => writeln!(s, "law = modulated\neps0 = {:?}\neps1 = {:?}\nfreq = {freq}", eps[0], eps[1]),
            InitialSpec::File { path, .. } => writeln!(s, "law = file\nfile = {}", path.display()),
        };
        let _ = writeln!(s, "kappa0 = {:?}\nkappa1 = {:?}\n", k[0], k[1]);
        let _ = writeln!(s, "[dynamics]\nsigma = {:?}\nt_end = {:?}\n", self.dynamics.sigma, self.dynamics.t_end);
        let h = &self.hierarchy;
        let _ = writeln!(s, "[hierarchy]\nmax_order = {}\ngrid = {}\nn_max = {}\nclosure = {}", h.max_order, h.grid, h.n_max, h.closure.name());
        if let Some(t) = h.theta0 {
            let _ = writeln!(s, "theta0 = {t:?}");
        }
        let _ = writeln!(s, "safety = {:?}\nleak_estimate = {}\n", h.safety, h.leak_estimate);
        let r = &self.run;
        let _ = writeln!(s, "[run]\npaths = {}\nseed = {}\ngzip = {}\nsave_traces = {}\n", r.paths, r.seed, r.gzip, r.save_traces);
        let p = &self.report;
        let checks: Vec<&str> = p.checks.iter().map(|c| c.name()).collect();
        let _ = writeln!(s, "[report]\nchecks = {}", checks.join(", "));
        let _ = writeln!(s, "times = {}\ncompare_fractions = {}\nsigmas = {}", list(&p.times), list(&p.compare_fractions), list(&p.sigmas));
        let _ = writeln!(s, "spacings = {}\norigins = {}\nmoment_n = {}\nbetas = {}", list(&p.spacings), list(&p.origins), p.moment_n, list(&p.betas));
        let _ = writeln!(s, "region_half = {:?}\nm_max = {}\nt1 = {:?}\nt2 = {:?}\n", p.region_half, p.m_max, p.t1, p.t2);
        for (i, t) in self.theta.iter().enumerate() {
            let _ = writeln!(s, "[theta{i}]\nfamily = {}\namp = {:?}\nwidth = {:?}", t.family, t.amp, t.width);
            if let Some(c) = &t.center {
                let _ = writeln!(s, "center = {}", list(c));
            }
            let _ = writeln!(s);
        }
        let o = &self.observable;
        let _ = writeln!(
            s,
            "[observable]\nconstant = {:?}\ng10 = {:?}\ng01 = {:?}\ng11 = {:?}\npair_width = {:?}\ntau0 = {:?}\ntau1 = {:?}",
            o.constant, o.g10, o.g01, o.g11, o.pair_width, o.tau[0], o.tau[1]
        );
        s
    }
}

/// Center of the box as a coordinate list.
pub fn center_list(dom: &Domain) -> Vec<f64> {
    let c: Point = dom.center();
    c[..dom.d].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[domain]
L = 10

[kernel.a0]
family = top-hat
radius = 1

[initial]
kappa0 = 0.5
kappa1 = 0.5

[dynamics]
t_end = 1
";

    #[test]
    fn minimal_defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.d, 1);
        assert_eq!(c.jump[1], JumpFamily::TopHat { mass: 1.0, radius: 1.0 });
        assert_eq!(c.repulsion[0], RepulsionFamily::Zero);
        assert!((c.theta0() - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn round_trip() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        let c2 = ExperimentConfig::parse(&c.serialize()).unwrap();
        assert_eq!(c, c2);
        assert_eq!(c.serialize(), c2.serialize());
    }

    #[test]
    fn unknown_key_reports_line() {
        let bad = MINIMAL.replace("t_end = 1", "t_end = 1\nspeed = 3");
        match ExperimentConfig::parse(&bad) {
            Err(Error::Config { line, msg }) => {
                assert_eq!(line, 14);
                assert!(msg.contains("speed"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_section_and_bad_value() {
        assert!(matches!(ExperimentConfig::parse("[nope]\n"), Err(Error::Config { line: 1, .. })));
        let bad = MINIMAL.replace("kappa0 = 0.5", "kappa0 = half");
        assert!(matches!(ExperimentConfig::parse(&bad), Err(Error::Config { line: 9, .. })));
    }

    #[test]
    fn hard_core_too_wide_rejected() {
        let bad = format!("{MINIMAL}\n[kernel.phi0]\nfamily = hard-core\nradius = 5\n");
        assert!(matches!(ExperimentConfig::parse(&bad), Err(Error::Config { .. })));
    }
}
