//! Event-driven simulation of the two-type jump process by thinning.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{Configuration, Domain, Point};
use crate::kernels::KernelSet;
use crate::rng::Stream;

/// Cell list over one particle type.
#[derive(Debug, Clone)]
pub struct CellList {
    d: usize,
    nc: usize,
    side: f64,
    cells: Vec<Vec<usize>>,
    owner: Vec<usize>,
}

impl CellList {
    pub fn new(dom: &Domain, reach: f64, pts: &[Point]) -> Self {
        let nc = if reach > 0.0 { ((dom.l / reach).floor() as usize).clamp(1, 256) } else { 1 };
        let mut c = CellList { d: dom.d, nc, side: dom.l / nc as f64, cells: vec![Vec::new(); nc.pow(dom.d as u32)], owner: Vec::new() };
        for (i, p) in pts.iter().enumerate() {
            let k = c.cell_of(p);
            c.cells[k].push(i);
            c.owner.push(k);
        }
        c
    }

    fn coords(&self, p: &Point) -> [usize; 3] {
        let mut m = [0; 3];
        for a in 0..self.d {
            m[a] = ((p[a] / self.side) as usize).min(self.nc - 1);
        }
        m
    }

    fn flat(&self, m: &[usize; 3]) -> usize {
        let mut k = 0;
        for &v in m.iter().take(self.d) {
            k = k * self.nc + v;
        }
        k
    }

    fn cell_of(&self, p: &Point) -> usize {
        self.flat(&self.coords(p))
    }

    pub fn relocate(&mut self, idx: usize, to: &Point) {
        let old = self.owner[idx];
        let new = self.cell_of(to);
        if old != new {
            let pos = self.cells[old].iter().position(|&j| j == idx).expect("cell list out of sync");
            self.cells[old].swap_remove(pos);
            self.cells[new].push(idx);
            self.owner[idx] = new;
        }
    }

    /// Indices of particles in the cells adjacent to the cell of `p`.
    pub fn neighbors(&self, p: &Point, out: &mut Vec<usize>) {
        out.clear();
        if self.nc < 3 {
            for c in &self.cells {
                out.extend_from_slice(c);
            }
            return;
        }
        let m = self.coords(p);
        for off in 0..3usize.pow(self.d as u32) {
            let mut k = off;
            let mut q = [0; 3];
            for a in 0..self.d {
                let s = k % 3;
                k /= 3;
                q[a] = (m[a] + self.nc + s - 1) % self.nc;
            }
            out.extend_from_slice(&self.cells[self.flat(&q)]);
        }
    }

    /// True when the list holds exactly the given positions in the right cells.
    pub fn mirrors(&self, pts: &[Point]) -> bool {
        if self.owner.len() != pts.len() {
            return false;
        }
        let mut seen = vec![0usize; pts.len()];
        for (k, c) in self.cells.iter().enumerate() {
            for &i in c {
                if i >= pts.len() || self.cell_of(&pts[i]) != k || self.owner[i] != k {
                    return false;
                }
                seen[i] += 1;
            }
        }
        seen.iter().all(|&s| s == 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub ty: u8,
    pub idx: u32,
    pub id: u64,
    pub from: Point,
    pub to: Point,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub tentative: u64,
    pub accepted: u64,
    /// Events after which the configuration was not simple.
    pub simplicity_violations: u64,
    /// Events after which the cell lists did not mirror the configuration.
    pub cell_violations: u64,
    /// Hard-core destinations within range of an opposite particle.
    pub hard_core_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTrace {
    pub initial: Configuration,
    pub events: Vec<Event>,
    pub t_end: f64,
    pub seed: u64,
    pub path: u64,
    pub sigma: f64,
    pub stats: TraceStats,
}

pub struct SimulationState<'a> {
    pub cfg: Configuration,
    pub time: f64,
    pub sigma: f64,
    pub ks: &'a KernelSet,
    cells: [CellList; 2],
    rng: Stream,
    envelope: f64,
    scratch: Vec<usize>,
    /// Run the full cell-list audit after every accepted event.
    pub audit: bool,
    pub stats: TraceStats,
}

/// Outcome of one tentative event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    Accepted(Event),
    Rejected(f64),
    Idle,
}

impl<'a> SimulationState<'a> {
    pub fn new(cfg: Configuration, ks: &'a KernelSet, sigma: f64, rng: Stream) -> Self {
        let dom = ks.domain;
        let reach = [ks.phi[1].cutoff, ks.phi[0].cutoff];
        let cells = [CellList::new(&dom, reach[0], &cfg.point_vec(0)), CellList::new(&dom, reach[1], &cfg.point_vec(1))];
        let envelope = (0..2).map(|i| cfg.len(i) as f64 * ks.a[i].mass()).sum();
        SimulationState { cfg, time: 0.0, sigma, ks, cells, rng, envelope, scratch: Vec::new(), audit: true, stats: TraceStats::default() }
    }

    /// Λ̄ = Σ_i N_i ā_i^(0).
    pub fn envelope(&self) -> f64 {
        self.envelope
    }

    fn repulsion(&mut self, i: usize, y: &Point) -> f64 {
        let k = &self.ks.phi[i];
        if k.is_zero() {
            return 1.0;
        }
        let opp = 1 - i;
        let mut scratch = std::mem::take(&mut self.scratch);
        self.cells[opp].neighbors(y, &mut scratch);
        let mut s = 0.0;
        for &j in &scratch {
            let r = self.ks.domain.dist(&self.cfg.types[opp][j].pos, y);
            if r <= k.cutoff {
                s += k.phi(r);
            }
        }
        self.scratch = scratch;
        if s == f64::INFINITY {
            0.0
        } else {
            (-s).exp()
        }
    }

    /// One tentative event: 4 + (displacement draws) uniforms, always.
    pub fn step_event(&mut self) -> Step {
        if self.envelope <= 0.0 {
            return Step::Idle;
        }
        let dt = self.rng.exp(self.envelope);
        let pick = self.rng.uniform() * self.envelope;
        let w0 = self.cfg.len(0) as f64 * self.ks.a[0].mass();
        let (i, idx) = if pick < w0 {
            let m0 = self.ks.a[0].mass();
            (0, ((pick / m0) as usize).min(self.cfg.len(0) - 1))
        } else {
            let m1 = self.ks.a[1].mass();
            (1, (((pick - w0) / m1) as usize).min(self.cfg.len(1) - 1))
        };
        let u = self.ks.a[i].sample(&mut self.rng);
        let acc_u = self.rng.uniform();
        self.time += dt;
        self.stats.tentative += 1;
        let dom = self.ks.domain;
        let x = self.cfg.types[i][idx].pos;
        let y = dom.translate(&x, &u);
        let p = dom.psi_sigma(&x, self.sigma) * self.repulsion(i, &y);
        if acc_u >= p {
            return Step::Rejected(self.time);
        }
        self.cfg.types[i][idx].pos = y;
        self.cells[i].relocate(idx, &y);
        self.stats.accepted += 1;
        self.check_after(i, &y);
        Step::Accepted(Event { t: self.time, ty: i as u8, idx: idx as u32, id: self.cfg.types[i][idx].id, from: x, to: y })
    }

    fn check_after(&mut self, i: usize, y: &Point) {
        let coincide = self.cfg.points(0).chain(self.cfg.points(1)).filter(|p| *p == y).count() != 1;
        if coincide {
            self.stats.simplicity_violations += 1;
        }
        if let crate::kernels::RepulsionFamily::HardCore { radius } = self.ks.phi[i].family {
            if self.cfg.points(1 - i).any(|z| self.ks.domain.dist(z, y) <= radius) {
                self.stats.hard_core_violations += 1;
            }
        }
        if self.audit && !(self.cells[0].mirrors(&self.cfg.point_vec(0)) && self.cells[1].mirrors(&self.cfg.point_vec(1))) {
            self.stats.cell_violations += 1;
        }
    }
}

/// Complete trace on [0, t_end] for the stream (seed, path).
pub fn simulate_path(g0: Configuration, ks: &KernelSet, t_end: f64, sigma: f64, seed: u64, path: u64) -> Result<EventTrace> {
    let rng = Stream::new(seed, path);
    simulate_with(g0, ks, t_end, sigma, rng, seed, path)
}

fn simulate_with(g0: Configuration, ks: &KernelSet, t_end: f64, sigma: f64, rng: Stream, seed: u64, path: u64) -> Result<EventTrace> {
    if !(t_end > 0.0) {
        return invalid(format!("t_end = {t_end} must be positive"));
    }
    if !(0.0..=1.0).contains(&sigma) {
        return invalid(format!("σ = {sigma} outside [0, 1]"));
    }
    let mut st = SimulationState::new(g0.clone(), ks, sigma, rng);
    st.audit = g0.total() <= 64;
    let mut events = Vec::new();
    loop {
        match st.step_event() {
            Step::Idle => break,
            Step::Rejected(t) => {
                if t > t_end {
                    break;
                }
            }
            Step::Accepted(e) => {
                if e.t > t_end {
                    break;
                }
                events.push(e);
            }
        }
    }
    Ok(EventTrace { initial: g0, events, t_end, seed, path, sigma, stats: st.stats })
}

/// Poisson(κ_i L^d) counts, uniform positions.
pub fn sample_poisson_initial(kappa: [f64; 2], dom: &Domain, rng: &mut Stream) -> Configuration {
    sample_modulated_initial(kappa, [0.0, 0.0], 1, dom, rng)
}

/// Inhomogeneous Poisson with intensity κ_i(1 + ε_i cos(2πj x₀/L)), by thinning.
pub fn sample_modulated_initial(kappa: [f64; 2], eps: [f64; 2], freq: usize, dom: &Domain, rng: &mut Stream) -> Configuration {
    let mut cfg = Configuration::new();
    for i in 0..2 {
        if kappa[i] <= 0.0 {
            continue;
        }
        let top = 1.0 + eps[i].abs();
        let n = rng.poisson(kappa[i] * top * dom.volume());
        for _ in 0..n {
            let mut p = [0.0; 3];
            for v in p.iter_mut().take(dom.d) {
                *v = rng.uniform() * dom.l;
            }
            let keep = rng.uniform() * top < 1.0 + eps[i] * (2.0 * std::f64::consts::PI * freq as f64 * p[0] / dom.l).cos();
            if keep {
                cfg.push(i, p);
            }
        }
    }
    // coincidences have probability zero; redraw if one ever appears
    while !cfg.is_simple() {
        for ty in 0..2 {
            for k in 0..cfg.types[ty].len() {
                let mut p = [0.0; 3];
                for v in p.iter_mut().take(dom.d) {
                    *v = rng.uniform() * dom.l;
                }
                cfg.types[ty][k].pos = p;
            }
        }
    }
    cfg
}

/// Initial law for a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialLaw {
    Poisson { kappa: [f64; 2] },
    Modulated { kappa: [f64; 2], eps: [f64; 2], freq: usize },
    Fixed(Configuration),
}

impl InitialLaw {
    pub fn sample(&self, dom: &Domain, rng: &mut Stream) -> Configuration {
        match self {
            InitialLaw::Poisson { kappa } => sample_poisson_initial(*kappa, dom, rng),
            InitialLaw::Modulated { kappa, eps, freq } => sample_modulated_initial(*kappa, *eps, *freq, dom, rng),
            InitialLaw::Fixed(c) => c.clone(),
        }
    }
}

/// Worker count from `WRDYN_WORKERS`, else the number of available cores.
pub fn default_workers() -> usize {
    std::env::var("WRDYN_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Run `f(k)` for k in 0..n on `workers` threads; output order is by k.
pub fn par_map<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, workers: usize, f: F) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if workers > 1 {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().expect("thread pool");
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
    }
    let _ = workers;
    (0..n).map(f).collect()
}

/// n independent traces; path k uses stream (master_seed, k) for both the
/// initial configuration and the dynamics.
pub fn batch_simulate(
    law: &InitialLaw,
    ks: &KernelSet,
    n_paths: usize,
    t_end: f64,
    sigma: f64,
    master_seed: u64,
    workers: usize,
) -> Result<Vec<EventTrace>> {
    if n_paths == 0 {
        return invalid("n_paths must be at least 1");
    }
    par_map(n_paths, workers, |k| {
        let mut rng = Stream::new(master_seed, k as u64);
        let g0 = law.sample(&ks.domain, &mut rng);
        simulate_with(g0, ks, t_end, sigma, rng, master_seed, k as u64)
    })
    .into_iter()
    .collect()
}

impl EventTrace {
    /// Configuration after every event with time ≤ t.
    pub fn sample_at(&self, t: f64) -> Result<Configuration> {
        if !(0.0..=self.t_end).contains(&t) {
            return invalid(format!("t = {t} outside [0, {}]", self.t_end));
        }
        let mut c = self.cursor();
        c.advance_to(t);
        Ok(c.cfg)
    }

    pub fn final_configuration(&self) -> Configuration {
        let mut c = self.cursor();
        c.advance_to(self.t_end);
        c.cfg
    }

    pub fn cursor(&self) -> Cursor<'_> {
        Cursor { trace: self, next: 0, cfg: self.initial.clone() }
    }

    /// Replays the events and checks each `from` matches the stored position.
    pub fn replay_consistent(&self) -> bool {
        let mut cfg = self.initial.clone();
        let mut last = 0.0;
        for e in &self.events {
            if e.t <= last || e.t > self.t_end {
                return false;
            }
            last = e.t;
            let p = &mut cfg.types[e.ty as usize][e.idx as usize];
            if p.pos != e.from || p.id != e.id {
                return false;
            }
            p.pos = e.to;
        }
        true
    }

    /// Truncated copy on [0, t].
    pub fn truncated(&self, t: f64) -> EventTrace {
        let mut out = self.clone();
        out.events.retain(|e| e.t <= t);
        out.t_end = t;
        out
    }
}

/// Forward-only evaluation cursor over a trace.
pub struct Cursor<'a> {
    trace: &'a EventTrace,
    next: usize,
    pub cfg: Configuration,
}

impl<'a> Cursor<'a> {
    pub fn advance_to(&mut self, t: f64) {
        while self.next < self.trace.events.len() && self.trace.events[self.next].t <= t {
            let e = &self.trace.events[self.next];
            self.cfg.types[e.ty as usize][e.idx as usize].pos = e.to;
            self.next += 1;
        }
    }

    /// Time of the next event, or +∞.
    pub fn next_time(&self) -> f64 {
        self.trace.events.get(self.next).map(|e| e.t).unwrap_or(f64::INFINITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{JumpFamily, RepulsionFamily};

    fn free(l: f64) -> KernelSet {
        KernelSet::symmetric(Domain::new(1, l).unwrap(), JumpFamily::TopHat { mass: 1.0, radius: 1.0 }, RepulsionFamily::Zero).unwrap()
    }

    #[test]
    fn empty_start_has_no_events() {
        let ks = free(10.0);
        let tr = simulate_path(Configuration::new(), &ks, 1.0, 0.0, 1, 0).unwrap();
        assert!(tr.events.is_empty());
    }

    #[test]
    fn replay_and_sampling() {
        let ks = free(10.0);
        let g0 = Configuration::from_points(&[[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]], &[[7.0, 0.0, 0.0]]);
        let tr = simulate_path(g0.clone(), &ks, 2.0, 0.0, 9, 3).unwrap();
        assert!(!tr.events.is_empty());
        assert!(tr.replay_consistent());
        assert_eq!(tr.sample_at(0.0).unwrap(), g0);
        let e = tr.events[0];
        let at = tr.sample_at(e.t).unwrap();
        assert_eq!(at.types[e.ty as usize][e.idx as usize].pos, e.to);
        assert!(tr.sample_at(2.5).is_err());
        assert_eq!(tr, simulate_path(g0, &ks, 2.0, 0.0, 9, 3).unwrap());
    }

    #[test]
    fn sigma_coupling_reduces_acceptances() {
        let ks = free(10.0);
        let g0 = Configuration::from_points(&[[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]], &[[7.0, 0.0, 0.0]]);
        for path in 0..20 {
            let a = simulate_path(g0.clone(), &ks, 3.0, 0.0, 5, path).unwrap();
            let b = simulate_path(g0.clone(), &ks, 3.0, 1.0, 5, path).unwrap();
            assert!(b.stats.accepted <= a.stats.accepted);
            assert_eq!(a.stats.accepted, a.stats.tentative.min(a.stats.accepted));
        }
    }

    #[test]
    fn hard_core_respected() {
        let dom = Domain::new(1, 6.0).unwrap();
        let ks = KernelSet::symmetric(dom, JumpFamily::TopHat { mass: 2.0, radius: 1.0 }, RepulsionFamily::HardCore { radius: 0.4 }).unwrap();
        let g0 = Configuration::from_points(&[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], &[[4.0, 0.0, 0.0], [5.0, 0.0, 0.0]]);
        let tr = simulate_path(g0, &ks, 20.0, 0.0, 2, 0).unwrap();
        assert!(tr.stats.accepted > 10);
        assert_eq!(tr.stats.hard_core_violations, 0);
        assert_eq!(tr.stats.cell_violations, 0);
        assert_eq!(tr.stats.simplicity_violations, 0);
    }

    #[test]
    fn cell_list_neighbors_cover_range() {
        let dom = Domain::new(2, 10.0).unwrap();
        let pts: Vec<Point> = (0..50).map(|k| [(k as f64 * 1.37) % 10.0, (k as f64 * 2.71) % 10.0, 0.0]).collect();
        let cl = CellList::new(&dom, 1.5, &pts);
        assert!(cl.mirrors(&pts));
        let y = [9.9, 0.1, 0.0];
        let mut nb = Vec::new();
        cl.neighbors(&y, &mut nb);
        for (i, p) in pts.iter().enumerate() {
            if dom.dist(p, &y) <= 1.5 {
                assert!(nb.contains(&i));
            }
        }
    }

    #[test]
    fn batch_matches_single_and_workers() {
        let ks = free(10.0);
        let law = InitialLaw::Poisson { kappa: [0.3, 0.2] };
        let a = batch_simulate(&law, &ks, 16, 1.0, 0.0, 77, 1).unwrap();
        let b = batch_simulate(&law, &ks, 16, 1.0, 0.0, 77, 4).unwrap();
        assert_eq!(a, b);
        let mut rng = Stream::new(77, 5);
        let g0 = law.sample(&ks.domain, &mut rng);
        let single = simulate_with(g0, &ks, 1.0, 0.0, rng, 77, 5).unwrap();
        assert_eq!(single, a[5]);
    }
}
