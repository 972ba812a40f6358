//! Correlation functions k^(m) and quasi-observables G^(m) on torus grids,
//! evolved by the forward (L^Δ) and dual (L̂) operator series.
//!
//! Both operators are discretized on the same grid so that the forward one is
//! the exact transpose of the dual one under
//! ⟨⟨k, G⟩⟩ = Σ_m w^{|m|}/(m₀!m₁!) Σ_nodes k^(m) G^(m), with w the node weight.
//! Jump kernels act through circulant weights taken from their Fourier symbol,
//! repulsion through pointwise samples of t = e^{−φ} − 1.

use crate::error::{invalid, Error, Result};
use crate::geometry::{check_budget, Configuration, Point};
use crate::grid::Grid;
use crate::kernels::KernelSet;
use crate::sim::{default_workers, par_map};

/// All (m₀, m₁) with m₀ + m₁ ≤ max, by total order then descending m₀.
pub fn orders_upto(max: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for s in 0..=max {
        for m0 in (0..=s).rev() {
            v.push((m0, s - m0));
        }
    }
    v
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Grid functions for every order |m| ≤ M; coordinates are laid out as the
/// type-0 block followed by the type-1 block, row-major over grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    pub grid: Grid,
    pub max_order: usize,
    pub orders: Vec<(usize, usize)>,
    pub data: Vec<Vec<f64>>,
}

impl Tower {
    pub fn zeros(grid: Grid, max_order: usize) -> Self {
        let orders = orders_upto(max_order);
        let nn = grid.size();
        let data = orders.iter().map(|&(a, b)| vec![0.0; nn.pow((a + b) as u32)]).collect();
        Tower { grid, max_order, orders, data }
    }

    pub fn index(&self, m: (usize, usize)) -> Option<usize> {
        self.orders.iter().position(|&o| o == m)
    }

    pub fn get(&self, m: (usize, usize)) -> Option<&[f64]> {
        self.index(m).map(|i| self.data[i].as_slice())
    }

    pub fn get_mut(&mut self, m: (usize, usize)) -> Option<&mut Vec<f64>> {
        self.index(m).map(move |i| &mut self.data[i])
    }

    pub fn set(&mut self, m: (usize, usize), values: Vec<f64>) -> Result<()> {
        let nn = self.grid.size();
        let Some(i) = self.index(m) else {
            return invalid(format!("order {m:?} exceeds the stored maximum {}", self.max_order));
        };
        if values.len() != nn.pow((m.0 + m.1) as u32) {
            return invalid(format!("order {m:?}: expected {} values, got {}", nn.pow((m.0 + m.1) as u32), values.len()));
        }
        self.data[i] = values;
        Ok(())
    }

    /// Fill order m from a function of the tuple points (type-0 block first).
    pub fn set_fn<F: Fn(&[Point]) -> f64>(&mut self, m: (usize, usize), f: F) -> Result<()> {
        let len = m.0 + m.1;
        let nn = self.grid.size();
        let mut pts = vec![[0.0; 3]; len];
        let mut coords = vec![0usize; len];
        let total = nn.pow(len as u32);
        let mut v = Vec::with_capacity(total);
        for flat in 0..total {
            decode(flat, nn, &mut coords);
            for (p, &c) in pts.iter_mut().zip(&coords) {
                *p = self.grid.node(c);
            }
            v.push(f(&pts));
        }
        self.set(m, v)
    }

    /// Pairing weight w^{|m|}/(m₀!m₁!).
    pub fn weight(&self, m: (usize, usize)) -> f64 {
        self.grid.weight().powi((m.0 + m.1) as i32) / (factorial(m.0) * factorial(m.1))
    }

    pub fn axpy(&mut self, a: f64, other: &Tower) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            for (p, q) in x.iter_mut().zip(y) {
                *p += a * q;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for x in self.data.iter_mut() {
            x.iter_mut().for_each(|v| *v *= a);
        }
    }

    /// Largest deviation from symmetry under swaps inside a type block.
    pub fn asymmetry(&self) -> f64 {
        let nn = self.grid.size();
        let mut worst: f64 = 0.0;
        for (oi, &(m0, m1)) in self.orders.iter().enumerate() {
            let len = m0 + m1;
            let v = &self.data[oi];
            let mut c = vec![0usize; len];
            for flat in 0..v.len() {
                decode(flat, nn, &mut c);
                for p in 0..len.saturating_sub(1) {
                    let same_block = (p + 1 < m0) || (p >= m0);
                    if !same_block {
                        continue;
                    }
                    c.swap(p, p + 1);
                    let g = encode(&c, nn);
                    c.swap(p, p + 1);
                    worst = worst.max((v[flat] - v[g]).abs());
                }
            }
        }
        worst
    }

    /// Multilinear interpolation of G^(m) at a tuple of points.
    pub fn interp_at(&self, m: (usize, usize), pts: &[Point]) -> f64 {
        let Some(v) = self.get(m) else { return 0.0 };
        if pts.is_empty() {
            return v[0];
        }
        let g = &self.grid;
        let nn = g.size();
        let stencils: Vec<Vec<(usize, f64)>> = pts.iter().map(|x| node_stencil(g, x)).collect();
        let mut acc = 0.0;
        let mut pick = vec![0usize; pts.len()];
        loop {
            let mut w = 1.0;
            let mut flat = 0;
            for (s, &k) in stencils.iter().zip(&pick) {
                w *= s[k].1;
                flat = flat * nn + s[k].0;
            }
            if w != 0.0 {
                acc += w * v[flat];
            }
            let mut p = pts.len();
            loop {
                if p == 0 {
                    return acc;
                }
                p -= 1;
                pick[p] += 1;
                if pick[p] < stencils[p].len() {
                    break;
                }
                pick[p] = 0;
            }
        }
    }
}

fn node_stencil(g: &Grid, x: &Point) -> Vec<(usize, f64)> {
    let h = g.h();
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..g.d {
        let s = (x[a] / h).rem_euclid(g.n as f64);
        let f = s.floor();
        base[a] = (f as usize) % g.n;
        frac[a] = s - f;
    }
    let mut out = Vec::with_capacity(1 << g.d);
    for corner in 0..(1usize << g.d) {
        let mut w = 1.0;
        let mut m = [0usize; 3];
        for a in 0..g.d {
            let bit = (corner >> a) & 1;
            m[a] = (base[a] + bit) % g.n;
            w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        out.push((g.flat(&m), w));
    }
    out
}

fn decode(mut flat: usize, nn: usize, out: &mut [usize]) {
    for c in out.iter_mut().rev() {
        *c = flat % nn;
        flat /= nn;
    }
}

fn encode(c: &[usize], nn: usize) -> usize {
    c.iter().fold(0, |acc, &v| acc * nn + v)
}

/// k^(m), |m| ≤ M, with the declared type e^ϑ.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationField {
    pub tower: Tower,
    pub theta: f64,
}

impl CorrelationField {
    /// Poisson field k^(m) = κ₀^{m₀} κ₁^{m₁}.
    pub fn poisson(grid: Grid, max_order: usize, kappa: [f64; 2]) -> Result<Self> {
        if kappa.iter().any(|k| !(*k > 0.0)) {
            return invalid("Poisson field needs κ_i > 0");
        }
        let mut t = Tower::zeros(grid, max_order);
        for (oi, &(m0, m1)) in t.orders.clone().iter().enumerate() {
            let v = kappa[0].powi(m0 as i32) * kappa[1].powi(m1 as i32);
            t.data[oi].iter_mut().for_each(|x| *x = v);
        }
        Ok(CorrelationField { tower: t, theta: kappa[0].max(kappa[1]).ln() })
    }

    /// Inhomogeneous Poisson field k^(m)(ζ) = Π ρ_type(ζ_j).
    pub fn product(grid: Grid, max_order: usize, rho: [Vec<f64>; 2]) -> Result<Self> {
        let nn = grid.size();
        if rho.iter().any(|r| r.len() != nn || r.iter().any(|v| !(*v >= 0.0))) {
            return invalid("one-point densities must be nonnegative grid functions");
        }
        let mut t = Tower::zeros(grid, max_order);
        for (oi, &(m0, m1)) in t.orders.clone().iter().enumerate() {
            t.data[oi] = product_values(&rho, (m0, m1), nn);
        }
        let top = rho.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
        if top <= 0.0 {
            return invalid("one-point densities vanish identically");
        }
        Ok(CorrelationField { tower: t, theta: top.ln() })
    }

    /// ‖k‖_ϑ = max_m e^{−ϑ|m|} sup |k^(m)|.
    pub fn norm(&self, theta: f64) -> f64 {
        forward_norm(&self.tower, theta)
    }

    /// (min value, max of k^(m) − e^{ϑ|m|}) over stored orders |m| ≥ 1.
    pub fn ruelle_excess(&self, theta: f64) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut over = f64::NEG_INFINITY;
        for (oi, &(m0, m1)) in self.tower.orders.iter().enumerate() {
            if m0 + m1 == 0 {
                continue;
            }
            let cap = (theta * (m0 + m1) as f64).exp();
            for &v in &self.tower.data[oi] {
                lo = lo.min(v);
                over = over.max(v - cap);
            }
        }
        (lo, over)
    }

    /// Errors when 0 ≤ k^(m) ≤ e^{ϑ|m|} fails beyond `tol`.
    pub fn check_ruelle(&self, theta: f64, tol: f64) -> Result<()> {
        let (lo, over) = self.ruelle_excess(theta);
        if lo < -tol || over > tol {
            return Err(Error::Bound(format!("Ruelle bound: min {lo:e}, excess {over:e} at ϑ = {theta}")));
        }
        Ok(())
    }

    pub fn one_point(&self) -> Result<[Vec<f64>; 2]> {
        match (self.tower.get((1, 0)), self.tower.get((0, 1))) {
            (Some(a), Some(b)) => Ok([a.to_vec(), b.to_vec()]),
            _ => invalid("field stores no one-point functions"),
        }
    }
}

fn product_values(rho: &[Vec<f64>; 2], m: (usize, usize), nn: usize) -> Vec<f64> {
    let len = m.0 + m.1;
    let mut c = vec![0usize; len];
    (0..nn.pow(len as u32))
        .map(|flat| {
            decode(flat, nn, &mut c);
            c.iter().enumerate().map(|(p, &x)| if p < m.0 { rho[0][x] } else { rho[1][x] }).product()
        })
        .collect()
}

fn forward_norm(t: &Tower, theta: f64) -> f64 {
    t.orders
        .iter()
        .zip(&t.data)
        .map(|(&(a, b), v)| (-theta * (a + b) as f64).exp() * v.iter().fold(0.0f64, |s, x| s.max(x.abs())))
        .fold(0.0, f64::max)
}

fn dual_norm(t: &Tower, theta: f64) -> f64 {
    t.orders
        .iter()
        .zip(&t.data)
        .map(|(&m, v)| (theta * (m.0 + m.1) as f64).exp() * t.weight(m) * v.iter().map(|x| x.abs()).sum::<f64>())
        .sum()
}

/// Finitely supported G = {G^(m)}, |m| ≤ M.
#[derive(Debug, Clone, PartialEq)]
pub struct QuasiObservable {
    pub tower: Tower,
}

impl QuasiObservable {
    pub fn zero(grid: Grid, max_order: usize) -> Self {
        QuasiObservable { tower: Tower::zeros(grid, max_order) }
    }

    pub fn constant(grid: Grid, max_order: usize, c: f64) -> Self {
        let mut q = Self::zero(grid, max_order);
        q.tower.data[0][0] = c;
        q
    }

    /// G^(e_i) = θ sampled on the grid, every other order zero.
    pub fn one_point(grid: Grid, max_order: usize, ty: usize, theta: Vec<f64>) -> Result<Self> {
        let mut q = Self::zero(grid, max_order);
        q.tower.set(if ty == 0 { (1, 0) } else { (0, 1) }, theta)?;
        Ok(q)
    }

    /// |G|_ϑ = Σ_m e^{ϑ|m|}/(m₀!m₁!) ∫|G^(m)|.
    pub fn norm(&self, theta: f64) -> f64 {
        dual_norm(&self.tower, theta)
    }

    /// Highest order carrying a nonzero value.
    pub fn support_orders(&self) -> Vec<(usize, usize)> {
        self.tower.orders.iter().zip(&self.tower.data).filter(|(_, v)| v.iter().any(|x| *x != 0.0)).map(|(m, _)| *m).collect()
    }
}

/// ⟨⟨k, G⟩⟩ over the orders both towers store.
pub fn pair(k: &Tower, g: &Tower) -> f64 {
    let mut s = 0.0;
    for (oi, &m) in g.orders.iter().enumerate() {
        if let Some(kv) = k.get(m) {
            let w = g.weight(m);
            s += w * kv.iter().zip(&g.data[oi]).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    s
}

/// Σ_m c_m Σ |k||G|, the scale of the pairing for rounding budgets.
pub fn pair_abs(k: &Tower, g: &Tower) -> f64 {
    let mut s = 0.0;
    for (oi, &m) in g.orders.iter().enumerate() {
        if let Some(kv) = k.get(m) {
            s += g.weight(m) * kv.iter().zip(&g.data[oi]).map(|(a, b)| (a * b).abs()).sum::<f64>();
        }
    }
    s
}

pub fn pair_kg(k: &CorrelationField, g: &QuasiObservable) -> f64 {
    pair(&k.tower, &g.tower)
}

/// (KG)(γ) = Σ_m 1/(m₀!m₁!) Σ_{ordered distinct tuples} G^(m), grid functions
/// interpolated at particle positions.
pub fn k_transform(g: &QuasiObservable, cfg: &Configuration) -> Result<f64> {
    let p0 = cfg.point_vec(0);
    let p1 = cfg.point_vec(1);
    let mut total = 0.0;
    for (oi, &(m0, m1)) in g.tower.orders.iter().enumerate() {
        if g.tower.data[oi].iter().all(|v| *v == 0.0) {
            continue;
        }
        check_budget(p0.len(), m0)?;
        check_budget(p1.len(), m1)?;
        let mut s = 0.0;
        let mut pts = Vec::with_capacity(m0 + m1);
        for t0 in distinct_tuples(p0.len(), m0) {
            for t1 in distinct_tuples(p1.len(), m1) {
                pts.clear();
                pts.extend(t0.iter().map(|&i| p0[i]));
                pts.extend(t1.iter().map(|&i| p1[i]));
                s += g.tower.interp_at((m0, m1), &pts);
            }
        }
        total += s / (factorial(m0) * factorial(m1));
    }
    Ok(total)
}

fn distinct_tuples(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(m);
    fn rec(n: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for i in 0..n {
            if !cur.contains(&i) {
                cur.push(i);
                rec(n, m, cur, out);
                cur.pop();
            }
        }
    }
    rec(n, m, &mut cur, &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Closure {
    /// Orders above M are dropped.
    Truncate,
    /// k^(m′) ≈ Π one-point factors for |m′| > M, frozen over a sub-step.
    PoissonProduct,
    /// Truncated evolution plus an interval from the Ruelle bound on the
    /// dropped terms.
    RuelleCap,
}

impl Closure {
    pub fn name(self) -> &'static str {
        match self {
            Closure::Truncate => "truncate",
            Closure::PoissonProduct => "poisson-product",
            Closure::RuelleCap => "ruelle-cap",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "truncate" => Ok(Closure::Truncate),
            "poisson-product" => Ok(Closure::PoissonProduct),
            "ruelle-cap" => Ok(Closure::RuelleCap),
            _ => invalid(format!("unknown closure '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyParams {
    pub max_order: usize,
    /// Grid nodes per axis.
    pub grid_n: usize,
    /// Υ truncation depth.
    pub n_max: usize,
    pub closure: Closure,
    /// Sub-step length ≤ safety × T(ϑ+δ, ϑ).
    pub safety: f64,
    pub term_cap: usize,
    pub rel_tol: f64,
    pub sigma: f64,
    /// Pair k₀ with the dropped order-(M+1) dual output at each sub-step.
    pub leak_estimate: bool,
}

impl Default for HierarchyParams {
    fn default() -> Self {
        HierarchyParams {
            max_order: 2,
            grid_n: 64,
            n_max: 3,
            closure: Closure::PoissonProduct,
            safety: 0.5,
            term_cap: 60,
            rel_tol: 1e-12,
            sigma: 0.0,
            leak_estimate: false,
        }
    }
}

/// Precomputed grid operators for one kernel set, grid and σ.
pub struct Operators {
    pub grid: Grid,
    nn: usize,
    w: f64,
    sub: Vec<u32>,
    /// Circulant weights of a_i by offset index.
    amat: [Vec<f64>; 2],
    /// t_i = e^{−φ_i} − 1 by offset index.
    t: [Vec<f64>; 2],
    t_zero: [bool; 2],
    psi: Vec<f64>,
    pub n_max: usize,
    workers: usize,
    /// Σ |weights| of a_i.
    pub a_abs: [f64; 2],
    /// Σ_z w |t_i(z)|.
    pub t_abs: [f64; 2],
}

struct Scratch {
    c: Vec<usize>,
    src: Vec<usize>,
    wy: Vec<f64>,
    ey: Vec<f64>,
}

impl Scratch {
    fn new(nn: usize) -> Self {
        Scratch { c: Vec::new(), src: Vec::new(), wy: vec![0.0; nn], ey: vec![0.0; nn] }
    }
}

impl Operators {
    pub fn new(ks: &KernelSet, n: usize, sigma: f64, n_max: usize) -> Result<Self> {
        if n < 4 {
            return invalid("grid needs at least 4 nodes per axis");
        }
        if !(0.0..=1.0).contains(&sigma) {
            return invalid(format!("σ = {sigma} not in [0, 1]"));
        }
        let grid = Grid::new(&ks.domain, n);
        let nn = grid.size();
        let mut amat = [Vec::new(), Vec::new()];
        let mut t = [Vec::new(), Vec::new()];
        let mut t_zero = [true; 2];
        for i in 0..2 {
            let a = &ks.a[i];
            amat[i] = grid.spectral_weights(|xi| a.fourier(xi));
            let ph = &ks.phi[i];
            if ph.phibar.is_infinite() {
                return invalid("hierarchy needs bounded repulsion");
            }
            if matches!(ph.family, crate::kernels::RepulsionFamily::HardCore { .. }) {
                return invalid("hard-core repulsion is simulator-only");
            }
            t[i] = (0..nn)
                .map(|o| {
                    let r = crate::geometry::norm(&grid.offset_vector(o), grid.d);
                    (-ph.phi(r)).exp_m1()
                })
                .collect();
            t_zero[i] = ph.is_zero() || t[i].iter().all(|v| *v == 0.0);
        }
        let psi = (0..nn).map(|x| ks.domain.psi_sigma(&grid.node(x), sigma)).collect();
        let w = grid.weight();
        let a_abs = [amat[0].iter().map(|v| v.abs()).sum(), amat[1].iter().map(|v| v.abs()).sum()];
        let t_abs = [w * t[0].iter().map(|v| v.abs()).sum::<f64>(), w * t[1].iter().map(|v| v.abs()).sum::<f64>()];
        Ok(Operators { grid, nn, w, sub: grid.sub_table(), amat, t, t_zero, psi, n_max, workers: default_workers(), a_abs, t_abs })
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    #[inline]
    fn sub(&self, y: usize, z: usize) -> usize {
        self.sub[y * self.nn + z] as usize
    }

    fn sweep<F: Fn(&mut Scratch, usize) -> f64 + Sync + Send>(&self, total: usize, f: F) -> Vec<f64> {
        let chunk = 4096usize;
        let nchunks = total.div_ceil(chunk);
        let parts = par_map(nchunks, self.workers, |c| {
            let mut s = Scratch::new(self.nn);
            let lo = c * chunk;
            let hi = (lo + chunk).min(total);
            (lo..hi).map(|i| f(&mut s, i)).collect::<Vec<f64>>()
        });
        parts.concat()
    }

    /// (L̂G)^(m) at every node tuple of order m (m may exceed the storage of g;
    /// missing source orders count as zero).
    pub fn dual_order(&self, g: &Tower, m: (usize, usize)) -> Vec<f64> {
        let len = m.0 + m.1;
        let nn = self.nn;
        let total = nn.pow(len as u32);
        // nothing to do when no source order is stored
        let any_source = (0..2).any(|i| {
            let mi = if i == 0 { m.0 } else { m.1 };
            let mp = if i == 0 { m.1 } else { m.0 };
            mi > 0 && (0..=mp.min(self.n_max)).any(|n| g.get(if i == 0 { (m.0, m.1 - n) } else { (m.0 - n, m.1) }).is_some())
        });
        if !any_source {
            return vec![0.0; total];
        }
        self.sweep(total, |s, flat| {
            s.c.resize(len, 0);
            decode(flat, nn, &mut s.c);
            self.dual_value(g, m, s)
        })
    }

    fn dual_value(&self, g: &Tower, m: (usize, usize), s: &mut Scratch) -> f64 {
        let nn = self.nn;
        let mut out = 0.0;
        for i in 0..2 {
            let (blk, opp) = if i == 0 { (0..m.0, m.0..m.0 + m.1) } else { (m.0..m.0 + m.1, 0..m.0) };
            if blk.is_empty() {
                continue;
            }
            let mp = opp.len();
            let amat = &self.amat[i];
            let t = &self.t[i];
            let masks = if self.t_zero[i] { 1 } else { 1usize << mp };
            for mask in 0..masks {
                let n = mask.count_ones() as usize;
                if n > self.n_max {
                    continue;
                }
                let src_m = if i == 0 { (m.0, m.1 - n) } else { (m.0 - n, m.1) };
                let Some(gs) = g.get(src_m) else { continue };
                // weight over the destination y
                if self.t_zero[i] {
                    s.wy.iter_mut().for_each(|v| *v = 1.0);
                } else {
                    for y in 0..nn {
                        let mut w = 1.0;
                        for (b, p) in opp.clone().enumerate() {
                            let tv = t[self.sub(y, s.c[p])];
                            w *= if mask >> b & 1 == 1 { tv } else { 1.0 + tv };
                        }
                        s.wy[y] = w;
                    }
                }
                s.src.clear();
                let mut pos_of = [usize::MAX; 16];
                for p in 0..m.0 + m.1 {
                    let dropped = opp.contains(&p) && (mask >> (p - opp.start)) & 1 == 1;
                    if !dropped {
                        pos_of[p] = s.src.len();
                        s.src.push(s.c[p]);
                    }
                }
                let slen = s.src.len();
                let base = encode(&s.src, nn);
                let gbase = gs[base];
                for j in blk.clone() {
                    let x = s.c[j];
                    let ps = self.psi[x];
                    if ps == 0.0 {
                        continue;
                    }
                    let stride = nn.pow((slen - 1 - pos_of[j]) as u32);
                    let row = base - x * stride;
                    let xrow = &self.sub[x * nn..(x + 1) * nn];
                    let mut acc = 0.0;
                    for y in 0..nn {
                        let wy = s.wy[y];
                        if wy != 0.0 {
                            acc += amat[xrow[y] as usize] * wy * (gs[row + y * stride] - gbase);
                        }
                    }
                    out += ps * acc;
                }
            }
        }
        out
    }

    /// L̂G on the stored orders (outputs above M are dropped).
    pub fn dual_apply(&self, g: &Tower) -> Tower {
        let mut out = Tower::zeros(g.grid, g.max_order);
        for oi in 0..g.orders.len() {
            out.data[oi] = self.dual_order(g, g.orders[oi]);
        }
        out
    }

    /// Σ_{|m| = M+1} c_m Σ ρ^{⊗m} |(L̂G)^(m)|: the part of ⟨⟨k₀, L̂G⟩⟩ that
    /// truncation discards, for a product field with one-point densities ρ.
    pub fn dual_leak(&self, g: &Tower, rho: &[Vec<f64>; 2]) -> f64 {
        let top = g.max_order + 1;
        let mut s = 0.0;
        for m0 in 0..=top {
            let m = (m0, top - m0);
            let v = self.dual_order(g, m);
            if v.iter().all(|x| *x == 0.0) {
                continue;
            }
            let p = product_values(rho, m, self.nn);
            let w = self.w.powi(top as i32) / (factorial(m.0) * factorial(m.1));
            s += w * v.iter().zip(&p).map(|(a, b)| (a * b).abs()).sum::<f64>();
        }
        s
    }

    /// (Υ_y^i k)^(m)(ζ) = Σ_{n ≤ nMax} (1/n!) Σ_z w^n k^(m+n e_{1−i})(ζ, z) Π t_i(y − z_l),
    /// orders above the storage taken from the product closure `rho` if given.
    pub fn upsilon(&self, k: Option<&Tower>, rho: Option<&[Vec<f64>; 2]>, i: usize, m: (usize, usize), zeta: &[usize], y: usize) -> f64 {
        let closure = rho.map(|r| (r, self.closure_r(r, i, y)));
        let max = k.map(|t| t.max_order).unwrap_or(m.0 + m.1);
        self.upsilon_inner(k, closure.as_ref().map(|(r, c)| (*r, *c)), i, m, zeta, y, max)
    }

    fn closure_r(&self, rho: &[Vec<f64>; 2], i: usize, y: usize) -> f64 {
        let r = &rho[1 - i];
        (0..self.nn).map(|z| r[z] * self.t[i][self.sub(y, z)]).sum::<f64>() * self.w
    }

    #[allow(clippy::too_many_arguments)]
    fn upsilon_inner(
        &self,
        k: Option<&Tower>,
        closure: Option<(&[Vec<f64>; 2], f64)>,
        i: usize,
        m: (usize, usize),
        zeta: &[usize],
        y: usize,
        max: usize,
    ) -> f64 {
        let nn = self.nn;
        let opp = 1 - i;
        let mut v = 0.0;
        if let Some(kt) = k {
            if let Some(km) = kt.get(m) {
                v += km[encode(zeta, nn)];
            }
        }
        if self.t_zero[i] {
            return v;
        }
        let zflat = encode(zeta, nn);
        let (m0, m1) = m;
        for n in 1..=self.n_max {
            let mn = if opp == 1 { (m0, m1 + n) } else { (m0 + n, m1) };
            let stored = k.and_then(|kt| if mn.0 + mn.1 <= max { kt.get(mn) } else { None });
            if let Some(kn) = stored {
                let nz = nn.pow(n as u32);
                let mut zc = vec![0usize; n];
                let mut s = 0.0;
                for zf in 0..nz {
                    decode(zf, nn, &mut zc);
                    let mut w = 1.0;
                    for &z in &zc {
                        w *= self.t[i][self.sub(y, z)];
                    }
                    if w == 0.0 {
                        continue;
                    }
                    let idx = if opp == 1 {
                        zflat * nz + zf
                    } else {
                        let p1 = nn.pow(m1 as u32);
                        ((zflat / p1) * nz + zf) * p1 + zflat % p1
                    };
                    s += w * kn[idx];
                }
                v += s * self.w.powi(n as i32) / factorial(n);
            } else if let Some((rho, r)) = closure {
                if mn.0 + mn.1 > max {
                    let p: f64 = zeta.iter().enumerate().map(|(pi, &x)| if pi < m0 { rho[0][x] } else { rho[1][x] }).product();
                    v += p * r.powi(n as i32) / factorial(n);
                }
            }
        }
        v
    }

    /// L^Δ k on the stored orders; `rho` switches on the product closure for
    /// orders above M. With `k = None` only the closure part is returned.
    pub fn forward_apply(&self, k: Option<&Tower>, rho: Option<&[Vec<f64>; 2]>, grid: Grid, max_order: usize) -> Tower {
        let nn = self.nn;
        let mut out = Tower::zeros(grid, max_order);
        let rvals: Option<[Vec<f64>; 2]> = rho.map(|r| {
            [(0..nn).map(|y| self.closure_r(r, 0, y)).collect(), (0..nn).map(|y| self.closure_r(r, 1, y)).collect()]
        });
        for oi in 0..out.orders.len() {
            let m = out.orders[oi];
            let len = m.0 + m.1;
            if len == 0 {
                continue;
            }
            // Υ tables V_i[ζ·N + y]
            let mut tables: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
            for i in 0..2 {
                let mi = if i == 0 { m.0 } else { m.1 };
                if mi == 0 {
                    continue;
                }
                let rv = rvals.as_ref();
                tables[i] = self.sweep(nn.pow(len as u32) * nn, |s, idx| {
                    let zf = idx / nn;
                    let y = idx % nn;
                    s.c.resize(len, 0);
                    decode(zf, nn, &mut s.c);
                    let cl = rho.zip(rv).map(|(r, rv)| (r, rv[i][y]));
                    self.upsilon_inner(k, cl, i, m, &s.c, y, max_order)
                });
            }
            out.data[oi] = self.sweep(nn.pow(len as u32), |s, flat| {
                s.c.resize(len, 0);
                decode(flat, nn, &mut s.c);
                self.forward_value(m, flat, &tables, s)
            });
        }
        out
    }

    fn forward_value(&self, m: (usize, usize), flat: usize, tables: &[Vec<f64>; 2], s: &mut Scratch) -> f64 {
        let nn = self.nn;
        let len = m.0 + m.1;
        let mut out = 0.0;
        for i in 0..2 {
            let (blk, opp) = if i == 0 { (0..m.0, m.0..len) } else { (m.0..len, 0..m.0) };
            if blk.is_empty() {
                continue;
            }
            let v = &tables[i];
            let amat = &self.amat[i];
            let t = &self.t[i];
            // E(y′) = Π_{z in the opposite block} (1 + t_i(y′ − z))
            for yp in 0..nn {
                let mut e = 1.0;
                if !self.t_zero[i] {
                    for p in opp.clone() {
                        e *= 1.0 + t[self.sub(yp, s.c[p])];
                    }
                }
                s.ey[yp] = e;
            }
            for j in blk {
                let y = s.c[j];
                let stride = nn.pow((len - 1 - j) as u32);
                let row = flat - y * stride;
                let mut gain = 0.0;
                for x in 0..nn {
                    let ps = self.psi[x];
                    if ps != 0.0 {
                        gain += amat[self.sub(x, y)] * ps * v[(row + x * stride) * nn + y];
                    }
                }
                gain *= s.ey[y];
                let mut loss = 0.0;
                let yrow = &self.sub[y * nn..(y + 1) * nn];
                for yp in 0..nn {
                    loss += amat[yrow[yp] as usize] * s.ey[yp] * v[flat * nn + yp];
                }
                out += gain - self.psi[y] * loss;
            }
        }
        out
    }

    /// Growth rate of the Ruelle-cap interval per order: the dropped closure
    /// terms bounded by |k^(m′)| ≤ e^{ϑ|m′|}.
    fn ruelle_rate(&self, m: (usize, usize), max_order: usize, theta: f64) -> f64 {
        let mut r = 0.0;
        for i in 0..2 {
            let mi = if i == 0 { m.0 } else { m.1 } as f64;
            if mi == 0.0 || self.t_zero[i] {
                continue;
            }
            let lm = m.0 + m.1;
            let mut tail = 0.0;
            for n in 1..=self.n_max {
                if lm + n > max_order {
                    tail += (theta * (lm + n) as f64).exp() * self.t_abs[i].powi(n as i32) / factorial(n);
                }
            }
            r += 2.0 * mi * self.a_abs[i] * tail;
        }
        r
    }
}

/// Sub-step horizon T(ϑ+δ, ϑ), δ from tStar (δ = 1 when φ̄ = 0).
pub fn step_horizon(ks: &KernelSet, theta: f64) -> Result<(f64, f64)> {
    let delta = if ks.constants.phibar > 0.0 { ks.t_star(theta)?.0 } else { 1.0 };
    Ok((delta, ks.time_radius(theta, theta + delta)?))
}

/// Sub-step lengths covering [0, t] with ϑ advancing by α per unit time.
pub fn step_schedule(ks: &KernelSet, theta0: f64, t: f64, safety: f64) -> Result<Vec<(f64, f64)>> {
    if !(t >= 0.0) {
        return invalid(format!("t = {t} must be nonnegative"));
    }
    if !(safety > 0.0 && safety < 1.0) {
        return invalid(format!("safety fraction {safety} not in (0, 1)"));
    }
    let alpha = ks.constants.alpha;
    let mut th = theta0;
    let mut left = t;
    let mut out = Vec::new();
    while left > 0.0 {
        let (_, big_t) = step_horizon(ks, th)?;
        let mut h = left.min(safety * big_t);
        if left - h <= 1e-14 * t {
            h = left;
        }
        out.push((h, th));
        left -= h;
        th += alpha * h;
        if out.len() > 100_000 {
            return Err(Error::Horizon { step: t, allowed: safety * big_t * 100_000.0 });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeriesReport {
    /// (sub-step length, ϑ at its start).
    pub steps: Vec<(f64, f64)>,
    pub terms: Vec<usize>,
    /// Σ over sub-steps of the geometric tail estimate of the dropped terms.
    pub remainder: f64,
    /// Σ over sub-steps of ‖x₀‖ (h/T)^{n+1}/(1 − h/T).
    pub rigorous: f64,
    /// Σ of all term norms, the scale for rounding budgets.
    pub abs_sum: f64,
    /// Ruelle-cap half-widths per stored order (zero unless that closure runs).
    pub ruelle_halfwidth: Vec<f64>,
    /// Worst (min value, excess over e^{ϑ|m|}) seen along a forward evolution.
    pub ruelle_min: f64,
    pub ruelle_excess: f64,
    /// Leak estimate of dual truncation (when requested).
    pub truncation: f64,
}

struct StepOut {
    x: Tower,
    terms: usize,
    remainder: f64,
    rigorous: f64,
    abs_sum: f64,
}

fn series_step<F: Fn(&Tower) -> Tower>(
    x0: &Tower,
    h: f64,
    big_t: f64,
    apply: F,
    b: Option<&Tower>,
    norm: &dyn Fn(&Tower) -> f64,
    params: &HierarchyParams,
) -> Result<StepOut> {
    let mut x = x0.clone();
    if h == 0.0 {
        return Ok(StepOut { x, terms: 0, remainder: 0.0, rigorous: 0.0, abs_sum: 0.0 });
    }
    let mut term = apply(x0);
    if let Some(b) = b {
        term.axpy(1.0, b);
    }
    term.scale(h);
    x.axpy(1.0, &term);
    let mut prev = norm(&term);
    let mut abs_sum = prev;
    let mut last = prev;
    let mut n = 1;
    let mut ratio = 0.0;
    while last > params.rel_tol * norm(&x) && last > 0.0 {
        if n >= params.term_cap {
            return Err(Error::NoConvergence { terms: n, last });
        }
        let mut next = apply(&term);
        next.scale(h / (n + 1) as f64);
        x.axpy(1.0, &next);
        term = next;
        n += 1;
        last = norm(&term);
        abs_sum += last;
        ratio = if prev > 0.0 { last / prev } else { 0.0 };
        prev = last;
    }
    let remainder = if last == 0.0 {
        0.0
    } else if ratio < 1.0 {
        last * ratio / (1.0 - ratio)
    } else {
        return Err(Error::NoConvergence { terms: n, last });
    };
    let q = h / big_t;
    let rigorous = norm(x0) * q.powi(n as i32 + 1) / (1.0 - q);
    Ok(StepOut { x, terms: n, remainder, rigorous, abs_sum })
}

fn check_step(ks: &KernelSet, h: f64, theta: f64, safety: f64) -> Result<f64> {
    let (_, big_t) = step_horizon(ks, theta)?;
    if h > safety * big_t * (1.0 + 1e-12) {
        return Err(Error::Horizon { step: h, allowed: safety * big_t });
    }
    Ok(big_t)
}

/// Ξ(t)k₀ by chained series sub-steps; ϑ advances along ϑ₀ + αt.
pub fn evolve_forward(ops: &Operators, ks: &KernelSet, k0: &CorrelationField, t: f64, params: &HierarchyParams) -> Result<(CorrelationField, SeriesReport)> {
    let steps = step_schedule(ks, k0.theta, t, params.safety)?;
    evolve_forward_steps(ops, ks, k0, &steps, params)
}

/// Forward evolution along an explicit list of (h, ϑ) sub-steps.
pub fn evolve_forward_steps(
    ops: &Operators,
    ks: &KernelSet,
    k0: &CorrelationField,
    steps: &[(f64, f64)],
    params: &HierarchyParams,
) -> Result<(CorrelationField, SeriesReport)> {
    let grid = k0.tower.grid;
    let max = k0.tower.max_order;
    let norm_theta = k0.theta;
    let norm = move |x: &Tower| forward_norm(x, norm_theta);
    let mut k = k0.clone();
    let mut rep = SeriesReport { ruelle_halfwidth: vec![0.0; k.tower.orders.len()], ruelle_min: f64::INFINITY, ruelle_excess: f64::NEG_INFINITY, ..Default::default() };
    for &(h, th) in steps {
        let big_t = check_step(ks, h, th, params.safety)?;
        let b = if params.closure == Closure::PoissonProduct && max >= 1 {
            let rho = k.one_point()?;
            Some(ops.forward_apply(None, Some(&rho), grid, max))
        } else {
            None
        };
        let s = series_step(&k.tower, h, big_t, |x| ops.forward_apply(Some(x), None, grid, max), b.as_ref(), &norm, params)?;
        if params.closure == Closure::RuelleCap {
            for (oi, &m) in k.tower.orders.iter().enumerate() {
                rep.ruelle_halfwidth[oi] += h * ops.ruelle_rate(m, max, th + ks.constants.alpha * h);
            }
        }
        k.tower = s.x;
        k.theta = th + ks.constants.alpha * h;
        rep.steps.push((h, th));
        rep.terms.push(s.terms);
        rep.remainder += s.remainder;
        rep.rigorous += s.rigorous;
        rep.abs_sum += s.abs_sum;
        let (lo, over) = k.ruelle_excess(k.theta);
        rep.ruelle_min = rep.ruelle_min.min(lo);
        rep.ruelle_excess = rep.ruelle_excess.max(over);
    }
    if steps.is_empty() {
        let (lo, over) = k.ruelle_excess(k.theta);
        rep.ruelle_min = lo;
        rep.ruelle_excess = over;
    }
    Ok((k, rep))
}

/// Σ(t)G by chained series sub-steps; the sub-step list is the forward one
/// for ϑ₀, applied in reverse order so that the result is its exact transpose.
pub fn evolve_dual(ops: &Operators, ks: &KernelSet, g0: &QuasiObservable, theta0: f64, t: f64, params: &HierarchyParams) -> Result<(QuasiObservable, SeriesReport)> {
    let steps = step_schedule(ks, theta0, t, params.safety)?;
    evolve_dual_steps(ops, ks, g0, theta0, &steps, params, None)
}

pub fn evolve_dual_steps(
    ops: &Operators,
    ks: &KernelSet,
    g0: &QuasiObservable,
    theta0: f64,
    steps: &[(f64, f64)],
    params: &HierarchyParams,
    leak_rho: Option<&[Vec<f64>; 2]>,
) -> Result<(QuasiObservable, SeriesReport)> {
    let norm = move |x: &Tower| dual_norm(x, theta0);
    let mut g = g0.clone();
    let mut rep = SeriesReport::default();
    for &(h, th) in steps.iter().rev() {
        let big_t = check_step(ks, h, th, params.safety)?;
        if let Some(rho) = leak_rho {
            rep.truncation += h * ops.dual_leak(&g.tower, rho);
        }
        let s = series_step(&g.tower, h, big_t, |x| ops.dual_apply(x), None, &norm, params)?;
        g.tower = s.x;
        rep.steps.push((h, th));
        rep.terms.push(s.terms);
        rep.remainder += s.remainder;
        rep.rigorous += s.rigorous;
        rep.abs_sum += s.abs_sum;
    }
    Ok((g, rep))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualExpectation {
    pub value: f64,
    /// |⟨⟨k₀, R⟩⟩| bound from the series tail: ‖k₀‖_ϑ₀ × remainder.
    pub remainder: f64,
    /// Floating-point budget 64ε × ‖k₀‖ × Σ term norms.
    pub rounding: f64,
    /// Dropped order-(M+1) dual output paired with k₀ (product fields only).
    pub truncation: f64,
    pub report: SeriesReport,
}

/// μ_t(KG) = ⟨⟨k₀, Σ(t)G⟩⟩. With φ̄ > 0 the chained horizon is T_*(ϑ₀).
pub fn expectation_via_dual(
    ops: &Operators,
    ks: &KernelSet,
    k0: &CorrelationField,
    g: &QuasiObservable,
    t: f64,
    params: &HierarchyParams,
) -> Result<DualExpectation> {
    if ks.constants.phibar > 0.0 {
        let (_, ts) = ks.t_star(k0.theta)?;
        if t >= ts {
            return Err(Error::Horizon { step: t, allowed: ts });
        }
    }
    let steps = step_schedule(ks, k0.theta, t, params.safety)?;
    let rho = if params.leak_estimate { Some(k0.one_point()?) } else { None };
    let (gt, rep) = evolve_dual_steps(ops, ks, g, k0.theta, &steps, params, rho.as_ref())?;
    let kn = k0.norm(k0.theta);
    let value = pair_kg(k0, &gt);
    let scale = pair_abs(&k0.tower, &gt.tower);
    Ok(DualExpectation {
        value,
        remainder: kn * rep.remainder,
        rounding: 64.0 * f64::EPSILON * (kn * rep.abs_sum + scale),
        truncation: rep.truncation,
        report: rep,
    })
}

/// Averages of k^(1,1)(x, x + r) over x, grouped by |r|: (r, value) rows.
pub fn pair_profile(field: &CorrelationField, m: (usize, usize)) -> Result<Vec<(f64, f64)>> {
    if m.0 + m.1 != 2 {
        return invalid("pair profiles need a two-point order");
    }
    let g = field.tower.grid;
    let Some(v) = field.tower.get(m) else {
        return invalid(format!("order {m:?} not stored"));
    };
    let nn = g.size();
    let mut sums: Vec<(f64, f64, usize)> = Vec::new();
    for o in 0..nn {
        let r = crate::geometry::norm(&g.offset_vector(o), g.d);
        let mut s = 0.0;
        for x in 0..nn {
            let y = g.sub(x, g.sub(0, o));
            s += v[x * nn + y];
        }
        let avg = s / nn as f64;
        match sums.iter_mut().find(|(rr, _, _)| (rr - r).abs() < 1e-9) {
            Some(e) => {
                e.1 += avg;
                e.2 += 1;
            }
            None => sums.push((r, avg, 1)),
        }
    }
    let mut out: Vec<(f64, f64)> = sums.into_iter().map(|(r, s, c)| (r, s / c as f64)).collect();
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(out)
}

/// Free-case closed form of the one-point equation: the grid DFT of k₀
/// multiplied by exp(t(â(ξ) − â(0))).
pub fn free_spectral_one_point(ks: &KernelSet, i: usize, grid: &Grid, k0: &[f64], t: f64) -> Vec<f64> {
    let a = &ks.a[i];
    let a0 = a.fourier(0.0);
    grid.convolve(k0, |xi| (t * (a.fourier(xi) - a0)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Domain;
    use crate::kernels::{JumpFamily, RepulsionFamily};
    use std::f64::consts::PI;

    fn free_set() -> KernelSet {
        let dom = Domain::new(1, 10.0).unwrap();
        KernelSet::symmetric(dom, JumpFamily::TopHat { mass: 1.0, radius: 1.0 }, RepulsionFamily::Zero).unwrap()
    }

    fn rep_set() -> KernelSet {
        let dom = Domain::new(1, 10.0).unwrap();
        KernelSet::symmetric(dom, JumpFamily::Gaussian { mass: 1.0, width: 1.0 }, RepulsionFamily::Gaussian { height: 0.26, width: 0.5 }).unwrap()
    }

    #[test]
    fn orders_listing() {
        assert_eq!(orders_upto(2), vec![(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]);
    }

    #[test]
    fn constant_g_is_annihilated() {
        let ks = rep_set();
        let ops = Operators::new(&ks, 16, 0.0, 3).unwrap();
        let g = QuasiObservable::constant(ops.grid, 2, 3.0);
        let out = ops.dual_apply(&g.tower);
        assert!(out.data.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn free_dual_one_point() {
        let ks = free_set();
        let ops = Operators::new(&ks, 32, 0.0, 3).unwrap();
        let theta: Vec<f64> = ops.grid.sample(|x| (-(x[0] - 5.0).powi(2)).exp());
        let g = QuasiObservable::one_point(ops.grid, 2, 0, theta.clone()).unwrap();
        let out = ops.dual_apply(&g.tower);
        let conv = ops.grid.convolve(&theta, |xi| ks.a[0].fourier(xi));
        let got = out.get((1, 0)).unwrap();
        for x in 0..32 {
            assert!((got[x] - (conv[x] - theta[x])).abs() < 1e-12);
        }
        assert!(out.get((0, 1)).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn poisson_pairing() {
        let ks = free_set();
        let grid = Grid::new(&ks.domain, 64);
        let k = CorrelationField::poisson(grid, 2, [0.7, 0.4]).unwrap();
        let th: Vec<f64> = grid.sample(|x| (-2.0 * (x[0] - 5.0).powi(2)).exp());
        let g = QuasiObservable::one_point(grid, 2, 0, th).unwrap();
        let mass = (PI / 2.0).sqrt();
        assert!((pair_kg(&k, &g) - 0.7 * mass).abs() < 1e-10);
        assert_eq!(pair_kg(&k, &QuasiObservable::constant(grid, 2, 2.5)), 2.5);
    }

    #[test]
    fn upsilon_identity_without_repulsion() {
        let ks = free_set();
        let ops = Operators::new(&ks, 16, 0.0, 3).unwrap();
        let k = CorrelationField::poisson(ops.grid, 2, [0.5, 0.5]).unwrap();
        let v = ops.upsilon(Some(&k.tower), None, 0, (1, 0), &[3], 7);
        assert_eq!(v, 0.5);
    }

    #[test]
    fn upsilon_constant_field_single_term() {
        let ks = rep_set();
        let ops = Operators::new(&ks, 64, 0.0, 1).unwrap();
        let k = CorrelationField::poisson(ops.grid, 2, [0.5, 0.5]).unwrap();
        let v = ops.upsilon(Some(&k.tower), None, 0, (1, 0), &[3], 20);
        let expect = 0.5 - 0.25 * ks.phi[0].phibar;
        assert!((v - expect).abs() < 1e-9, "{v} vs {expect}");
        let ops0 = Operators::new(&ks, 64, 0.0, 0).unwrap();
        assert_eq!(ops0.upsilon(Some(&k.tower), None, 0, (1, 0), &[3], 20), 0.5);
    }

    #[test]
    fn free_constant_field_is_stationary() {
        let ks = free_set();
        let ops = Operators::new(&ks, 16, 0.0, 3).unwrap();
        let k = CorrelationField::poisson(ops.grid, 2, [0.5, 0.3]).unwrap();
        let out = ops.forward_apply(Some(&k.tower), None, ops.grid, 2);
        assert!(out.data.iter().flatten().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn forward_is_transpose_of_dual() {
        let ks = rep_set();
        let ops = Operators::new(&ks, 12, 0.3, 3).unwrap();
        let grid = ops.grid;
        let mut k = Tower::zeros(grid, 2);
        let mut g = Tower::zeros(grid, 2);
        let f1 = |p: &[Point]| p.iter().map(|x| 1.0 + 0.3 * (x[0] * 0.9).sin()).product::<f64>();
        let f2 = |p: &[Point]| (-p.iter().map(|x| (x[0] - 4.0).powi(2)).sum::<f64>() / 3.0).exp();
        for m in orders_upto(2) {
            k.set_fn(m, f1).unwrap();
            g.set_fn(m, f2).unwrap();
        }
        let lhs = pair(&ops.forward_apply(Some(&k), None, grid, 2), &g);
        let rhs = pair(&k, &ops.dual_apply(&g));
        assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn dual_support_grows_upward() {
        let ks = rep_set();
        let ops = Operators::new(&ks, 8, 0.0, 3).unwrap();
        let mut g = QuasiObservable::zero(ops.grid, 3);
        g.tower.set_fn((1, 1), |p| (-(p[0][0] - p[1][0]).powi(2)).exp()).unwrap();
        let out = QuasiObservable { tower: ops.dual_apply(&g.tower) };
        let sup = out.support_orders();
        assert!(sup.contains(&(1, 1)) && sup.contains(&(2, 1)) && sup.contains(&(1, 2)));
        assert!(!sup.contains(&(1, 0)) && !sup.contains(&(0, 1)));
    }

    #[test]
    fn free_forward_matches_spectral() {
        let ks = free_set();
        let grid = Grid::new(&ks.domain, 64);
        let ops = Operators::new(&ks, 64, 0.0, 3).unwrap();
        let rho0: Vec<f64> = grid.sample(|x| 0.5 * (1.0 + 0.4 * (2.0 * PI * x[0] / 10.0).cos()));
        let rho1 = vec![0.5; 64];
        let k0 = CorrelationField::product(grid, 1, [rho0.clone(), rho1]).unwrap();
        let p = HierarchyParams { max_order: 1, ..Default::default() };
        let (kt, rep) = evolve_forward(&ops, &ks, &k0, 1.0, &p).unwrap();
        let exact = free_spectral_one_point(&ks, 0, &grid, &rho0, 1.0);
        for x in 0..64 {
            assert!((kt.tower.get((1, 0)).unwrap()[x] - exact[x]).abs() < 1e-10 * exact[x]);
        }
        assert!(rep.steps.len() >= 4);
    }

    #[test]
    fn free_dual_matches_spectral() {
        let ks = free_set();
        let ops = Operators::new(&ks, 64, 0.0, 3).unwrap();
        let th: Vec<f64> = ops.grid.sample(|x| (-(x[0] - 3.0).powi(2)).exp());
        let g = QuasiObservable::one_point(ops.grid, 1, 0, th.clone()).unwrap();
        let p = HierarchyParams { max_order: 1, ..Default::default() };
        let (gt, _) = evolve_dual(&ops, &ks, &g, 0.5f64.ln(), 0.8, &p).unwrap();
        let exact = free_spectral_one_point(&ks, 0, &ops.grid, &th, 0.8);
        let got = gt.tower.get((1, 0)).unwrap();
        let scale = exact.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for x in 0..64 {
            assert!((got[x] - exact[x]).abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn horizon_violation_is_rejected() {
        let ks = rep_set();
        let ops = Operators::new(&ks, 8, 0.0, 3).unwrap();
        let k0 = CorrelationField::poisson(ops.grid, 2, [0.5, 0.5]).unwrap();
        let (_, big_t) = step_horizon(&ks, k0.theta).unwrap();
        let p = HierarchyParams::default();
        let r = evolve_forward_steps(&ops, &ks, &k0, &[(0.9 * big_t, k0.theta)], &p);
        assert!(matches!(r, Err(Error::Horizon { .. })));
        let g = QuasiObservable::constant(ops.grid, 2, 1.0);
        let (_, ts) = ks.t_star(k0.theta).unwrap();
        assert!(expectation_via_dual(&ops, &ks, &k0, &g, 1.01 * ts, &p).is_err());
    }

    #[test]
    fn k_transform_matches_ftilde_on_nodes() {
        let ks = rep_set();
        let grid = Grid::new(&ks.domain, 20);
        let g0 = |x: &Point| (1.0 + 0.3 * (-(x[0] - 5.0).powi(2)).exp()) * (-0.4 * ks.domain.psi(x)).exp() - 1.0;
        let g1 = |x: &Point| (1.0 + 0.2 * (-(x[0] - 3.0).powi(2)).exp()) * (-0.6 * ks.domain.psi(x)).exp() - 1.0;
        let mut q = QuasiObservable::zero(grid, 3);
        for m in orders_upto(3) {
            q.tower.set_fn(m, |p| p.iter().enumerate().map(|(i, x)| if i < m.0 { g0(x) } else { g1(x) }).product()).unwrap();
        }
        let mut cfg = Configuration::new();
        cfg.push(0, grid.node(4));
        cfg.push(0, grid.node(11));
        cfg.push(1, grid.node(7));
        let direct: f64 = cfg.points(0).map(|x| 1.0 + g0(x)).product::<f64>() * cfg.points(1).map(|x| 1.0 + g1(x)).product::<f64>();
        assert!((k_transform(&q, &cfg).unwrap() - direct).abs() < 1e-12);
    }
}
