//! Periodic box, two-type configurations and the tempered weight ψ.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Coordinates beyond the domain dimension are kept at zero.
pub type Point = [f64; 3];

pub const ENUMERATION_BUDGET: f64 = 1e7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PsiMode {
    /// ψ(x) = 1/(1 + r^{d+1}) with r the torus distance to the box center.
    Centered,
    /// ψ ≡ 1.
    Flat,
}

impl PsiMode {
    pub fn name(self) -> &'static str {
        match self {
            PsiMode::Centered => "centered",
            PsiMode::Flat => "flat",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "centered" => Ok(PsiMode::Centered),
            "flat" => Ok(PsiMode::Flat),
            _ => invalid(format!("unknown psi mode '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub d: usize,
    pub l: f64,
    pub psi_mode: PsiMode,
}

impl Domain {
    pub fn new(d: usize, l: f64) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return invalid(format!("dimension {d} not in 1..=3"));
        }
        if !(l > 0.0 && l.is_finite()) {
            return invalid(format!("side length {l} must be positive"));
        }
        Ok(Domain { d, l, psi_mode: PsiMode::Centered })
    }

    pub fn with_psi_mode(mut self, mode: PsiMode) -> Self {
        self.psi_mode = mode;
        self
    }

    pub fn volume(&self) -> f64 {
        self.l.powi(self.d as i32)
    }

    pub fn center(&self) -> Point {
        let mut c = [0.0; 3];
        for v in c.iter_mut().take(self.d) {
            *v = 0.5 * self.l;
        }
        c
    }

    /// Canonical representative in [0, L)^d.
    pub fn wrap(&self, p: Point) -> Point {
        let mut q = [0.0; 3];
        for k in 0..self.d {
            let mut v = p[k].rem_euclid(self.l);
            if v >= self.l {
                v = 0.0;
            }
            q[k] = v;
        }
        q
    }

    /// Minimum-image displacement a − b.
    pub fn displacement(&self, a: &Point, b: &Point) -> Point {
        let mut r = [0.0; 3];
        for k in 0..self.d {
            let mut v = a[k] - b[k];
            v -= self.l * (v / self.l).round();
            r[k] = v;
        }
        r
    }

    pub fn dist(&self, a: &Point, b: &Point) -> f64 {
        norm(&self.displacement(a, b), self.d)
    }

    pub fn centered_distance(&self, x: &Point) -> f64 {
        self.dist(x, &self.center())
    }

    pub fn psi(&self, x: &Point) -> f64 {
        match self.psi_mode {
            PsiMode::Flat => 1.0,
            PsiMode::Centered => {
                let r = self.centered_distance(x);
                1.0 / (1.0 + r.powi(self.d as i32 + 1))
            }
        }
    }

    /// ψ_σ(x) = 1/(1 + σ r^{d+1}); independent of the ψ mode.
    pub fn psi_sigma(&self, x: &Point, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return 1.0;
        }
        let r = self.centered_distance(x);
        1.0 / (1.0 + sigma * r.powi(self.d as i32 + 1))
    }

    pub fn translate(&self, x: &Point, u: &Point) -> Point {
        let mut y = *x;
        for k in 0..self.d {
            y[k] += u[k];
        }
        self.wrap(y)
    }
}

pub fn norm(v: &Point, d: usize) -> f64 {
    v[..d].iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub id: u64,
    pub pos: Point,
}

/// Finite two-type configuration γ = (γ₀, γ₁).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Configuration {
    pub types: [Vec<Particle>; 2],
    pub next_id: u64,
}

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(p0: &[Point], p1: &[Point]) -> Self {
        let mut c = Self::new();
        for p in p0 {
            c.push(0, *p);
        }
        for p in p1 {
            c.push(1, *p);
        }
        c
    }

    pub fn push(&mut self, ty: usize, pos: Point) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.types[ty].push(Particle { id, pos });
        id
    }

    pub fn len(&self, ty: usize) -> usize {
        self.types[ty].len()
    }

    pub fn total(&self) -> usize {
        self.types[0].len() + self.types[1].len()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn points(&self, ty: usize) -> impl Iterator<Item = &Point> + '_ {
        self.types[ty].iter().map(|p| &p.pos)
    }

    pub fn point_vec(&self, ty: usize) -> Vec<Point> {
        self.points(ty).copied().collect()
    }

    /// No two particles, of either type, share a position.
    pub fn is_simple(&self) -> bool {
        let mut all: Vec<Point> = self.points(0).chain(self.points(1)).copied().collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all.windows(2).all(|w| w[0] != w[1])
    }

    /// Ψ(γ) = Σ_{x∈γ₀} ψ(x) + Σ_{x∈γ₁} ψ(x).
    pub fn big_psi(&self, dom: &Domain) -> f64 {
        self.type_psi(dom, 0) + self.type_psi(dom, 1)
    }

    pub fn type_psi(&self, dom: &Domain, ty: usize) -> f64 {
        self.points(ty).map(|x| dom.psi(x)).sum()
    }

    /// Text record: header then one line per particle, 17 significant digits.
    pub fn to_text(&self, dom: &Domain) -> String {
        let mut s = String::new();
        s.push_str("# wrdyn configuration v1\n");
        s.push_str(&format!("d {}\n", dom.d));
        s.push_str(&format!("L {:.16e}\n", dom.l));
        s.push_str(&format!("psi_mode {}\n", dom.psi_mode.name()));
        s.push_str(&format!("next_id {}\n", self.next_id));
        for ty in 0..2 {
            for p in &self.types[ty] {
                s.push_str(&format!("{} {}", ty, p.id));
                for k in 0..dom.d {
                    s.push_str(&format!(" {:.16e}", p.pos[k]));
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<(Domain, Configuration)> {
        let mut d = None;
        let mut l = None;
        let mut mode = PsiMode::Centered;
        let mut next_id = None;
        let mut cfg = Configuration::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let bad = |m: &str| Error::Config { line: ln + 1, msg: m.to_string() };
            match toks[0] {
                "d" => d = Some(toks.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad d"))?),
                "L" => l = Some(toks.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad L"))?),
                "psi_mode" => mode = PsiMode::parse(toks.get(1).copied().unwrap_or(""))?,
                "next_id" => {
                    next_id = Some(toks.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad next_id"))?)
                }
                "0" | "1" => {
                    let dim: usize = d.ok_or_else(|| bad("particle before header"))?;
                    if toks.len() != 2 + dim {
                        return Err(bad("wrong number of coordinates"));
                    }
                    let ty: usize = toks[0].parse().unwrap();
                    let id: u64 = toks[1].parse().map_err(|_| bad("bad id"))?;
                    let mut pos = [0.0; 3];
                    for k in 0..dim {
                        pos[k] = toks[2 + k].parse().map_err(|_| bad("bad coordinate"))?;
                    }
                    cfg.types[ty].push(Particle { id, pos });
                }
                other => return Err(bad(&format!("unknown record '{other}'"))),
            }
        }
        let dom = Domain::new(d.ok_or_else(|| Error::Format("missing d".into()))?, l.ok_or_else(|| Error::Format("missing L".into()))?)?
            .with_psi_mode(mode);
        let max_id = cfg.types.iter().flatten().map(|p| p.id + 1).max().unwrap_or(0);
        cfg.next_id = next_id.unwrap_or(max_id).max(max_id);
        Ok((dom, cfg))
    }
}

/// Axis-aligned box inside [0, L)^d (no wrapping).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxRegion {
    pub lo: Point,
    pub hi: Point,
}

impl BoxRegion {
    pub fn whole(dom: &Domain) -> Self {
        let mut hi = [0.0; 3];
        for v in hi.iter_mut().take(dom.d) {
            *v = dom.l;
        }
        BoxRegion { lo: [0.0; 3], hi }
    }

    pub fn centered(dom: &Domain, half: f64) -> Self {
        let c = dom.center();
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for k in 0..dom.d {
            lo[k] = c[k] - half;
            hi[k] = c[k] + half;
        }
        BoxRegion { lo, hi }
    }

    pub fn contains(&self, x: &Point, d: usize) -> bool {
        (0..d).all(|k| x[k] >= self.lo[k] && x[k] < self.hi[k])
    }

    pub fn volume(&self, d: usize) -> f64 {
        (0..d).map(|k| self.hi[k] - self.lo[k]).product()
    }
}

pub fn count_in(cfg: &Configuration, ty: usize, region: &BoxRegion, d: usize) -> usize {
    cfg.points(ty).filter(|x| region.contains(x, d)).count()
}

fn falling(n: usize, m: usize) -> f64 {
    (0..m).map(|j| n.saturating_sub(j) as f64).product()
}

/// Number of ordered (m₀, m₁)-tuples of distinct particles inside Λ.
pub fn count_q(cfg: &Configuration, m: (usize, usize), region: &BoxRegion, d: usize) -> Result<u64> {
    let n0 = count_in(cfg, 0, region, d);
    let n1 = count_in(cfg, 1, region, d);
    let count = falling(n0, m.0) * falling(n1, m.1);
    if count > ENUMERATION_BUDGET {
        return Err(Error::Budget { count, budget: ENUMERATION_BUDGET });
    }
    Ok(count as u64)
}

/// Ordered distinct tuple count for `n` items and tuple length `m`, checked
/// against the enumeration budget.
pub fn check_budget(n: usize, m: usize) -> Result<()> {
    let count = falling(n, m);
    if count > ENUMERATION_BUDGET {
        return Err(Error::Budget { count, budget: ENUMERATION_BUDGET });
    }
    Ok(())
}
