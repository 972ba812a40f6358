//! Functions of configurations: the F̃, F^θ and F̂ test families, tuple sums
//! H^(m)_θ, and the dictionary path metric.

use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::geometry::{check_budget, Configuration, Domain, Point};
use crate::theta::TestFunction;

/// Something evaluable on configurations, with a cheap single-particle move.
pub trait Observable: Send + Sync {
    fn eval(&self, cfg: &Configuration) -> f64;

    /// Values at the configurations where particle `idx` of type `ty` sits
    /// at each of `ys` in turn.
    fn eval_moved_batch(&self, cfg: &Configuration, ty: usize, idx: usize, ys: &[Point]) -> Vec<f64> {
        let mut c = cfg.clone();
        ys.iter()
            .map(|y| {
                c.types[ty][idx].pos = *y;
                self.eval(&c)
            })
            .collect()
    }

    fn name(&self) -> String;
}

/// Set partitions of {0..m} as block lists, with Möbius weights
/// Π_B (−1)^{|B|−1}(|B|−1)!.
pub fn set_partitions(m: usize) -> Vec<(Vec<Vec<usize>>, f64)> {
    let mut out = Vec::new();
    let mut rgs = vec![0usize; m];
    fn rec(j: usize, max: usize, rgs: &mut Vec<usize>, out: &mut Vec<(Vec<Vec<usize>>, f64)>) {
        let m = rgs.len();
        if j == m {
            let nb = if m == 0 { 0 } else { max + 1 };
            let mut blocks = vec![Vec::new(); nb];
            for (i, &b) in rgs.iter().enumerate() {
                blocks[b].push(i);
            }
            let mut w = 1.0;
            for b in &blocks {
                let s = b.len();
                let f: f64 = (1..s).map(|k| k as f64).product();
                w *= if s % 2 == 1 { f } else { -f };
            }
            out.push((blocks, w));
            return;
        }
        let lim = if j == 0 { 0 } else { max + 1 };
        for b in 0..=lim {
            rgs[j] = b;
            rec(j + 1, max.max(b), rgs, out);
        }
    }
    if m == 0 {
        out.push((Vec::new(), 1.0));
        return out;
    }
    rec(0, 0, &mut rgs, &mut out);
    out
}

/// Σ over ordered tuples of distinct indices of Π_j u[j][x_j], where `u[j]`
/// holds the slot-j function at every particle.
pub fn distinct_tuple_sum(u: &[Vec<f64>]) -> f64 {
    let m = u.len();
    if m == 0 {
        return 1.0;
    }
    let n = u[0].len();
    if n < m {
        return 0.0;
    }
    if m == 1 {
        return u[0].iter().sum();
    }
    let mut total = 0.0;
    for (blocks, w) in set_partitions(m) {
        let mut prod = w;
        for b in &blocks {
            let s: f64 = (0..n).map(|x| b.iter().map(|&j| u[j][x]).product::<f64>()).sum();
            prod *= s;
        }
        total += prod;
    }
    total
}

/// Same sum by explicit enumeration; used as an oracle in tests.
pub fn distinct_tuple_sum_brute(u: &[Vec<f64>]) -> f64 {
    fn rec(u: &[Vec<f64>], j: usize, used: &mut Vec<bool>, acc: f64) -> f64 {
        if j == u.len() {
            return acc;
        }
        let mut s = 0.0;
        for x in 0..used.len() {
            if !used[x] {
                used[x] = true;
                s += rec(u, j + 1, used, acc * u[j][x]);
                used[x] = false;
            }
        }
        s
    }
    if u.is_empty() {
        return 1.0;
    }
    let mut used = vec![false; u[0].len()];
    rec(u, 0, &mut used, 1.0)
}

/// H^(m)_θ(γ) = Σ over ordered distinct tuples of Π θ₀(x_j) Π θ₁(y_j).
pub fn h_tuple(cfg: &Configuration, m: (usize, usize), theta: [&TestFunction; 2]) -> Result<f64> {
    check_budget(cfg.len(0), m.0)?;
    check_budget(cfg.len(1), m.1)?;
    let mut out = 1.0;
    for (ty, mi) in [(0, m.0), (1, m.1)] {
        if mi == 0 {
            continue;
        }
        let vals: Vec<f64> = cfg.points(ty).map(|x| theta[ty].eval(x)).collect();
        out *= distinct_tuple_sum(&vec![vals; mi]);
    }
    Ok(out)
}

/// F̃^θ_τ(γ) = Π_i Π_{x∈γ_i} (1 + θ_i(x)) e^{−τ_i ψ(x)}.
#[derive(Debug, Clone)]
pub struct Ftilde {
    pub theta: [TestFunction; 2],
    pub tau: [f64; 2],
    pub domain: Domain,
}

impl Ftilde {
    pub fn new(theta: [TestFunction; 2], tau: [f64; 2]) -> Result<Self> {
        for i in 0..2 {
            if tau[i] < theta[i].c {
                return invalid(format!("τ_{i} = {} below c_θ = {}", tau[i], theta[i].c));
            }
        }
        let domain = theta[0].domain;
        Ok(Ftilde { theta, tau, domain })
    }

    fn factor(&self, ty: usize, x: &Point) -> f64 {
        (1.0 + self.theta[ty].eval(x)) * (-self.tau[ty] * self.domain.psi(x)).exp()
    }
}

impl Observable for Ftilde {
    fn eval(&self, cfg: &Configuration) -> f64 {
        let mut v = 1.0;
        for ty in 0..2 {
            for x in cfg.points(ty) {
                v *= self.factor(ty, x);
            }
        }
        v
    }

    fn eval_moved_batch(&self, cfg: &Configuration, ty: usize, idx: usize, ys: &[Point]) -> Vec<f64> {
        let x = cfg.types[ty][idx].pos;
        let rest = self.eval(cfg) / self.factor(ty, &x);
        ys.iter().map(|y| rest * self.factor(ty, y)).collect()
    }

    fn name(&self) -> String {
        format!("Ftilde(tau=({},{}))", self.tau[0], self.tau[1])
    }
}

/// F^θ(γ) = Π (1 + θ_i(x)), the undamped product.
pub fn eval_fexp(theta: [&TestFunction; 2], cfg: &Configuration) -> f64 {
    let mut v = 1.0;
    for ty in 0..2 {
        for x in cfg.points(ty) {
            v *= 1.0 + theta[ty].eval(x);
        }
    }
    v
}

/// F̂^m_τ(v|γ) = Π_i Σ_{ordered distinct x ∈ γ_i} v_i(x) e^{−τ_i Ψ(γ_i ∖ x)}.
#[derive(Clone)]
pub struct Fhat {
    pub m: (usize, usize),
    pub tau: [f64; 2],
    pub v: [Vec<Arc<TestFunction>>; 2],
    pub domain: Domain,
}

impl Fhat {
    pub fn new(tau: [f64; 2], v: [Vec<Arc<TestFunction>>; 2], domain: Domain) -> Result<Self> {
        if !(tau[0] > 0.0 && tau[1] > 0.0) {
            return invalid(format!("F̂ needs τ_i > 0, got {tau:?}"));
        }
        Ok(Fhat { m: (v[0].len(), v[1].len()), tau, v, domain })
    }

    /// Per-type factor F̂^{m_i}_{τ_i}(v_i|γ_i).
    pub fn type_factor(&self, ty: usize, cfg: &Configuration) -> f64 {
        type_fhat(&self.domain, self.tau[ty], &self.v[ty], cfg, ty)
    }

    /// Bound Π_i (c m_i/τ_i)^{m_i} e^{m_i(τ_i−1)}, c = max c̄ over the v's.
    pub fn nd_bound(&self) -> f64 {
        let mut b = 1.0;
        for ty in 0..2 {
            let mi = self.v[ty].len();
            if mi == 0 {
                continue;
            }
            let c = self.v[ty].iter().map(|t| t.cbar).fold(0.0, f64::max);
            b *= (c * mi as f64 / self.tau[ty]).powi(mi as i32) * (mi as f64 * (self.tau[ty] - 1.0)).exp();
        }
        b
    }
}

/// One type's F̂ factor; `vals` slots may be any functions of position.
pub fn type_fhat(dom: &Domain, tau: f64, v: &[Arc<TestFunction>], cfg: &Configuration, ty: usize) -> f64 {
    let psi: Vec<f64> = cfg.points(ty).map(|x| dom.psi(x)).collect();
    let big: f64 = psi.iter().sum();
    let u: Vec<Vec<f64>> = v
        .iter()
        .map(|f| cfg.points(ty).zip(&psi).map(|(x, p)| f.eval(x) * (tau * p).exp()).collect())
        .collect();
    (-tau * big).exp() * distinct_tuple_sum(&u)
}

impl Observable for Fhat {
    fn eval(&self, cfg: &Configuration) -> f64 {
        if self.m == (0, 0) {
            return 0.0;
        }
        self.type_factor(0, cfg) * self.type_factor(1, cfg)
    }

    fn eval_moved_batch(&self, cfg: &Configuration, ty: usize, idx: usize, ys: &[Point]) -> Vec<f64> {
        if self.m == (0, 0) {
            return vec![0.0; ys.len()];
        }
        let other = self.type_factor(1 - ty, cfg);
        let tau = self.tau[ty];
        let psi: Vec<f64> = cfg.points(ty).map(|x| self.domain.psi(x)).collect();
        let rest: f64 = psi.iter().enumerate().filter(|(k, _)| *k != idx).map(|(_, p)| p).sum();
        let mut u: Vec<Vec<f64>> = self.v[ty]
            .iter()
            .map(|f| cfg.points(ty).zip(&psi).map(|(x, p)| f.eval(x) * (tau * p).exp()).collect())
            .collect();
        ys.iter()
            .map(|y| {
                let p = self.domain.psi(y);
                let boost = (tau * p).exp();
                for (slot, f) in u.iter_mut().zip(&self.v[ty]) {
                    slot[idx] = f.eval(y) * boost;
                }
                other * (-tau * (rest + p)).exp() * distinct_tuple_sum(&u)
            })
            .collect()
    }

    fn name(&self) -> String {
        format!("Fhat(m=({},{}),tau=({},{}))", self.m.0, self.m.1, self.tau[0], self.tau[1])
    }
}

pub fn eval_fhat(fh: &Fhat, cfg: &Configuration) -> Result<f64> {
    check_budget(cfg.len(0), fh.m.0)?;
    check_budget(cfg.len(1), fh.m.1)?;
    Ok(fh.eval(cfg))
}

/// A function g of the dictionary, already divided by max(1, Lip g).
#[derive(Debug, Clone, Copy)]
enum DictFn {
    Const,
    Cos { axis: usize, freq: f64, scale: f64 },
    Sin { axis: usize, freq: f64, scale: f64 },
    Bump { width: f64, scale: f64 },
}

/// The fixed 8-function dictionary for the path metric surrogate.
#[derive(Debug, Clone)]
pub struct PathMetric {
    domain: Domain,
    dict: Vec<DictFn>,
}

impl PathMetric {
    pub fn new(domain: Domain) -> Self {
        let l = domain.l;
        let w = |k: f64| 2.0 * std::f64::consts::PI * k / l;
        let s = |lip: f64| 1.0 / lip.max(1.0);
        let (ax3, f3) = if domain.d >= 2 { (1, w(1.0)) } else { (0, w(3.0)) };
        let width = l / 8.0;
        let dict = vec![
            DictFn::Const,
            DictFn::Cos { axis: 0, freq: w(1.0), scale: s(w(1.0)) },
            DictFn::Sin { axis: 0, freq: w(1.0), scale: s(w(1.0)) },
            DictFn::Cos { axis: 0, freq: w(2.0), scale: s(w(2.0)) },
            DictFn::Sin { axis: 0, freq: w(2.0), scale: s(w(2.0)) },
            DictFn::Cos { axis: ax3, freq: f3, scale: s(f3) },
            DictFn::Sin { axis: ax3, freq: f3, scale: s(f3) },
            DictFn::Bump { width, scale: s(1.0 / (width * std::f64::consts::E.sqrt())) },
        ];
        PathMetric { domain, dict }
    }

    fn g(&self, f: DictFn, x: &Point) -> f64 {
        match f {
            DictFn::Const => 1.0,
            DictFn::Cos { axis, freq, scale } => scale * (freq * x[axis]).cos(),
            DictFn::Sin { axis, freq, scale } => scale * (freq * x[axis]).sin(),
            DictFn::Bump { width, scale } => {
                let r = self.domain.centered_distance(x);
                scale * (-(r * r) / (2.0 * width * width)).exp()
            }
        }
    }

    /// Σ_{x∈γ_i} g_j(x)ψ(x) for every type and dictionary element.
    pub fn moments(&self, cfg: &Configuration) -> [[f64; 8]; 2] {
        let mut out = [[0.0; 8]; 2];
        for (ty, row) in out.iter_mut().enumerate() {
            for x in cfg.points(ty) {
                let p = self.domain.psi(x);
                for (j, f) in self.dict.iter().enumerate() {
                    row[j] += self.g(*f, x) * p;
                }
            }
        }
        out
    }

    pub fn distance_from_moments(a: &[[f64; 8]; 2], b: &[[f64; 8]; 2]) -> f64 {
        let mut s = 0.0;
        for ty in 0..2 {
            let m = (0..8).map(|j| (a[ty][j] - b[ty][j]).abs()).fold(0.0, f64::max);
            s += m.min(1.0);
        }
        s
    }

    pub fn distance(&self, a: &Configuration, b: &Configuration) -> f64 {
        Self::distance_from_moments(&self.moments(a), &self.moments(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theta::ThetaFamily;

    fn dom1() -> Domain {
        Domain::new(1, 10.0).unwrap()
    }

    fn gauss(amp: f64) -> TestFunction {
        let d = dom1();
        TestFunction::new(ThetaFamily::GaussianBump { amp, center: d.center(), width: 1.0 }, d).unwrap()
    }

    #[test]
    fn partitions_count_bell_numbers() {
        let bell = [1, 1, 2, 5, 15, 52, 203];
        for (m, b) in bell.iter().enumerate() {
            assert_eq!(set_partitions(m).len(), *b);
        }
    }

    #[test]
    fn tuple_sum_matches_enumeration() {
        let u: Vec<Vec<f64>> = (0..4).map(|j| (0..6).map(|x| ((x * 7 + j * 3) % 5) as f64 * 0.3 + 0.1).collect()).collect();
        for m in 0..=4 {
            let a = distinct_tuple_sum(&u[..m]);
            let b = distinct_tuple_sum_brute(&u[..m]);
            assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "m={m}: {a} vs {b}");
        }
    }

    #[test]
    fn moved_batch_matches_rebuilt_configuration() {
        let d = dom1();
        let t = Arc::new(gauss(0.7));
        let fh = Fhat::new([0.6, 0.9], [vec![t.clone(), t.clone()], vec![t.clone()]], d).unwrap();
        let ft = Ftilde::new([gauss(0.5), gauss(0.3)], [1.0, 1.0]).unwrap();
        let cfg = Configuration::from_points(&[[4.0, 0.0, 0.0], [5.2, 0.0, 0.0], [6.1, 0.0, 0.0]], &[[3.0, 0.0, 0.0], [5.5, 0.0, 0.0]]);
        let ys = [[1.0, 0.0, 0.0], [5.0, 0.0, 0.0], [9.5, 0.0, 0.0]];
        let obs: [&dyn Observable; 2] = [&fh, &ft];
        for f in obs {
            for (ty, idx) in [(0, 1), (1, 0)] {
                let got = f.eval_moved_batch(&cfg, ty, idx, &ys);
                for (y, g) in ys.iter().zip(&got) {
                    let mut c = cfg.clone();
                    c.types[ty][idx].pos = *y;
                    let want = f.eval(&c);
                    assert!((g - want).abs() < 1e-12 * (1.0 + want.abs()), "{}: {g} vs {want}", f.name());
                }
            }
        }
    }

    #[test]
    fn ftilde_single_factor() {
        let d = dom1();
        let th = TestFunction::new(ThetaFamily::ScaledPsi { amp: 0.4 }, d).unwrap();
        // a point with ψ = 0.5 has θ = 0.2
        let x = [d.center()[0] + 1.0, 0.0, 0.0];
        let f = Ftilde::new([th.clone(), th], [1.0, 1.0]).unwrap();
        let cfg = Configuration::from_points(&[x], &[]);
        assert!((f.eval(&cfg) - 1.2 * (-0.5f64).exp()).abs() < 1e-12);
        assert!((f.eval(&cfg) - 0.72784).abs() < 1e-5);
        assert_eq!(f.eval(&Configuration::new()), 1.0);
    }

    #[test]
    fn ftilde_rejects_small_tau() {
        let th = gauss(0.5);
        assert!(Ftilde::new([th.clone(), th.clone()], [0.1, 1.0]).is_err());
        let z = TestFunction::zero(dom1());
        let f = Ftilde::new([z.clone(), z], [0.0, 0.0]).unwrap();
        let cfg = Configuration::from_points(&[[1.0, 0.0, 0.0]], &[[2.0, 0.0, 0.0]]);
        assert_eq!(f.eval(&cfg), 1.0);
    }

    #[test]
    fn fhat_examples() {
        let d = dom1();
        let v = Arc::new(gauss(0.5));
        let x = [4.0, 0.0, 0.0];
        let fh = Fhat::new([1.0, 1.0], [vec![v.clone()], vec![]], d).unwrap();
        let one = Configuration::from_points(&[x], &[]);
        assert!((fh.eval(&one) - v.eval(&x)).abs() < 1e-15);
        let zero = Fhat::new([1.0, 1.0], [vec![], vec![]], d).unwrap();
        assert_eq!(zero.eval(&one), 0.0);
        // ordered pairs on three points
        let pts = [[3.0, 0.0, 0.0], [5.0, 0.0, 0.0], [6.5, 0.0, 0.0]];
        let cfg = Configuration::from_points(&pts, &[]);
        let fh2 = Fhat::new([0.7, 1.0], [vec![v.clone(), v.clone()], vec![]], d).unwrap();
        let mut brute = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    let c = 3 - a - b;
                    brute += v.eval(&pts[a]) * v.eval(&pts[b]) * (-0.7 * d.psi(&pts[c])).exp();
                }
            }
        }
        assert!((fh2.eval(&cfg) - brute).abs() < 1e-14);
        assert!(fh2.eval(&cfg) <= fh2.nd_bound());
    }

    #[test]
    fn metric_examples() {
        let d = dom1();
        let pm = PathMetric::new(d);
        let x = [d.center()[0] + 1.0, 0.0, 0.0];
        let a = Configuration::from_points(&[x, [2.0, 0.0, 0.0]], &[[7.0, 0.0, 0.0]]);
        let mut b = a.clone();
        assert_eq!(pm.distance(&a, &b), 0.0);
        b.types[0].remove(0);
        assert!(pm.distance(&a, &b) >= 0.5 - 1e-15);
        assert!(pm.distance(&a, &b) <= 2.0);
    }
}
