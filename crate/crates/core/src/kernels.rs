//! Jump kernels a_i, repulsion kernels φ_i, and the constants derived from them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{norm, Domain, Point};
use crate::quad::{adaptive_simpson, ball_volume, bessel_j, gamma_half, radial_fourier, sphere_area};
use crate::rng::Stream;

const TAIL: f64 = 1e-12;
const PHI_NEGLIGIBLE: f64 = 1e-14;
const MOMENT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum JumpFamily {
    Gaussian { mass: f64, width: f64 },
    Exponential { mass: f64, length: f64 },
    TopHat { mass: f64, radius: f64 },
}

impl JumpFamily {
    pub fn mass(&self) -> f64 {
        match *self {
            JumpFamily::Gaussian { mass, .. } | JumpFamily::Exponential { mass, .. } | JumpFamily::TopHat { mass, .. } => mass,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            JumpFamily::Gaussian { .. } => "gaussian",
            JumpFamily::Exponential { .. } => "exponential",
            JumpFamily::TopHat { .. } => "top-hat",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JumpKernel {
    pub family: JumpFamily,
    pub d: usize,
    /// ā^(l) for l = 0..=d+1, by quadrature.
    pub moments: Vec<f64>,
    pub sup: f64,
    pub cutoff: f64,
}

impl JumpKernel {
    pub fn new(family: JumpFamily, d: usize) -> Result<Self> {
        let ok = match family {
            JumpFamily::Gaussian { mass, width } => mass >= 0.0 && width > 0.0,
            JumpFamily::Exponential { mass, length } => mass >= 0.0 && length > 0.0,
            JumpFamily::TopHat { mass, radius } => mass >= 0.0 && radius > 0.0,
        };
        if !ok {
            return invalid(format!("bad jump kernel parameters {family:?}"));
        }
        let mut k = JumpKernel { family, d, moments: vec![], sup: 0.0, cutoff: 0.0 };
        k.cutoff = match family {
            JumpFamily::Gaussian { width, .. } => width * (2.0 * (1.0 / TAIL).ln() + 4.0 * d as f64).sqrt(),
            JumpFamily::Exponential { length, .. } => length * ((1.0 / TAIL).ln() + 4.0 * d as f64 + 8.0),
            JumpFamily::TopHat { radius, .. } => radius,
        };
        k.sup = k.density(0.0);
        k.moments = (0..=d + 1).map(|l| k.moment_quadrature(l)).collect();
        Ok(k)
    }

    pub fn mass(&self) -> f64 {
        self.family.mass()
    }

    /// a(u) for |u| = r, unperiodized.
    pub fn density(&self, r: f64) -> f64 {
        let d = self.d;
        match self.family {
            JumpFamily::Gaussian { mass, width } => {
                mass * (2.0 * PI * width * width).powf(-(d as f64) / 2.0) * (-(r * r) / (2.0 * width * width)).exp()
            }
            JumpFamily::Exponential { mass, length } => {
                let fact: f64 = (1..d).map(|k| k as f64).product();
                mass * (-r / length).exp() / (sphere_area(d) * length.powi(d as i32) * fact)
            }
            JumpFamily::TopHat { mass, radius } => {
                if r <= radius {
                    mass / (ball_volume(d) * radius.powi(d as i32))
                } else {
                    0.0
                }
            }
        }
    }

    /// Periodized kernel at a minimum-image displacement.
    pub fn density_periodic(&self, disp: &Point, dom: &Domain) -> f64 {
        periodic_sum(disp, dom, self.cutoff, |r| self.density(r))
    }

    fn moment_quadrature(&self, l: usize) -> f64 {
        let d = self.d;
        let area = sphere_area(d);
        let f = |r: f64| r.powi((l + d - 1) as i32) * self.density(r) * area;
        match self.family {
            JumpFamily::TopHat { radius, .. } => adaptive_simpson(f, 0.0, radius, MOMENT_TOL),
            _ => adaptive_simpson(f, 0.0, self.cutoff, MOMENT_TOL),
        }
    }

    /// Closed-form ā^(l).
    pub fn moment_exact(&self, l: usize) -> f64 {
        let d = self.d as u32;
        let l32 = l as u32;
        match self.family {
            JumpFamily::Gaussian { mass, width } => {
                mass * width.powi(l as i32) * 2f64.powf(l as f64 / 2.0) * gamma_half(d + l32) / gamma_half(d)
            }
            JumpFamily::Exponential { mass, length } => {
                let num: f64 = (d..d + l32).map(|k| k as f64).product();
                mass * length.powi(l as i32) * num
            }
            JumpFamily::TopHat { mass, radius } => mass * d as f64 * radius.powi(l as i32) / (d + l32) as f64,
        }
    }

    /// â(ξ) = ∫ a(u) e^{−iξ·u} du.
    pub fn fourier(&self, xi: f64) -> f64 {
        let d = self.d;
        match self.family {
            JumpFamily::Gaussian { mass, width } => mass * (-(width * width) * xi * xi / 2.0).exp(),
            JumpFamily::Exponential { mass, length } => {
                let q = 1.0 + length * length * xi * xi;
                mass * q.powf(-((d + 1) as f64) / 2.0)
            }
            JumpFamily::TopHat { mass, radius } => {
                let z = xi * radius;
                if z.abs() < 1e-6 {
                    return mass * (1.0 - z * z / (2.0 * (d as f64 + 2.0)));
                }
                match d {
                    1 => mass * z.sin() / z,
                    2 => mass * 2.0 * bessel_j(1, z) / z,
                    _ => mass * 3.0 * (z.sin() - z * z.cos()) / (z * z * z),
                }
            }
        }
    }

    /// Displacement with density a/ā^(0). Consumes a fixed number of uniforms
    /// for a given family and dimension.
    pub fn sample(&self, rng: &mut Stream) -> Point {
        let d = self.d;
        let mut u = [0.0; 3];
        match self.family {
            JumpFamily::Gaussian { width, .. } => {
                let (a, b) = rng.normal_pair();
                let (c, _) = if d == 3 { rng.normal_pair() } else { (0.0, 0.0) };
                let z = [a, b, c];
                for k in 0..d {
                    u[k] = width * z[k];
                }
            }
            JumpFamily::Exponential { length, .. } => {
                let mut p = 1.0;
                for _ in 0..d {
                    p *= rng.uniform_pos();
                }
                let r = -length * p.ln();
                let dir = unit_vector(d, rng);
                for k in 0..d {
                    u[k] = r * dir[k];
                }
            }
            JumpFamily::TopHat { radius, .. } => {
                let r = radius * rng.uniform().powf(1.0 / d as f64);
                let dir = unit_vector(d, rng);
                for k in 0..d {
                    u[k] = r * dir[k];
                }
            }
        }
        u
    }
}

fn unit_vector(d: usize, rng: &mut Stream) -> Point {
    match d {
        1 => [if rng.uniform() < 0.5 { -1.0 } else { 1.0 }, 0.0, 0.0],
        2 => {
            let a = 2.0 * PI * rng.uniform();
            [a.cos(), a.sin(), 0.0]
        }
        _ => {
            let z = 2.0 * rng.uniform() - 1.0;
            let a = 2.0 * PI * rng.uniform();
            let s = (1.0 - z * z).max(0.0).sqrt();
            [s * a.cos(), s * a.sin(), z]
        }
    }
}

fn periodic_sum<F: Fn(f64) -> f64>(disp: &Point, dom: &Domain, cutoff: f64, f: F) -> f64 {
    let reach = (cutoff / dom.l).ceil() as i64;
    if reach <= 0 || cutoff <= 0.5 * dom.l {
        return f(norm(disp, dom.d));
    }
    let mut s = 0.0;
    let span = 2 * reach + 1;
    let count = span.pow(dom.d as u32);
    for c in 0..count {
        let mut v = *disp;
        let mut cc = c;
        for k in 0..dom.d {
            let shift = (cc % span) - reach;
            cc /= span;
            v[k] += shift as f64 * dom.l;
        }
        let r = norm(&v, dom.d);
        if r <= cutoff {
            s += f(r);
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RepulsionFamily {
    Zero,
    Gaussian { height: f64, width: f64 },
    Exponential { height: f64, length: f64 },
    HardCore { radius: f64 },
}

impl RepulsionFamily {
    pub fn name(&self) -> &'static str {
        match self {
            RepulsionFamily::Zero => "zero",
            RepulsionFamily::Gaussian { .. } => "gaussian",
            RepulsionFamily::Exponential { .. } => "exponential",
            RepulsionFamily::HardCore { .. } => "hard-core",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepulsionKernel {
    pub family: RepulsionFamily,
    pub d: usize,
    /// ∫(1 − e^{−φ}).
    pub phibar: f64,
    pub cutoff: f64,
}

impl RepulsionKernel {
    pub fn new(family: RepulsionFamily, d: usize) -> Result<Self> {
        let ok = match family {
            RepulsionFamily::Zero => true,
            RepulsionFamily::Gaussian { height, width } => height >= 0.0 && width > 0.0,
            RepulsionFamily::Exponential { height, length } => height >= 0.0 && length > 0.0,
            RepulsionFamily::HardCore { radius } => radius > 0.0,
        };
        if !ok {
            return invalid(format!("bad repulsion kernel parameters {family:?}"));
        }
        let cutoff = match family {
            RepulsionFamily::Zero => 0.0,
            RepulsionFamily::Gaussian { height, width } => {
                if height <= PHI_NEGLIGIBLE {
                    0.0
                } else {
                    width * (2.0 * (height / PHI_NEGLIGIBLE).ln()).sqrt()
                }
            }
            RepulsionFamily::Exponential { height, length } => {
                if height <= PHI_NEGLIGIBLE {
                    0.0
                } else {
                    length * (height / PHI_NEGLIGIBLE).ln()
                }
            }
            RepulsionFamily::HardCore { radius } => radius,
        };
        let mut k = RepulsionKernel { family, d, phibar: 0.0, cutoff };
        k.phibar = match family {
            RepulsionFamily::Zero => 0.0,
            RepulsionFamily::HardCore { radius } => ball_volume(d) * radius.powi(d as i32),
            _ => {
                let area = sphere_area(d);
                adaptive_simpson(|r| area * r.powi(d as i32 - 1) * (-k.phi(r)).exp_m1().abs(), 0.0, cutoff.max(1e-300), MOMENT_TOL)
            }
        };
        Ok(k)
    }

    pub fn phi(&self, r: f64) -> f64 {
        match self.family {
            RepulsionFamily::Zero => 0.0,
            RepulsionFamily::Gaussian { height, width } => height * (-(r * r) / (2.0 * width * width)).exp(),
            RepulsionFamily::Exponential { height, length } => height * (-r / length).exp(),
            RepulsionFamily::HardCore { radius } => {
                if r <= radius {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
        }
    }

    /// e^{−φ(r)}, exactly 0 inside a hard core.
    pub fn boltzmann(&self, r: f64) -> f64 {
        let p = self.phi(r);
        if p == f64::INFINITY {
            0.0
        } else {
            (-p).exp()
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.family, RepulsionFamily::Zero) || self.cutoff == 0.0
    }

    /// Fourier transform of t = e^{−φ} − 1 (bounded families only).
    pub fn t_fourier(&self, xi: f64) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        radial_fourier(|r| (-self.phi(r)).exp_m1(), self.d, xi, self.cutoff, 64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    /// max_i ā_i^(0)
    pub alpha: f64,
    /// max_i sup a_i
    pub a_sup: f64,
    /// max_i ∫(1 − e^{−φ_i})
    pub phibar: f64,
    /// ᾱ_i = ā_i^(0) + Σ_{l=0}^{d+1} C(d+1,l) ā_i^(l)
    pub alpha_bar_i: [f64; 2],
    /// max_i ᾱ_i + 1
    pub c_a: f64,
    /// max_i ∫ a_i(x) h(x) dx with h(x) = Σ_{l≥1} C(d+1,l)|x|^l
    pub alpha_bar: f64,
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

impl KernelConstants {
    pub fn from_kernels(a: &[JumpKernel; 2], phi: &[RepulsionKernel; 2], d: usize) -> Self {
        let mut alpha_bar_i = [0.0; 2];
        let mut h_int = [0.0; 2];
        for i in 0..2 {
            let m = &a[i].moments;
            let s: f64 = (0..=d + 1).map(|l| binom(d + 1, l) * m[l]).sum();
            alpha_bar_i[i] = m[0] + s;
            h_int[i] = (1..=d + 1).map(|l| binom(d + 1, l) * m[l]).sum();
        }
        KernelConstants {
            alpha: a[0].moments[0].max(a[1].moments[0]),
            a_sup: a[0].sup.max(a[1].sup),
            phibar: phi[0].phibar.max(phi[1].phibar),
            alpha_bar_i,
            c_a: alpha_bar_i[0].max(alpha_bar_i[1]) + 1.0,
            alpha_bar: h_int[0].max(h_int[1]),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelSet {
    pub domain: Domain,
    pub a: [JumpKernel; 2],
    pub phi: [RepulsionKernel; 2],
    pub constants: KernelConstants,
}

impl KernelSet {
    pub fn new(domain: Domain, a: [JumpFamily; 2], phi: [RepulsionFamily; 2]) -> Result<Self> {
        let d = domain.d;
        let a = [JumpKernel::new(a[0], d)?, JumpKernel::new(a[1], d)?];
        let phi = [RepulsionKernel::new(phi[0], d)?, RepulsionKernel::new(phi[1], d)?];
        for p in &phi {
            if let RepulsionFamily::HardCore { radius } = p.family {
                if 2.0 * radius >= domain.l {
                    return invalid(format!("hard-core radius {radius}: need 2r < L = {}", domain.l));
                }
            } else if p.cutoff > 0.5 * domain.l {
                return invalid(format!(
                    "repulsion range {} exceeds L/2 = {}; enlarge the box",
                    p.cutoff,
                    0.5 * domain.l
                ));
            }
        }
        let constants = KernelConstants::from_kernels(&a, &phi, d);
        Ok(KernelSet { domain, a, phi, constants })
    }

    /// Free single-type-symmetric set, used by many tests.
    pub fn symmetric(domain: Domain, a: JumpFamily, phi: RepulsionFamily) -> Result<Self> {
        Self::new(domain, [a, a], [phi, phi])
    }

    /// Σ_{z} φ_i(z − y) over opposite-type points, +∞ if any hard core is hit.
    pub fn repulsion_sum(&self, i: usize, y: &Point, opposite: &[Point]) -> f64 {
        let k = &self.phi[i];
        if k.is_zero() {
            return 0.0;
        }
        let mut s = 0.0;
        for z in opposite {
            let r = self.domain.dist(z, y);
            if r <= k.cutoff {
                s += k.phi(r);
                if s == f64::INFINITY {
                    return s;
                }
            }
        }
        s
    }

    /// exp(−Σ_z φ_i(z − y)), with an exact zero inside hard cores.
    pub fn repulsion_factor(&self, i: usize, y: &Point, opposite: &[Point]) -> f64 {
        let s = self.repulsion_sum(i, y, opposite);
        if s == f64::INFINITY {
            0.0
        } else {
            (-s).exp()
        }
    }

    /// a_i(x − y) ψ_σ(x) exp(−Σ_{z∈γ_{1−i}} φ_i(z − y)).
    pub fn jump_rate(&self, i: usize, x: &Point, y: &Point, opposite: &[Point], sigma: f64) -> f64 {
        let disp = self.domain.displacement(x, y);
        let a = self.a[i].density_periodic(&disp, &self.domain);
        if a == 0.0 {
            return 0.0;
        }
        let f = self.repulsion_factor(i, y, opposite);
        if f == 0.0 {
            return 0.0;
        }
        a * self.domain.psi_sigma(x, sigma) * f
    }

    /// T(ϑ′, ϑ) = (ϑ′ − ϑ)/(4α) · exp(−φ̄ e^{ϑ′}).
    pub fn time_radius(&self, theta: f64, theta_p: f64) -> Result<f64> {
        time_radius(self.constants.alpha, self.constants.phibar, theta, theta_p)
    }

    pub fn t_star(&self, theta: f64) -> Result<(f64, f64)> {
        t_star(self.constants.alpha, self.constants.phibar, theta)
    }

    pub fn t_sigma(&self, beta: f64, beta_p: f64, sigma: f64) -> Result<f64> {
        t_sigma(self.constants.alpha, beta, beta_p, sigma)
    }
}

pub fn time_radius(alpha: f64, phibar: f64, theta: f64, theta_p: f64) -> Result<f64> {
    if theta_p <= theta {
        return invalid(format!("need ϑ′ > ϑ, got ϑ = {theta}, ϑ′ = {theta_p}"));
    }
    if alpha <= 0.0 {
        return invalid("α must be positive");
    }
    Ok((theta_p - theta) / (4.0 * alpha) * (-phibar * theta_p.exp()).exp())
}

/// δ solving δe^δ = exp(−ϑ − ln φ̄) and T_* = δ/(4α) · e^{−1/δ}.
pub fn t_star(alpha: f64, phibar: f64, theta: f64) -> Result<(f64, f64)> {
    if phibar <= 0.0 {
        return Err(Error::Invalid("φ̄ = 0: no interior maximum, use the time radius directly".into()));
    }
    let target = (-theta - phibar.ln()).exp();
    // δe^δ is increasing on (0, ∞); bracket then Newton with bisection fallback
    let g = |x: f64| x * x.exp() - target;
    let mut lo = 0.0;
    let mut hi = 1.0;
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut x = if target < 1.0 { target } else { target.ln().max(0.5) };
    x = x.clamp(lo, hi);
    for _ in 0..200 {
        let gx = g(x);
        if gx.abs() <= 1e-12 * target {
            break;
        }
        if gx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dx = gx / ((1.0 + x) * x.exp());
        let nx = x - dx;
        x = if nx > lo && nx < hi { nx } else { 0.5 * (lo + hi) };
    }
    Ok((x, x / (4.0 * alpha) * (-1.0 / x).exp()))
}

/// T_σ = σ(β − β′)/(α e^β).
pub fn t_sigma(alpha: f64, beta: f64, beta_p: f64, sigma: f64) -> Result<f64> {
    if !(beta > beta_p && beta_p > 0.0) {
        return invalid(format!("need β > β′ > 0, got β = {beta}, β′ = {beta_p}"));
    }
    if !(sigma > 0.0 && sigma <= 1.0) {
        return invalid(format!("σ = {sigma} not in (0, 1]"));
    }
    Ok(sigma * (beta - beta_p) / (alpha * beta.exp()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_radius_example() {
        let v = time_radius(1.0, 1.0, 0.0, 1.0).unwrap();
        assert!((v - 0.25 * (-std::f64::consts::E).exp()).abs() < 1e-15);
        assert!((v - 0.016497008961328).abs() < 1e-12);
        assert!(time_radius(1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn t_star_example() {
        let (delta, ts) = t_star(1.0, 1.0, 0.0).unwrap();
        assert!((delta - 0.567143).abs() < 1e-6);
        assert!((ts - 0.024315032806910).abs() < 1e-12);
        let tr = time_radius(1.0, 1.0, 0.0, delta).unwrap();
        assert!((tr - ts).abs() < 1e-10);
    }

    #[test]
    fn t_sigma_example() {
        let v = t_sigma(1.0, 1.0, 0.5, 1.0).unwrap();
        assert!((v - 0.5 / std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn moments_match_closed_forms() {
        for d in 1..=3 {
            for fam in [
                JumpFamily::Gaussian { mass: 1.3, width: 0.7 },
                JumpFamily::Exponential { mass: 0.8, length: 0.4 },
                JumpFamily::TopHat { mass: 2.0, radius: 1.5 },
            ] {
                let k = JumpKernel::new(fam, d).unwrap();
                for l in 0..=d + 1 {
                    let e = k.moment_exact(l);
                    assert!((k.moments[l] - e).abs() < 1e-8, "{fam:?} d={d} l={l}: {} vs {e}", k.moments[l]);
                }
            }
        }
    }

    #[test]
    fn hard_core_rejected_when_too_large() {
        let dom = Domain::new(1, 4.0).unwrap();
        let a = JumpFamily::TopHat { mass: 1.0, radius: 1.0 };
        assert!(KernelSet::symmetric(dom, a, RepulsionFamily::HardCore { radius: 2.0 }).is_err());
        assert!(KernelSet::symmetric(dom, a, RepulsionFamily::HardCore { radius: 1.9 }).is_ok());
    }

    #[test]
    fn jump_rate_examples() {
        let dom = Domain::new(1, 10.0).unwrap();
        let a = JumpFamily::TopHat { mass: 1.0, radius: 1.0 };
        let ks = KernelSet::symmetric(dom, a, RepulsionFamily::Zero).unwrap();
        let x = [5.0, 0.0, 0.0];
        let y = [5.5, 0.0, 0.0];
        assert!((ks.jump_rate(0, &x, &y, &[[1.0, 0.0, 0.0]], 0.0) - 0.5).abs() < 1e-15);
        let hc = KernelSet::symmetric(dom, a, RepulsionFamily::HardCore { radius: 0.3 }).unwrap();
        assert_eq!(hc.jump_rate(0, &x, &y, &[[5.7, 0.0, 0.0]], 0.0), 0.0);
        // two opposite particles each contributing ln 2 at y
        let h = 2f64.ln();
        let dom = Domain::new(1, 40.0).unwrap();
        let g = KernelSet::symmetric(dom, a, RepulsionFamily::Exponential { height: h, length: 0.5 }).unwrap();
        let r = g.jump_rate(0, &x, &y, &[y, y], 0.0);
        assert!((r - 0.5 / 4.0).abs() < 1e-14);
    }

    #[test]
    fn fourier_at_zero_is_mass() {
        for d in 1..=3 {
            for fam in [
                JumpFamily::Gaussian { mass: 1.3, width: 0.7 },
                JumpFamily::Exponential { mass: 0.8, length: 0.4 },
                JumpFamily::TopHat { mass: 2.0, radius: 1.5 },
            ] {
                let k = JumpKernel::new(fam, d).unwrap();
                assert!((k.fourier(0.0) - fam.mass()).abs() < 1e-12);
                // compare against numerical radial transform
                let xi = 0.9;
                let num = radial_fourier(|r| k.density(r), d, xi, k.cutoff, 256);
                assert!((num - k.fourier(xi)).abs() < 1e-6, "{fam:?} d={d}: {num} vs {}", k.fourier(xi));
            }
        }
    }
}
