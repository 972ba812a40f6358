//! Nonnegative test functions θ ∈ Θ_ψ with their cached constants.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{Domain, Point};
use crate::grid::Grid;
use crate::kernels::JumpKernel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ThetaFamily {
    /// amp · exp(−r²/2w²), r the min-image distance to `center`.
    GaussianBump { amp: f64, center: Point, width: f64 },
    /// amp · (1 + cos(πr/R))/2 for r < R.
    CosineBump { amp: f64, center: Point, radius: f64 },
    /// amp · ψ(x).
    ScaledPsi { amp: f64 },
    /// Σ_k amp_k · exp(−r²/2w_k²) summed over the nearest torus images.
    GaussianMixture { terms: Vec<(f64, f64)>, center: Point },
    /// Grid samples, multilinear interpolation.
    Sampled { grid: Grid, values: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestFunction {
    pub family: ThetaFamily,
    pub domain: Domain,
    pub scale: f64,
    /// ⟨θ⟩ = ∫ θ.
    pub mean: f64,
    /// c_θ = sup log(1 + θ)/ψ.
    pub c: f64,
    /// c̄_θ = e^{c_θ} − 1.
    pub cbar: f64,
}

/// Nodes per axis of the dense sample grid used for ⟨θ⟩ and c_θ.
pub fn dense_n(d: usize) -> usize {
    match d {
        1 => 4096,
        2 => 256,
        _ => 48,
    }
}

impl ThetaFamily {
    fn base(&self, dom: &Domain, x: &Point) -> f64 {
        match self {
            ThetaFamily::GaussianBump { amp, center, width } => {
                let r = dom.dist(x, center);
                amp * (-(r * r) / (2.0 * width * width)).exp()
            }
            ThetaFamily::CosineBump { amp, center, radius } => {
                let r = dom.dist(x, center);
                if r < *radius {
                    amp * 0.5 * (1.0 + (std::f64::consts::PI * r / radius).cos())
                } else {
                    0.0
                }
            }
            ThetaFamily::ScaledPsi { amp } => amp * dom.psi(x),
            ThetaFamily::GaussianMixture { terms, center } => {
                let disp = dom.displacement(x, center);
                let mut s = 0.0;
                for img in 0..3usize.pow(dom.d as u32) {
                    let mut r2 = 0.0;
                    let mut k = img;
                    for a in 0..dom.d {
                        let shift = (k % 3) as f64 - 1.0;
                        k /= 3;
                        let v = disp[a] + shift * dom.l;
                        r2 += v * v;
                    }
                    for (amp, w) in terms {
                        s += amp * (-r2 / (2.0 * w * w)).exp();
                    }
                }
                s
            }
            ThetaFamily::Sampled { grid, values } => grid.interp(values, x),
        }
    }
}

impl TestFunction {
    pub fn new(family: ThetaFamily, domain: Domain) -> Result<Self> {
        let ok = match &family {
            ThetaFamily::GaussianBump { amp, width, .. } => *amp >= 0.0 && *width > 0.0,
            ThetaFamily::CosineBump { amp, radius, .. } => *amp >= 0.0 && *radius > 0.0,
            ThetaFamily::ScaledPsi { amp } => *amp >= 0.0,
            ThetaFamily::GaussianMixture { terms, .. } => terms.iter().all(|(a, w)| *a >= 0.0 && *w > 0.0),
            ThetaFamily::Sampled { grid, values } => {
                grid.d == domain.d && grid.size() == values.len() && values.iter().all(|v| *v >= 0.0 && v.is_finite())
            }
        };
        if !ok {
            return invalid(format!("bad test function parameters {family:?}"));
        }
        let mut t = TestFunction { family, domain, scale: 1.0, mean: 0.0, c: 0.0, cbar: 0.0 };
        t.refresh();
        Ok(t)
    }

    pub fn zero(domain: Domain) -> Self {
        Self::new(ThetaFamily::ScaledPsi { amp: 0.0 }, domain).expect("zero test function")
    }

    fn refresh(&mut self) {
        let g = self.sample_grid();
        let vals = self.sample_on(&g);
        self.mean = vals.iter().sum::<f64>() * g.weight();
        self.c = self.c_on(&g, &vals);
        self.cbar = self.c.exp_m1();
    }

    fn sample_grid(&self) -> Grid {
        match &self.family {
            ThetaFamily::Sampled { grid, .. } => *grid,
            _ => Grid::new(&self.domain, dense_n(self.domain.d)),
        }
    }

    fn c_on(&self, g: &Grid, vals: &[f64]) -> f64 {
        (0..g.size()).map(|k| vals[k].ln_1p() / self.domain.psi(&g.node(k))).fold(0.0, f64::max)
    }

    pub fn eval(&self, x: &Point) -> f64 {
        self.scale * self.family.base(&self.domain, x)
    }

    pub fn sample_on(&self, g: &Grid) -> Vec<f64> {
        g.sample(|x| self.eval(x))
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut t = self.clone();
        t.scale *= s;
        t.refresh();
        t
    }

    /// Rescaled copy with c̄_θ = 1, found by bisection on the amplitude.
    pub fn normalized(&self) -> Result<Self> {
        if self.cbar <= 0.0 {
            return invalid("cannot normalize θ ≡ 0");
        }
        let g = self.sample_grid();
        let base: Vec<f64> = self.sample_on(&g).iter().map(|v| v / self.scale).collect();
        let cbar_at = |s: f64| {
            let v: Vec<f64> = base.iter().map(|b| s * b).collect();
            self.c_on(&g, &v).exp_m1()
        };
        let mut lo = 0.0;
        let mut hi = self.scale / self.cbar;
        while cbar_at(hi) < 1.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cbar_at(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        let mut t = self.clone();
        t.scale = 0.5 * (lo + hi);
        t.refresh();
        Ok(t)
    }

    /// Sampled copy on `g`.
    pub fn to_sampled(&self, g: &Grid) -> Self {
        let values = self.sample_on(g);
        TestFunction::new(ThetaFamily::Sampled { grid: *g, values }, self.domain).expect("sampled θ")
    }

    pub fn is_zero(&self) -> bool {
        self.scale == 0.0 || self.mean == 0.0 && self.c == 0.0
    }
}

/// Result of a checked convolution a_i * θ.
#[derive(Debug, Clone)]
pub struct Convolved {
    pub theta: TestFunction,
    /// max over the grid of (a*θ)(x) − c̄_θ ᾱ_i ψ(x); ≤ 0 when the bound holds.
    pub bound_excess: f64,
}

/// Grid-sampled a * θ via the exact kernel symbol.
pub fn convolve_theta(a: &JumpKernel, alpha_bar_i: f64, theta: &TestFunction, n: Option<usize>) -> Result<Convolved> {
    let dom = theta.domain;
    let g = Grid::new(&dom, n.unwrap_or(dense_n(dom.d).min(if dom.d == 1 { 2048 } else { 128 })));
    let f = theta.sample_on(&g);
    let conv: Vec<f64> = g.convolve(&f, |xi| a.fourier(xi)).into_iter().map(|v| v.max(0.0)).collect();
    let mut excess = f64::NEG_INFINITY;
    for (k, v) in conv.iter().enumerate() {
        excess = excess.max(v - theta.cbar * alpha_bar_i * dom.psi(&g.node(k)));
    }
    if excess > 1e-9 * (1.0 + theta.cbar * alpha_bar_i) {
        return invalid(format!("convolution bound violated by {excess}: kernel moments inconsistent"));
    }
    let t = TestFunction::new(ThetaFamily::Sampled { grid: g, values: conv }, dom)?;
    Ok(Convolved { theta: t, bound_excess: excess })
}

/// θ^0 = θ, θ^l = a*θ^{l−1} + θ^{l−1}, all sampled on one grid.
pub fn theta_iterates(a: &JumpKernel, theta: &TestFunction, lmax: usize, n: usize) -> Vec<TestFunction> {
    let dom = theta.domain;
    let g = Grid::new(&dom, n);
    let mut cur = theta.sample_on(&g);
    let mut out = vec![theta.clone()];
    for _ in 0..lmax {
        let conv = g.convolve(&cur, |xi| a.fourier(xi));
        cur = cur.iter().zip(&conv).map(|(t, c)| (t + c).max(0.0)).collect();
        out.push(TestFunction::new(ThetaFamily::Sampled { grid: g, values: cur.clone() }, dom).expect("iterate"));
    }
    out
}

/// Closed-form θ^l for a gaussian jump kernel (mass m, width s) acting on a
/// gaussian mixture: a*exp(−r²/2w²) = m (w²/(w²+s²))^{d/2} exp(−r²/2(w²+s²)).
pub fn gaussian_iterates(mass: f64, s: f64, theta: &TestFunction, lmax: usize) -> Result<Vec<TestFunction>> {
    let (terms0, center) = match &theta.family {
        ThetaFamily::GaussianBump { amp, center, width } => (vec![(*amp, *width)], *center),
        ThetaFamily::GaussianMixture { terms, center } => (terms.clone(), *center),
        _ => return invalid("gaussian_iterates needs a gaussian θ"),
    };
    let d = theta.domain.d as f64;
    let mut cur: Vec<(f64, f64)> = terms0.iter().map(|(a, w)| (a * theta.scale, *w)).collect();
    let mut out = Vec::with_capacity(lmax + 1);
    for l in 0..=lmax {
        if l > 0 {
            let conv: Vec<(f64, f64)> = cur
                .iter()
                .map(|(a, w)| {
                    let w2 = w * w + s * s;
                    (a * mass * (w * w / w2).powf(0.5 * d), w2.sqrt())
                })
                .collect();
            cur.extend(conv);
            cur = merge_terms(cur);
        }
        out.push(TestFunction::new(ThetaFamily::GaussianMixture { terms: cur.clone(), center }, theta.domain)?);
    }
    Ok(out)
}

fn merge_terms(mut t: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    t.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (a, w) in t {
        match out.last_mut() {
            Some(last) if (last.1 - w).abs() <= 1e-14 * w => last.0 += a,
            _ => out.push((a, w)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PsiMode;
    use crate::kernels::JumpFamily;

    #[test]
    fn gaussian_mean_and_constants() {
        let dom = Domain::new(1, 10.0).unwrap();
        let t = TestFunction::new(ThetaFamily::GaussianBump { amp: 0.3, center: dom.center(), width: 0.5 }, dom).unwrap();
        let exact = 0.3 * (2.0 * std::f64::consts::PI).sqrt() * 0.5;
        assert!((t.mean - exact).abs() < 1e-10);
        // the sup of log(1+θ)/ψ sits at the center for a centered bump of this width
        assert!(t.c >= 0.3f64.ln_1p() - 1e-12);
        assert!((t.cbar - t.c.exp_m1()).abs() < 1e-15);
    }

    #[test]
    fn bound_c801_holds() {
        let dom = Domain::new(2, 6.0).unwrap();
        let t = TestFunction::new(ThetaFamily::CosineBump { amp: 0.7, center: [1.0, 2.0, 0.0], radius: 1.5 }, dom).unwrap();
        let g = Grid::new(&dom, 64);
        for k in 0..g.size() {
            let x = g.node(k);
            assert!(t.eval(&x) <= t.cbar * dom.psi(&x) + 1e-12);
        }
    }

    #[test]
    fn normalization_gives_unit_cbar() {
        let dom = Domain::new(1, 10.0).unwrap();
        let t = TestFunction::new(ThetaFamily::ScaledPsi { amp: 0.2 }, dom).unwrap();
        let n = t.normalized().unwrap();
        assert!((n.cbar - 1.0).abs() < 1e-12);
        // for θ = sψ the sup is approached where ψ is smallest
        assert!(n.scale > 0.2);
    }

    #[test]
    fn convolution_of_flat_theta() {
        let dom = Domain::new(1, 10.0).unwrap().with_psi_mode(PsiMode::Flat);
        let a = JumpKernel::new(JumpFamily::TopHat { mass: 1.0, radius: 1.0 }, 1).unwrap();
        let t = TestFunction::new(ThetaFamily::ScaledPsi { amp: 0.4 }, dom).unwrap();
        let c = convolve_theta(&a, 10.0, &t, Some(256)).unwrap();
        assert!((c.theta.eval(&dom.center()) - 0.4).abs() < 1e-6);
    }

    #[test]
    fn convolution_of_gaussians() {
        let dom = Domain::new(1, 20.0).unwrap();
        let (s1, s2) = (0.6f64, 0.8f64);
        let a = JumpKernel::new(JumpFamily::Gaussian { mass: 1.0, width: s1 }, 1).unwrap();
        let t = TestFunction::new(ThetaFamily::GaussianBump { amp: 0.5, center: dom.center(), width: s2 }, dom).unwrap();
        let ab = a.moments.iter().sum::<f64>() * 10.0;
        let c = convolve_theta(&a, ab, &t, Some(1024)).unwrap();
        let s = (s1 * s1 + s2 * s2).sqrt();
        let h = 20.0 / 1024.0;
        for j in [0.0, 36.0, 97.0] {
            let x = 10.0 + j * h;
            let r: f64 = x - 10.0;
            let exact = 0.5 * s2 / s * (-(r * r) / (2.0 * s * s)).exp();
            assert!((c.theta.eval(&[x, 0.0, 0.0]) - exact).abs() < 1e-6);
        }
    }

    #[test]
    fn gaussian_iterates_match_spectral() {
        let dom = Domain::new(1, 10.0).unwrap();
        let a = JumpKernel::new(JumpFamily::Gaussian { mass: 1.0, width: 0.7 }, 1).unwrap();
        let t = TestFunction::new(ThetaFamily::GaussianBump { amp: 0.3, center: dom.center(), width: 0.6 }, dom).unwrap();
        let exact = gaussian_iterates(1.0, 0.7, &t, 3).unwrap();
        let spec = theta_iterates(&a, &t, 3, 512);
        let g = Grid::new(&dom, 512);
        for l in 0..=3 {
            for k in (0..512).step_by(7) {
                let x = g.node(k);
                assert!((exact[l].eval(&x) - spec[l].eval(&x)).abs() < 1e-9, "l={l}");
            }
            // mass doubles per step when ā^(0) = 1
            assert!((exact[l].mean - t.mean * 2f64.powi(l as i32)).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_theta_convolves_to_zero() {
        let dom = Domain::new(1, 10.0).unwrap();
        let a = JumpKernel::new(JumpFamily::TopHat { mass: 1.0, radius: 1.0 }, 1).unwrap();
        let c = convolve_theta(&a, 3.0, &TestFunction::zero(dom), Some(128)).unwrap();
        assert!(c.theta.mean.abs() < 1e-15);
    }
}
