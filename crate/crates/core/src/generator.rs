//! The Markov generator L (and L^σ) applied to an observable by quadrature
//! over the jump displacement.

use crate::geometry::{Configuration, Point};
use crate::kernels::{KernelSet, RepulsionFamily};
use crate::observables::Observable;
use crate::quad::gauss_legendre;

#[derive(Debug, Clone, Copy)]
pub struct QuadParams {
    /// Panels between breakpoints (d = 1) or radial panels (d ≥ 2).
    pub panels: usize,
    pub order: usize,
    /// Angular nodes (d ≥ 2).
    pub angular: usize,
}

impl Default for QuadParams {
    fn default() -> Self {
        QuadParams { panels: 8, order: 10, angular: 32 }
    }
}

impl QuadParams {
    fn refined(&self) -> Self {
        QuadParams { panels: 2 * self.panels, order: self.order, angular: 2 * self.angular }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LfValue {
    pub value: f64,
    /// |value(n) − value(2n)| from the refinement pass.
    pub tol: f64,
}

/// Displacement nodes (u, weight·a_i(|u|)) covering the support of a_i; `x`
/// and the opposite configuration locate the breakpoints in d = 1.
fn displacement_rule(ks: &KernelSet, i: usize, x: &Point, opposite: &[Point], q: &QuadParams) -> Vec<(Point, f64)> {
    let dom = &ks.domain;
    let a = &ks.a[i];
    let cut = a.cutoff;
    let d = dom.d;
    let (gx, gw) = gauss_legendre(q.order);
    let mut out = Vec::new();
    if d == 1 {
        let mut bp = vec![-cut, cut];
        // ψ has a kink where the centered distance equals L/2
        let kink = dom.center()[0] + 0.5 * dom.l;
        let mut u0 = kink - x[0];
        u0 -= (u0 / dom.l).floor() * dom.l;
        let mut u = u0 - dom.l * ((u0 + cut) / dom.l).floor();
        while u < cut {
            if u > -cut {
                bp.push(u);
            }
            u += dom.l;
        }
        if let RepulsionFamily::HardCore { radius } = ks.phi[i].family {
            for z in opposite {
                let dz = dom.displacement(z, x)[0];
                for base in [dz - radius, dz + radius] {
                    let mut u = base - dom.l * ((base + cut) / dom.l).floor();
                    while u < cut {
                        if u > -cut {
                            bp.push(u);
                        }
                        u += dom.l;
                    }
                }
            }
        }
        bp.sort_by(|p, q| p.partial_cmp(q).unwrap());
        bp.dedup_by(|p, q| (*p - *q).abs() < 1e-14);
        for w in bp.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi - lo <= 0.0 {
                continue;
            }
            let h = (hi - lo) / q.panels as f64;
            for p in 0..q.panels {
                let pl = lo + p as f64 * h;
                for (xi, wi) in gx.iter().zip(&gw) {
                    let u = pl + 0.5 * h * (xi + 1.0);
                    let dens = a.density(u.abs());
                    if dens > 0.0 {
                        out.push(([u, 0.0, 0.0], 0.5 * h * wi * dens));
                    }
                }
            }
        }
        return out;
    }
    // radial Gauss–Legendre times a trapezoid (d = 2) or GL×trapezoid sphere (d = 3)
    let h = cut / q.panels as f64;
    let mut radial = Vec::new();
    for p in 0..q.panels {
        for (xi, wi) in gx.iter().zip(&gw) {
            let r = p as f64 * h + 0.5 * h * (xi + 1.0);
            radial.push((r, 0.5 * h * wi * r.powi(d as i32 - 1) * a.density(r)));
        }
    }
    let na = q.angular;
    if d == 2 {
        let dphi = 2.0 * std::f64::consts::PI / na as f64;
        for (r, w) in radial {
            for k in 0..na {
                let ang = (k as f64 + 0.5) * dphi;
                out.push(([r * ang.cos(), r * ang.sin(), 0.0], w * dphi));
            }
        }
    } else {
        let (cx, cw) = gauss_legendre(na / 2);
        let dphi = 2.0 * std::f64::consts::PI / na as f64;
        for (r, w) in radial {
            for (ct, ctw) in cx.iter().zip(&cw) {
                let st = (1.0 - ct * ct).sqrt();
                for k in 0..na {
                    let ang = (k as f64 + 0.5) * dphi;
                    out.push(([r * st * ang.cos(), r * st * ang.sin(), r * ct], w * ctw * dphi));
                }
            }
        }
    }
    out
}

fn apply_once(ks: &KernelSet, sigma: f64, f: &dyn Observable, cfg: &Configuration, q: &QuadParams) -> f64 {
    let dom = &ks.domain;
    let base = f.eval(cfg);
    let mut total = 0.0;
    for i in 0..2 {
        let opposite = cfg.point_vec(1 - i);
        for (idx, p) in cfg.types[i].iter().enumerate() {
            let x = p.pos;
            let psi = dom.psi_sigma(&x, sigma);
            if psi == 0.0 {
                continue;
            }
            let mut ys = Vec::new();
            let mut ws = Vec::new();
            for (u, w) in displacement_rule(ks, i, &x, &opposite, q) {
                let y = dom.translate(&x, &u);
                let rep = ks.repulsion_factor(i, &y, &opposite);
                if rep == 0.0 {
                    continue;
                }
                ys.push(y);
                ws.push(w * rep);
            }
            let vals = f.eval_moved_batch(cfg, i, idx, &ys);
            let s: f64 = ws.iter().zip(&vals).map(|(w, v)| w * (v - base)).sum();
            total += psi * s;
        }
    }
    total
}

/// (L^σ F)(γ) = Σ_i Σ_{x∈γ_i} ψ_σ(x) ∫ a_i(x−y) e^{−Σφ_i(z−y)} [F(γ_i∖x∪y) − F(γ)] dy.
pub fn apply_generator(ks: &KernelSet, sigma: f64, f: &dyn Observable, cfg: &Configuration, q: &QuadParams) -> LfValue {
    let v1 = apply_once(ks, sigma, f, cfg, q);
    let v2 = apply_once(ks, sigma, f, cfg, &q.refined());
    LfValue { value: v2, tol: (v2 - v1).abs() }
}

/// Single-resolution evaluation for inner loops that track tolerance separately.
pub fn apply_generator_fast(ks: &KernelSet, sigma: f64, f: &dyn Observable, cfg: &Configuration, q: &QuadParams) -> f64 {
    apply_once(ks, sigma, f, cfg, q)
}

/// ∫ a_i(x−y) |F(γ_i∖x∪y) − F(γ)| dy summed over x ∈ γ_i, the 𝓛_i functional.
pub fn abs_variation(ks: &KernelSet, i: usize, f: &dyn Observable, cfg: &Configuration, q: &QuadParams) -> f64 {
    let dom = &ks.domain;
    let base = f.eval(cfg);
    let opposite = cfg.point_vec(1 - i);
    let mut total = 0.0;
    for (idx, p) in cfg.types[i].iter().enumerate() {
        let rule = displacement_rule(ks, i, &p.pos, &opposite, q);
        let ys: Vec<_> = rule.iter().map(|(u, _)| dom.translate(&p.pos, u)).collect();
        let vals = f.eval_moved_batch(cfg, i, idx, &ys);
        for ((_, w), v) in rule.iter().zip(&vals) {
            total += w * (v - base).abs();
        }
    }
    total
}
