//! The comparison functions Φ^m_{τ,q}(θ|γ) and their growth bound.

use std::sync::Arc;

use num_traits::ToPrimitive;

use crate::combinatorics::{binomial, enumerate_c, finite_diff_w, weight_c};
use crate::error::{invalid, Result};
use crate::geometry::{check_budget, Configuration, Domain};
use crate::kernels::{JumpFamily, KernelSet};
use crate::observables::{distinct_tuple_sum, Observable};
use crate::theta::{gaussian_iterates, theta_iterates, TestFunction};

/// Φ^m_{τ,q} for fixed θ = (θ₀, θ₁) with c̄_{θ_i} = 1.
#[derive(Clone)]
pub struct PhiQ {
    pub m: (usize, usize),
    pub q: usize,
    pub tau: [f64; 2],
    pub c_a: f64,
    /// θ_i^l for l = 0..=q.
    pub iterates: [Vec<Arc<TestFunction>>; 2],
    pub domain: Domain,
}

/// θ_i^l for l ≤ lmax; closed form for gaussian kernels acting on gaussian θ.
pub fn iterates_for(ks: &KernelSet, i: usize, theta: &TestFunction, lmax: usize) -> Result<Vec<Arc<TestFunction>>> {
    let v = match ks.a[i].family {
        JumpFamily::Gaussian { mass, width } => match gaussian_iterates(mass, width, theta, lmax) {
            Ok(v) => v,
            Err(_) => theta_iterates(&ks.a[i], theta, lmax, sampled_n(ks.domain.d)),
        },
        _ => theta_iterates(&ks.a[i], theta, lmax, sampled_n(ks.domain.d)),
    };
    Ok(v.into_iter().map(Arc::new).collect())
}

fn sampled_n(d: usize) -> usize {
    match d {
        1 => 2048,
        2 => 128,
        _ => 32,
    }
}

impl PhiQ {
    pub fn new(ks: &KernelSet, m: (usize, usize), q: usize, tau: [f64; 2], theta: [&TestFunction; 2]) -> Result<Self> {
        for (i, t) in tau.iter().enumerate() {
            if !(*t > 0.0 && *t <= 1.0) {
                return invalid(format!("τ_{i} = {t} must lie in (0, 1]"));
            }
        }
        if q > 12 {
            return invalid("q > 12");
        }
        let mut its: [Vec<Arc<TestFunction>>; 2] = [Vec::new(), Vec::new()];
        for i in 0..2 {
            let th = if (theta[i].cbar - 1.0).abs() > 1e-9 { theta[i].normalized()? } else { theta[i].clone() };
            its[i] = iterates_for(ks, i, &th, q + 1)?;
        }
        Ok(PhiQ { m, q, tau, c_a: ks.constants.c_a, iterates: its, domain: ks.domain })
    }

    /// Same θ iterates at another q (must not exceed the stored depth).
    pub fn with_q(&self, q: usize) -> Result<Self> {
        if q + 1 > self.iterates[0].len() {
            return invalid("not enough stored iterates for this q");
        }
        let mut p = self.clone();
        p.q = q;
        Ok(p)
    }

    /// Φ^{m_i}_{τ_i,q}(θ_i|γ_i).
    pub fn type_value(&self, ty: usize, mi: usize, q: usize, cfg: &Configuration) -> f64 {
        let tau = self.tau[ty];
        let psi: Vec<f64> = cfg.points(ty).map(|x| self.domain.psi(x)).collect();
        let damp: f64 = (-tau * psi.iter().sum::<f64>()).exp();
        let boost: Vec<f64> = psi.iter().map(|p| (tau * p).exp()).collect();
        let lvals: Vec<Vec<f64>> = (0..=q)
            .map(|l| cfg.points(ty).zip(&boost).map(|(x, b)| self.iterates[ty][l].eval(x) * b).collect())
            .collect();
        let psiu: Vec<f64> = psi.iter().zip(&boost).map(|(p, b)| p * b).collect();
        let mut s = 0.0;
        for c in enumerate_c(mi, q).expect("q bounded") {
            let w = weight_c(&c).unwrap().to_f64().unwrap();
            let mut slots = Vec::with_capacity(mi);
            for (l, &cl) in c.c.iter().enumerate() {
                for _ in 0..cl {
                    slots.push(lvals[l].clone());
                }
            }
            s += w * distinct_tuple_sum(&slots);
        }
        let mut tail = 0.0;
        for k in 1..=q {
            let wk = finite_diff_w(k, mi, q).unwrap().to_f64().unwrap();
            if wk == 0.0 {
                continue;
            }
            let slots = vec![psiu.clone(); mi + k];
            tail += tau.powi(k as i32) * wk * distinct_tuple_sum(&slots);
        }
        damp * (s + self.c_a.powi(q as i32) * tail)
    }

    /// Φ^m_{τ,q} = Σ_l C(q,l) Φ^{m₀}_{τ₀,q−l} Φ^{m₁}_{τ₁,l}.
    pub fn value(&self, cfg: &Configuration) -> f64 {
        let q = self.q;
        (0..=q)
            .map(|l| {
                binomial(q as u64, l as u64).to_f64().unwrap()
                    * self.type_value(0, self.m.0, q - l, cfg)
                    * self.type_value(1, self.m.1, l, cfg)
            })
            .sum()
    }

    pub fn checked_value(&self, cfg: &Configuration) -> Result<f64> {
        check_budget(cfg.len(0), self.m.0 + self.q)?;
        check_budget(cfg.len(1), self.m.1 + self.q)?;
        Ok(self.value(cfg))
    }

    /// (q!/ρ_ε^q)·C̄ with ρ_ε = log(1+ε)/c_a and
    /// C̄ = (1+ε)^{|m|} Ȳ₀Ȳ₁, Ȳ_i = τ_i^{−m_i} Σ_k ε^k/k! (m_i+k)^{m_i+k} e^{(m_i+k)(τ_i−1)}.
    pub fn growth_bound(&self, eps: f64) -> Result<f64> {
        let rho = eps.ln_1p() / self.c_a;
        let mut cbar = (1.0 + eps).powi((self.m.0 + self.m.1) as i32);
        for (ty, mi) in [(0, self.m.0), (1, self.m.1)] {
            cbar *= y_bar(mi, self.tau[ty], eps)?;
        }
        let qf: f64 = (1..=self.q).map(|k| k as f64).product();
        Ok(qf / rho.powi(self.q as i32) * cbar)
    }
}

/// Ȳ for one type; errors when the series diverges (ε e^τ ≥ 1).
pub fn y_bar(mi: usize, tau: f64, eps: f64) -> Result<f64> {
    if eps * tau.exp() >= 1.0 {
        return invalid(format!("Ȳ series diverges: ε e^τ = {} ≥ 1", eps * tau.exp()));
    }
    let mut s = 0.0;
    let mut logfact = 0.0;
    for k in 0..10_000usize {
        if k > 0 {
            logfact += (k as f64).ln();
        }
        let n = (mi + k) as f64;
        let lt = k as f64 * eps.ln() - logfact + if n > 0.0 { n * n.ln() } else { 0.0 } + n * (tau - 1.0);
        let t = lt.exp();
        s += t;
        if k > 10 && t < 1e-17 * s {
            break;
        }
    }
    Ok(s / tau.powi(mi as i32))
}

impl Observable for PhiQ {
    fn eval(&self, cfg: &Configuration) -> f64 {
        self.value(cfg)
    }

    fn name(&self) -> String {
        format!("Phi(m=({},{}),q={})", self.m.0, self.m.1, self.q)
    }
}
