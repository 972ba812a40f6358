//! Path functionals over trace collections: correlation-measure estimates,
//! moment and exponential-moment checks, martingale residuals, Chentsov
//! products, σ sweeps and type estimates.
//!
//! Reductions go through a fixed pairwise tree so that results do not depend
//! on the worker count.

use serde::{Deserialize, Serialize};

use crate::combinatorics::touchard_f64;
use crate::error::{invalid, Result};
use crate::generator::{apply_generator, QuadParams};
use crate::geometry::{count_in, BoxRegion, Configuration, Domain};
use crate::kernels::KernelSet;
use crate::observables::{h_tuple, Observable, PathMetric};
use crate::sim::{batch_simulate, default_workers, par_map, EventTrace, InitialLaw};
use crate::theta::TestFunction;

/// Pass/fail threshold in standard errors.
pub const Z_GATE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithError {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl EstimateWithError {
    pub fn exact(v: f64) -> Self {
        EstimateWithError { mean: v, se: 0.0, n: 1 }
    }

    /// |mean − target| in units of se (0 when both vanish).
    pub fn z(&self, target: f64) -> f64 {
        let d = (self.mean - target).abs();
        if d == 0.0 {
            0.0
        } else if self.se == 0.0 {
            f64::INFINITY
        } else {
            d / self.se
        }
    }

    pub fn within(&self, target: f64, k: f64) -> bool {
        self.z(target) < k
    }
}

/// Pairwise (tree) summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Sample mean and standard error of i.i.d. values.
pub fn estimate(values: &[f64]) -> EstimateWithError {
    let n = values.len();
    if n == 0 {
        return EstimateWithError { mean: f64::NAN, se: f64::NAN, n: 0 };
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return EstimateWithError { mean, se: 0.0, n };
    }
    let dev: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    EstimateWithError { mean, se: (var / n as f64).sqrt(), n }
}

fn per_path<T: Send, F: Fn(&EventTrace) -> T + Sync + Send>(traces: &[EventTrace], f: F) -> Vec<T> {
    par_map(traces.len(), default_workers(), |k| f(&traces[k]))
}

fn configs_at(traces: &[EventTrace], t: f64) -> Result<Vec<Configuration>> {
    per_path(traces, |tr| tr.sample_at(t)).into_iter().collect()
}

/// χ^(m)(θ^{⊗m}) = μ_t(H^(m)_θ) estimated over paths.
pub fn empirical_chi(traces: &[EventTrace], t: f64, m: (usize, usize), theta: [&TestFunction; 2]) -> Result<EstimateWithError> {
    if m.0 + m.1 > 3 {
        return invalid("empirical χ supports |m| ≤ 3");
    }
    if m == (0, 0) {
        return Ok(EstimateWithError { mean: 1.0, se: 0.0, n: traces.len() });
    }
    let cfgs = configs_at(traces, t)?;
    let vals: Result<Vec<f64>> = per_path_cfg(&cfgs, |c| h_tuple(c, m, theta)).into_iter().collect();
    Ok(estimate(&vals?))
}

fn per_path_cfg<T: Send, F: Fn(&Configuration) -> T + Sync + Send>(cfgs: &[Configuration], f: F) -> Vec<T> {
    par_map(cfgs.len(), default_workers(), |k| f(&cfgs[k]))
}

/// μ_t(F) over paths.
pub fn par_estimate(traces: &[EventTrace], t: f64, f: &dyn Observable) -> Result<EstimateWithError> {
    let vals: Result<Vec<f64>> = per_path(traces, |tr| tr.sample_at(t).map(|c| f.eval(&c))).into_iter().collect();
    Ok(estimate(&vals?))
}

/// κ₀^{m₀}κ₁^{m₁}⟨θ₀⟩^{m₀}⟨θ₁⟩^{m₁}, the Poisson value and sub-Poissonian bound.
pub fn poisson_chi(kappa: [f64; 2], m: (usize, usize), theta: [&TestFunction; 2]) -> f64 {
    (kappa[0] * theta[0].mean).powi(m.0 as i32) * (kappa[1] * theta[1].mean).powi(m.1 as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub n: usize,
    pub estimate: EstimateWithError,
    pub bound: f64,
    pub pass: bool,
}

/// μ_t(N_Λⁿ) against T_n(2κ_t|Λ|), κ_t = e^{ϑ₀+αt}; N_Λ counts both types.
pub fn moment_bound_check(traces: &[EventTrace], t: f64, region: &BoxRegion, n_max: usize, kappa_t: f64, d: usize) -> Result<Vec<MomentRow>> {
    if n_max > 6 {
        return invalid("moment check supports n ≤ 6");
    }
    let cfgs = configs_at(traces, t)?;
    let counts: Vec<f64> = per_path_cfg(&cfgs, |c| (count_in(c, 0, region, d) + count_in(c, 1, region, d)) as f64);
    let x = 2.0 * kappa_t * region.volume(d);
    Ok((0..=n_max)
        .map(|n| {
            let est = estimate(&counts.iter().map(|c| c.powi(n as i32)).collect::<Vec<_>>());
            let bound = touchard_f64(n, x);
            let pass = est.mean - Z_GATE * est.se <= bound * (1.0 + 1e-12);
            MomentRow { n, estimate: est, bound, pass }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpMomentReport {
    pub beta: f64,
    pub estimate: EstimateWithError,
    pub bound: f64,
    pub pass: bool,
}

/// ⟨ψ⟩ = ∫ψ over the box, by a fine midpoint rule.
pub fn psi_integral(dom: &Domain) -> f64 {
    integrate_box(dom, |x| dom.psi(x))
}

fn integrate_box<F: Fn(&crate::geometry::Point) -> f64>(dom: &Domain, f: F) -> f64 {
    let n: usize = match dom.d {
        1 => 20_000,
        2 => 400,
        _ => 60,
    };
    let h = dom.l / n as f64;
    let total = n.pow(dom.d as u32);
    let mut s = 0.0;
    for k in 0..total {
        let mut p = [0.0; 3];
        let mut r = k;
        for a in 0..dom.d {
            p[a] = ((r % n) as f64 + 0.5) * h;
            r /= n;
        }
        s += f(&p);
    }
    s * h.powi(dom.d as i32)
}

/// E[e^{βΨ}] for Poisson(κ₀, κ₁): exp(Σ_i κ_i ∫(e^{βψ} − 1)).
pub fn poisson_exp_moment(kappa: [f64; 2], beta: f64, dom: &Domain) -> f64 {
    let i = integrate_box(dom, |x| (beta * dom.psi(x)).exp_m1());
    ((kappa[0] + kappa[1]) * i).exp()
}

/// μ_t(e^{βΨ}) against exp(2κ_t⟨ψ⟩(e^β − 1)).
pub fn exp_moment_check(traces: &[EventTrace], t: f64, beta: f64, kappa_t: f64, dom: &Domain) -> Result<ExpMomentReport> {
    if beta > 2.0 {
        return invalid("exponential moment check supports β ≤ 2");
    }
    let cfgs = configs_at(traces, t)?;
    let vals: Vec<f64> = per_path_cfg(&cfgs, |c| (beta * c.big_psi(dom)).exp());
    let est = estimate(&vals);
    let bound = (2.0 * kappa_t * psi_integral(dom) * beta.exp_m1()).exp();
    Ok(ExpMomentReport { beta, estimate: est, bound, pass: est.mean - Z_GATE * est.se <= bound * (1.0 + 1e-12) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub name: String,
    pub t1: f64,
    pub t2: f64,
    pub residual: EstimateWithError,
    /// Residual multiplied by G(X_{s₁}), when requested.
    pub weighted: Option<EstimateWithError>,
    /// Largest |LF(n) − LF(2n)| seen over all evaluations.
    pub quad_tol: f64,
    pub pass: bool,
}

/// Per-path F(X_{t₂}) − F(X_{t₁}) − Σ_intervals (LF)(γ)Δt, the integrand being
/// constant between events.
pub fn martingale_residual(
    traces: &[EventTrace],
    ks: &KernelSet,
    f: &dyn Observable,
    t1: f64,
    t2: f64,
    q: &QuadParams,
    weight: Option<(&dyn Observable, f64)>,
) -> Result<MartingaleReport> {
    if !(t1 < t2) {
        return invalid(format!("need t1 < t2, got {t1}, {t2}"));
    }
    if let Some((_, s1)) = weight {
        if !(s1 <= t1) {
            return invalid("conditioning time must not exceed t1");
        }
    }
    if traces.iter().any(|tr| tr.t_end < t2) {
        return invalid("t2 beyond trace end");
    }
    let rows: Vec<(f64, f64, f64)> = per_path(traces, |tr| {
        let sigma = tr.sigma;
        let mut cur = tr.cursor();
        let mut gval = 1.0;
        if let Some((g, s1)) = weight {
            cur.advance_to(s1);
            gval = g.eval(&cur.cfg);
        }
        cur.advance_to(t1);
        let f1 = f.eval(&cur.cfg);
        let mut integral = 0.0;
        let mut tol: f64 = 0.0;
        let mut now = t1;
        loop {
            let next = cur.next_time().min(t2);
            let lf = apply_generator(ks, sigma, f, &cur.cfg, q);
            tol = tol.max(lf.tol);
            integral += lf.value * (next - now);
            now = next;
            if now >= t2 {
                break;
            }
            cur.advance_to(now);
        }
        let r = f.eval(&cur.cfg) - f1 - integral;
        (r, r * gval, tol)
    });
    let res = estimate(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let weighted = weight.map(|_| estimate(&rows.iter().map(|r| r.1).collect::<Vec<_>>()));
    let quad_tol = rows.iter().fold(0.0f64, |a, r| a.max(r.2));
    let pass = res.within(0.0, Z_GATE) && weighted.map(|w| w.within(0.0, Z_GATE)).unwrap_or(true);
    Ok(MartingaleReport { name: f.name(), t1, t2, residual: res, weighted, quad_tol, pass })
}

/// 𝒲 = E[υ(X_{t₁}, X_{t₂}) υ(X_{t₂}, X_{t₃})].
pub fn chentsov_diagnostic(traces: &[EventTrace], metric: &PathMetric, t1: f64, t2: f64, t3: f64) -> Result<EstimateWithError> {
    if !(t1 <= t2 && t2 <= t3) {
        return invalid("need t1 ≤ t2 ≤ t3");
    }
    let vals: Result<Vec<f64>> = per_path(traces, |tr| {
        let a = tr.sample_at(t1)?;
        let b = tr.sample_at(t2)?;
        let c = tr.sample_at(t3)?;
        Ok(metric.distance(&a, &b) * metric.distance(&b, &c))
    })
    .into_iter()
    .collect();
    Ok(estimate(&vals?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChentsovSweep {
    /// (|t₃ − t₁|, 𝒲 averaged over the origins).
    pub points: Vec<(f64, EstimateWithError)>,
    pub slope: f64,
    pub intercept: f64,
}

/// 𝒲 at each spacing s with t₂ = t₁ + s/2, t₃ = t₁ + s, averaged per path over
/// the given origins t₁ (paths remain the i.i.d. unit), then a log-log fit.
pub fn chentsov_sweep(traces: &[EventTrace], metric: &PathMetric, spacings: &[f64], origins: &[f64]) -> Result<ChentsovSweep> {
    if spacings.len() < 2 || origins.is_empty() {
        return invalid("need at least two spacings and one origin");
    }
    let tmax = origins.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + spacings.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if traces.iter().any(|tr| tr.t_end < tmax) {
        return invalid("sweep extends beyond trace end");
    }
    let rows: Vec<Vec<f64>> = per_path(traces, |tr| {
        // moments at every time the sweep touches, computed once
        let mut times: Vec<f64> = Vec::new();
        for &t1 in origins {
            for &s in spacings {
                times.extend([t1, t1 + 0.5 * s, t1 + s]);
            }
        }
        let mut sorted = times.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.dedup();
        let mut cur = tr.cursor();
        let mom: Vec<[[f64; 8]; 2]> = sorted
            .iter()
            .map(|&t| {
                cur.advance_to(t);
                metric.moments(&cur.cfg)
            })
            .collect();
        let at = |t: f64| &mom[sorted.binary_search_by(|p| p.partial_cmp(&t).unwrap()).unwrap()];
        spacings
            .iter()
            .map(|&s| {
                let mut acc = 0.0;
                for &t1 in origins {
                    let (a, b, c) = (at(t1), at(t1 + 0.5 * s), at(t1 + s));
                    acc += PathMetric::distance_from_moments(a, b) * PathMetric::distance_from_moments(b, c);
                }
                acc / origins.len() as f64
            })
            .collect()
    });
    let points: Vec<(f64, EstimateWithError)> =
        spacings.iter().enumerate().map(|(k, &s)| (s, estimate(&rows.iter().map(|r| r[k]).collect::<Vec<_>>()))).collect();
    let (slope, intercept) = loglog_fit(&points.iter().map(|(s, e)| (*s, e.mean)).collect::<Vec<_>>())?;
    Ok(ChentsovSweep { points, slope, intercept })
}

/// Least-squares line through (ln x, ln y).
pub fn loglog_fit(pts: &[(f64, f64)]) -> Result<(f64, f64)> {
    if pts.iter().any(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return invalid("log-log fit needs positive values");
    }
    let n = pts.len() as f64;
    let lx: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaRow {
    pub sigma: f64,
    pub estimate: EstimateWithError,
    /// Paired difference μ^σ(F) − μ^0(F) over coupled paths.
    pub diff: EstimateWithError,
}

/// μ_t^σ(F) for each σ with coupled seeds (same initial states and uniforms).
#[allow(clippy::too_many_arguments)]
pub fn sigma_convergence_sweep(
    law: &InitialLaw,
    ks: &KernelSet,
    f: &dyn Observable,
    t: f64,
    sigmas: &[f64],
    n_paths: usize,
    master_seed: u64,
    workers: usize,
) -> Result<Vec<SigmaRow>> {
    if !sigmas.windows(2).all(|w| w[0] > w[1]) || sigmas.last() != Some(&0.0) {
        return invalid("σ list must be strictly descending and end with 0");
    }
    let t_end = if t > 0.0 { t } else { 1e-12 };
    let mut vals: Vec<Vec<f64>> = Vec::new();
    for &s in sigmas {
        let tr = batch_simulate(law, ks, n_paths, t_end, s, master_seed, workers)?;
        let cf = configs_at(&tr, t)?;
        vals.push(per_path_cfg(&cf, |c| f.eval(c)));
    }
    let base = vals.last().unwrap().clone();
    Ok(sigmas
        .iter()
        .zip(&vals)
        .map(|(&s, v)| {
            let d: Vec<f64> = v.iter().zip(&base).map(|(a, b)| a - b).collect();
            SigmaRow { sigma: s, estimate: estimate(v), diff: estimate(&d) }
        })
        .collect())
}

/// Monotone nonincreasing |diff| along the σ list (zero row excluded), each
/// step allowed to rise by one joint SE.
pub fn sigma_monotone(rows: &[SigmaRow]) -> bool {
    let r: Vec<&SigmaRow> = rows.iter().filter(|r| r.sigma > 0.0).collect();
    r.windows(2).all(|w| {
        let joint = (w[0].diff.se.powi(2) + w[1].diff.se.powi(2)).sqrt();
        w[1].diff.mean.abs() <= w[0].diff.mean.abs() + joint
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeEstimate {
    /// max_m (χ̂^(m)/⟨θ⟩^m)^{1/|m|} with a delta-method SE.
    pub value: EstimateWithError,
    pub argmax: (usize, usize),
    pub per_order: Vec<((usize, usize), f64)>,
}

pub fn type_estimate(traces: &[EventTrace], t: f64, theta: [&TestFunction; 2], m_max: usize) -> Result<TypeEstimate> {
    if m_max == 0 || m_max > 3 {
        return invalid("type estimate needs 1 ≤ mMax ≤ 3");
    }
    let mut best: Option<(EstimateWithError, (usize, usize))> = None;
    let mut per = Vec::new();
    for s in 1..=m_max {
        for m0 in (0..=s).rev() {
            let m = (m0, s - m0);
            let norm = theta[0].mean.powi(m.0 as i32) * theta[1].mean.powi(m.1 as i32);
            if norm <= 0.0 {
                continue;
            }
            let chi = empirical_chi(traces, t, m, theta)?;
            let r = (chi.mean / norm).max(0.0);
            let v = r.powf(1.0 / s as f64);
            let se = if r > 0.0 { v / (s as f64 * r) * chi.se / norm } else { chi.se / norm };
            per.push((m, v));
            if best.map(|(b, _)| v > b.mean).unwrap_or(true) {
                best = Some((EstimateWithError { mean: v, se, n: chi.n }, m));
            }
        }
    }
    let Some((value, argmax)) = best else {
        return invalid("all test functions vanish");
    };
    Ok(TypeEstimate { value, argmax, per_order: per })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{JumpFamily, RepulsionFamily};
    use crate::sim::batch_simulate;
    use crate::theta::ThetaFamily;

    fn free() -> KernelSet {
        KernelSet::symmetric(Domain::new(1, 10.0).unwrap(), JumpFamily::TopHat { mass: 1.0, radius: 1.0 }, RepulsionFamily::Zero).unwrap()
    }

    #[test]
    fn estimate_basics() {
        let e = estimate(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(pairwise_sum(&(1..=100).map(|k| k as f64).collect::<Vec<_>>()), 5050.0);
    }

    #[test]
    fn chi_order_zero_is_one() {
        let ks = free();
        let tr = batch_simulate(&InitialLaw::Poisson { kappa: [0.5, 0.5] }, &ks, 20, 0.5, 0.0, 1, 1).unwrap();
        let th = TestFunction::new(ThetaFamily::GaussianBump { amp: 0.5, center: ks.domain.center(), width: 1.0 }, ks.domain).unwrap();
        let e = empirical_chi(&tr, 0.3, (0, 0), [&th, &th]).unwrap();
        assert_eq!((e.mean, e.se), (1.0, 0.0));
    }

    #[test]
    fn frozen_dynamics_martingale_is_zero() {
        let dom = Domain::new(1, 10.0).unwrap();
        let ks = KernelSet::symmetric(dom, JumpFamily::TopHat { mass: 0.0, radius: 1.0 }, RepulsionFamily::Zero).unwrap();
        let tr = batch_simulate(&InitialLaw::Poisson { kappa: [0.5, 0.5] }, &ks, 30, 1.0, 0.0, 2, 1).unwrap();
        let th = TestFunction::new(ThetaFamily::GaussianBump { amp: 0.5, center: dom.center(), width: 1.0 }, dom).unwrap();
        let f = crate::observables::Ftilde::new([th.clone(), th], [1.0, 1.0]).unwrap();
        let r = martingale_residual(&tr, &ks, &f, 0.2, 0.8, &QuadParams::default(), None).unwrap();
        assert_eq!(r.residual.mean, 0.0);
        assert_eq!(r.residual.se, 0.0);
    }

    #[test]
    fn chentsov_trivial_cases() {
        let ks = free();
        let tr = batch_simulate(&InitialLaw::Poisson { kappa: [0.5, 0.5] }, &ks, 50, 1.0, 0.0, 3, 1).unwrap();
        let m = PathMetric::new(ks.domain);
        assert_eq!(chentsov_diagnostic(&tr, &m, 0.2, 0.2, 0.5).unwrap().mean, 0.0);
        let mut rev = tr.clone();
        rev.reverse();
        let a = chentsov_diagnostic(&tr, &m, 0.1, 0.3, 0.6).unwrap();
        let b = chentsov_diagnostic(&rev, &m, 0.1, 0.3, 0.6).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-15 * (1.0 + a.mean));
    }

    #[test]
    fn moment_rows_order_zero() {
        let ks = free();
        let tr = batch_simulate(&InitialLaw::Poisson { kappa: [0.5, 0.5] }, &ks, 50, 0.5, 0.0, 4, 1).unwrap();
        let rows = moment_bound_check(&tr, 0.0, &BoxRegion::centered(&ks.domain, 2.0), 2, 0.5, 1).unwrap();
        assert_eq!(rows[0].estimate.mean, 1.0);
        assert_eq!(rows[0].bound, 1.0);
        assert!(rows.iter().all(|r| r.pass));
    }

    #[test]
    fn exp_moment_beta_zero() {
        let ks = free();
        let tr = batch_simulate(&InitialLaw::Poisson { kappa: [0.5, 0.5] }, &ks, 10, 0.5, 0.0, 5, 1).unwrap();
        let r = exp_moment_check(&tr, 0.2, 0.0, 0.5, &ks.domain).unwrap();
        assert_eq!(r.estimate.mean, 1.0);
        assert_eq!(r.bound, 1.0);
    }

    #[test]
    fn loglog_recovers_power() {
        let pts: Vec<(f64, f64)> = [0.02, 0.04, 0.08, 0.16].iter().map(|&s| (s, 3.0 * s * s)).collect();
        let (a, b) = loglog_fit(&pts).unwrap();
        assert!((a - 2.0).abs() < 1e-12 && (b - 3f64.ln()).abs() < 1e-12);
    }
}
