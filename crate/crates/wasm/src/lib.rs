//! Browser bindings: a 2D particle viewer, the free one-point profile, and
//! the horizon T_*(ϑ) as a function of the repulsion.

use wasm_bindgen::prelude::*;

use wrdyn::hierarchy::{evolve_forward, CorrelationField, HierarchyParams, Operators};
use wrdyn::kernels::{JumpFamily, RepulsionFamily};
use wrdyn::rng::Stream;
use wrdyn::sim::{sample_poisson_initial, simulate_path, EventTrace};
use wrdyn::{Domain, KernelSet};

fn js(e: wrdyn::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn repulsion(height: f64, width: f64) -> RepulsionFamily {
    if height > 0.0 {
        RepulsionFamily::Gaussian { height, width }
    } else {
        RepulsionFamily::Zero
    }
}

/// One simulated path on a 10 × 10 torus, sampled at any time in [0, t_max].
#[wasm_bindgen]
pub struct Viewer {
    trace: EventTrace,
    l: f64,
}

#[wasm_bindgen]
impl Viewer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, kappa: f64, height: f64, sigma: f64, t_max: f64) -> Result<Viewer, JsError> {
        let dom = Domain::new(2, 10.0).map_err(js)?;
        let ks = KernelSet::symmetric(dom, JumpFamily::Gaussian { mass: 1.0, width: 0.5 }, repulsion(height, 0.5)).map_err(js)?;
        let mut rng = Stream::new(seed as u64, 0);
        let g0 = sample_poisson_initial([kappa, kappa], &dom, &mut rng);
        let trace = simulate_path(g0, &ks, t_max, sigma, seed as u64, 1).map_err(js)?;
        Ok(Viewer { trace, l: dom.l })
    }

    /// Flat (type, x, y) triples at time t.
    pub fn frame(&self, t: f64) -> Result<Vec<f64>, JsError> {
        let cfg = self.trace.sample_at(t.clamp(0.0, self.trace.t_end)).map_err(js)?;
        let mut out = Vec::with_capacity(3 * cfg.total());
        for ty in 0..2 {
            for p in cfg.points(ty) {
                out.extend_from_slice(&[ty as f64, p[0], p[1]]);
            }
        }
        Ok(out)
    }

    pub fn box_size(&self) -> f64 {
        self.l
    }

    pub fn t_max(&self) -> f64 {
        self.trace.t_end
    }

    /// Accepted jumps over the whole path.
    pub fn events(&self) -> usize {
        self.trace.events.len()
    }

    /// Tentative jumps over the whole path.
    pub fn tentative(&self) -> f64 {
        self.trace.stats.tentative as f64
    }
}

/// Free top-hat dynamics on a ring of length 10 from a modulated Poisson
/// start: grid x, k₀^(1,0) and the hierarchy solution k_t^(1,0), each of
/// length n, concatenated.
#[wasm_bindgen]
pub fn one_point_profile(kappa: f64, eps: f64, freq: u32, t: f64, n: usize) -> Result<Vec<f64>, JsError> {
    let dom = Domain::new(1, 10.0).map_err(js)?;
    let ks = KernelSet::symmetric(dom, JumpFamily::TopHat { mass: 1.0, radius: 1.0 }, RepulsionFamily::Zero).map_err(js)?;
    let ops = Operators::new(&ks, n, 0.0, 3).map_err(js)?;
    let grid = ops.grid;
    let xi = 2.0 * std::f64::consts::PI * freq as f64 / dom.l;
    let rho0: Vec<f64> = grid.sample(|x| kappa * (1.0 + eps * (xi * x[0]).cos()));
    let k0 = CorrelationField::product(grid, 1, [rho0.clone(), vec![kappa; n]]).map_err(js)?;
    let params = HierarchyParams { max_order: 1, grid_n: n, ..Default::default() };
    let (kt, _) = evolve_forward(&ops, &ks, &k0, t, &params).map_err(js)?;
    let mut out: Vec<f64> = (0..n).map(|k| grid.node(k)[0]).collect();
    out.extend_from_slice(&rho0);
    out.extend_from_slice(kt.tower.get((1, 0)).unwrap_or(&[]));
    Ok(out)
}

fn horizon_set(height: f64, width: f64) -> Result<KernelSet, JsError> {
    let dom = Domain::new(1, 10.0).map_err(js)?;
    KernelSet::symmetric(dom, JumpFamily::Gaussian { mass: 1.0, width: 1.0 }, repulsion(height, width)).map_err(js)
}

/// α, φ̄ and c_a for gaussian jumps (mass 1, width 1) and the given repulsion.
#[wasm_bindgen]
pub fn kernel_constants(height: f64, width: f64) -> Result<Vec<f64>, JsError> {
    let c = horizon_set(height, width)?.constants;
    Ok(vec![c.alpha, c.phibar, c.c_a])
}

/// (ϑ, T_*(ϑ)) pairs for n values of ϑ on [lo, hi]; T_* is NaN where the
/// horizon is undefined (φ̄ = 0).
#[wasm_bindgen]
pub fn horizon_curve(height: f64, width: f64, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, JsError> {
    let ks = horizon_set(height, width)?;
    let mut out = Vec::with_capacity(2 * n);
    for k in 0..n {
        let th = if n > 1 { lo + (hi - lo) * k as f64 / (n - 1) as f64 } else { lo };
        let ts = ks.t_star(th).map(|v| v.1).unwrap_or(f64::NAN);
        out.extend_from_slice(&[th, ts]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn viewer_frames_keep_counts() {
        let v = Viewer::new(7, 0.3, 0.5, 0.0, 2.0).unwrap();
        let a = v.frame(0.0).unwrap();
        let b = v.frame(2.0).unwrap();
        assert_eq!(a.len(), b.len());
        assert!(a.len() > 0 && a.len() % 3 == 0);
        assert!(b.chunks(3).all(|p| p[1] >= 0.0 && p[1] < 10.0 && p[2] >= 0.0 && p[2] < 10.0));
        assert_eq!(v.frame(1.0).unwrap(), Viewer::new(7, 0.3, 0.5, 0.0, 2.0).unwrap().frame(1.0).unwrap());
    }

    #[test]
    fn profile_relaxes_toward_mean() {
        let n = 32;
        let v = one_point_profile(0.5, 0.4, 1, 2.0, n).unwrap();
        assert_eq!(v.len(), 3 * n);
        let amp = |s: &[f64]| s.iter().fold(0.0f64, |a, x| a.max((x - 0.5).abs()));
        assert!(amp(&v[2 * n..]) < amp(&v[n..2 * n]));
        let mean: f64 = v[2 * n..].iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn horizon_shrinks_with_theta() {
        let c = horizon_curve(0.26, 0.5, -2.0, 0.0, 5).unwrap();
        let ts: Vec<f64> = c.chunks(2).map(|p| p[1]).collect();
        assert!(ts.windows(2).all(|w| w[1] < w[0]));
        assert!(horizon_curve(0.0, 0.5, -1.0, 0.0, 3).unwrap().chunks(2).all(|p| p[1].is_nan()));
    }
}
