//! Quadrature rules and a few special functions used by the kernel and
//! generator code.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Composite Gauss–Legendre rule on [a, b] with `panels` equal panels.
pub fn gl_composite(a: f64, b: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (xi, wi) in x.iter().zip(&w) {
            out.push((lo + 0.5 * h * (xi + 1.0), 0.5 * h * wi));
        }
    }
    out
}

fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson integration to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    // split first so that narrow features are not skipped by the initial probe
    let pieces = 64;
    let h = (b - a) / pieces as f64;
    let mut total = 0.0;
    for p in 0..pieces {
        let lo = a + p as f64 * h;
        let hi = lo + h;
        let fa = f(lo);
        let fb = f(hi);
        let fm = f(0.5 * (lo + hi));
        let whole = h / 6.0 * (fa + 4.0 * fm + fb);
        total += simpson_rec(&f, lo, hi, fa, fm, fb, whole, tol / pieces as f64, 40);
    }
    total
}

/// Γ(s/2) for a positive integer s, exact up to rounding.
pub fn gamma_half(s: u32) -> f64 {
    assert!(s >= 1);
    if s % 2 == 0 {
        (1..s / 2).map(|k| k as f64).product()
    } else {
        // Γ(n + 1/2) = (2n)! / (4^n n!) √π
        let n = (s - 1) / 2;
        let mut v = PI.sqrt();
        for k in 0..n {
            v *= k as f64 + 0.5;
        }
        v
    }
}

/// Surface area of the unit sphere in ℝ^d.
pub fn sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / gamma_half(d as u32)
}

/// Volume of the unit ball in ℝ^d.
pub fn ball_volume(d: usize) -> f64 {
    sphere_area(d) / d as f64
}

/// Bessel J_n(x) for integer n by the trapezoidal rule on Bessel's integral,
/// which converges geometrically for a periodic integrand.
pub fn bessel_j(n: i32, x: f64) -> f64 {
    let k = 64 + (x.abs() as usize) * 2;
    let h = PI / k as f64;
    // endpoints θ = 0 and θ = π contribute cos 0 and cos nπ with half weight
    let mut s = 0.5 * (1.0 + (n as f64 * PI).cos());
    for j in 1..k {
        let th = j as f64 * h;
        s += (n as f64 * th - x * th.sin()).cos();
    }
    s * h / PI
}

/// Radial Fourier transform of a radial function in d dimensions:
/// f̂(ξ) = ∫ f(|u|) e^{-iξ·u} du, evaluated on [0, rmax].
pub fn radial_fourier<F: Fn(f64) -> f64>(f: F, d: usize, xi: f64, rmax: f64, panels: usize) -> f64 {
    let nodes = gl_composite(0.0, rmax, panels, 16);
    let mut s = 0.0;
    for (r, w) in nodes {
        let fr = f(r);
        if fr == 0.0 {
            continue;
        }
        let kern = match d {
            1 => 2.0 * (xi * r).cos(),
            2 => 2.0 * PI * r * bessel_j(0, xi * r),
            3 => {
                let z = xi * r;
                let sinc = if z.abs() < 1e-8 { 1.0 - z * z / 6.0 } else { z.sin() / z };
                4.0 * PI * r * r * sinc
            }
            _ => panic!("radial transform implemented for d <= 3"),
        };
        s += w * fr * kern;
    }
    s
}

/// Exact pairwise-tree summation; the reduction order depends only on length.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => {
            let (a, b) = v.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn bessel_values() {
        // J0(1), J1(2.5) from tables
        assert!((bessel_j(0, 1.0) - 0.765_197_686_557_966_6).abs() < 1e-13);
        assert!((bessel_j(1, 2.5) - 0.497_094_102_464_274_4).abs() < 1e-13);
    }

    #[test]
    fn gamma_half_values() {
        assert!((gamma_half(1) - PI.sqrt()).abs() < 1e-15);
        assert_eq!(gamma_half(6), 2.0);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-13);
        assert!((ball_volume(2) - PI).abs() < 1e-13);
    }

    #[test]
    fn simpson_gaussian() {
        let v = adaptive_simpson(|x| (-x * x).exp(), -10.0, 10.0, 1e-12);
        assert!((v - PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn radial_fourier_gaussian_2d() {
        let s: f64 = 0.7;
        let f = |r: f64| (-(r * r) / (2.0 * s * s)).exp();
        let xi = 1.3;
        let exact = 2.0 * PI * s * s * (-(s * s) * xi * xi / 2.0).exp();
        let v = radial_fourier(f, 2, xi, 12.0 * s, 32);
        assert!((v - exact).abs() < 1e-10, "{v} {exact}");
    }
}
