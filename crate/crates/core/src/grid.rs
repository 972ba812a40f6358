//! Uniform torus grids, separable discrete Fourier transforms and grid-sampled
//! functions with multilinear interpolation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geometry::{Domain, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub d: usize,
    pub n: usize,
    pub l: f64,
}

impl Grid {
    pub fn new(dom: &Domain, n: usize) -> Self {
        Grid { d: dom.d, n, l: dom.l }
    }

    /// Number of nodes n^d.
    pub fn size(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn h(&self) -> f64 {
        self.l / self.n as f64
    }

    /// Quadrature weight of one node.
    pub fn weight(&self) -> f64 {
        self.h().powi(self.d as i32)
    }

    pub fn multi(&self, mut k: usize) -> [usize; 3] {
        let mut m = [0; 3];
        for a in (0..self.d).rev() {
            m[a] = k % self.n;
            k /= self.n;
        }
        m
    }

    pub fn flat(&self, m: &[usize; 3]) -> usize {
        let mut k = 0;
        for &v in m.iter().take(self.d) {
            k = k * self.n + v;
        }
        k
    }

    pub fn node(&self, k: usize) -> Point {
        let m = self.multi(k);
        let mut p = [0.0; 3];
        for a in 0..self.d {
            p[a] = m[a] as f64 * self.h();
        }
        p
    }

    /// Node of a displacement index, as a signed vector in (−L/2, L/2].
    pub fn offset_vector(&self, k: usize) -> Point {
        let m = self.multi(k);
        let mut p = [0.0; 3];
        for a in 0..self.d {
            let s = if m[a] > self.n / 2 { m[a] as f64 - self.n as f64 } else { m[a] as f64 };
            p[a] = s * self.h();
        }
        p
    }

    /// Index of the node y − z (mod n on each axis).
    pub fn sub(&self, y: usize, z: usize) -> usize {
        let my = self.multi(y);
        let mz = self.multi(z);
        let mut m = [0; 3];
        for a in 0..self.d {
            m[a] = (my[a] + self.n - mz[a]) % self.n;
        }
        self.flat(&m)
    }

    /// Table t[y·N + z] = index of y − z.
    pub fn sub_table(&self) -> Vec<u32> {
        let nn = self.size();
        let mut t = vec![0u32; nn * nn];
        for y in 0..nn {
            for z in 0..nn {
                t[y * nn + z] = self.sub(y, z) as u32;
            }
        }
        t
    }

    /// Wavenumber vector of frequency index k.
    pub fn wavevector(&self, k: usize) -> Point {
        let m = self.multi(k);
        let mut p = [0.0; 3];
        for a in 0..self.d {
            let s = if m[a] > self.n / 2 { m[a] as f64 - self.n as f64 } else { m[a] as f64 };
            p[a] = 2.0 * PI * s / self.l;
        }
        p
    }

    pub fn sample<F: Fn(&Point) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.size()).map(|k| f(&self.node(k))).collect()
    }

    /// Separable DFT over all axes; `inverse` includes the 1/N factor.
    pub fn dft(&self, re: &mut [f64], im: &mut [f64], inverse: bool) {
        let n = self.n;
        let cs: Vec<f64> = (0..n).map(|j| (2.0 * PI * j as f64 / n as f64).cos()).collect();
        let sn: Vec<f64> = (0..n).map(|j| (2.0 * PI * j as f64 / n as f64).sin()).collect();
        let sign = if inverse { 1.0 } else { -1.0 };
        let total = self.size();
        let mut br = vec![0.0; n];
        let mut bi = vec![0.0; n];
        for axis in 0..self.d {
            let stride = n.pow((self.d - 1 - axis) as u32);
            for start in 0..total {
                if (start / stride) % n != 0 {
                    continue;
                }
                for k in 0..n {
                    let mut sr = 0.0;
                    let mut si = 0.0;
                    for j in 0..n {
                        let idx = (j * k) % n;
                        let (c, s) = (cs[idx], sign * sn[idx]);
                        let xr = re[start + j * stride];
                        let xi = im[start + j * stride];
                        sr += xr * c - xi * s;
                        si += xr * s + xi * c;
                    }
                    br[k] = sr;
                    bi[k] = si;
                }
                for k in 0..n {
                    re[start + k * stride] = br[k];
                    im[start + k * stride] = bi[k];
                }
            }
        }
        if inverse {
            let f = 1.0 / total as f64;
            re.iter_mut().for_each(|v| *v *= f);
            im.iter_mut().for_each(|v| *v *= f);
        }
    }

    /// Periodic convolution of grid samples with a radial kernel given by its
    /// Fourier symbol: returns ∫ a(x − y) f(y) dy at every node.
    pub fn convolve<S: Fn(f64) -> f64>(&self, f: &[f64], symbol: S) -> Vec<f64> {
        let mut re = f.to_vec();
        let mut im = vec![0.0; f.len()];
        self.dft(&mut re, &mut im, false);
        for k in 0..self.size() {
            let xi = crate::geometry::norm(&self.wavevector(k), self.d);
            let s = symbol(xi);
            re[k] *= s;
            im[k] *= s;
        }
        self.dft(&mut re, &mut im, true);
        re
    }

    /// Circulant weights c(o) with Σ_o c(o) f(x ⊖ o) = ∫ a(x − y) f(y) dy exactly
    /// on grid-resolved trigonometric polynomials.
    pub fn spectral_weights<S: Fn(f64) -> f64>(&self, symbol: S) -> Vec<f64> {
        let mut re: Vec<f64> =
            (0..self.size()).map(|k| symbol(crate::geometry::norm(&self.wavevector(k), self.d))).collect();
        let mut im = vec![0.0; self.size()];
        self.dft(&mut re, &mut im, true);
        re
    }

    /// Multilinear periodic interpolation of grid samples.
    pub fn interp(&self, v: &[f64], x: &Point) -> f64 {
        let h = self.h();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..self.d {
            let s = (x[a] / h).rem_euclid(self.n as f64);
            let f = s.floor();
            base[a] = (f as usize) % self.n;
            frac[a] = s - f;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << self.d) {
            let mut w = 1.0;
            let mut m = [0usize; 3];
            for a in 0..self.d {
                let bit = (corner >> a) & 1;
                m[a] = (base[a] + bit) % self.n;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w != 0.0 {
                acc += w * v[self.flat(&m)];
            }
        }
        acc
    }

    /// Node index of a point lying on the grid (nearest node).
    pub fn nearest(&self, x: &Point) -> usize {
        let h = self.h();
        let mut m = [0usize; 3];
        for a in 0..self.d {
            m[a] = ((x[a] / h).round() as i64).rem_euclid(self.n as i64) as usize;
        }
        self.flat(&m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dft_roundtrip_2d() {
        let g = Grid { d: 2, n: 6, l: 3.0 };
        let f: Vec<f64> = (0..g.size()).map(|k| (k as f64 * 0.37).sin()).collect();
        let mut re = f.clone();
        let mut im = vec![0.0; f.len()];
        g.dft(&mut re, &mut im, false);
        g.dft(&mut re, &mut im, true);
        for (a, b) in re.iter().zip(&f) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn convolve_cosine_mode() {
        // a top-hat of mass 1 and radius R multiplies cos(ξx) by sin(ξR)/(ξR)
        let g = Grid { d: 1, n: 32, l: 10.0 };
        let xi = 2.0 * PI * 3.0 / 10.0;
        let r = 1.0;
        let f = g.sample(|x| (xi * x[0]).cos());
        let out = g.convolve(&f, |k| if k == 0.0 { 1.0 } else { (k * r).sin() / (k * r) });
        let fac = (xi * r).sin() / (xi * r);
        for (k, v) in out.iter().enumerate() {
            assert!((v - fac * f[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_weights_apply() {
        let g = Grid { d: 1, n: 16, l: 10.0 };
        let xi = 2.0 * PI / 10.0;
        let sym = |k: f64| (-0.5 * k * k).exp();
        let w = g.spectral_weights(sym);
        let f = g.sample(|x| (xi * x[0]).sin());
        for y in 0..16 {
            let s: f64 = (0..16).map(|x| w[g.sub(y, x)] * f[x]).sum();
            assert!((s - sym(xi) * f[y]).abs() < 1e-12);
        }
    }
}
