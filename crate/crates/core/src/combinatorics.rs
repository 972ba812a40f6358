//! Exact integer machinery: Stirling numbers of the second kind, Touchard
//! polynomials, the sequence sets 𝒞_{p,q} with their multinomial weights, and
//! forward differences w_k(p,q).

use std::sync::OnceLock;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{invalid, Result};

pub const STIRLING_MAX: usize = 30;

fn stirling_table() -> &'static Vec<Vec<u128>> {
    static TABLE: OnceLock<Vec<Vec<u128>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = STIRLING_MAX;
        let mut s = vec![vec![0u128; n + 1]; n + 1];
        s[0][0] = 1;
        for p in 1..=n {
            for l in 1..=p {
                s[p][l] = l as u128 * s[p - 1][l] + s[p - 1][l - 1];
            }
        }
        s
    })
}

/// S(p, l), partitions of p labeled items into l nonempty groups.
pub fn stirling2(p: usize, l: usize) -> Result<u128> {
    if p > STIRLING_MAX || l > p {
        return invalid(format!("stirling2({p}, {l}) out of range 0 <= l <= p <= {STIRLING_MAX}"));
    }
    Ok(stirling_table()[p][l])
}

/// Integer polynomial, coefficient of x^j at index j.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Poly(pub Vec<BigInt>);

impl Poly {
    fn trim(mut self) -> Self {
        while self.0.len() > 1 && self.0.last().is_some_and(|c| c.is_zero()) {
            self.0.pop();
        }
        self
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![BigInt::zero(); self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out).trim()
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.0.len().max(other.0.len());
        let mut out = vec![BigInt::zero(); n];
        for (i, a) in self.0.iter().enumerate() {
            out[i] += a;
        }
        for (i, b) in other.0.iter().enumerate() {
            out[i] += b;
        }
        Poly(out).trim()
    }

    pub fn scale(&self, c: &BigInt) -> Poly {
        Poly(self.0.iter().map(|a| a * c).collect()).trim()
    }

    /// p(c·x)
    pub fn dilate(&self, c: &BigInt) -> Poly {
        let mut pow = BigInt::one();
        let mut out = Vec::with_capacity(self.0.len());
        for a in &self.0 {
            out.push(a * &pow);
            pow *= c;
        }
        Poly(out).trim()
    }

    pub fn eval(&self, x: &BigRational) -> BigRational {
        let mut acc = BigRational::zero();
        for a in self.0.iter().rev() {
            acc = acc * x + BigRational::from_integer(a.clone());
        }
        acc
    }

    pub fn eval_f64(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for a in self.0.iter().rev() {
            acc = acc * x + a.to_f64().unwrap_or(f64::NAN);
        }
        acc
    }
}

/// T_n(x) = Σ_l S(n,l) x^l.
pub fn touchard_poly(n: usize) -> Result<Poly> {
    let coeffs = (0..=n).map(|l| stirling2(n, l).map(BigInt::from)).collect::<Result<Vec<_>>>()?;
    Ok(Poly(coeffs).trim())
}

pub fn touchard(n: usize, x: &BigRational) -> Result<BigRational> {
    Ok(touchard_poly(n)?.eval(x))
}

pub fn touchard_f64(n: usize, x: f64) -> f64 {
    touchard_poly(n).map(|p| p.eval_f64(x)).unwrap_or(f64::NAN)
}

pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let mut acc = BigUint::one();
    for j in 0..k {
        acc = acc * BigUint::from(n - j) / BigUint::from(j + 1);
    }
    acc
}

pub fn factorial(n: u64) -> BigUint {
    (1..=n).fold(BigUint::one(), |acc, k| acc * BigUint::from(k))
}

/// Checks Σ_{p=0}^{n} C(n,p) T_p(x) T_{n−p}(x) = T_n(2x) coefficientwise.
pub fn touchard_convolution_holds(n: usize) -> Result<bool> {
    let mut lhs = Poly(vec![BigInt::zero()]);
    for p in 0..=n {
        let c = BigInt::from(binomial(n as u64, p as u64));
        lhs = lhs.add(&touchard_poly(p)?.mul(&touchard_poly(n - p)?).scale(&c));
    }
    let rhs = touchard_poly(n)?.dilate(&BigInt::from(2));
    Ok(lhs == rhs)
}

/// An element of 𝒞_{p,q}: c_0..c_q with Σ c_l = p and Σ l c_l = q.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SequenceC {
    pub p: usize,
    pub q: usize,
    pub c: Vec<usize>,
}

impl SequenceC {
    pub fn is_valid(&self) -> bool {
        self.c.iter().sum::<usize>() == self.p
            && self.c.iter().enumerate().map(|(l, v)| l * v).sum::<usize>() == self.q
    }
}

/// All of 𝒞_{p,q}, in lexicographic order of (c_q, c_{q−1}, …, c_1) descending.
pub fn enumerate_c(p: usize, q: usize) -> Result<Vec<SequenceC>> {
    if q > 12 {
        return invalid(format!("enumerate_c: q = {q} > 12"));
    }
    let mut out = Vec::new();
    let mut c = vec![0usize; q + 1];
    fn rec(l: usize, p_left: usize, q_left: usize, c: &mut Vec<usize>, p: usize, q: usize, out: &mut Vec<SequenceC>) {
        if l == 0 {
            if q_left == 0 {
                c[0] = p_left;
                out.push(SequenceC { p, q, c: c.clone() });
            }
            return;
        }
        let max = (q_left / l).min(p_left);
        for v in (0..=max).rev() {
            c[l] = v;
            rec(l - 1, p_left - v, q_left - l * v, c, p, q, out);
        }
        c[l] = 0;
    }
    rec(q, p, q, &mut c, p, q, &mut out);
    Ok(out)
}

/// C_{p,q}(c) = p! q! / (Π c_l! (l!)^{c_l}).
pub fn weight_c(seq: &SequenceC) -> Result<BigUint> {
    if !seq.is_valid() {
        return invalid(format!("sequence {:?} not in C_{{{},{}}}", seq.c, seq.p, seq.q));
    }
    let num = factorial(seq.p as u64) * factorial(seq.q as u64);
    let mut den = BigUint::one();
    for (l, &v) in seq.c.iter().enumerate() {
        den *= factorial(v as u64);
        den *= factorial(l as u64).pow(v as u32);
    }
    Ok(num / den)
}

/// w_k(p,q) = (1/k!) Σ_{l=0}^{k} (−1)^{k−l} C(k,l) (p+l)^q.
pub fn finite_diff_w(k: usize, p: usize, q: usize) -> Result<BigInt> {
    if k > 20 || q > 20 {
        return invalid(format!("finite_diff_w: k = {k}, q = {q} must be <= 20"));
    }
    let mut s = BigInt::zero();
    for l in 0..=k {
        let term = BigInt::from(binomial(k as u64, l as u64)) * BigInt::from(p + l).pow(q as u32);
        if (k - l) % 2 == 0 {
            s += term;
        } else {
            s -= term;
        }
    }
    Ok(s / BigInt::from(factorial(k as u64)))
}

pub fn finite_diff_w_f64(k: usize, p: usize, q: usize) -> f64 {
    finite_diff_w(k, p, q).ok().and_then(|v| v.to_f64()).unwrap_or(f64::NAN)
}

/// One row of the identity table printed by `verify-identities`.
#[derive(Debug, Clone)]
pub struct IdentityCheck {
    pub name: String,
    pub cases: usize,
    pub passed: bool,
}

/// The three exact identity families.
pub fn verify_identities() -> Vec<IdentityCheck> {
    let mut out = Vec::new();
    let mut ok = true;
    let mut cases = 0;
    for p in 1..=8usize {
        for q in 0..=8usize {
            let total = enumerate_c(p, q)
                .unwrap()
                .iter()
                .map(|c| weight_c(c).unwrap())
                .fold(BigUint::zero(), |a, b| a + b);
            ok &= total == BigUint::from(p).pow(q as u32);
            cases += 1;
        }
    }
    out.push(IdentityCheck { name: "sum of C_{p,q}(c) over C_{p,q} equals p^q, 1<=p<=8, 0<=q<=8".into(), cases, passed: ok });

    let mut ok = true;
    for n in 0..=10 {
        ok &= touchard_convolution_holds(n).unwrap_or(false);
    }
    out.push(IdentityCheck { name: "sum_p C(n,p) T_p(x) T_{n-p}(x) = T_n(2x), n<=10".into(), cases: 11, passed: ok });

    let mut ok = true;
    let mut cases = 0;
    for q in 0..=20 {
        for k in q + 1..=20 {
            for p in 0..=20 {
                ok &= finite_diff_w(k, p, q).map(|v| v.is_zero()).unwrap_or(false);
                cases += 1;
            }
        }
    }
    out.push(IdentityCheck { name: "w_k(p,q) = 0 for k > q, p,q,k <= 20".into(), cases, passed: ok });

    let mut ok = true;
    let mut cases = 0;
    for p in 0..=20 {
        for q in 0..=12 {
            ok &= finite_diff_w(0, p, q).unwrap() == BigInt::from(p).pow(q as u32);
            cases += 1;
        }
    }
    out.push(IdentityCheck { name: "w_0(p,q) = p^q".into(), cases, passed: ok });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stirling_rows() {
        assert_eq!(stirling2(4, 2).unwrap(), 7);
        assert_eq!(stirling2(3, 2).unwrap(), 3);
        for p in 1..=30 {
            assert_eq!(stirling2(p, 1).unwrap(), 1);
            assert_eq!(stirling2(p, p).unwrap(), 1);
        }
        assert!(stirling2(31, 1).is_err());
    }

    #[test]
    fn touchard_small() {
        let t3 = touchard_poly(3).unwrap();
        assert_eq!(t3, Poly(vec![0, 1, 3, 1].into_iter().map(BigInt::from).collect()));
        let t1 = touchard_poly(1).unwrap();
        assert_eq!(t1, Poly(vec![BigInt::zero(), BigInt::one()]));
    }

    #[test]
    fn c_sets() {
        assert_eq!(enumerate_c(2, 3).unwrap().iter().map(|s| s.c.clone()).collect::<Vec<_>>(), vec![vec![1, 0, 0, 1], vec![0, 1, 1, 0]]);
        assert_eq!(enumerate_c(5, 0).unwrap().len(), 1);
        assert_eq!(enumerate_c(5, 0).unwrap()[0].c, vec![5]);
        for p in 2..8 {
            assert_eq!(enumerate_c(p, 2).unwrap().len(), 2);
        }
    }

    #[test]
    fn weights() {
        let w: Vec<BigUint> = enumerate_c(2, 2).unwrap().iter().map(|c| weight_c(c).unwrap()).collect();
        assert_eq!(w, vec![BigUint::from(2u32), BigUint::from(2u32)]);
        let s: BigUint = enumerate_c(3, 2).unwrap().iter().map(|c| weight_c(c).unwrap()).sum();
        assert_eq!(s, BigUint::from(9u32));
        let bad = SequenceC { p: 2, q: 2, c: vec![2, 1] };
        assert!(weight_c(&bad).is_err());
    }

    #[test]
    fn diffs() {
        assert_eq!(finite_diff_w(1, 2, 2).unwrap(), BigInt::from(5));
        assert_eq!(finite_diff_w(3, 5, 2).unwrap(), BigInt::zero());
        // w_k(0, q) are Stirling numbers S(q, k)
        for q in 0..=10 {
            for k in 0..=q {
                assert_eq!(finite_diff_w(k, 0, q).unwrap(), BigInt::from(stirling2(q, k).unwrap()));
            }
        }
    }
}
