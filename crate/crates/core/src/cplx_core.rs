//! Branch-aware complex helpers and truncated power series.
//!
//! `Jet1` is a series in one variable `t`, `Jet3` a sparse polynomial in
//! `(x, y, ε)` truncated at a total degree. Both are generic over the
//! coefficient ring so the same code runs in `f64` and in exact rationals.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::ops::Neg;

use num_bigint::BigInt;
use num_complex::{Complex, Complex64};
use num_rational::BigRational;
use num_traits::{Num, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type C64 = Complex64;
/// Exact complex rational.
pub type QC = Complex<BigRational>;
/// A point `(x, y)` of ℂ².
pub type Point = [C64; 2];

pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Euclidean norm on ℂ².
pub fn norm2(p: &Point) -> f64 {
    p[0].norm().hypot(p[1].norm())
}

pub fn dist2(p: &Point, q: &Point) -> f64 {
    norm2(&[p[0] - q[0], p[1] - q[1]])
}

/// Principal logarithm. Points of `(−∞, 0]` are rejected.
pub fn principal_log(z: C64) -> Result<C64> {
    if z.im == 0.0 && z.re <= 0.0 {
        return Err(Error::BranchCut(z));
    }
    Ok(C64::new(z.norm().ln(), z.im.atan2(z.re)))
}

/// `exp(η · log z)` with the principal logarithm.
pub fn pow_eta(z: C64, eta: C64) -> Result<C64> {
    Ok((eta * principal_log(z)?).exp())
}

/// `arctan z = (1/2i) log((i − z)/(i + z))`; cut on `{it : |t| ≥ 1}`.
pub fn atan_log(z: C64) -> Result<C64> {
    let den = I + z;
    if den == C64::zero() {
        return Err(Error::BranchCut(z));
    }
    Ok(principal_log((I - z) / den)? / (2.0 * I))
}

/// Neumaier-compensated complex accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompSum {
    pub hi: C64,
    pub lo: C64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

impl CompSum {
    pub fn new(v: C64) -> Self {
        CompSum { hi: v, lo: C64::zero() }
    }

    pub fn add(&mut self, v: C64) {
        let (re, ere) = two_sum(self.hi.re, v.re);
        let (im, eim) = two_sum(self.hi.im, v.im);
        self.hi = C64::new(re, im);
        self.lo += C64::new(ere, eim);
    }

    pub fn value(&self) -> C64 {
        self.hi + self.lo
    }
}

/// Coefficient ring for jets.
pub trait Coeff: Clone + Num + Neg<Output = Self> + Debug + Send + Sync {}
impl<T: Clone + Num + Neg<Output = T> + Debug + Send + Sync> Coeff for T {}

/// Exact rational image of a double (every finite double is dyadic).
pub fn to_exact(z: C64) -> QC {
    let conv = |v: f64| BigRational::from_float(v).expect("finite coefficient");
    QC::new(conv(z.re), conv(z.im))
}

pub fn from_exact(z: &QC) -> C64 {
    C64::new(
        z.re.to_f64().unwrap_or(f64::NAN),
        z.im.to_f64().unwrap_or(f64::NAN),
    )
}

pub fn qint(v: i64) -> QC {
    QC::new(BigRational::from_integer(BigInt::from(v)), BigRational::zero())
}

/// Truncated series `Σ_{k ≤ order} c_k t^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet1<T> {
    coeffs: Vec<T>,
}

impl<T: Coeff> Jet1<T> {
    pub fn zero(order: u32) -> Self {
        Jet1 { coeffs: vec![T::zero(); order as usize + 1] }
    }

    /// Builds a jet, padding with zeros or dropping terms above `order`.
    pub fn from_coeffs(mut coeffs: Vec<T>, order: u32) -> Self {
        coeffs.resize(order as usize + 1, T::zero());
        Jet1 { coeffs }
    }

    /// The series `t`.
    pub fn var(order: u32) -> Self {
        let mut j = Self::zero(order);
        if order >= 1 {
            j.coeffs[1] = T::one();
        }
        j
    }

    pub fn order(&self) -> u32 {
        (self.coeffs.len() - 1) as u32
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn coeff(&self, k: u32) -> T {
        self.coeffs.get(k as usize).cloned().unwrap_or_else(T::zero)
    }

    pub fn set(&mut self, k: u32, v: T) {
        if let Some(slot) = self.coeffs.get_mut(k as usize) {
            *slot = v;
        }
    }

    fn check(&self, o: &Self) -> Result<()> {
        if self.order() != o.order() {
            return Err(Error::OrderMismatch(self.order(), o.order()));
        }
        Ok(())
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        self.check(o)?;
        let coeffs = self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| a.clone() + b.clone()).collect();
        Ok(Jet1 { coeffs })
    }

    pub fn sub(&self, o: &Self) -> Result<Self> {
        self.check(o)?;
        let coeffs = self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| a.clone() - b.clone()).collect();
        Ok(Jet1 { coeffs })
    }

    pub fn scale(&self, s: &T) -> Self {
        Jet1 { coeffs: self.coeffs.iter().map(|a| a.clone() * s.clone()).collect() }
    }

    pub fn mul(&self, o: &Self) -> Result<Self> {
        self.check(o)?;
        let n = self.coeffs.len();
        let mut out = vec![T::zero(); n];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in o.coeffs[..n - i].iter().enumerate() {
                out[i + j] = out[i + j].clone() + a.clone() * b.clone();
            }
        }
        Ok(Jet1 { coeffs: out })
    }

    pub fn truncate(&self, order: u32) -> Self {
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(order as usize + 1, T::zero());
        Jet1 { coeffs }
    }

    /// `self ∘ inner`; the inner series must have no constant term.
    pub fn compose(&self, inner: &Self) -> Result<Self> {
        self.check(inner)?;
        if !inner.coeffs[0].is_zero() {
            return Err(Error::Invalid("inner jet has a constant term".into()));
        }
        let mut acc = Self::zero(self.order());
        for a in self.coeffs.iter().rev() {
            acc = acc.mul(inner)?;
            acc.coeffs[0] = acc.coeffs[0].clone() + a.clone();
        }
        Ok(acc)
    }

    /// Multiplicative inverse; needs a nonzero constant term.
    pub fn recip(&self) -> Result<Self> {
        let a0 = self.coeffs[0].clone();
        if a0.is_zero() {
            return Err(Error::NonInvertibleJet("zero constant term"));
        }
        let n = self.coeffs.len();
        let mut b = vec![T::zero(); n];
        b[0] = T::one() / a0.clone();
        for k in 1..n {
            let mut s = T::zero();
            for j in 1..=k {
                s = s + self.coeffs[j].clone() * b[k - j].clone();
            }
            b[k] = -(s / a0.clone());
        }
        Ok(Jet1 { coeffs: b })
    }

    /// Compositional inverse of a series `c₁t + c₂t² + …` with `c₁ ≠ 0`.
    pub fn invert_linear(&self) -> Result<Self> {
        if !self.coeffs[0].is_zero() {
            return Err(Error::NonInvertibleJet("nonzero constant term"));
        }
        let order = self.order();
        if order == 0 {
            return Ok(Self::zero(0));
        }
        let c1 = self.coeffs[1].clone();
        if c1.is_zero() {
            return Err(Error::NonInvertibleJet("zero linear coefficient"));
        }
        let mut g = Self::zero(order);
        g.coeffs[1] = T::one() / c1.clone();
        for k in 2..=order as usize {
            let r = self.compose(&g)?.coeffs[k].clone();
            g.coeffs[k] = -(r / c1.clone());
        }
        Ok(g)
    }

    pub fn map<U: Coeff>(&self, f: impl Fn(&T) -> U) -> Jet1<U> {
        Jet1 { coeffs: self.coeffs.iter().map(f).collect() }
    }
}

impl Jet1<C64> {
    pub fn eval(&self, t: C64) -> C64 {
        self.coeffs.iter().rev().fold(C64::zero(), |acc, a| acc * t + a)
    }
}

/// Sparse polynomial in `(x, y, ε)` truncated at total degree `order`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet3<T> {
    terms: BTreeMap<[u32; 3], T>,
    order: u32,
}

impl<T: Coeff> Jet3<T> {
    pub fn zero(order: u32) -> Self {
        Jet3 { terms: BTreeMap::new(), order }
    }

    pub fn constant(v: T, order: u32) -> Self {
        let mut j = Self::zero(order);
        j.insert([0, 0, 0], v);
        j
    }

    /// The coordinate monomial: 0 for `x`, 1 for `y`, 2 for `ε`.
    pub fn var(which: usize, order: u32) -> Self {
        let mut idx = [0u32; 3];
        idx[which] = 1;
        let mut j = Self::zero(order);
        j.insert(idx, T::one());
        j
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    /// Sets a coefficient. Terms above the order and zeros are not stored.
    pub fn insert(&mut self, idx: [u32; 3], v: T) {
        if idx.iter().sum::<u32>() > self.order || v.is_zero() {
            self.terms.remove(&idx);
        } else {
            self.terms.insert(idx, v);
        }
    }

    pub fn add_term(&mut self, idx: [u32; 3], v: T) {
        let cur = self.get(idx);
        self.insert(idx, cur + v);
    }

    pub fn get(&self, idx: [u32; 3]) -> T {
        self.terms.get(&idx).cloned().unwrap_or_else(T::zero)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32; 3], &T)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn check(&self, o: &Self) -> Result<()> {
        if self.order != o.order {
            return Err(Error::OrderMismatch(self.order, o.order));
        }
        Ok(())
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        self.check(o)?;
        let mut out = self.clone();
        for (idx, v) in &o.terms {
            out.add_term(*idx, v.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, o: &Self) -> Result<Self> {
        self.check(o)?;
        let mut out = self.clone();
        for (idx, v) in &o.terms {
            out.add_term(*idx, -v.clone());
        }
        Ok(out)
    }

    pub fn scale(&self, s: &T) -> Self {
        let mut out = Self::zero(self.order);
        for (idx, v) in &self.terms {
            out.insert(*idx, v.clone() * s.clone());
        }
        out
    }

    pub fn mul(&self, o: &Self) -> Result<Self> {
        self.check(o)?;
        let mut acc: BTreeMap<[u32; 3], T> = BTreeMap::new();
        for (a, va) in &self.terms {
            let da: u32 = a.iter().sum();
            for (b, vb) in &o.terms {
                if da + b.iter().sum::<u32>() > self.order {
                    continue;
                }
                let idx = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
                let e = acc.entry(idx).or_insert_with(T::zero);
                *e = e.clone() + va.clone() * vb.clone();
            }
        }
        let mut out = Self::zero(self.order);
        for (idx, v) in acc {
            out.insert(idx, v);
        }
        Ok(out)
    }

    pub fn truncate(&self, order: u32) -> Self {
        let mut out = Self::zero(order);
        for (idx, v) in &self.terms {
            out.insert(*idx, v.clone());
        }
        out
    }

    /// Multiplies by `x^i y^j ε^k`.
    pub fn shift(&self, by: [u32; 3]) -> Self {
        let mut out = Self::zero(self.order);
        for (idx, v) in &self.terms {
            out.insert([idx[0] + by[0], idx[1] + by[1], idx[2] + by[2]], v.clone());
        }
        out
    }

    /// Keeps the terms whose index satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(&[u32; 3]) -> bool) -> Self {
        let mut out = Self::zero(self.order);
        for (idx, v) in &self.terms {
            if keep(idx) {
                out.insert(*idx, v.clone());
            }
        }
        out
    }

    /// Divides by `x^i y^j ε^k`; terms not divisible are dropped.
    pub fn unshift(&self, by: [u32; 3]) -> Self {
        let mut out = Self::zero(self.order);
        for (idx, v) in &self.terms {
            if idx[0] >= by[0] && idx[1] >= by[1] && idx[2] >= by[2] {
                out.insert([idx[0] - by[0], idx[1] - by[1], idx[2] - by[2]], v.clone());
            }
        }
        out
    }

    /// Substitutes `(x, y, ε) ↦ subs`, truncating at `self.order`.
    /// Each substituted jet must have no constant term.
    pub fn compose(&self, subs: &[Jet3<T>; 3]) -> Result<Self> {
        for s in subs {
            self.check(s)?;
            if !s.get([0, 0, 0]).is_zero() {
                return Err(Error::Invalid("substituted jet has a constant term".into()));
            }
        }
        let mut powers: [Vec<Jet3<T>>; 3] = Default::default();
        for (v, s) in subs.iter().enumerate() {
            let maxp = self.terms.keys().map(|idx| idx[v]).max().unwrap_or(0);
            let mut p = vec![Self::constant(T::one(), self.order)];
            for _ in 0..maxp {
                let next = p.last().unwrap().mul(s)?;
                p.push(next);
            }
            powers[v] = p;
        }
        let mut out = Self::zero(self.order);
        for (idx, v) in &self.terms {
            let m = powers[0][idx[0] as usize]
                .mul(&powers[1][idx[1] as usize])?
                .mul(&powers[2][idx[2] as usize])?;
            out = out.add(&m.scale(v))?;
        }
        Ok(out)
    }

    /// Partial derivative in variable 0 (`x`), 1 (`y`) or 2 (`ε`).
    pub fn diff(&self, which: usize) -> Self {
        let mut out = Self::zero(self.order);
        for (idx, v) in &self.terms {
            if idx[which] == 0 {
                continue;
            }
            let mut n = T::zero();
            for _ in 0..idx[which] {
                n = n + T::one();
            }
            let mut j = *idx;
            j[which] -= 1;
            out.insert(j, v.clone() * n);
        }
        out
    }

    /// Largest total degree present.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|i| i.iter().sum()).max().unwrap_or(0)
    }

    pub fn map<U: Coeff>(&self, f: impl Fn(&T) -> U) -> Jet3<U> {
        let mut out = Jet3::zero(self.order);
        for (idx, v) in &self.terms {
            out.insert(*idx, f(v));
        }
        out
    }
}

impl Jet3<C64> {
    pub fn eval(&self, x: C64, y: C64, eps: C64) -> C64 {
        let mut s = C64::zero();
        for (idx, v) in &self.terms {
            s += v * x.powu(idx[0]) * y.powu(idx[1]) * eps.powu(idx[2]);
        }
        s
    }

    /// Drops coefficients with modulus at most `tol`.
    pub fn chop(&self, tol: f64) -> Self {
        self.filter_values(|v| v.norm() > tol)
    }

    fn filter_values(&self, keep: impl Fn(&C64) -> bool) -> Self {
        let mut out = Self::zero(self.order);
        for (idx, v) in &self.terms {
            if keep(v) {
                out.insert(*idx, *v);
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.terms.values().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// A polynomial in `(x, y)` with the parameter already substituted,
/// stored as a flat monomial list for fast evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly2 {
    terms: Vec<(u32, u32, C64)>,
    deg_x: u32,
    deg_y: u32,
}

impl Poly2 {
    pub fn from_jet(j: &Jet3<C64>, eps: C64) -> Self {
        let mut acc: BTreeMap<(u32, u32), C64> = BTreeMap::new();
        for (idx, v) in j.terms() {
            *acc.entry((idx[0], idx[1])).or_default() += v * eps.powu(idx[2]);
        }
        let terms: Vec<_> = acc.into_iter().filter(|(_, v)| *v != C64::zero()).map(|((i, k), v)| (i, k, v)).collect();
        let deg_x = terms.iter().map(|t| t.0).max().unwrap_or(0);
        let deg_y = terms.iter().map(|t| t.1).max().unwrap_or(0);
        Poly2 { terms, deg_x, deg_y }
    }

    pub fn eval(&self, x: C64, y: C64) -> C64 {
        let mut xp = [C64::new(1.0, 0.0); 24];
        let mut yp = [C64::new(1.0, 0.0); 24];
        if self.deg_x as usize >= xp.len() || self.deg_y as usize >= yp.len() {
            return self.terms.iter().map(|(i, j, v)| v * x.powu(*i) * y.powu(*j)).sum();
        }
        for k in 1..=self.deg_x as usize {
            xp[k] = xp[k - 1] * x;
        }
        for k in 1..=self.deg_y as usize {
            yp[k] = yp[k - 1] * y;
        }
        let mut s = C64::zero();
        for (i, j, v) in &self.terms {
            s += v * xp[*i as usize] * yp[*j as usize];
        }
        s
    }

    /// Partial derivative in `x` (0) or `y` (1).
    pub fn diff(&self, which: usize) -> Self {
        let mut terms = Vec::new();
        for &(i, j, v) in &self.terms {
            let p = if which == 0 { i } else { j };
            if p == 0 {
                continue;
            }
            let (ni, nj) = if which == 0 { (i - 1, j) } else { (i, j - 1) };
            terms.push((ni, nj, v * p as f64));
        }
        let deg_x = terms.iter().map(|t| t.0).max().unwrap_or(0);
        let deg_y = terms.iter().map(|t| t.1).max().unwrap_or(0);
        Poly2 { terms, deg_x, deg_y }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[(u32, u32, C64)] {
        &self.terms
    }
}
