//! Characteristic directions, directors, formal invariant curves, and the
//! coordinate changes bringing a germ family into the form used by
//! [`GermFamily`].
//!
//! Germs and families are handled through their increments
//! `F = f − Id` as jets in `(x, y, ε)`.

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::cplx_core::{c, from_exact, to_exact, Jet1, Jet3, Point, C64, QC};
use crate::error::{Error, Result};
use crate::family::{split_fixed_points, GermFamily, Triple, DEFAULT_GAMMA};

/// Degree-2 part `P₂` of a germ, as coefficients of `x², xy, y²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneousQuadratic {
    pub p1: [C64; 3],
    pub p2: [C64; 3],
}

impl HomogeneousQuadratic {
    pub fn new(p1: [C64; 3], p2: [C64; 3]) -> Result<Self> {
        let q = HomogeneousQuadratic { p1, p2 };
        if q.p1.iter().chain(&q.p2).all(|v| v.is_zero()) {
            return Err(Error::Invalid("P2 vanishes identically".into()));
        }
        Ok(q)
    }

    pub fn from_increments(f1: &Jet3<C64>, f2: &Jet3<C64>) -> Result<Self> {
        let pick = |f: &Jet3<C64>| [f.get([2, 0, 0]), f.get([1, 1, 0]), f.get([0, 2, 0])];
        Self::new(pick(f1), pick(f2))
    }

    pub fn eval(&self, v: [C64; 2]) -> [C64; 2] {
        let q = |p: &[C64; 3]| p[0] * v[0] * v[0] + p[1] * v[0] * v[1] + p[2] * v[1] * v[1];
        [q(&self.p1), q(&self.p2)]
    }

    /// Jacobian at `v`.
    pub fn diff(&self, v: [C64; 2]) -> [[C64; 2]; 2] {
        let d = |p: &[C64; 3]| [2.0 * p[0] * v[0] + p[1] * v[1], p[1] * v[0] + 2.0 * p[2] * v[1]];
        [d(&self.p1), d(&self.p2)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacteristicDirection {
    /// Representative with largest-modulus entry equal to 1.
    pub v: [C64; 2],
    pub lambda: C64,
    pub nondegenerate: bool,
    /// Director, present for nondegenerate directions.
    pub alpha: Option<C64>,
}

const DEGENERATE_TOL: f64 = 1e-10;

fn det(a: [C64; 2], b: [C64; 2]) -> C64 {
    a[0] * b[1] - a[1] * b[0]
}

fn normalize_dir(v: [C64; 2]) -> [C64; 2] {
    let s = if v[0].norm() >= v[1].norm() { v[0] } else { v[1] };
    [v[0] / s, v[1] / s]
}

fn direction(p: &HomogeneousQuadratic, v: [C64; 2]) -> CharacteristicDirection {
    let v = normalize_dir(v);
    let pv = p.eval(v);
    let lambda = if v[0].norm() >= v[1].norm() { pv[0] / v[0] } else { pv[1] / v[1] };
    let nondegenerate = lambda.norm() > DEGENERATE_TOL;
    let alpha = nondegenerate.then(|| {
        let u = if v[0].norm() >= v[1].norm() { [C64::zero(), c(1.0, 0.0)] } else { [c(1.0, 0.0), C64::zero()] };
        let j = p.diff(v);
        let ju = [j[0][0] * u[0] + j[0][1] * u[1], j[1][0] * u[0] + j[1][1] * u[1]];
        det(v, ju) / (lambda * det(v, u)) - 1.0
    });
    CharacteristicDirection { v, lambda, nondegenerate, alpha }
}

/// Roots of `c₀ + c₁s + c₂s² + c₃s³` (trailing zero coefficients ignored).
fn poly_roots(cs: [C64; 4]) -> Vec<C64> {
    let scale = cs.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut deg = 3;
    while deg > 0 && cs[deg].norm() <= 1e-14 * scale {
        deg -= 1;
    }
    let eval = |s: C64| cs[..=deg].iter().rev().fold(C64::zero(), |acc, a| acc * s + a);
    let deval = |s: C64| (1..=deg).rev().fold(C64::zero(), |acc, k| acc * s + cs[k] * k as f64);
    let mut roots: Vec<C64> = match deg {
        0 => vec![],
        1 => vec![-cs[0] / cs[1]],
        _ => {
            // Durand–Kerner on the monic polynomial.
            let lead = cs[deg];
            let mut r: Vec<C64> = (0..deg).map(|k| C64::from_polar(1.0, 0.4 + 2.0 * std::f64::consts::PI * k as f64 / deg as f64)).collect();
            for _ in 0..500 {
                let mut moved = 0.0f64;
                for i in 0..deg {
                    let mut den = lead;
                    for j in 0..deg {
                        if i != j {
                            den *= r[i] - r[j];
                        }
                    }
                    let step = eval(r[i]) / den;
                    if step.is_finite() {
                        r[i] -= step;
                        moved = moved.max(step.norm());
                    }
                }
                if moved < 1e-16 {
                    break;
                }
            }
            r
        }
    };
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let d = deval(*r);
            if d.norm() > 0.0 {
                let step = eval(*r) / d;
                if step.is_finite() {
                    *r -= step;
                }
            }
        }
    }
    roots
}

/// Result of [`characteristic_directions`].
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    pub directions: Vec<CharacteristicDirection>,
    /// Every direction is characteristic (`x P₂₂ ≡ y P₂₁`).
    pub dicritical: bool,
}

/// Projective solutions of `x (P₂)₂(x,y) = y (P₂)₁(x,y)`.
pub fn characteristic_directions(p: &HomogeneousQuadratic) -> DirectionSet {
    let cs = [p.p2[0], p.p2[1] - p.p1[0], p.p2[2] - p.p1[1], -p.p1[2]];
    let scale = p.p1.iter().chain(&p.p2).map(|v| v.norm()).fold(0.0, f64::max);
    let one = c(1.0, 0.0);
    if cs.iter().all(|v| v.norm() <= 1e-14 * scale) {
        let directions = vec![direction(p, [one, C64::zero()]), direction(p, [C64::zero(), one])];
        return DirectionSet { directions, dicritical: true };
    }
    let mut dirs: Vec<CharacteristicDirection> = Vec::new();
    let mut push = |d: CharacteristicDirection| {
        if !dirs.iter().any(|e| (e.v[0] - d.v[0]).norm() + (e.v[1] - d.v[1]).norm() < 1e-8) {
            dirs.push(d);
        }
    };
    for s in poly_roots(cs) {
        push(direction(p, [one, s]));
    }
    if cs[3].norm() <= 1e-14 * scale {
        push(direction(p, [C64::zero(), one]));
    }
    DirectionSet { directions: dirs, dicritical: false }
}

/// A germ or family through its increments `(F₁, F₂)` in `(x, y, ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFamily {
    pub f1: Jet3<C64>,
    pub f2: Jet3<C64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawFamilyJson {
    #[serde(default)]
    pub order: Option<u32>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub f1: Vec<Triple>,
    #[serde(default)]
    pub f2: Vec<Triple>,
}

fn jet_from_triples(name: &str, ts: &[Triple], order: u32) -> Result<Jet3<C64>> {
    let mut j = Jet3::zero(order);
    for t in ts {
        if !t.re.is_finite() || !t.im.is_finite() {
            return Err(Error::Invalid(format!("{name} has a non-finite coefficient")));
        }
        if t.i + t.j + t.k > order {
            return Err(Error::Invalid(format!("{name} term ({},{},{}) exceeds order {order}", t.i, t.j, t.k)));
        }
        j.add_term([t.i, t.j, t.k], C64::new(t.re, t.im));
    }
    Ok(j)
}

fn triples(j: &Jet3<C64>) -> Vec<Triple> {
    j.terms().map(|(idx, v)| Triple { i: idx[0], j: idx[1], k: idx[2], re: v.re, im: v.im }).collect()
}

impl RawFamily {
    pub fn new(f1: Jet3<C64>, f2: Jet3<C64>) -> Result<Self> {
        if f1.order() != f2.order() {
            return Err(Error::OrderMismatch(f1.order(), f2.order()));
        }
        Ok(RawFamily { f1, f2 })
    }

    pub fn order(&self) -> u32 {
        self.f1.order()
    }

    pub fn from_spec(spec: &RawFamilyJson) -> Result<Self> {
        let maxdeg = spec.f1.iter().chain(&spec.f2).map(|t| t.i + t.j + t.k).max().unwrap_or(0);
        let order = spec.order.unwrap_or(maxdeg.max(2));
        let f1 = jet_from_triples("f1", &spec.f1, order)?;
        let f2 = jet_from_triples("f2", &spec.f2, order)?;
        let low = |f: &Jet3<C64>| f.terms().any(|(idx, v)| idx.iter().sum::<u32>() < 2 && !v.is_zero());
        if low(&f1) || low(&f2) {
            return Err(Error::Invalid("increments must start at degree two".into()));
        }
        Self::new(f1, f2)
    }

    pub fn to_spec(&self) -> RawFamilyJson {
        RawFamilyJson { order: Some(self.order()), gamma: None, f1: triples(&self.f1), f2: triples(&self.f2) }
    }

    pub fn from_json(s: &str) -> anyhow::Result<Self> {
        let spec: RawFamilyJson = serde_json::from_str(s)?;
        Ok(Self::from_spec(&spec)?)
    }

    /// The germ at `ε = 0`.
    pub fn at_zero(&self) -> RawFamily {
        RawFamily { f1: self.f1.filter(|i| i[2] == 0), f2: self.f2.filter(|i| i[2] == 0) }
    }

    pub fn is_germ(&self) -> bool {
        self.f1.terms().chain(self.f2.terms()).all(|(i, _)| i[2] == 0)
    }

    pub fn quadratic(&self) -> Result<HomogeneousQuadratic> {
        HomogeneousQuadratic::from_increments(&self.f1, &self.f2)
    }

    pub fn step(&self, z: Point, eps: C64) -> Point {
        [z[0] + self.f1.eval(z[0], z[1], eps), z[1] + self.f2.eval(z[0], z[1], eps)]
    }

    /// Conjugates by `(x, y) ↦ (x, y + s(x, ε))` in the target, i.e. the new
    /// coordinates are `y' = y − s`.
    fn flatten_by(&self, s: &Jet3<C64>) -> Result<RawFamily> {
        let o = self.order();
        let x = Jet3::var(0, o);
        let y = Jet3::var(1, o);
        let e = Jet3::var(2, o);
        let ysub = y.add(s)?;
        let f1 = self.f1.compose(&[x.clone(), ysub.clone(), e.clone()])?;
        let g2 = self.f2.compose(&[x.clone(), ysub, e.clone()])?;
        let s_after = s.compose(&[x.add(&f1)?, Jet3::zero(o), e])?;
        let f2 = g2.add(s)?.sub(&s_after)?;
        Ok(RawFamily { f1, f2 })
    }

    /// Conjugates by the linear map `T`: `F ↦ T ∘ F ∘ T⁻¹`.
    fn linear_conj(&self, t: [[C64; 2]; 2]) -> Result<RawFamily> {
        let o = self.order();
        let d = t[0][0] * t[1][1] - t[0][1] * t[1][0];
        let inv = [[t[1][1] / d, -t[0][1] / d], [-t[1][0] / d, t[0][0] / d]];
        let x = Jet3::var(0, o);
        let y = Jet3::var(1, o);
        let e = Jet3::var(2, o);
        let xs = x.scale(&inv[0][0]).add(&y.scale(&inv[0][1]))?;
        let ys = x.scale(&inv[1][0]).add(&y.scale(&inv[1][1]))?;
        let subs = [xs, ys, e];
        let g1 = self.f1.compose(&subs)?;
        let g2 = self.f2.compose(&subs)?;
        Ok(RawFamily {
            f1: g1.scale(&t[0][0]).add(&g2.scale(&t[0][1]))?,
            f2: g1.scale(&t[1][0]).add(&g2.scale(&t[1][1]))?,
        })
    }

    /// Splits into `(a, b, c, d)` with the `y`-free part of `F₁` divided by
    /// `x²+ε²` degree by degree.
    pub fn to_family(&self, gamma: f64) -> Result<GermFamily> {
        let o = self.order();
        let p = self.f1.filter(|i| i[1] == 0);
        let scale = p.max_abs().max(1.0);
        let mut a = Jet3::zero(o.saturating_sub(2));
        for n in 2..=o {
            let pc: Vec<C64> = (0..=n).map(|i| p.get([i, 0, n - i])).collect();
            let mut ac = vec![C64::zero(); n as usize - 1];
            for i in (2..=n as usize).rev() {
                let above = if i + 2 <= n as usize { ac[i] } else { C64::zero() };
                ac[i - 2] = pc[i] - above;
            }
            let r1 = pc[1] - if n >= 3 { ac[1] } else { C64::zero() };
            let r0 = pc[0] - ac[0];
            if r0.norm().max(r1.norm()) > 1e-9 * scale {
                return Err(Error::Invalid(format!("x-restriction is not divisible by x^2+eps^2 at degree {n}")));
            }
            for (i, v) in ac.iter().enumerate() {
                a.insert([i as u32, 0, n - 2 - i as u32], *v);
            }
        }
        let b = self.f1.filter(|i| i[1] > 0).unshift([0, 1, 0]);
        let c_s = self.f2.filter(|i| i[1] > 0).unshift([0, 1, 0]);
        let d = self.f2.filter(|i| i[1] == 0);
        let eta = c_s.get([1, 0, 0]);
        let q = c_s.get([0, 0, 1]);
        let lift = |j: &Jet3<C64>| j.truncate(o);
        Ok(GermFamily {
            a: lift(&a),
            b: lift(&b),
            c: lift(&c_s),
            d: lift(&d),
            eta,
            q,
            gamma: crate::family::adjusted_gamma(gamma, eta.re),
        })
    }
}

/// `f∘γ − γ∘h` for `γ(t) = (t, ζ(t))`, exactly, to `order`.
pub fn curve_residual(f: &RawFamily, zeta: &Jet1<QC>, h: &Jet1<QC>) -> Result<[Jet1<QC>; 2]> {
    let order = zeta.order();
    let f1 = f.f1.map(|v| to_exact(*v));
    let f2 = f.f2.map(|v| to_exact(*v));
    let t = Jet1::<QC>::var(order);
    let g1 = t.add(&eval_on_curve(&f1, zeta)?)?;
    let g2 = zeta.add(&eval_on_curve(&f2, zeta)?)?;
    Ok([g1.sub(h)?, g2.sub(&zeta.compose(h)?)?])
}

fn eval_on_curve(f: &Jet3<QC>, zeta: &Jet1<QC>) -> Result<Jet1<QC>> {
    let order = zeta.order();
    let t = Jet1::<QC>::var(order);
    let maxi = f.terms().map(|(i, _)| i[0]).max().unwrap_or(0);
    let maxj = f.terms().map(|(i, _)| i[1]).max().unwrap_or(0);
    let mut tp = vec![Jet1::from_coeffs(vec![QC::one()], order)];
    for _ in 0..maxi {
        let n = tp.last().unwrap().mul(&t)?;
        tp.push(n);
    }
    let mut zp = vec![Jet1::from_coeffs(vec![QC::one()], order)];
    for _ in 0..maxj {
        let n = zp.last().unwrap().mul(zeta)?;
        zp.push(n);
    }
    let mut acc = Jet1::zero(order);
    for (idx, v) in f.terms() {
        if idx[2] != 0 {
            continue;
        }
        acc = acc.add(&tp[idx[0] as usize].mul(&zp[idx[1] as usize])?.scale(v))?;
    }
    Ok(acc)
}

/// Formal invariant curve `γ(t) = (t, ζ(t))` with `f∘γ = γ∘h`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantCurve {
    /// `ζ ∈ t²ℂ[t]`, coefficients through `t^order`.
    pub zeta: Jet1<QC>,
    /// `h = t + F₁(t, ζ(t))`, through `t^{order+1}`.
    pub h: Jet1<QC>,
    pub order: u32,
}

impl InvariantCurve {
    pub fn zeta_f64(&self) -> Jet1<C64> {
        self.zeta.truncate(self.order).map(from_exact)
    }

    pub fn h_f64(&self) -> Jet1<C64> {
        self.h.map(from_exact)
    }
}

/// Solves for `ζ₂, …, ζ_order` term by term in exact arithmetic. The
/// coefficient `ζ_k` is fixed by the `t^{k+1}` coefficient of the second
/// component, where it enters with factor `η' − kλ`.
pub fn formal_invariant_curve(f: &RawFamily, dir: &CharacteristicDirection, order: u32) -> Result<InvariantCurve> {
    if !dir.nondegenerate {
        return Err(Error::NotCharacteristic("direction is degenerate".into()));
    }
    if dir.v[1].norm() > 1e-12 || (dir.v[0] - 1.0).norm() > 1e-12 {
        return Err(Error::NotCharacteristic(format!("expected v = (1,0), got {:?}", dir.v)));
    }
    let g = f.at_zero();
    if !g.f2.get([2, 0, 0]).is_zero() {
        return Err(Error::NotCharacteristic("x^2 coefficient of the second component is nonzero".into()));
    }
    let n = order + 1;
    let f2 = g.f2.map(|v| to_exact(*v));
    let f1 = g.f1.map(|v| to_exact(*v));
    let t = Jet1::<QC>::var(n);
    let mut zeta = Jet1::<QC>::zero(n);
    let second = |zeta: &Jet1<QC>, k: u32| -> Result<QC> {
        let h = t.add(&eval_on_curve(&f1, zeta)?)?;
        let e = zeta.add(&eval_on_curve(&f2, zeta)?)?.sub(&zeta.compose(&h)?)?;
        Ok(e.coeff(k))
    };
    for k in 2..=order {
        zeta.set(k, QC::zero());
        let e0 = second(&zeta, k + 1)?;
        zeta.set(k, QC::one());
        let e1 = second(&zeta, k + 1)?;
        let lin = e1 - e0.clone();
        if lin.is_zero() {
            if !e0.is_zero() {
                return Err(Error::ResonanceObstruction { degree: k });
            }
            zeta.set(k, QC::zero());
        } else {
            zeta.set(k, -(e0 / lin));
        }
    }
    let h = t.add(&eval_on_curve(&f1, &zeta)?)?;
    Ok(InvariantCurve { zeta, h, order })
}

/// One invertible coordinate change, acting on `(z, ε)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    /// `(x, y) ↦ (x, y − v₂x)`.
    ShearY { v2: C64 },
    /// `(x, y) ↦ (y, x − v₁y)`.
    SwapShear { v1: C64 },
    /// `(x, y) ↦ (λx, y)`.
    Rescale { lambda: C64 },
    /// `(x, y) ↦ (x, y − ζ(x))`.
    Flatten { zeta: Jet1<C64> },
    /// `ε ↦ ε/μ`.
    ParamRescale { mu: C64 },
    /// `x ↦ α(ε)x + β(ε)`.
    Affine { alpha: Jet1<C64>, beta: Jet1<C64> },
    /// `(x, y) ↦ (x, y − κ x^{m−1}(x²+ε²))`.
    Polynomial { kappa: C64, m: u32 },
}

impl Transform {
    pub fn forward(&self, z: Point, eps: C64) -> (Point, C64) {
        let [x, y] = z;
        match self {
            Transform::ShearY { v2 } => ([x, y - v2 * x], eps),
            Transform::SwapShear { v1 } => ([y, x - v1 * y], eps),
            Transform::Rescale { lambda } => ([lambda * x, y], eps),
            Transform::Flatten { zeta } => ([x, y - zeta.eval(x)], eps),
            Transform::ParamRescale { mu } => (z, eps / mu),
            Transform::Affine { alpha, beta } => ([alpha.eval(eps) * x + beta.eval(eps), y], eps),
            Transform::Polynomial { kappa, m } => ([x, y - kappa * x.powu(m - 1) * (x * x + eps * eps)], eps),
        }
    }

    pub fn backward(&self, z: Point, eps: C64) -> (Point, C64) {
        let [x, y] = z;
        match self {
            Transform::ShearY { v2 } => ([x, y + v2 * x], eps),
            Transform::SwapShear { v1 } => ([y + v1 * x, x], eps),
            Transform::Rescale { lambda } => ([x / lambda, y], eps),
            Transform::Flatten { zeta } => ([x, y + zeta.eval(x)], eps),
            Transform::ParamRescale { mu } => (z, eps * mu),
            Transform::Affine { alpha, beta } => ([(x - beta.eval(eps)) / alpha.eval(eps), y], eps),
            Transform::Polynomial { kappa, m } => ([x, y + kappa * x.powu(m - 1) * (x * x + eps * eps)], eps),
        }
    }
}

/// Ordered coordinate changes from the raw to the normalized coordinates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransformRecord {
    pub steps: Vec<Transform>,
}

impl TransformRecord {
    pub fn is_identity(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn forward(&self, z: Point, eps: C64) -> (Point, C64) {
        self.steps.iter().fold((z, eps), |(z, e), t| t.forward(z, e))
    }

    pub fn backward(&self, z: Point, eps: C64) -> (Point, C64) {
        self.steps.iter().rev().fold((z, eps), |(z, e), t| t.backward(z, e))
    }
}

/// A germ in straightened coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Straightened {
    pub germ: RawFamily,
    pub record: TransformRecord,
    pub eta: C64,
    /// `⌊Re α⌋ + 1` from the director.
    pub m_director: u32,
    /// `⌊Re η⌋` in the output coordinates.
    pub m_eta: u32,
    pub curve: InvariantCurve,
}

impl Straightened {
    /// The output germ as the `ε = 0` member of the family
    /// `x + (x²+ε²)a(x) + y b, y + y c + d`.
    pub fn family(&self) -> Result<GermFamily> {
        let mut g = self.germ.clone();
        for (idx, v) in self.germ.f1.terms() {
            if idx[1] == 0 && idx[0] >= 2 {
                g.f1.add_term([idx[0] - 2, 0, 2], *v);
            }
        }
        g.to_family(DEFAULT_GAMMA)
    }
}

/// Rotates `dir` to `(1,0)`, rescales the quadratic coefficient to 1 and
/// flattens the formal invariant curve to order `m+2`.
pub fn straighten(f: &RawFamily, dir: &CharacteristicDirection) -> Result<Straightened> {
    if !f.is_germ() {
        return Err(Error::Invalid("straighten expects a germ without parameter terms".into()));
    }
    let alpha = match (dir.nondegenerate, dir.alpha) {
        (true, Some(a)) => a,
        _ => return Err(Error::NotCharacteristic("direction is degenerate".into())),
    };
    let mut rec = TransformRecord::default();
    let mut g = f.clone();
    let one = c(1.0, 0.0);
    let zero = C64::zero();
    if dir.v[0] == one {
        if !dir.v[1].is_zero() {
            g = g.linear_conj([[one, zero], [-dir.v[1], one]])?;
            rec.steps.push(Transform::ShearY { v2: dir.v[1] });
        }
    } else {
        g = g.linear_conj([[zero, one], [one, -dir.v[0]]])?;
        rec.steps.push(Transform::SwapShear { v1: dir.v[0] });
    }
    let scale = g.f1.max_abs().max(g.f2.max_abs()).max(1.0);
    let resid = g.f2.get([2, 0, 0]);
    if resid.norm() > 1e-9 * scale {
        return Err(Error::NotCharacteristic(format!("rotated direction leaves residual {resid}")));
    }
    g.f2.insert([2, 0, 0], zero);
    let lambda = g.f1.get([2, 0, 0]);
    if lambda != one {
        g = g.linear_conj([[lambda, zero], [zero, one]])?;
        g.f1.insert([2, 0, 0], one);
        rec.steps.push(Transform::Rescale { lambda });
    }
    let eta = g.f2.get([1, 1, 0]);
    let m_eta = eta.re.floor().max(0.0) as u32;
    let m_director = alpha.re.floor().max(-1.0) as i64 + 1;
    if m_director != m_eta as i64 && (eta - alpha - 1.0).norm() > 1e-9 {
        return Err(Error::Invalid(format!("director {alpha} inconsistent with eta {eta}")));
    }
    let unit = CharacteristicDirection { v: [one, zero], lambda: one, nondegenerate: true, alpha: Some(eta - 1.0) };
    let order = (m_eta + 2).min(g.order().saturating_sub(1)).max(2);
    let curve = formal_invariant_curve(&g, &unit, order)?;
    let zeta = curve.zeta_f64();
    if zeta.coeffs().iter().any(|v| !v.is_zero()) {
        let mut s = Jet3::zero(g.order());
        for (k, v) in zeta.coeffs().iter().enumerate() {
            s.insert([k as u32, 0, 0], *v);
        }
        g = g.flatten_by(&s)?;
        rec.steps.push(Transform::Flatten { zeta });
    }
    Ok(Straightened { germ: g, record: rec, eta, m_director: m_director.max(0) as u32, m_eta, curve })
}

/// Output of [`normalize_family`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedFamily {
    pub family: GermFamily,
    pub record: TransformRecord,
    /// Normalized increments, before splitting into `(a, b, c, d)`.
    pub raw: RawFamily,
}

/// Moves the fixed points of the `x`-restriction to `±iε`, rescales `ε` so
/// that the quadratic coefficient is 1, and removes the `x^{m+2}` term of
/// `d₀` by `Ψ_ε`.
pub fn normalize_family(raw: &RawFamily, gamma: f64) -> Result<NormalizedFamily> {
    let o = raw.order();
    let p = raw.f1.filter(|i| i[1] == 0);
    let lambda = p.get([2, 0, 0]);
    if lambda.is_zero() {
        return Err(Error::DegenerateSplitting("quadratic coefficient vanishes".into()));
    }
    let mut rec = TransformRecord::default();
    let mut g = raw.clone();
    let [xp, xm] = split_fixed_points(&p, o)?;
    let gap0 = xp.coeff(0) - xm.coeff(0);
    let mu = c(0.0, 2.0) / (lambda * gap0);
    let one = c(1.0, 0.0);
    let (xp, xm) = if (mu - one).norm() > 1e-14 {
        let scale_eps = |j: &Jet3<C64>| {
            let mut out = Jet3::zero(j.order());
            for (idx, v) in j.terms() {
                out.insert(*idx, v * mu.powu(idx[2]));
            }
            out
        };
        g = RawFamily { f1: scale_eps(&g.f1), f2: scale_eps(&g.f2) };
        rec.steps.push(Transform::ParamRescale { mu });
        let p = g.f1.filter(|i| i[1] == 0);
        let [a, b] = split_fixed_points(&p, o)?;
        (a, b)
    } else {
        (xp, xm)
    };
    let gap = xp.sub(&xm)?;
    let alpha = gap.recip()?.scale(&c(0.0, 2.0));
    let t = Jet1::<C64>::var(o);
    let i_const = Jet1::from_coeffs(vec![c(0.0, 1.0)], o);
    let beta = t.mul(&i_const.sub(&alpha.mul(&xp)?)?)?;
    let is_identity = (alpha.coeff(0) - one).norm() < 1e-15
        && alpha.coeffs()[1..].iter().all(|v| v.norm() < 1e-15)
        && beta.coeffs().iter().all(|v| v.norm() < 1e-15);
    if !is_identity {
        let ainv = alpha.recip()?;
        let to3 = |j: &Jet1<C64>, shift: [u32; 3]| {
            let mut out = Jet3::zero(o);
            for (k, v) in j.coeffs().iter().enumerate() {
                out.insert([shift[0], shift[1], shift[2] + k as u32], *v);
            }
            out
        };
        let xs = to3(&ainv, [1, 0, 0]).sub(&to3(&ainv.mul(&beta)?, [0, 0, 0]))?;
        let subs = [xs, Jet3::var(1, o), Jet3::var(2, o)];
        let f1 = to3(&alpha, [0, 0, 0]).mul(&g.f1.compose(&subs)?)?;
        let f2 = g.f2.compose(&subs)?;
        g = RawFamily { f1, f2 };
        rec.steps.push(Transform::Affine { alpha, beta });
    }
    let eta = g.f2.get([1, 1, 0]);
    let m = eta.re.floor().max(1.0) as u32;
    let dcoef = g.f2.get([m + 2, 0, 0]);
    if !dcoef.is_zero() {
        let kappa = dcoef / (m as f64 + 1.0 - eta);
        let mut s = Jet3::zero(o);
        s.insert([m + 1, 0, 0], kappa);
        s.insert([m - 1, 0, 2], kappa);
        g = g.flatten_by(&s)?;
        let scale = g.f2.max_abs().max(1.0);
        if g.f2.get([m + 2, 0, 0]).norm() <= 1e-12 * scale {
            g.f2.insert([m + 2, 0, 0], C64::zero());
        }
        rec.steps.push(Transform::Polynomial { kappa, m });
    }
    let family = g.to_family(gamma)?;
    Ok(NormalizedFamily { family, record: rec, raw: g })
}

impl From<&GermFamily> for RawFamily {
    fn from(f: &GermFamily) -> Self {
        let (f1, f2) = f.increments();
        RawFamily { f1, f2 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cplx_core::{dist2, qint};
    use crate::family::validate_family;
    use crate::sampling::halton;
    use proptest::prelude::*;

    fn germ(f1: &[([u32; 3], f64)], f2: &[([u32; 3], f64)], order: u32) -> RawFamily {
        let mk = |ts: &[([u32; 3], f64)]| {
            let mut j = Jet3::zero(order);
            for (idx, v) in ts {
                j.add_term(*idx, c(*v, 0.0));
            }
            j
        };
        RawFamily::new(mk(f1), mk(f2)).unwrap()
    }

    fn model_germ() -> RawFamily {
        germ(&[([2, 0, 0], 1.0)], &[([1, 1, 0], 4.0)], 8)
    }

    #[test]
    fn directions_of_model_quadratic() {
        let p = model_germ().quadratic().unwrap();
        let set = characteristic_directions(&p);
        assert!(!set.dicritical);
        assert_eq!(set.directions.len(), 2);
        let d0 = set.directions.iter().find(|d| d.v == [c(1.0, 0.0), C64::zero()]).unwrap();
        assert_eq!(d0.lambda, c(1.0, 0.0));
        assert!(d0.nondegenerate);
        assert!((d0.alpha.unwrap() - 3.0).norm() < 1e-12);
        let d1 = set.directions.iter().find(|d| d.v == [C64::zero(), c(1.0, 0.0)]).unwrap();
        assert!(!d1.nondegenerate);
    }

    #[test]
    fn degenerate_direction() {
        let p = HomogeneousQuadratic::new([C64::zero(), c(1.0, 0.0), C64::zero()], [C64::zero(), C64::zero(), c(1.0, 0.0)]).unwrap();
        let set = characteristic_directions(&p);
        assert!(set.dicritical);
        let d = set.directions.iter().find(|d| d.v[1].is_zero()).unwrap();
        assert!(!d.nondegenerate);
        assert!(HomogeneousQuadratic::new([C64::zero(); 3], [C64::zero(); 3]).is_err());
    }

    #[test]
    fn characteristic_equation_holds() {
        let p = HomogeneousQuadratic::new([c(1.0, 0.5), c(-0.3, 0.0), c(0.2, 0.1)], [c(0.4, 0.0), c(2.0, -1.0), c(0.7, 0.0)]).unwrap();
        let set = characteristic_directions(&p);
        assert_eq!(set.directions.len(), 3);
        for d in set.directions {
            let pv = p.eval(d.v);
            let r = [pv[0] - d.lambda * d.v[0], pv[1] - d.lambda * d.v[1]];
            assert!(r[0].norm().hypot(r[1].norm()) <= 1e-10);
        }
    }

    #[test]
    fn model_curve_is_trivial() {
        let f = model_germ();
        let dir = characteristic_directions(&f.quadratic().unwrap()).directions[0];
        let dir = if dir.v[1].is_zero() { dir } else { characteristic_directions(&f.quadratic().unwrap()).directions[1] };
        let cur = formal_invariant_curve(&f, &dir, 6).unwrap();
        assert!(cur.zeta.coeffs().iter().all(|v| v.is_zero()));
        assert_eq!(cur.h.coeff(1), qint(1));
        assert_eq!(cur.h.coeff(2), qint(1));
        assert!(cur.h.coeffs()[3..].iter().all(|v| v.is_zero()));
    }

    #[test]
    fn x7_perturbation_curve() {
        let f = germ(&[([2, 0, 0], 1.0)], &[([1, 1, 0], 4.0), ([7, 0, 0], 1.0)], 9);
        let dir = CharacteristicDirection { v: [c(1.0, 0.0), C64::zero()], lambda: c(1.0, 0.0), nondegenerate: true, alpha: Some(c(3.0, 0.0)) };
        let cur = formal_invariant_curve(&f, &dir, 6).unwrap();
        let first = (2..=6).find(|&k| !cur.zeta.coeff(k).is_zero()).unwrap();
        assert_eq!(first, 6);
        // (η − 6)ζ₆ + 1 = 0
        assert_eq!(from_exact(&cur.zeta.coeff(6)), c(0.5, 0.0));
        let [r1, r2] = curve_residual(&f, &cur.zeta, &cur.h).unwrap();
        assert!(r1.coeffs().iter().all(|v| v.is_zero()));
        assert!(r2.coeffs()[..=7].iter().all(|v| v.is_zero()));
    }

    #[test]
    fn resonance_is_reported() {
        let f = germ(&[([2, 0, 0], 1.0)], &[([1, 1, 0], 4.0), ([5, 0, 0], 1.0)], 8);
        let dir = CharacteristicDirection { v: [c(1.0, 0.0), C64::zero()], lambda: c(1.0, 0.0), nondegenerate: true, alpha: Some(c(3.0, 0.0)) };
        assert_eq!(formal_invariant_curve(&f, &dir, 6), Err(Error::ResonanceObstruction { degree: 4 }));
    }

    #[test]
    fn straighten_model_is_identity() {
        let f = model_germ();
        let dir = *characteristic_directions(&f.quadratic().unwrap()).directions.iter().find(|d| d.nondegenerate).unwrap();
        let s = straighten(&f, &dir).unwrap();
        assert!(s.record.is_identity());
        assert_eq!(s.germ, f);
        assert_eq!(s.m_director, s.m_eta);
    }

    fn check_conjugacy(f: &RawFamily, s: &Straightened, tol: f64) {
        for u in halton(20, 4, 3) {
            let z = [c(0.02 * (u[0] - 0.5), 0.02 * (u[1] - 0.5)), c(0.02 * (u[2] - 0.5), 0.02 * (u[3] - 0.5))];
            let lhs = s.germ.step(s.record.forward(z, C64::zero()).0, C64::zero());
            let rhs = s.record.forward(f.step(z, C64::zero()), C64::zero()).0;
            assert!(dist2(&lhs, &rhs) <= tol, "{lhs:?} {rhs:?}");
        }
    }

    #[test]
    fn straighten_rescales_lambda_two() {
        let f = germ(&[([2, 0, 0], 2.0)], &[([1, 1, 0], 9.0), ([6, 0, 0], 0.5)], 9);
        let dir = *characteristic_directions(&f.quadratic().unwrap()).directions.iter().find(|d| d.nondegenerate && d.v[1].is_zero()).unwrap();
        assert_eq!(dir.lambda, c(2.0, 0.0));
        let s = straighten(&f, &dir).unwrap();
        assert!(s.record.steps.contains(&Transform::Rescale { lambda: c(2.0, 0.0) }));
        assert_eq!(s.germ.f1.get([2, 0, 0]), c(1.0, 0.0));
        assert!((s.eta - 4.5).norm() < 1e-12);
        check_conjugacy(&f, &s, 1e-10);
        let fam = s.family().unwrap();
        assert!(validate_family(&fam).passed(), "{:?}", validate_family(&fam));
    }

    #[test]
    fn straighten_tilted_direction() {
        // Model conjugated by (x, y) ↦ (x, y + x/2).
        let base = model_germ();
        let tilted = base.linear_conj([[c(1.0, 0.0), C64::zero()], [c(0.5, 0.0), c(1.0, 0.0)]]).unwrap();
        let set = characteristic_directions(&tilted.quadratic().unwrap());
        let dir = *set.directions.iter().find(|d| d.nondegenerate).unwrap();
        assert!((dir.v[1] - 0.5).norm() < 1e-12);
        let s = straighten(&tilted, &dir).unwrap();
        check_conjugacy(&tilted, &s, 1e-10);
        assert!((s.eta - 4.0).norm() < 1e-10);
    }

    #[test]
    fn normalize_shifts_fixed_points() {
        // p_ε(x) = x + x² + 2εx + 2ε², fixed points −ε ± iε.
        let f = germ(&[([2, 0, 0], 1.0), ([1, 0, 1], 2.0), ([0, 0, 2], 2.0)], &[([1, 1, 0], 4.0)], 8);
        let n = normalize_family(&f, 0.6).unwrap();
        assert_eq!(n.record.steps.len(), 1);
        match &n.record.steps[0] {
            Transform::Affine { alpha, beta } => {
                assert!((alpha.coeff(0) - 1.0).norm() < 1e-14);
                assert!(alpha.coeffs()[1..].iter().all(|v| v.norm() < 1e-14));
                assert!((beta.coeff(1) - 1.0).norm() < 1e-14);
                assert!(beta.coeffs()[2..].iter().all(|v| v.norm() < 1e-14));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(validate_family(&n.family).passed());
        let fam = &n.family;
        for s in [1.0, -1.0] {
            let eps = c(0.01, 0.0);
            let z = [c(0.0, s * 0.01), C64::zero()];
            assert!(dist2(&fam.evaluate(eps, z), &z) < 1e-15);
        }
    }

    #[test]
    fn normalized_family_is_unchanged() {
        let f = RawFamily::from(&GermFamily::model(c(0.3, 0.1)));
        let n = normalize_family(&f, 0.6).unwrap();
        assert!(n.record.is_identity());
        assert_eq!(n.family.eta, c(4.0, 0.0));
        assert_eq!(n.family.q, c(0.3, 0.1));
    }

    #[test]
    fn psi_eps_coefficient() {
        let d = 0.7;
        let f = germ(&[([2, 0, 0], 1.0), ([0, 0, 2], 1.0)], &[([1, 1, 0], 4.5), ([6, 0, 0], d)], 9);
        let n = normalize_family(&f, 0.6).unwrap();
        let kappa = n
            .record
            .steps
            .iter()
            .find_map(|t| match t {
                Transform::Polynomial { kappa, m } => Some((*kappa, *m)),
                _ => None,
            })
            .unwrap();
        assert_eq!(kappa.1, 4);
        // Ψ_ε subtracts κ x^{m−1}(x²+ε²), κ = d/(m+1−η).
        assert!((kappa.0 - d / (5.0 - 4.5)).norm() < 1e-14);
        assert!(validate_family(&n.family).passed(), "{:?}", validate_family(&n.family));
    }

    #[test]
    fn degenerate_splitting() {
        // p_ε = x + x²: double fixed point for every ε.
        let f = germ(&[([2, 0, 0], 1.0)], &[([1, 1, 0], 4.0)], 6);
        let f = RawFamily { f1: f.f1.filter(|i| i[2] == 0), ..f };
        assert!(matches!(normalize_family(&f, 0.6), Err(Error::DegenerateSplitting(_))));
    }

    #[test]
    fn raw_json_round_trip() {
        let f = germ(&[([2, 0, 0], 1.0), ([1, 0, 1], 2.0), ([0, 0, 2], 2.0)], &[([1, 1, 0], 4.0)], 8);
        let s = serde_json::to_string(&f.to_spec()).unwrap();
        assert_eq!(RawFamily::from_json(&s).unwrap(), f);
        assert!(RawFamily::from_json(r#"{"f1":[{"i":1,"re":1.0}]}"#).is_err());
    }

    proptest! {
        #[test]
        fn record_round_trip(x in -0.05f64..0.05, y in -0.05f64..0.05, e in 0.001f64..0.05, s in 0.0f64..1.0) {
            let f = germ(&[([2, 0, 0], 1.0), ([1, 0, 1], 2.0 * s), ([0, 0, 2], 1.0 + s)], &[([1, 1, 0], 4.5), ([6, 0, 0], s)], 9);
            let n = normalize_family(&f, 0.6).unwrap();
            let z = [c(x, y), c(y, -x)];
            let (w, ew) = n.record.forward(z, c(e, 0.0));
            let (back, eb) = n.record.backward(w, ew);
            prop_assert!(dist2(&back, &z) <= 1e-12);
            prop_assert!((eb - e).norm() <= 1e-15);
        }

        #[test]
        fn director_matches_eta(eta_re in 3.1f64..8.0, eta_im in -1.0f64..1.0) {
            let eta = c(eta_re, eta_im);
            let mut f2 = Jet3::zero(6);
            f2.insert([1, 1, 0], eta);
            let mut f1 = Jet3::zero(6);
            f1.insert([2, 0, 0], c(1.0, 0.0));
            let p = HomogeneousQuadratic::from_increments(&f1, &f2).unwrap();
            let d = characteristic_directions(&p).directions.into_iter().find(|d| d.nondegenerate).unwrap();
            prop_assert!((d.alpha.unwrap() - (eta - 1.0)).norm() <= 1e-10);
        }
    }
}
