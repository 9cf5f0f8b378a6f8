//! The perturbed family
//! `g_ε(x,y) = (x + (x²+ε²)a_ε(x) + y b_ε(x,y), y + y c_ε(x,y) + d_ε(x))`,
//! hypothesis checks, fixed points and eigenvalue data.

use std::f64::consts::PI;

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::cplx_core::{c, norm2, Jet1, Jet3, Point, Poly2, C64, I};
use crate::error::{Error, Result};

/// Default exponent for `k_n = ⌊n^γ⌋`.
pub const DEFAULT_GAMMA: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub struct GermFamily {
    pub a: Jet3<C64>,
    pub b: Jet3<C64>,
    pub c: Jet3<C64>,
    pub d: Jet3<C64>,
    pub eta: C64,
    pub q: C64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cx {
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

impl From<Cx> for C64 {
    fn from(v: Cx) -> C64 {
        C64::new(v.re, v.im)
    }
}

impl From<C64> for Cx {
    fn from(v: C64) -> Cx {
        Cx { re: v.re, im: v.im }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    #[serde(default)]
    pub i: u32,
    #[serde(default)]
    pub j: u32,
    #[serde(default)]
    pub k: u32,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

/// Serialized form of a [`GermFamily`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyJson {
    pub eta: Cx,
    #[serde(default = "zero_cx")]
    pub q: Cx,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub order: Option<u32>,
    #[serde(default)]
    pub a: Vec<Triple>,
    #[serde(default)]
    pub b: Vec<Triple>,
    #[serde(default)]
    pub c: Vec<Triple>,
    #[serde(default)]
    pub d: Vec<Triple>,
}

fn zero_cx() -> Cx {
    Cx { re: 0.0, im: 0.0 }
}

fn to_jet(name: &str, ts: &[Triple], order: u32) -> Result<Jet3<C64>> {
    let mut j = Jet3::zero(order);
    for t in ts {
        if t.i + t.j + t.k > order {
            return Err(Error::Invalid(format!(
                "{name}-series term ({},{},{}) exceeds order {order}",
                t.i, t.j, t.k
            )));
        }
        if !t.re.is_finite() || !t.im.is_finite() {
            return Err(Error::Invalid(format!("{name}-series has a non-finite coefficient")));
        }
        j.add_term([t.i, t.j, t.k], C64::new(t.re, t.im));
    }
    Ok(j)
}

fn from_jet(j: &Jet3<C64>) -> Vec<Triple> {
    j.terms()
        .map(|(idx, v)| Triple { i: idx[0], j: idx[1], k: idx[2], re: v.re, im: v.im })
        .collect()
}

/// `γ` raised into `(1/2, 2/3)` with `γρ > 2` when the requested value fails.
pub fn adjusted_gamma(gamma: f64, rho: f64) -> f64 {
    if rho > 3.0 && gamma * rho <= 2.0 {
        (2.05 / rho).max(0.51).min(0.66)
    } else {
        gamma
    }
}

impl GermFamily {
    /// `(x + (x²+ε²), y(1 + ηx + qε))` with `η = 4`.
    pub fn model(q: C64) -> Self {
        let order = 8;
        let mut c_s = Jet3::zero(order);
        c_s.insert([1, 0, 0], c(4.0, 0.0));
        c_s.insert([0, 0, 1], q);
        GermFamily {
            a: Jet3::constant(c(1.0, 0.0), order),
            b: Jet3::zero(order),
            c: c_s,
            d: Jet3::zero(order),
            eta: c(4.0, 0.0),
            q,
            gamma: DEFAULT_GAMMA,
        }
    }

    pub fn from_spec(spec: &FamilyJson) -> Result<Self> {
        let eta: C64 = spec.eta.into();
        let q: C64 = spec.q.into();
        let rho = eta.re;
        let m = rho.floor().max(0.0) as u32;
        let maxdeg = [&spec.a, &spec.b, &spec.c, &spec.d]
            .iter()
            .flat_map(|v| v.iter().map(|t| t.i + t.j + t.k))
            .max()
            .unwrap_or(0);
        let order = spec.order.unwrap_or((m + 4).max(maxdeg));
        let a = to_jet("a", &spec.a, order)?;
        let b = to_jet("b", &spec.b, order)?;
        let mut c_s = to_jet("c", &spec.c, order)?;
        let d = to_jet("d", &spec.d, order)?;
        if a.terms().any(|(idx, _)| idx[1] > 0) {
            return Err(Error::Invalid("a-series may not depend on y".into()));
        }
        if d.terms().any(|(idx, _)| idx[1] > 0) {
            return Err(Error::Invalid("d-series may not depend on y".into()));
        }
        if !c_s.get([0, 0, 0]).is_zero() {
            return Err(Error::Invalid("c-series must vanish at the origin".into()));
        }
        for (idx, want, name) in [([1, 0, 0], eta, "eta"), ([0, 0, 1], q, "q")] {
            let have = c_s.get(idx);
            if have.is_zero() {
                c_s.insert(idx, want);
            } else if have != want {
                return Err(Error::Invalid(format!("c-series coefficient disagrees with {name}")));
            }
        }
        let gamma = adjusted_gamma(spec.gamma.unwrap_or(DEFAULT_GAMMA), rho);
        Ok(GermFamily { a, b, c: c_s, d, eta, q, gamma })
    }

    pub fn to_spec(&self) -> FamilyJson {
        FamilyJson {
            eta: self.eta.into(),
            q: self.q.into(),
            gamma: Some(self.gamma),
            order: Some(self.order()),
            a: from_jet(&self.a),
            b: from_jet(&self.b),
            c: from_jet(&self.c),
            d: from_jet(&self.d),
        }
    }

    pub fn from_json(s: &str) -> anyhow::Result<Self> {
        let spec: FamilyJson = serde_json::from_str(s)?;
        Ok(Self::from_spec(&spec)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_spec()).expect("serializable")
    }

    pub fn order(&self) -> u32 {
        self.a.order()
    }

    /// The `x`-coefficient of `a₀`.
    pub fn a_coef(&self) -> C64 {
        self.a.get([1, 0, 0])
    }

    /// The `y`-coefficient of `c₀`.
    pub fn c_coef(&self) -> C64 {
        self.c.get([0, 1, 0])
    }

    /// The `ε`-coefficient of `a_ε`.
    pub fn p(&self) -> C64 {
        self.a.get([0, 0, 1])
    }

    pub fn rho(&self) -> f64 {
        self.eta.re
    }

    pub fn m(&self) -> u32 {
        self.rho().floor().max(0.0) as u32
    }

    /// Increments `g_ε − Id` as jets in `(x, y, ε)`.
    pub fn increments(&self) -> (Jet3<C64>, Jet3<C64>) {
        let o = self.order() + 2;
        let mut f1 = Jet3::zero(o);
        for (idx, v) in self.a.terms() {
            f1.add_term([idx[0] + 2, 0, idx[2]], *v);
            f1.add_term([idx[0], 0, idx[2] + 2], *v);
        }
        for (idx, v) in self.b.terms() {
            f1.add_term([idx[0], idx[1] + 1, idx[2]], *v);
        }
        let mut f2 = Jet3::zero(o);
        for (idx, v) in self.c.terms() {
            f2.add_term([idx[0], idx[1] + 1, idx[2]], *v);
        }
        for (idx, v) in self.d.terms() {
            f2.add_term(*idx, *v);
        }
        (f1, f2)
    }

    pub fn compile(&self, eps: C64) -> CompiledMap {
        let (f1, f2) = self.increments();
        CompiledMap::new(Poly2::from_jet(&f1, eps), Poly2::from_jet(&f2, eps))
    }

    /// Exact polynomial evaluation of `g_ε(z)`.
    pub fn evaluate(&self, eps: C64, z: Point) -> Point {
        let [x, y] = z;
        let x1 = x + (x * x + eps * eps) * self.a.eval(x, y, eps) + y * self.b.eval(x, y, eps);
        let y1 = y + y * self.c.eval(x, y, eps) + self.d.eval(x, y, eps);
        [x1, y1]
    }

    /// Whether `b` or the `y`-part of `c` couple the coordinates.
    pub fn has_y_coupling(&self) -> bool {
        !self.b.is_zero() || self.c.terms().any(|(idx, _)| idx[1] > 0)
    }
}

/// `g_ε − Id` at a fixed parameter, ready for fast evaluation.
#[derive(Debug, Clone)]
pub struct CompiledMap {
    pub f1: Poly2,
    pub f2: Poly2,
    d: [[Poly2; 2]; 2],
}

impl CompiledMap {
    pub fn new(f1: Poly2, f2: Poly2) -> Self {
        let d = [[f1.diff(0), f1.diff(1)], [f2.diff(0), f2.diff(1)]];
        CompiledMap { f1, f2, d }
    }

    pub fn increment(&self, z: Point) -> Point {
        [self.f1.eval(z[0], z[1]), self.f2.eval(z[0], z[1])]
    }

    pub fn step(&self, z: Point) -> Point {
        let dz = self.increment(z);
        [z[0] + dz[0], z[1] + dz[1]]
    }

    /// Jacobian of the increment, i.e. `Dg − I`.
    pub fn jac_minus_id(&self, z: Point) -> [[C64; 2]; 2] {
        let e = |p: &Poly2| p.eval(z[0], z[1]);
        [[e(&self.d[0][0]), e(&self.d[0][1])], [e(&self.d[1][0]), e(&self.d[1][1])]]
    }

    pub fn is_y_decoupled(&self) -> bool {
        self.f1.terms().iter().all(|t| t.1 == 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub rows: Vec<CheckRow>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Checks the standing hypotheses on the family coefficients.
pub fn validate_family(f: &GermFamily) -> ValidationReport {
    let tol = 1e-12;
    let mut rows = Vec::new();
    let a00 = f.a.get([0, 0, 0]);
    rows.push(CheckRow {
        name: "a0(0)=1",
        pass: (a00 - 1.0).norm() <= tol,
        detail: format!("a[0,0,0] = {a00}"),
    });
    let b00 = f.b.get([0, 0, 0]);
    rows.push(CheckRow {
        name: "b0(0,0)=0",
        pass: b00.norm() <= tol,
        detail: format!("b[0,0,0] = {b00}"),
    });
    rows.push(CheckRow {
        name: "Re eta>3",
        pass: f.eta.re > 3.0,
        detail: format!("eta = {}", f.eta),
    });
    let m = f.m();
    let bad = f.d.terms().find(|(idx, _)| {
        let (i, k) = (idx[0], idx[2]);
        if k == 0 {
            i < m + 3
        } else {
            i + k < m + 2
        }
    });
    rows.push(CheckRow {
        name: "d-order",
        pass: bad.is_none(),
        detail: match bad {
            Some((idx, v)) => format!("d[{},{},{}] = {v} violates the order condition (m = {m})", idx[0], idx[1], idx[2]),
            None => format!("m = {m}"),
        },
    });
    let g = f.gamma;
    rows.push(CheckRow {
        name: "gamma*rho>2",
        pass: g > 0.5 && g < 2.0 / 3.0 && g * f.rho() > 2.0,
        detail: format!("gamma = {g}, rho = {}", f.rho()),
    });
    let mut warnings = Vec::new();
    if !f.p().is_zero() {
        warnings.push(format!("p = {} is nonzero; normalize_p removes it", f.p()));
    }
    if f.c_coef().is_zero() {
        warnings.push("c has no y-term: only two fixed points near the origin".into());
    }
    ValidationReport { rows, warnings }
}

/// Eigen-decomposition of `Dg − I` at a fixed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenSplit {
    /// `ρ_T − 1` and `ρ_N − 1`, kept separately to avoid cancellation.
    pub mu_t: C64,
    pub mu_n: C64,
    pub vec_t: [C64; 2],
    pub vec_n: [C64; 2],
    /// Set when the tangentiality scores tie to `1e-12`.
    pub tie: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointRecord {
    pub location: Point,
    pub jacobian: [[C64; 2]; 2],
    pub rho_t: C64,
    pub rho_n: C64,
    pub tangential_eigvec: [C64; 2],
    pub split: EigenSplit,
}

/// `|e·(1,0)| / ‖e‖`; invariant under rescaling `e`.
pub fn tangential_score(e: [C64; 2]) -> f64 {
    let n = e[0].norm().hypot(e[1].norm());
    if n == 0.0 {
        0.0
    } else {
        e[0].norm() / n
    }
}

fn eigvec(m: &[[C64; 2]; 2], mu: C64) -> [C64; 2] {
    let v1 = [m[0][1], mu - m[0][0]];
    let v2 = [mu - m[1][1], m[1][0]];
    let n1 = v1[0].norm().hypot(v1[1].norm());
    let n2 = v2[0].norm().hypot(v2[1].norm());
    if n1 >= n2 {
        v1
    } else {
        v2
    }
}

/// Splits the eigenvalues of `M = Dg − I` into tangential and normal.
pub fn split_eigen(m: &[[C64; 2]; 2]) -> EigenSplit {
    let one = c(1.0, 0.0);
    let zero = C64::zero();
    let pairs = if m[0][1].is_zero() && m[1][0].is_zero() {
        [(m[0][0], [one, zero]), (m[1][1], [zero, one])]
    } else if m[0][1].is_zero() {
        [(m[0][0], [m[0][0] - m[1][1], m[1][0]]), (m[1][1], [zero, one])]
    } else if m[1][0].is_zero() {
        [(m[0][0], [one, zero]), (m[1][1], [m[0][1], m[1][1] - m[0][0]])]
    } else {
        let tr = m[0][0] + m[1][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let diff = m[0][0] - m[1][1];
        let disc = (diff * diff + 4.0 * m[0][1] * m[1][0]).sqrt();
        let s = if (tr + disc).norm() >= (tr - disc).norm() { tr + disc } else { tr - disc };
        let mu1 = s / 2.0;
        let mu2 = if mu1.is_zero() { (tr - s) / 2.0 } else { det / mu1 };
        [(mu1, eigvec(m, mu1)), (mu2, eigvec(m, mu2))]
    };
    let s0 = tangential_score(pairs[0].1);
    let s1 = tangential_score(pairs[1].1);
    let tie = (s0 - s1).abs() < 1e-12;
    let (t, n) = if s0 >= s1 { (pairs[0], pairs[1]) } else { (pairs[1], pairs[0]) };
    EigenSplit { mu_t: t.0, mu_n: n.0, vec_t: t.1, vec_n: n.1, tie }
}

/// `(ρ_T, ρ_N)` for a fixed-point record.
pub fn classify_eigenvalues(rec: &FixedPointRecord) -> (C64, C64) {
    (rec.rho_t, rec.rho_n)
}

fn solve2(m: &[[C64; 2]; 2], r: [C64; 2]) -> Option<[C64; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.is_zero() || !det.is_finite() {
        return None;
    }
    Some([(r[0] * m[1][1] - m[0][1] * r[1]) / det, (m[0][0] * r[1] - m[1][0] * r[0]) / det])
}

fn newton_fixed(map: &CompiledMap, seed: Point) -> Result<Point> {
    let mut z = seed;
    for _ in 0..80 {
        let f = map.increment(z);
        let scale = norm2(&z).max(1e-300);
        if norm2(&f) <= 1e-17 * scale.max(1e-30) {
            break;
        }
        let dz = match solve2(&map.jac_minus_id(z), f) {
            Some(v) => v,
            None => break,
        };
        z = [z[0] - dz[0], z[1] - dz[1]];
        if !z[0].is_finite() || !z[1].is_finite() {
            return Err(Error::NewtonDivergence { seed, last: z });
        }
        if norm2(&dz) <= 1e-16 * norm2(&z) {
            break;
        }
    }
    let res = norm2(&map.increment(z));
    if res <= 1e-12 * norm2(&z).max(1.0) && z[0].is_finite() && z[1].is_finite() {
        Ok(z)
    } else {
        Err(Error::NewtonDivergence { seed, last: z })
    }
}

fn quad_roots(a: C64, b: C64, cc: C64) -> Vec<C64> {
    if a.is_zero() {
        if b.is_zero() {
            return vec![];
        }
        return vec![-cc / b];
    }
    let disc = (b * b - 4.0 * a * cc).sqrt();
    let s = if (b + disc).norm() >= (b - disc).norm() { b + disc } else { b - disc };
    if s.is_zero() {
        return vec![C64::zero(), C64::zero()];
    }
    let r1 = -s / (2.0 * a);
    let r2 = -2.0 * cc / s;
    vec![r1, r2]
}

/// Zeros of the rescaled limit map `H(X, Y)` at the origin.
pub fn rescaled_zeros(f: &GermFamily) -> Vec<Point> {
    let a0 = f.a.get([0, 0, 0]);
    let (b1, b2, b3) = (f.b.get([0, 0, 1]), f.b.get([1, 0, 0]), f.b.get([0, 1, 0]));
    let (c1, c2, c3) = (f.q, f.eta, f.c_coef());
    let zero = C64::zero();
    let mut out = vec![[I, zero], [-I, zero]];
    if !c3.is_zero() {
        // Y = −(c1 + c2 X)/c3 substituted into the first equation.
        let (u0, u1) = (-c1 / c3, -c2 / c3);
        let qa = a0 + b2 * u1 + b3 * u1 * u1;
        let qb = b1 * u1 + b2 * u0 + 2.0 * b3 * u0 * u1;
        let qc = a0 + b1 * u0 + b3 * u0 * u0;
        for xr in quad_roots(qa, qb, qc) {
            out.push([xr, u0 + u1 * xr]);
        }
    } else if !c2.is_zero() {
        let xr = -c1 / c2;
        for yr in quad_roots(b3, b1 + b2 * xr, a0 * (xr * xr + 1.0)) {
            out.push([xr, yr]);
        }
    }
    out
}

fn record(map: &CompiledMap, z: Point) -> FixedPointRecord {
    let m = map.jac_minus_id(z);
    let split = split_eigen(&m);
    let one = c(1.0, 0.0);
    FixedPointRecord {
        location: z,
        jacobian: [[m[0][0] + one, m[0][1]], [m[1][0], m[1][1] + one]],
        rho_t: one + split.mu_t,
        rho_n: one + split.mu_n,
        tangential_eigvec: split.vec_t,
        split,
    }
}

/// Fixed points of `g_ε` within `radius`, by Newton from `(±iε, 0)` and
/// from `ε`-scaled zeros of the rescaled map.
pub fn fixed_points(f: &GermFamily, eps: C64, radius: f64) -> Result<Vec<FixedPointRecord>> {
    if eps.is_zero() {
        return Err(Error::ZeroEpsilon);
    }
    let map = f.compile(eps);
    let mut found: Vec<Point> = Vec::new();
    for s in rescaled_zeros(f) {
        let seed = [eps * s[0], eps * s[1]];
        let z = newton_fixed(&map, seed)?;
        let dup = found.iter().any(|p| {
            let d = (p[0] - z[0]).norm().max((p[1] - z[1]).norm());
            d <= 1e-9 * eps.norm()
        });
        if !dup && norm2(&z) <= radius {
            found.push(z);
        }
    }
    Ok(found.into_iter().map(|z| record(&map, z)).collect())
}

/// The two fixed points continuing `(±iε, 0)`.
pub fn tangential_pair(f: &GermFamily, eps: C64) -> Result<[FixedPointRecord; 2]> {
    if eps.is_zero() {
        return Err(Error::ZeroEpsilon);
    }
    let map = f.compile(eps);
    let z1 = newton_fixed(&map, [I * eps, C64::zero()])?;
    let z2 = newton_fixed(&map, [-I * eps, C64::zero()])?;
    Ok([record(&map, z1), record(&map, z2)])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QBetaEstimate {
    pub q: C64,
    pub beta: C64,
    pub sigma0: C64,
}

/// Neville extrapolation to zero; returns the diagonal of the tableau.
fn neville_at_zero(xs: &[f64], ys: &[C64]) -> Vec<C64> {
    let n = xs.len();
    let mut p: Vec<C64> = ys.to_vec();
    let mut diag = vec![p[0]];
    for lvl in 1..n {
        for i in 0..n - lvl {
            let (xi, xj) = (xs[i], xs[i + lvl]);
            p[i] = (xj * p[i] - xi * p[i + 1]) / (xj - xi);
        }
        diag.push(p[0]);
    }
    diag
}

fn extrapolate(xs: &[f64], ys: &[C64], what: &str) -> Result<C64> {
    let diag = neville_at_zero(xs, ys);
    let n = diag.len();
    let last = diag[n - 1];
    let d1 = (diag[n - 1] - diag[n - 2]).norm();
    let d0 = (diag[n - 2] - diag[n - 3]).norm();
    let floor = 1e-9 * (1.0 + last.norm());
    if d1 > floor && d1 > 10.0 * d0 {
        return Err(Error::ExtrapolationUnstable(format!("{what}: increments {d0:e} then {d1:e}")));
    }
    Ok(last)
}

/// Recovers `q`, `β` and `σ₀ = iπβ/2` from the eigenvalues at `±iε`.
pub fn estimate_q_beta(f: &GermFamily, grid: &[f64]) -> Result<QBetaEstimate> {
    if grid.len() < 3 {
        return Err(Error::ExtrapolationUnstable("grid needs at least three values".into()));
    }
    if grid.windows(2).any(|w| w[1].abs() >= w[0].abs()) || grid.iter().any(|e| *e == 0.0) {
        return Err(Error::ExtrapolationUnstable("grid moduli must strictly decrease".into()));
    }
    let mut qs = Vec::new();
    let mut betas = Vec::new();
    for &e in grid {
        let eps = c(e, 0.0);
        let [r1, r2] = tangential_pair(f, eps)?;
        let num = r1.split.mu_n + r2.split.mu_n;
        let den = 2.0 + r1.split.mu_t + r2.split.mu_t;
        qs.push(num / (eps * den));
        betas.push((r1.split.mu_t - 2.0 * I * eps) / (eps * eps));
    }
    let q = extrapolate(grid, &qs, "q")?;
    let beta = extrapolate(grid, &betas, "beta")?;
    Ok(QBetaEstimate { q, beta, sigma0: I * PI * beta / 2.0 })
}

/// `ε_n = π/(n − σ − σ₀)`; requires `n > |σ+σ₀| + 1`.
pub fn epsilon_sequence(sigma: C64, sigma0: C64, n: u64) -> C64 {
    PI / (c(n as f64, 0.0) - sigma - sigma0)
}

/// Removes the `ε`-coefficient `p` of `a_ε` by
/// `x = x̃(1 − pε̃)`, `ε = ε̃(1 − pε̃)`.
pub fn normalize_p(f: &GermFamily) -> GermFamily {
    let p = f.p();
    if p.is_zero() {
        return f.clone();
    }
    let o = f.order();
    let one = c(1.0, 0.0);
    let x = Jet3::var(0, o);
    let e = Jet3::var(2, o);
    let shrink = Jet3::constant(one, o).sub(&e.scale(&p)).unwrap();
    let subs = [x.mul(&shrink).unwrap(), Jet3::var(1, o), e.mul(&shrink).unwrap()];
    // (1 − pε̃)⁻¹ as a series in ε̃.
    let mut inv = Jet3::zero(o);
    let mut pk = one;
    for k in 0..=o {
        inv.insert([0, 0, k], pk);
        pk *= p;
    }
    let a = shrink.mul(&f.a.compose(&subs).unwrap()).unwrap();
    let b = inv.mul(&f.b.compose(&subs).unwrap()).unwrap();
    let c_s = f.c.compose(&subs).unwrap();
    let d = f.d.compose(&subs).unwrap();
    let mut a = a;
    a.insert([0, 0, 1], C64::zero());
    GermFamily { a, b, c: c_s, d, eta: f.eta, q: f.q, gamma: f.gamma }
}

/// Series of the two fixed points `w_±(ε) = ε X_±(ε)` of the one-variable
/// map `x ↦ x + P(x, ε)`, labelled so that `Im X₊(0) ≥ Im X₋(0)`.
pub fn split_fixed_points(p: &Jet3<C64>, order: u32) -> Result<[Jet1<C64>; 2]> {
    for (idx, v) in p.terms() {
        if idx[1] > 0 {
            return Err(Error::Invalid("restriction must not depend on y".into()));
        }
        if idx[0] + idx[2] < 2 && !v.is_zero() {
            return Err(Error::DegenerateSplitting("P has terms of degree below two".into()));
        }
    }
    let h0 = [p.get([0, 0, 2]), p.get([1, 0, 1]), p.get([2, 0, 0])];
    let roots = quad_roots(h0[2], h0[1], h0[0]);
    if roots.len() != 2 {
        return Err(Error::DegenerateSplitting("limit quadratic is degenerate".into()));
    }
    if (roots[0] - roots[1]).norm() <= 1e-10 {
        return Err(Error::DegenerateSplitting("w+'(0) = w-'(0)".into()));
    }
    let mut roots = roots;
    if roots[0].im < roots[1].im || (roots[0].im == roots[1].im && roots[0].re < roots[1].re) {
        roots.swap(0, 1);
    }
    // Q(X, ε) = P(εX, ε)/ε² as a polynomial in X with series coefficients.
    let maxi = p.terms().map(|(idx, _)| idx[0]).max().unwrap_or(0);
    let mut qcoef: Vec<Jet1<C64>> = vec![Jet1::zero(order); maxi as usize + 1];
    for (idx, v) in p.terms() {
        let pow = idx[0] + idx[2] - 2;
        if pow <= order {
            let cur = qcoef[idx[0] as usize].coeff(pow);
            qcoef[idx[0] as usize].set(pow, cur + v);
        }
    }
    let eval_q = |xs: &Jet1<C64>| -> Result<(Jet1<C64>, Jet1<C64>)> {
        let mut val = Jet1::zero(order);
        let mut der = Jet1::zero(order);
        for ci in qcoef.iter().rev() {
            der = der.mul(xs)?.add(&val)?;
            val = val.mul(xs)?.add(ci)?;
        }
        Ok((val, der))
    };
    let mut out = Vec::new();
    for r in roots {
        let mut xs = Jet1::from_coeffs(vec![r], order);
        for _ in 0..(order + 3) {
            let (v, dv) = eval_q(&xs)?;
            xs = xs.sub(&v.mul(&dv.recip()?)?)?;
        }
        out.push(xs);
    }
    Ok([out[0].clone(), out[1].clone()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn with_a(a_terms: &[([u32; 3], f64)]) -> GermFamily {
        let mut f = GermFamily::model(C64::zero());
        let mut a = Jet3::zero(f.order());
        for (idx, v) in a_terms {
            a.insert(*idx, c(*v, 0.0));
        }
        f.a = a;
        f
    }

    #[test]
    fn model_validates() {
        let r = validate_family(&GermFamily::model(c(0.3, 0.1)));
        assert_eq!(r.rows.len(), 5);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn eta_two_fails() {
        let mut f = GermFamily::model(C64::zero());
        f.eta = c(2.0, 0.0);
        f.c.insert([1, 0, 0], f.eta);
        let r = validate_family(&f);
        assert!(!r.rows.iter().find(|r| r.name == "Re eta>3").unwrap().pass);
    }

    #[test]
    fn low_order_d_fails() {
        let mut f = GermFamily::model(C64::zero());
        f.d.insert([2, 0, 0], c(1.0, 0.0));
        let r = validate_family(&f);
        let row = r.rows.iter().find(|r| r.name == "d-order").unwrap();
        assert!(!row.pass);
        assert!(row.detail.contains("d[2,0,0]"));
        let mut g = GermFamily::model(C64::zero());
        g.d.insert([7, 0, 0], c(1.0, 0.0));
        g.d.insert([5, 0, 1], c(1.0, 0.0));
        assert!(validate_family(&g).passed());
    }

    #[test]
    fn gamma_is_raised_for_small_rho() {
        assert_eq!(adjusted_gamma(0.6, 4.0), 0.6);
        let g = adjusted_gamma(0.6, 3.2);
        assert!(g > 0.5 && g < 2.0 / 3.0 && g * 3.2 > 2.0);
    }

    #[test]
    fn evaluate_examples() {
        let f = GermFamily::model(C64::zero());
        let z = f.evaluate(C64::zero(), [c(0.1, 0.0), C64::zero()]);
        assert!((z[0] - c(0.11, 0.0)).norm() < 1e-16 && z[1] == C64::zero());
        let z = f.evaluate(C64::zero(), [c(-0.1, 0.0), c(0.001, 0.0)]);
        assert!((z[0] - c(-0.09, 0.0)).norm() < 1e-16);
        assert!((z[1] - c(0.0006, 0.0)).norm() < 1e-18);
        let z = f.evaluate(c(0.1, 0.0), [C64::zero(), C64::zero()]);
        assert!((z[0] - c(0.01, 0.0)).norm() < 1e-17 && z[1] == C64::zero());
        let m = f.compile(c(0.1, 0.0));
        let w = m.step([c(0.02, 0.01), c(0.003, -0.001)]);
        let v = f.evaluate(c(0.1, 0.0), [c(0.02, 0.01), c(0.003, -0.001)]);
        assert!((w[0] - v[0]).norm() < 1e-16 && (w[1] - v[1]).norm() < 1e-16);
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let mut f = GermFamily::model(c(0.3, 0.1));
        f.b.insert([1, 0, 0], c(0.1, 1.0 / 3.0));
        f.d.insert([7, 0, 0], c(std::f64::consts::PI, -1e-300));
        let s = f.to_json();
        let g = GermFamily::from_json(&s).unwrap();
        assert_eq!(f, g);
        assert_eq!(s, g.to_json());
    }

    #[test]
    fn loader_inserts_eta_and_q() {
        let f = GermFamily::from_json(r#"{"eta":{"re":4},"q":{"re":0.5},"a":[{"re":1}]}"#).unwrap();
        assert_eq!(f, GermFamily::model(c(0.5, 0.0)));
        assert!(GermFamily::from_json(r#"{"eta":{"re":4},"c":[{"i":1,"re":3}]}"#).is_err());
        assert!(GermFamily::from_json(r#"{"eta":{"re":4},"a":[{"j":1,"re":3}]}"#).is_err());
    }

    #[test]
    fn model_fixed_points() {
        let f = GermFamily::model(c(0.3, 0.1));
        let e = c(0.01, 0.0);
        let fps = fixed_points(&f, e, 1.0).unwrap();
        assert_eq!(fps.len(), 2);
        assert_eq!(fps[0].location, [c(0.0, 0.01), C64::zero()]);
        assert_eq!(fps[1].location, [c(0.0, -0.01), C64::zero()]);
        let (rt, rn) = classify_eigenvalues(&fps[0]);
        assert_eq!(rt, c(1.0, 0.02));
        assert!((rn - (c(1.0, 0.0) + (f.q + 4.0 * I) * 0.01)).norm() < 1e-17);
        assert_eq!(fps[1].rho_t, c(1.0, -0.02));
        assert!(matches!(fixed_points(&f, C64::zero(), 1.0), Err(Error::ZeroEpsilon)));
    }

    #[test]
    fn four_fixed_points_with_y_term() {
        let mut f = GermFamily::model(c(0.3, 0.0));
        f.c.insert([0, 1, 0], c(1.0, 0.0));
        let e = 0.01;
        let fps = fixed_points(&f, c(e, 0.0), 1.0).unwrap();
        assert_eq!(fps.len(), 4);
        // y(ηx + qε + y) = 0 and x² + ε² = 0, solved by hand.
        let expect = [
            [c(0.0, e), C64::zero()],
            [c(0.0, -e), C64::zero()],
            [c(0.0, e), -(c(0.0, 4.0 * e) + 0.3 * e)],
            [c(0.0, -e), -(c(0.0, -4.0 * e) + 0.3 * e)],
        ];
        for want in expect {
            assert!(fps.iter().any(|r| (r.location[0] - want[0]).norm() < 1e-14 && (r.location[1] - want[1]).norm() < 1e-14));
        }
    }

    #[test]
    fn beta_from_a_series() {
        let f = with_a(&[([0, 0, 0], 1.0), ([1, 0, 0], 1.0)]);
        let e = 1e-3;
        let [r1, _] = tangential_pair(&f, c(e, 0.0)).unwrap();
        // d/dx (x²+ε²)(1+x) at x = iε is 2iε − 2ε².
        let want = c(1.0, 0.0) + c(0.0, 2.0 * e) - 2.0 * e * e;
        assert!((r1.rho_t - want).norm() < 1e-15);
        let est = estimate_q_beta(&f, &[1e-2, 1e-3, 1e-4]).unwrap();
        assert!((est.beta - c(-2.0, 0.0)).norm() < 1e-6);
        assert!((est.sigma0 - c(0.0, -PI)).norm() < 1e-5);
    }

    #[test]
    fn q_beta_model() {
        let q = c(0.3, 0.1);
        let est = estimate_q_beta(&GermFamily::model(q), &[1e-2, 1e-3, 1e-4]).unwrap();
        assert!((est.q - q).norm() < 1e-9);
        assert!(est.beta.norm() < 1e-9 && est.sigma0.norm() < 1e-8);
        assert!(matches!(estimate_q_beta(&GermFamily::model(q), &[1e-2]), Err(Error::ExtrapolationUnstable(_))));
    }

    #[test]
    fn epsilon_examples() {
        let z = C64::zero();
        assert!((epsilon_sequence(z, z, 100) - c(PI / 100.0, 0.0)).norm() < 1e-18);
        assert!((epsilon_sequence(c(0.5, 0.0), z, 10) - c(0.3306939635357677, 0.0)).norm() < 1e-15);
        for n in [2u64, 17, 1000] {
            assert!((c(n as f64, 0.0) - PI / epsilon_sequence(z, z, n)).norm() <= 4.0 * f64::EPSILON * n as f64);
        }
    }

    #[test]
    fn normalize_p_examples() {
        let f = GermFamily::model(C64::zero());
        assert_eq!(normalize_p(&f), f);
        let g = with_a(&[([0, 0, 0], 1.0), ([0, 0, 1], 2.0)]);
        let h = normalize_p(&g);
        assert_eq!(h.p(), C64::zero());
        assert!(validate_family(&h).passed());
        let p = g.p();
        for (k, &(xr, xi, yr, er)) in [(0.01, 0.02, 1e-6, 1e-3), (-0.03, 0.0, -2e-6, 2e-3), (0.0, -0.01, 0.0, 5e-4)].iter().enumerate() {
            let et = c(er, 0.0);
            let zt = [c(xr, xi), c(yr, 0.0)];
            let s = 1.0 - p * et;
            let img = g.evaluate(et * s, [zt[0] * s, zt[1]]);
            let want = [img[0] / s, img[1]];
            let got = h.evaluate(et, zt);
            assert!((got[0] - want[0]).norm() < 1e-12 && (got[1] - want[1]).norm() < 1e-12, "sample {k}");
        }
    }

    #[test]
    fn split_example() {
        // p_ε(x) = x + x² + 2εx + 2ε² has w± = −ε ± iε.
        let mut p = Jet3::zero(6);
        p.insert([2, 0, 0], c(1.0, 0.0));
        p.insert([1, 0, 1], c(2.0, 0.0));
        p.insert([0, 0, 2], c(2.0, 0.0));
        let [xp, xm] = split_fixed_points(&p, 6).unwrap();
        assert!((xp.coeff(0) - c(-1.0, 1.0)).norm() < 1e-15);
        assert!((xm.coeff(0) - c(-1.0, -1.0)).norm() < 1e-15);
        for k in 1..=6 {
            assert!(xp.coeff(k).norm() < 1e-14 && xm.coeff(k).norm() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn score_is_scale_invariant(a in -5f64..5.0, b in -5f64..5.0, d in -5f64..5.0, e in -5f64..5.0,
                                    sr in -3f64..3.0, si in -3f64..3.0) {
            let s = c(sr, si);
            prop_assume!(s.norm() > 1e-3);
            let m = [[c(a, b), c(d, 0.1)], [c(0.2, e), c(b, a)]];
            let sp = split_eigen(&m);
            for v in [sp.vec_t, sp.vec_n] {
                let t0 = tangential_score(v);
                let t1 = tangential_score([v[0] * s, v[1] * s]);
                prop_assert!((t0 - t1).abs() < 1e-12);
            }
            prop_assert!(tangential_score(sp.vec_t) >= tangential_score(sp.vec_n));
            let tr = m[0][0] + m[1][1];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            prop_assert!((sp.mu_t + sp.mu_n - tr).norm() <= 1e-10 * (1.0 + tr.norm()));
            prop_assert!((sp.mu_t * sp.mu_n - det).norm() <= 1e-10 * (1.0 + det.norm()));
        }

        #[test]
        fn recovers_q_for_random_families(qr in -1f64..1.0, qi in -1f64..1.0, a1 in -2f64..2.0, a2 in -2f64..2.0) {
            let q = c(qr, qi);
            let mut f = GermFamily::model(q);
            f.a.insert([1, 0, 0], c(a1, 0.0));
            f.a.insert([2, 0, 0], c(a2, 0.0));
            let est = estimate_q_beta(&f, &[1e-2, 1e-3, 1e-4]).unwrap();
            prop_assert!((est.q - q).norm() <= 1e-6 * q.norm().max(1e-3));
        }

        #[test]
        fn model_fixed_points_exact(k in 2u32..=4) {
            let e = 10f64.powi(-(k as i32));
            let fps = fixed_points(&GermFamily::model(c(0.3, 0.1)), c(e, 0.0), 1.0).unwrap();
            prop_assert!((fps[0].location[0] - c(0.0, e)).norm() <= 1e-13);
            prop_assert!(fps[0].location[1].norm() <= 1e-13);
            prop_assert!((fps[0].rho_t - c(1.0, 2.0 * e)).norm() <= 1e-13);
        }
    }
}
