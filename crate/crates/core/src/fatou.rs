//! Fatou coordinates of the unperturbed germ `g = g₀`.
//!
//! The incoming coordinate is the limit of
//! `X_n − n − (1−a) log X_n` and `Y_n` along the forward orbit, where
//! `(X_n, Y_n) = (−1/x_n, y_n/(−x_n)^η)`. The orbit is run in increment
//! form with a compensated sum for `X_n − n`, the remainders are recorded at
//! checkpoints `8·2^j` steps apart, and the limit is read off by fitting the
//! asymptotic remainder expansion in powers of `1/X_n`. The outgoing
//! coordinate is `Φ° = −Φ^ι_h ∘ J` for `h = J ∘ g⁻¹ ∘ J`, `J = −Id`.

use nalgebra::DMatrix;
use num_traits::Zero;

use crate::cplx_core::{c, norm2, pow_eta, principal_log, CompSum, Point, C64};
use crate::error::{Error, Result};
use crate::family::{CompiledMap, GermFamily};
use crate::sampling::halton;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Incoming,
    Outgoing,
}

/// `P^ι(r,C) = {|x+r|<r, |y/(−x)^η|<C}` or `P^o(r,C) = {|x−r|<r, |y/x^η|<C}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PetalSpec {
    pub orientation: Orientation,
    pub r: f64,
    pub c: f64,
}

/// Straightened petal coordinates `Φ₀(z)`.
pub fn phi0(orientation: Orientation, eta: C64, z: Point) -> Result<Point> {
    let [x, y] = z;
    let base = match orientation {
        Orientation::Incoming => -x,
        Orientation::Outgoing => x,
    };
    Ok([-1.0 / x, y / pow_eta(base, eta)?])
}

/// Inverse of [`phi0`].
pub fn phi0_inv(orientation: Orientation, eta: C64, xy: Point) -> Result<Point> {
    let x = -1.0 / xy[0];
    let base = match orientation {
        Orientation::Incoming => -x,
        Orientation::Outgoing => x,
    };
    Ok([x, xy[1] * pow_eta(base, eta)?])
}

pub fn petal_contains(p: &PetalSpec, eta: C64, z: Point) -> Result<bool> {
    let [x, _] = z;
    let disk = match p.orientation {
        Orientation::Incoming => (x + p.r).norm() < p.r,
        Orientation::Outgoing => (x - p.r).norm() < p.r,
    };
    if !disk {
        return Ok(false);
    }
    Ok(phi0(p.orientation, eta, z)?[1].norm() < p.c)
}

/// A germ near the origin, given by its increment `z ↦ f(z) − z`.
pub trait StepMap: Sync {
    fn increment(&self, z: Point) -> Result<Point>;

    fn step(&self, z: Point) -> Result<Point> {
        let d = self.increment(z)?;
        Ok([z[0] + d[0], z[1] + d[1]])
    }
}

impl StepMap for CompiledMap {
    fn increment(&self, z: Point) -> Result<Point> {
        Ok(CompiledMap::increment(self, z))
    }
}

/// `δ` with `g(z + δ) = z`, by Newton's method from `δ = −F(z)`.
pub fn inverse_delta(g: &CompiledMap, z: Point) -> Result<Point> {
    let f0 = g.increment(z);
    let mut d = [-f0[0], -f0[1]];
    for _ in 0..40 {
        let w = [z[0] + d[0], z[1] + d[1]];
        let f = g.increment(w);
        let r = [d[0] + f[0], d[1] + f[1]];
        let j = g.jac_minus_id(w);
        let jnorm = j.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max);
        if jnorm > 0.5 {
            return Err(Error::InverseBranchLost(z));
        }
        let m = [[j[0][0] + 1.0, j[0][1]], [j[1][0], j[1][1] + 1.0]];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let s = [(r[0] * m[1][1] - m[0][1] * r[1]) / det, (m[0][0] * r[1] - m[1][0] * r[0]) / det];
        d = [d[0] - s[0], d[1] - s[1]];
        if !(d[0].is_finite() && d[1].is_finite()) {
            return Err(Error::InverseBranchLost(z));
        }
        if norm2(&s) <= 1e-14 * norm2(&d) || norm2(&s) == 0.0 {
            return Ok(d);
        }
    }
    Err(Error::InverseBranchLost(z))
}

/// `h = J ∘ g⁻¹ ∘ J` with the local inverse of `g` near the origin.
pub struct InverseConj<'a> {
    pub g: &'a CompiledMap,
}

impl StepMap for InverseConj<'_> {
    fn increment(&self, w: Point) -> Result<Point> {
        let d = inverse_delta(self.g, [-w[0], -w[1]])?;
        Ok([-d[0], -d[1]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailPolicy {
    /// Relative tolerance on successive extrapolated limits.
    pub tol: f64,
    /// Steps before the first checkpoint; later ones double.
    pub first_step: usize,
    pub max_checkpoints: usize,
    /// Iterations allowed before the orbit reaches the petal.
    pub entry_budget: usize,
    /// Minimal `Re X` at which the tail starts.
    pub x_fit0: f64,
    /// Largest real part of the remainder exponents fitted.
    pub max_exponent: f64,
}

impl Default for TailPolicy {
    fn default() -> Self {
        TailPolicy {
            tol: 1e-12,
            first_step: 8,
            max_checkpoints: 18,
            entry_budget: 100_000,
            x_fit0: 16.0,
            max_exponent: 4.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    /// Radius of the bidisk where the germ is trusted.
    pub domain: f64,
    /// Petal level `C`.
    pub c: f64,
    /// Level used to decide basin entry.
    pub c_basin: f64,
    /// Starting petal radius for the adaptive search.
    pub r_max: f64,
    pub policy: TailPolicy,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { domain: 0.5, c: 2.0, c_basin: 1e3, r_max: 0.25, policy: TailPolicy::default() }
    }
}

/// One remainder term `X^{−e}` or `X^{−e} log X`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisFn {
    pub e: C64,
    pub log: bool,
}

/// Remainder exponents `k + l(η−2) + j(m+2−η)` up to `max_re`, with a
/// logarithmic companion where two of them coincide.
pub fn remainder_basis(eta: C64, y_coupled: bool, has_d: bool, max_re: f64) -> Vec<BasisFn> {
    let m = eta.re.floor();
    let g1 = eta - 2.0;
    let g2 = c(m + 2.0, 0.0) - eta;
    let lmax = if y_coupled { (max_re / g1.re).floor() as i32 } else { 0 };
    let jmax = if has_d { (max_re / g2.re).floor() as i32 } else { 0 };
    let mut all: Vec<C64> = Vec::new();
    for k in 0..=(max_re.floor() as i32) {
        for l in 0..=lmax {
            for j in 0..=jmax {
                if k + l + j == 0 {
                    continue;
                }
                let e = c(k as f64, 0.0) + g1 * l as f64 + g2 * j as f64;
                if e.re <= max_re + 1e-12 {
                    all.push(e);
                }
            }
        }
    }
    all.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
    let mut out: Vec<BasisFn> = Vec::new();
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && (all[j] - all[i]).norm() < 1e-9 {
            j += 1;
        }
        out.push(BasisFn { e: all[i], log: false });
        if j - i > 1 {
            out.push(BasisFn { e: all[i], log: true });
        }
        i = j;
    }
    out
}

/// Diagnostics from one tail evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailInfo {
    pub steps: usize,
    pub checkpoints: usize,
    pub last_increment: f64,
}

struct Checkpoint {
    x: C64,
    s: [C64; 2],
}

fn extrapolate(basis: &[BasisFn], cps: &[Checkpoint]) -> Option<[C64; 2]> {
    let n = basis.len() + 1;
    let w = &cps[cps.len() - n..];
    let xref = w[0].x;
    let mut m = DMatrix::<C64>::zeros(n, n);
    let mut rhs = DMatrix::<C64>::zeros(n, 2);
    for (r, cp) in w.iter().enumerate() {
        let lx = cp.x.ln();
        let lr = (cp.x / xref).ln();
        m[(r, 0)] = c(1.0, 0.0);
        for (k, b) in basis.iter().enumerate() {
            let v = (-b.e * lr).exp();
            m[(r, k + 1)] = if b.log { v * lx } else { v };
        }
        rhs[(r, 0)] = cp.s[0];
        rhs[(r, 1)] = cp.s[1];
    }
    let sol = m.lu().solve(&rhs)?;
    Some([sol[(0, 0)], sol[(0, 1)]])
}

/// Outcome of following an orbit towards the incoming petal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasinOutcome {
    /// Entered `P^ι(r, level)` after `n0` steps.
    Inside { n0: usize, level: f64 },
    Escaped { n: usize },
    Unknown,
}

/// Evaluator for the Fatou coordinates of `g₀`.
#[derive(Debug, Clone)]
pub struct FatouEngine {
    pub germ: GermFamily,
    pub fwd: CompiledMap,
    pub eta: C64,
    /// The `x³`-coefficient `a` of the first component.
    pub a: C64,
    pub r_in: f64,
    pub r_out: f64,
    pub c: f64,
    pub config: EngineConfig,
    pub basis: Vec<BasisFn>,
}

fn in_domain(z: &Point, radius: f64) -> bool {
    z[0].is_finite() && z[1].is_finite() && z[0].norm() <= radius && z[1].norm() <= radius
}

impl FatouEngine {
    pub fn new(f: &GermFamily, config: EngineConfig) -> Result<Self> {
        let fwd = f.compile(C64::zero());
        let has_d = fwd.f2.terms().iter().any(|t| t.1 == 0);
        let y_coupled = fwd.f1.terms().iter().any(|t| t.1 > 0) || fwd.f2.terms().iter().any(|t| t.1 > 1);
        let basis = remainder_basis(f.eta, y_coupled, has_d, config.policy.max_exponent);
        let mut e = FatouEngine {
            germ: f.clone(),
            fwd,
            eta: f.eta,
            a: f.a_coef(),
            r_in: config.r_max,
            r_out: config.r_max,
            c: config.c,
            config,
            basis,
        };
        e.r_in = e.choose_radius(&e.fwd.clone(), config.r_max)?;
        let fwd = e.fwd.clone();
        e.r_out = e.choose_radius(&InverseConj { g: &fwd }, config.r_max)?;
        Ok(e)
    }

    pub fn petal(&self, orientation: Orientation) -> PetalSpec {
        let r = match orientation {
            Orientation::Incoming => self.r_in,
            Orientation::Outgoing => self.r_out,
        };
        PetalSpec { orientation, r, c: self.c }
    }

    /// Incoming-petal test in the coordinates of `map`.
    fn map_petal(&self, r: f64, level: f64, z: &Point) -> bool {
        let x = z[0];
        if (x + r).norm() >= r {
            return false;
        }
        match pow_eta(-x, self.eta) {
            Ok(p) => (z[1] / p).norm() < level,
            Err(_) => false,
        }
    }

    /// Halves `r` until boundary points of `P(r, C)` stay in `P(r, C+1)`
    /// along their forward orbits.
    fn choose_radius<M: StepMap>(&self, map: &M, r0: f64) -> Result<f64> {
        let mut r = r0.min(self.config.domain / 2.0);
        for _ in 0..24 {
            if self.boundary_ok(map, r) {
                return Ok(r);
            }
            r /= 2.0;
        }
        Err(Error::Invalid("no admissible petal radius".into()))
    }

    fn boundary_ok<M: StepMap>(&self, map: &M, r: f64) -> bool {
        let c0 = self.c;
        let pts = halton(200, 3, 11);
        for (k, u) in pts.iter().enumerate() {
            let th = std::f64::consts::TAU * (0.01 + 0.98 * u[0]);
            let ph = std::f64::consts::TAU * u[1];
            let (x, ymod) = if k % 2 == 0 {
                (c(-r, 0.0) + r * (1.0 - 1e-9) * C64::from_polar(1.0, th), c0 * u[2])
            } else {
                (c(-r, 0.0) + r * u[2].sqrt() * C64::from_polar(1.0, th), c0 * (1.0 - 1e-9))
            };
            let yy = match pow_eta(-x, self.eta) {
                Ok(p) => C64::from_polar(ymod, ph) * p,
                Err(_) => continue,
            };
            let mut z = [x, yy];
            for _ in 0..2000 {
                z = match map.step(z) {
                    Ok(v) => v,
                    Err(_) => return false,
                };
                if !self.map_petal(r, c0 + 1.0, &z) {
                    return false;
                }
                if (-1.0 / z[0]).re > 1e3 {
                    break;
                }
            }
        }
        true
    }

    /// Iterates `map` until the orbit sits deep in its incoming petal.
    fn enter<M: StepMap>(&self, map: &M, r: f64, z: Point, deep: bool) -> Result<(Point, usize)> {
        let budget = self.config.policy.entry_budget;
        let mut z = z;
        for n in 0..=budget {
            if !in_domain(&z, self.config.domain) {
                return Err(Error::NotInBasin { steps: n, escaped: true });
            }
            if self.map_petal(r, self.config.c_basin, &z) && (!deep || (-1.0 / z[0]).re >= self.config.policy.x_fit0) {
                return Ok((z, n));
            }
            if n < budget {
                z = map.step(z)?;
            }
        }
        Err(Error::NotInBasin { steps: budget, escaped: false })
    }

    /// The limit `(lim X_n − n − (1−a) log X_n, lim Y_n)` from a point deep
    /// in the incoming petal of `map`.
    fn tail_limit<M: StepMap>(&self, map: &M, a_eff: C64, start: Point) -> Result<(Point, TailInfo)> {
        let pol = &self.config.policy;
        let one_minus_a = 1.0 - a_eff;
        let x0 = -1.0 / start[0];
        let mut dsum = CompSum::default();
        let mut y = start[1];
        let mut x = start[0];
        let mut s = 0usize;
        let mut next_cp = pol.first_step;
        let mut cps: Vec<Checkpoint> = Vec::new();
        let mut est: Option<[C64; 2]> = None;
        let mut small = 0;
        let mut last_inc = f64::INFINITY;
        let nb = self.basis.len();
        while cps.len() < pol.max_checkpoints {
            let d = map.increment([x, y])?;
            let x1 = x + d[0];
            let dx = d[0] / (x * x1);
            dsum.add(dx - 1.0);
            y += d[1];
            s += 1;
            let big_x = c(s as f64, 0.0) + x0 + dsum.value();
            x = -1.0 / big_x;
            if !(big_x.is_finite() && y.is_finite()) || big_x.re <= 0.0 {
                return Err(Error::TailNotConverged { last_increment: last_inc });
            }
            if s < next_cp {
                continue;
            }
            next_cp *= 2;
            let sx = x0 + dsum.value() - one_minus_a * principal_log(big_x)?;
            let sy = y * pow_eta(big_x, self.eta)?;
            cps.push(Checkpoint { x: big_x, s: [sx, sy] });
            if cps.len() < nb + 1 {
                continue;
            }
            let Some(e) = extrapolate(&self.basis, &cps) else { continue };
            if let Some(prev) = est {
                let inc = ((e[0] - prev[0]).norm() / (1.0 + e[0].norm())).max((e[1] - prev[1]).norm() / (1.0 + e[1].norm()));
                last_inc = inc;
                if inc <= pol.tol {
                    small += 1;
                } else {
                    small = 0;
                }
                if small >= 3 {
                    return Ok((e, TailInfo { steps: s, checkpoints: cps.len(), last_increment: inc }));
                }
            }
            est = Some(e);
        }
        match est {
            Some(e) if last_inc <= 1e3 * pol.tol => Ok((e, TailInfo { steps: s, checkpoints: cps.len(), last_increment: last_inc })),
            _ => Err(Error::TailNotConverged { last_increment: last_inc }),
        }
    }

    /// `Φ^ι(z)`, extended to the basin by `Φ^ι(g^n z) − (n, 0)`.
    pub fn incoming_fatou(&self, z: Point) -> Result<Point> {
        Ok(self.incoming_fatou_info(z)?.0)
    }

    pub fn incoming_fatou_info(&self, z: Point) -> Result<(Point, TailInfo)> {
        let (w, n) = self.enter(&self.fwd, self.r_in, z, true)?;
        let (phi, info) = self.tail_limit(&self.fwd, self.a, w)?;
        Ok(([phi[0] - n as f64, phi[1]], info))
    }

    /// `Φ°(z) = −Φ^ι_h(Jz)`, extended by backward iteration.
    pub fn outgoing_fatou(&self, z: Point) -> Result<Point> {
        Ok(self.outgoing_fatou_info(z)?.0)
    }

    pub fn outgoing_fatou_info(&self, z: Point) -> Result<(Point, TailInfo)> {
        let inv = InverseConj { g: &self.fwd };
        let (w, n) = self.enter(&inv, self.r_out, [-z[0], -z[1]], true)?;
        let (phi, info) = self.tail_limit(&inv, 2.0 - self.a, w)?;
        Ok(([n as f64 - phi[0], -phi[1]], info))
    }

    pub fn fatou(&self, orientation: Orientation, z: Point) -> Result<Point> {
        match orientation {
            Orientation::Incoming => self.incoming_fatou(z),
            Orientation::Outgoing => self.outgoing_fatou(z),
        }
    }

    /// Asymptotic inverse of the Fatou coordinate, used as a Newton seed.
    pub fn asymptotic_inverse(&self, orientation: Orientation, xy: Point) -> Result<Point> {
        let one_minus_a = 1.0 - self.a;
        let w = xy[0];
        let mut x = -1.0 / w;
        for _ in 0..60 {
            let base = match orientation {
                Orientation::Incoming => -x,
                Orientation::Outgoing => x,
            };
            let nx = match orientation {
                Orientation::Incoming => -1.0 / (w + one_minus_a * principal_log(base)?),
                Orientation::Outgoing => -1.0 / (w - one_minus_a * principal_log(base)?),
            };
            let done = (nx - x).norm() <= 1e-16 * x.norm();
            x = nx;
            if done {
                break;
            }
        }
        phi0_inv(orientation, self.eta, [-1.0 / x, xy[1]])
    }

    /// Solves `Φ(z) = xy` by Newton's method with a finite-difference
    /// Jacobian, seeded by the asymptotic inverse.
    pub fn invert(&self, orientation: Orientation, xy: Point) -> Result<Point> {
        let seed = self.asymptotic_inverse(orientation, xy)?;
        let eval = |z: Point| self.fatou(orientation, z);
        let tol = [1e-12 * (1.0 + xy[0].norm()), 1e-12 * (1.0 + xy[1].norm())];
        let mut z = seed;
        let mut f = eval(z)?;
        let mut r = [f[0] - xy[0], f[1] - xy[1]];
        for _ in 0..50 {
            if r[0].norm() <= tol[0] && r[1].norm() <= tol[1] {
                return Ok(z);
            }
            let hx = 1e-6 * z[0].norm();
            let hy = 1e-6 * z[1].norm().max(z[0].norm().powf(self.eta.re));
            let fxp = eval([z[0] + hx, z[1]])?;
            let fxm = eval([z[0] - hx, z[1]])?;
            let fyp = eval([z[0], z[1] + hy])?;
            let fym = eval([z[0], z[1] - hy])?;
            let j = [
                [(fxp[0] - fxm[0]) / (2.0 * hx), (fyp[0] - fym[0]) / (2.0 * hy)],
                [(fxp[1] - fxm[1]) / (2.0 * hx), (fyp[1] - fym[1]) / (2.0 * hy)],
            ];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if det.is_zero() || !det.is_finite() {
                break;
            }
            let step = [(r[0] * j[1][1] - j[0][1] * r[1]) / det, (j[0][0] * r[1] - j[1][0] * r[0]) / det];
            let rnorm = |r: &[C64; 2]| (r[0].norm() / tol[0]).max(r[1].norm() / tol[1]);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..12 {
                let cand = [z[0] - t * step[0], z[1] - t * step[1]];
                if let Ok(fc) = eval(cand) {
                    let rc = [fc[0] - xy[0], fc[1] - xy[1]];
                    if rnorm(&rc) < rnorm(&r) || t == 1.0 && rnorm(&rc) < 2.0 * rnorm(&r) {
                        z = cand;
                        f = fc;
                        r = rc;
                        accepted = true;
                        break;
                    }
                }
                t /= 2.0;
            }
            if !accepted {
                break;
            }
        }
        let _ = f;
        if r[0].norm() <= tol[0] && r[1].norm() <= tol[1] {
            Ok(z)
        } else {
            Err(Error::NewtonDivergence { seed, last: z })
        }
    }

    /// Smallest shift `n ≥ 0` placing `X − n` in
    /// `−{Re X > R, |Im X| < 2 |Re X|}` with `R = max(1/r°, x_fit0)`.
    pub fn outgoing_shift(&self, big_x: C64) -> usize {
        let rr = (1.0 / self.r_out).max(self.config.policy.x_fit0);
        let need = big_x.re + rr.max(big_x.im.abs() / 2.0) + 1e-9;
        need.ceil().max(0.0) as usize
    }

    /// `Ψ°(X, Y) = g^n((Φ°)⁻¹(X − n, Y))`.
    pub fn psi_o_extended(&self, xy: Point) -> Result<Point> {
        let mut n = self.outgoing_shift(xy[0]);
        let mut attempt = 0;
        let z = loop {
            match self.invert(Orientation::Outgoing, [xy[0] - n as f64, xy[1]]) {
                Ok(z) => break z,
                Err(e) if attempt >= 3 => return Err(e),
                Err(_) => {
                    n += 16;
                    attempt += 1;
                }
            }
        };
        let mut z = z;
        for k in 0..n {
            z = self.fwd.step(z);
            if !in_domain(&z, self.config.domain) {
                return Err(Error::DomainEscape(k + 1));
            }
        }
        Ok(z)
    }

    pub fn basin_membership(&self, z: Point, budget: usize) -> BasinOutcome {
        let mut z = z;
        for n in 0..=budget {
            if !in_domain(&z, self.config.domain) {
                return BasinOutcome::Escaped { n };
            }
            if self.map_petal(self.r_in, self.config.c_basin, &z) {
                let yabs = phi0(Orientation::Incoming, self.eta, z).map(|v| v[1].norm()).unwrap_or(f64::INFINITY);
                return BasinOutcome::Inside { n0: n, level: self.c.max(yabs) };
            }
            if n < budget {
                z = self.fwd.step(z);
            }
        }
        BasinOutcome::Unknown
    }

    /// `g₀(z)`.
    pub fn step(&self, z: Point) -> Point {
        self.fwd.step(z)
    }

    /// Deterministic samples of `P(r, C)` for the engine's petal radius.
    /// The radial fraction stays below 0.9 so samples avoid the tip.
    pub fn petal_samples(&self, orientation: Orientation, c_level: f64, n: usize, seed: u64) -> Vec<Point> {
        let p = self.petal(orientation);
        let sgn = match orientation {
            Orientation::Incoming => -1.0,
            Orientation::Outgoing => 1.0,
        };
        halton(n, 4, seed)
            .into_iter()
            .map(|u| {
                let x = c(sgn * p.r, 0.0) + p.r * 0.9 * u[0].sqrt() * C64::from_polar(1.0, std::f64::consts::TAU * u[1]);
                let ymod = c_level * u[2].sqrt();
                let big_y = C64::from_polar(ymod, std::f64::consts::TAU * u[3]);
                phi0_inv(orientation, self.eta, [-1.0 / x, big_y]).expect("sample off the cut")
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cplx_core::dist2;

    fn model_engine() -> FatouEngine {
        FatouEngine::new(&GermFamily::model(C64::zero()), EngineConfig::default()).unwrap()
    }

    #[test]
    fn petal_examples() {
        let eta = c(4.0, 0.0);
        let p = PetalSpec { orientation: Orientation::Incoming, r: 0.05, c: 2.0 };
        assert!(petal_contains(&p, eta, [c(-0.05, 0.0), C64::zero()]).unwrap());
        assert!(!petal_contains(&p, eta, [c(0.01, 0.0), C64::zero()]).unwrap());
        assert!(!petal_contains(&p, eta, [c(-0.05, 0.0), c(1.0, 0.0)]).unwrap());
        let o = PetalSpec { orientation: Orientation::Outgoing, r: 0.05, c: 2.0 };
        assert!(petal_contains(&o, eta, [c(0.05, 0.0), c(1e-6, 0.0)]).unwrap());
        assert!(!petal_contains(&o, eta, [c(-0.01, 0.0), C64::zero()]).unwrap());
    }

    #[test]
    fn basis_for_model_is_integer_powers() {
        let b = remainder_basis(c(4.0, 0.0), false, false, 4.5);
        assert_eq!(b.len(), 4);
        assert!(b.iter().all(|f| !f.log && f.e.im == 0.0));
        let b = remainder_basis(c(4.0, 0.0), true, false, 4.5);
        assert!(b.iter().any(|f| f.log && f.e == c(2.0, 0.0)));
    }

    #[test]
    fn invariant_line_gives_zero_y() {
        let e = model_engine();
        let phi = e.incoming_fatou([c(-0.02, 0.0), C64::zero()]).unwrap();
        assert_eq!(phi[1], C64::zero());
        let phi = e.outgoing_fatou([c(0.02, 0.0), C64::zero()]).unwrap();
        assert_eq!(phi[1], C64::zero());
    }

    #[test]
    fn incoming_asymptotics_along_real_axis() {
        let e = model_engine();
        let mut prev = f64::INFINITY;
        for t in [50.0f64, 100.0, 200.0, 400.0] {
            let w = e.incoming_fatou([c(-1.0 / t, 0.0), C64::zero()]).unwrap()[0];
            let delta = (w - c(t - t.ln(), 0.0)).norm();
            assert!(delta < prev);
            prev = delta;
        }
    }

    #[test]
    fn outgoing_asymptotics() {
        let e = model_engine();
        let t = 400.0f64;
        let w = e.outgoing_fatou([c(1.0 / t, 0.0), C64::zero()]).unwrap()[0];
        // −1/x + (1−a) log x with a = 0
        assert!((w - c(-t - t.ln(), 0.0)).norm() < 5.0 / t);
    }

    #[test]
    fn abel_residuals_small() {
        let e = model_engine();
        let z = [c(-0.02, 0.0), c(1e-9, 0.0)];
        let a = e.incoming_fatou(z).unwrap();
        let b = e.incoming_fatou(e.step(z)).unwrap();
        assert!(dist2(&b, &[a[0] + 1.0, a[1]]) <= 1e-8);
        for z in e.petal_samples(Orientation::Outgoing, 2.0, 10, 3) {
            let a = e.outgoing_fatou(z).unwrap();
            let b = e.outgoing_fatou(e.step(z)).unwrap();
            assert!(dist2(&b, &[a[0] + 1.0, a[1]]) <= 1e-8);
        }
    }

    #[test]
    fn translation_covariance() {
        let e = model_engine();
        let z = e.petal_samples(Orientation::Incoming, 2.0, 1, 5)[0];
        let base = e.incoming_fatou(z).unwrap();
        let mut w = z;
        for k in 1..=20 {
            w = e.step(w);
            let v = e.incoming_fatou(w).unwrap();
            assert!(dist2(&v, &[base[0] + k as f64, base[1]]) <= 1e-7);
        }
    }

    #[test]
    fn y_twist_is_linear_deep_in_petal() {
        let e = model_engine();
        let x = c(-1.0 / 120.0, 0.003);
        let y = c(1e-9, 0.0);
        let lam = c(0.3, -1.7);
        let a = e.incoming_fatou([x, y]).unwrap()[1];
        let b = e.incoming_fatou([x, lam * y]).unwrap()[1];
        assert!((b / a - lam).norm() <= 1e-3);
    }

    #[test]
    fn one_step_expansion_decay() {
        // Residual of X ↦ X + 1 + (1−a)/X decays like |X|^{-2}.
        let e = model_engine();
        let ts = [100.0f64, 200.0, 400.0, 800.0];
        let res: Vec<f64> = ts
            .iter()
            .map(|&t| {
                let z = [c(-1.0 / t, 0.0), C64::zero()];
                let x1 = -1.0 / e.step(z)[0];
                (x1 - c(t + 1.0 + (1.0 - e.a.re) / t, 0.0)).norm()
            })
            .collect();
        let slope = -(res[3].ln() - res[0].ln()) / (ts[3].ln() - ts[0].ln());
        assert!(slope >= 1.9, "slope {slope}");
    }

    #[test]
    fn inversion_round_trip() {
        let e = model_engine();
        for z in e.petal_samples(Orientation::Outgoing, 2.0, 5, 9) {
            let xy = e.outgoing_fatou(z).unwrap();
            let back = e.psi_o_extended(xy).unwrap();
            assert!(dist2(&back, &z) <= 1e-10 * z[0].norm().max(1e-3), "{back:?} vs {z:?}");
            let again = e.outgoing_fatou(back).unwrap();
            assert!(dist2(&again, &xy) <= 1e-8);
        }
    }

    #[test]
    fn psi_o_shift_relation() {
        let e = model_engine();
        for xy in [[c(3.0, 4.0), c(0.5, 0.0)], [c(-10.0, -3.0), c(0.1, 0.2)]] {
            let a = e.step(e.psi_o_extended([xy[0] - 1.0, xy[1]]).unwrap());
            let b = e.psi_o_extended(xy).unwrap();
            assert!(dist2(&a, &b) <= 1e-9);
        }
        let z = e.psi_o_extended([c(-5.0, 3.0), C64::zero()]).unwrap();
        assert_eq!(z[1], C64::zero());
    }

    #[test]
    fn basin_examples() {
        let e = model_engine();
        assert!(matches!(e.basin_membership([c(-0.02, 0.0), C64::zero()], 1000), BasinOutcome::Inside { n0: 0, .. }));
        assert!(matches!(e.basin_membership([c(0.5, 0.0), C64::zero()], 1000), BasinOutcome::Escaped { .. }));
        assert!(matches!(e.basin_membership([c(-0.02, 0.0), c(1e3, 0.0)], 1000), BasinOutcome::Escaped { .. }));
    }

    #[test]
    fn inverse_delta_inverts() {
        let e = model_engine();
        let z = [c(0.03, 0.01), c(1e-7, 2e-8)];
        let d = inverse_delta(&e.fwd, z).unwrap();
        let back = e.step([z[0] + d[0], z[1] + d[1]]);
        assert!(dist2(&back, &z) <= 1e-17);
    }

    proptest::proptest! {
        #[test]
        fn petal_membership_matches_definition(
            xr in -0.2f64..0.2, xi in -0.2f64..0.2, yr in -1e-3f64..1e-3, yi in -1e-3f64..1e-3,
            r in 0.01f64..0.2, cc in 0.5f64..4.0, incoming in proptest::bool::ANY,
        ) {
            let eta = c(4.0, 0.3);
            let x = c(xr, xi);
            let y = c(yr, yi);
            let (orientation, base, centre) = if incoming { (Orientation::Incoming, -x, -r) } else { (Orientation::Outgoing, x, r) };
            let p = PetalSpec { orientation, r, c: cc };
            let inside_disk = (x - centre).norm() < r;
            let want = inside_disk && (y / (eta * base.ln()).exp()).norm() < cc;
            proptest::prop_assert_eq!(petal_contains(&p, eta, [x, y]).unwrap(), want);
        }
    }
}
