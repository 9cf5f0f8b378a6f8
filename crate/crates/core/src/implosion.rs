//! Perturbed dynamics `g_ε`: approximate Fatou coordinates, the eggbeater
//! region, the per-step error terms, orbit traces and the convergence of
//! `g_{ε_n}^{n−N}` to the Lavaurs map.

use rayon::prelude::*;
use serde::Serialize;

use crate::cplx_core::{atan_log, c, dist2, principal_log, Point, C64};
use crate::error::{Error, Result};
use crate::family::{epsilon_sequence, estimate_q_beta, CompiledMap, GermFamily};
use crate::fatou::{petal_contains, EngineConfig, FatouEngine, Orientation};
use crate::lavaurs::{phase_shift, LavaursMap};

use std::f64::consts::PI;

/// `w_ε`, `t_ε` at a fixed parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxCoords {
    pub eps: C64,
    pub eta: C64,
    pub a: C64,
}

impl ApproxCoords {
    pub fn new(f: &GermFamily, eps: C64) -> Result<Self> {
        if eps == C64::new(0.0, 0.0) {
            return Err(Error::ZeroEpsilon);
        }
        Ok(ApproxCoords { eps, eta: f.eta, a: f.a_coef() })
    }

    /// `w_ε(x) = (1/ε) arctan(x/ε) + π/(2ε) + ((1−a)/2) log(x²+ε²)`.
    pub fn w(&self, x: C64) -> Result<C64> {
        let e = self.eps;
        Ok(atan_log(x / e)? / e + PI / (2.0 * e) + (1.0 - self.a) / 2.0 * principal_log(x * x + e * e)?)
    }

    /// `w_ε'(x) = (1 + (1−a) x)/(x²+ε²)`.
    pub fn dw(&self, x: C64) -> C64 {
        (1.0 + (1.0 - self.a) * x) / (x * x + self.eps * self.eps)
    }

    /// `t_ε(x, y) = y/(x²+ε²)^{η/2}`.
    pub fn t(&self, z: Point) -> Result<C64> {
        let l = principal_log(z[0] * z[0] + self.eps * self.eps)?;
        Ok(z[1] * (-self.eta / 2.0 * l).exp())
    }

    pub fn fatou(&self, z: Point, orientation: Orientation) -> Result<Point> {
        let w = self.w(z[0])?;
        let t = self.t(z)?;
        Ok(match orientation {
            Orientation::Incoming => [w, t],
            Orientation::Outgoing => [w - PI / self.eps, t],
        })
    }
}

pub fn approx_fatou(ac: &ApproxCoords, z: Point, orientation: Orientation) -> Result<Point> {
    ac.fatou(z, orientation)
}

/// `𝓡_n(C)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EggbeaterRegion {
    pub n: u64,
    pub c: f64,
    pub gamma: f64,
    pub k_n: u64,
}

impl EggbeaterRegion {
    pub fn new(n: u64, c: f64, gamma: f64) -> Self {
        EggbeaterRegion { n, c, gamma, k_n: kn(n, gamma) }
    }
}

/// `k_n = ⌊n^γ⌋`.
pub fn kn(n: u64, gamma: f64) -> u64 {
    (n as f64).powf(gamma).floor() as u64
}

pub fn region_contains(reg: &EggbeaterRegion, ac: &ApproxCoords, z: Point) -> Result<bool> {
    let s = ac.eps * ac.w(z[0])?;
    let n = reg.n as f64;
    let lo = PI * reg.k_n as f64 / (10.0 * n);
    let t = ac.t(z)?.norm();
    Ok(s.re >= lo && s.re <= PI - lo && s.im.abs() <= reg.c * PI / n && t > 1.0 / reg.c && t < reg.c)
}

/// `A = w_ε(x₁) − w_ε(x) − 1` and `B = log(t_ε(z₁)/t_ε(z))` for `z₁ = g_ε(z)`.
pub fn error_terms(f: &GermFamily, eps: C64, z: Point) -> Result<(C64, C64)> {
    let ac = ApproxCoords::new(f, eps)?;
    let z1 = f.compile(eps).step(z);
    let a = ac.w(z1[0])? - ac.w(z[0])? - 1.0;
    let t0 = ac.t(z)?;
    if t0 == C64::new(0.0, 0.0) {
        return Err(Error::ZeroTangentialCoordinate);
    }
    let b = principal_log(ac.t(z1)? / t0)?;
    Ok((a, b))
}

/// Solves `w_ε(x) = X` by Newton from `x₀ = −ε cot(εX)`, then
/// `y = Y (x²+ε²)^{η/2}`.
pub fn inverse_approx_fatou(ac: &ApproxCoords, xy: Point) -> Result<Point> {
    let e = ac.eps;
    let seed = -e * (e * xy[0]).cos() / (e * xy[0]).sin();
    let mut x = seed;
    let mut ok = false;
    for _ in 0..50 {
        let r = match ac.w(x) {
            Ok(w) => w - xy[0],
            Err(_) => break,
        };
        if r.norm() <= 1e-13 * (1.0 + xy[0].norm()) {
            ok = true;
            break;
        }
        x -= r / ac.dw(x);
        if !x.is_finite() {
            break;
        }
    }
    if !ok {
        return Err(Error::NewtonDivergence { seed: [seed, xy[1]], last: [x, xy[1]] });
    }
    let l = principal_log(x * x + e * e)?;
    Ok([x, xy[1] * (ac.eta / 2.0 * l).exp()])
}

/// Deterministic points of `𝓡_n(C)` placed at fixed normalized positions:
/// `Re(εw)/π` on five levels, and five `(Im(εw)·n/(Cπ), |t|)` pairs.
pub fn region_samples(ac: &ApproxCoords, reg: &EggbeaterRegion) -> Result<Vec<Point>> {
    let n = reg.n as f64;
    let cc = reg.c;
    let combos = [(0.0, 1.0, 0.0), (0.5, cc.powf(0.6), 1.0), (-0.5, cc.powf(-0.6), 2.0), (0.9, cc.powf(0.9), 3.0), (-0.9, cc.powf(-0.9), 4.0)];
    let mut out = Vec::with_capacity(25);
    for s in [0.1, 0.3, 0.5, 0.7, 0.9] {
        for &(im, tmod, arg) in &combos {
            let sw = c(s * PI, im * cc * PI / n);
            let big_x = sw / ac.eps;
            let big_y = C64::from_polar(tmod, arg);
            out.push(inverse_approx_fatou(ac, [big_x, big_y])?);
        }
    }
    Ok(out)
}

/// Fatou engine together with the family data needed for `ε_n`.
#[derive(Debug, Clone)]
pub struct Implosion {
    pub family: GermFamily,
    pub engine: FatouEngine,
    pub q: C64,
    pub sigma0: C64,
}

/// Parameter grid used to estimate `σ₀`.
pub const SIGMA0_GRID: [f64; 5] = [0.04, 0.02, 0.01, 0.005, 0.0025];

impl Implosion {
    pub fn new(f: &GermFamily, config: EngineConfig) -> Result<Self> {
        let est = estimate_q_beta(f, &SIGMA0_GRID)?;
        let sigma0 = if est.sigma0.norm() < 1e-9 { C64::new(0.0, 0.0) } else { est.sigma0 };
        Ok(Implosion { family: f.clone(), engine: FatouEngine::new(f, config)?, q: f.q, sigma0 })
    }

    pub fn eps(&self, sigma: C64, n: u64) -> C64 {
        epsilon_sequence(sigma, self.sigma0, n)
    }

    pub fn lavaurs(&self, sigma: C64) -> LavaursMap<'_> {
        LavaursMap::new(&self.engine, sigma, self.q)
    }

    fn domain(&self) -> f64 {
        self.engine.config.domain
    }
}

fn iterate(map: &CompiledMap, z: Point, steps: u64, domain: f64) -> Result<Point> {
    let mut z = z;
    for k in 0..steps {
        z = map.step(z);
        if !(z[0].norm() <= domain && z[1].norm() <= domain) {
            return Err(Error::DomainEscape(k as usize + 1));
        }
    }
    Ok(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Approach,
    Transit,
    Exit,
}

/// One perturbed orbit with its residual channels.
#[derive(Debug, Clone)]
pub struct OrbitTrace {
    pub n: u64,
    pub eps: C64,
    pub k_n: u64,
    /// Last iterate index, `n − N`.
    pub end: u64,
    /// Exit index `n − N₁`: last iterate in the outgoing petal.
    pub exit_index: Option<u64>,
    pub points: Vec<Point>,
    /// `‖Φ^ι(z_{k_n}) − Φ^ι(z₀) − (k_n, 0)‖`.
    pub approach: Option<f64>,
    /// `‖Φ_ε^ι(z_{k_n}) − Φ^ι(z_{k_n})‖`.
    pub agreement: Option<f64>,
    /// `‖Φ_ε°(z_{n−k_n}) − A_{σ−2k_n,q}(Φ_ε^ι(z_{k_n}))‖`.
    pub transit: Option<f64>,
    /// `‖Φ°(z_{n−N₁}) − A_{k_n−N₁,0}(Φ_ε°(z_{n−k_n}))‖`.
    pub exit: Option<f64>,
    pub in_region_kn: bool,
    pub in_region_exit: bool,
}

impl OrbitTrace {
    pub fn phase(&self, step: u64) -> Phase {
        if step <= self.k_n {
            Phase::Approach
        } else if step <= self.n - self.k_n {
            Phase::Transit
        } else {
            Phase::Exit
        }
    }

    /// Rows for CSV export; residuals sit on their checkpoint steps.
    pub fn rows(&self) -> Vec<TraceRow> {
        let mut out = Vec::with_capacity(self.points.len() + 1);
        for (k, z) in self.points.iter().enumerate() {
            let k = k as u64;
            let mut channels: Vec<(&'static str, Option<f64>)> = Vec::new();
            if k == self.k_n {
                channels.push(("approach", self.approach));
                channels.push(("agreement", self.agreement));
            }
            if k == self.n - self.k_n {
                channels.push(("transit", self.transit));
            }
            if Some(k) == self.exit_index {
                channels.push(("exit", self.exit));
            }
            let base = |ch: &str, v: Option<f64>| TraceRow {
                step: k,
                x_re: z[0].re,
                x_im: z[0].im,
                y_re: z[1].re,
                y_im: z[1].im,
                phase: self.phase(k),
                residual_channel: ch.to_string(),
                residual_value: v,
            };
            if channels.is_empty() {
                out.push(base("", None));
            } else {
                for (ch, v) in channels {
                    out.push(base(ch, v));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: u64,
    pub x_re: f64,
    pub x_im: f64,
    pub y_re: f64,
    pub y_im: f64,
    pub phase: Phase,
    pub residual_channel: String,
    pub residual_value: Option<f64>,
}

pub fn orbit_trace(im: &Implosion, sigma: C64, n: u64, z: Point, shift: u64) -> Result<OrbitTrace> {
    let f = &im.family;
    let eps = im.eps(sigma, n);
    let k_n = kn(n, f.gamma);
    if !(0 < k_n && k_n < n - k_n && n - k_n < n - shift.min(n)) {
        return Err(Error::Invalid(format!("phase boundaries 0 < {k_n} < {} < {} fail", n - k_n, n - shift.min(n))));
    }
    let end = n - shift;
    let map = f.compile(eps);
    let mut points = Vec::with_capacity(end as usize + 1);
    let mut w = z;
    points.push(w);
    for k in 0..end {
        w = map.step(w);
        if !(w[0].norm() <= im.domain() && w[1].norm() <= im.domain()) {
            return Err(Error::DomainEscape(k as usize + 1));
        }
        points.push(w);
    }
    let ac = ApproxCoords::new(f, eps)?;
    let e = &im.engine;
    let reg = EggbeaterRegion::new(n, 2.0, f.gamma);
    let zk = points[k_n as usize];
    let zt = points[(n - k_n) as usize];
    let phi0 = e.incoming_fatou(z).ok();
    let phik = e.incoming_fatou(zk).ok();
    let approach = match (phi0, phik) {
        (Some(a), Some(b)) => Some(dist2(&b, &[a[0] + k_n as f64, a[1]])),
        _ => None,
    };
    let phie_k = ac.fatou(zk, Orientation::Incoming).ok();
    let agreement = match (phie_k, phik) {
        (Some(a), Some(b)) => Some(dist2(&a, &b)),
        _ => None,
    };
    let phie_t = ac.fatou(zt, Orientation::Outgoing).ok();
    let transit = match (phie_k, phie_t) {
        (Some(a), Some(b)) => Some(dist2(&b, &phase_shift(sigma - 2.0 * k_n as f64, im.q, a))),
        _ => None,
    };
    let petal = e.petal(Orientation::Outgoing);
    let exit_index = (n - k_n..=end).rev().find(|&j| petal_contains(&petal, f.eta, points[j as usize]).unwrap_or(false));
    let exit = match (exit_index, phie_t) {
        (Some(j), Some(b)) => e
            .outgoing_fatou(points[j as usize])
            .ok()
            .map(|v| dist2(&v, &[b[0] + (k_n as f64 - (n - j) as f64), b[1]])),
        _ => None,
    };
    Ok(OrbitTrace {
        n,
        eps,
        k_n,
        end,
        exit_index,
        in_region_kn: region_contains(&reg, &ac, zk).unwrap_or(false),
        in_region_exit: region_contains(&reg, &ac, zt).unwrap_or(false),
        points,
        approach,
        agreement,
        transit,
        exit,
    })
}

/// Values of `L_{σ−N,q}` on a compact sample, reusable across `n`.
#[derive(Debug, Clone)]
pub struct LavaursTargets {
    pub sigma: C64,
    pub shift: u64,
    pub points: Vec<Point>,
    pub values: Vec<Result<Point>>,
}

pub fn lavaurs_targets(im: &Implosion, sigma: C64, k: &[Point], shift: u64) -> LavaursTargets {
    let l = im.lavaurs(sigma - shift as f64);
    LavaursTargets { sigma, shift, points: k.to_vec(), values: k.par_iter().map(|&z| l.eval(z)).collect() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub n: u64,
    pub eps: C64,
    /// `sup_K ‖g_{ε_n}^{n−N} − L_{σ−N,q}‖` over points that did not fail.
    pub error: f64,
    pub per_point: Vec<Option<f64>>,
    pub failures: Vec<(usize, Error)>,
}

pub fn convergence_error_with(im: &Implosion, targets: &LavaursTargets, n: u64) -> ConvergenceReport {
    let eps = im.eps(targets.sigma, n);
    let map = im.family.compile(eps);
    let steps = n.saturating_sub(targets.shift);
    let rows: Vec<Result<f64>> = targets
        .points
        .par_iter()
        .zip(targets.values.par_iter())
        .map(|(&z, l)| {
            let l = l.clone()?;
            let g = iterate(&map, z, steps, im.domain())?;
            Ok(dist2(&g, &l))
        })
        .collect();
    let mut rep = ConvergenceReport { n, eps, error: 0.0, per_point: Vec::new(), failures: Vec::new() };
    for (i, r) in rows.into_iter().enumerate() {
        match r {
            Ok(v) => {
                rep.error = rep.error.max(v);
                rep.per_point.push(Some(v));
            }
            Err(e) => {
                rep.per_point.push(None);
                rep.failures.push((i, e));
            }
        }
    }
    rep
}

pub fn convergence_error(im: &Implosion, sigma: C64, n: u64, k: &[Point], shift: u64) -> ConvergenceReport {
    convergence_error_with(im, &lavaurs_targets(im, sigma, k, shift), n)
}

/// Compact sample on `|x| ≈ 0.05`: `x = −1/W` with `W = 16 + i s`,
/// `10 ≤ |s| ≤ 14`, and `|y| ≤ y_max`.
pub fn default_compact(count: usize, y_max: f64, seed: u64) -> Vec<Point> {
    crate::sampling::halton(count, 3, seed)
        .into_iter()
        .enumerate()
        .map(|(i, u)| {
            let s = (10.0 + 4.0 * u[0]) * if i % 2 == 0 { 1.0 } else { -1.0 };
            let x = -1.0 / c(16.0, s);
            let y = C64::from_polar(y_max * u[1], std::f64::consts::TAU * u[2]);
            [x, y]
        })
        .collect()
}

/// `−ε cot(εX)`.
pub fn cot_inverse(eps: C64, big_x: C64) -> C64 {
    let a = eps * big_x;
    -eps * a.cos() / a.sin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use num_traits::Zero;

    fn model() -> GermFamily {
        GermFamily::model(C64::zero())
    }

    #[test]
    fn approx_fatou_examples() {
        let ac = ApproxCoords::new(&model(), c(0.1, 0.0)).unwrap();
        let z = [C64::zero(), c(1e-4, 0.0)];
        let v = approx_fatou(&ac, z, Orientation::Incoming).unwrap();
        assert_relative_eq!(v[0].re, 13.40537817495492, epsilon = 1e-9);
        assert_relative_eq!(v[1].re, 1.0, epsilon = 1e-12);
        let o = approx_fatou(&ac, z, Orientation::Outgoing).unwrap();
        assert_relative_eq!(o[0].re, 13.40537817495492 - PI / 0.1, epsilon = 1e-9);
        assert!(matches!(ac.w(c(0.0, 0.2)), Err(Error::BranchCut(_))));
    }

    #[test]
    fn region_examples() {
        assert_eq!(kn(1000, 0.6), 63);
        let f = model();
        let eps = epsilon_sequence(C64::zero(), C64::zero(), 1000);
        let ac = ApproxCoords::new(&f, eps).unwrap();
        let reg = EggbeaterRegion::new(1000, 2.0, 0.6);
        let mid = inverse_approx_fatou(&ac, [c(PI / 2.0, 0.0) / eps, c(1.0, 0.0)]).unwrap();
        assert!(region_contains(&reg, &ac, mid).unwrap());
        let out = inverse_approx_fatou(&ac, [c(PI / 2.0, 0.0) / eps, c(3.0, 0.0)]).unwrap();
        assert!(!region_contains(&reg, &ac, out).unwrap());
    }

    #[test]
    fn error_terms_on_cut() {
        let eps = c(0.01, 0.0);
        assert!(matches!(error_terms(&model(), eps, [c(0.0, 0.02), c(1e-9, 0.0)]), Err(Error::BranchCut(_))));
        assert!(matches!(error_terms(&model(), eps, [c(0.001, 0.0), C64::zero()]), Err(Error::ZeroTangentialCoordinate)));
    }

    #[test]
    fn inverse_round_trip_and_y_zero() {
        let f = model();
        let eps = epsilon_sequence(C64::zero(), C64::zero(), 1000);
        let ac = ApproxCoords::new(&f, eps).unwrap();
        let reg = EggbeaterRegion::new(1000, 2.0, 0.6);
        for z in region_samples(&ac, &reg).unwrap() {
            assert!(region_contains(&reg, &ac, z).unwrap());
        }
        for u in crate::sampling::halton(100, 3, 1) {
            let s = c(PI * (0.05 + 0.9 * u[0]), (u[1] - 0.5) * 4.0 * PI / 1000.0);
            let xy = [s / eps, C64::from_polar(0.5 + 1.5 * u[2], 1.0)];
            let z = inverse_approx_fatou(&ac, xy).unwrap();
            let back = ac.fatou(z, Orientation::Incoming).unwrap();
            assert!(dist2(&back, &xy) <= 1e-9 * (1.0 + xy[0].norm()));
        }
        let z = inverse_approx_fatou(&ac, [c(500.0, 0.3), C64::zero()]).unwrap();
        assert_eq!(z[1], C64::zero());
    }

    #[test]
    fn a_equal_one_is_closed_form() {
        let mut f = model();
        f.a.insert([1, 0, 0], c(1.0, 0.0));
        let eps = c(0.01, 0.0);
        let ac = ApproxCoords::new(&f, eps).unwrap();
        let big_x = c(120.0, 0.5);
        let x = cot_inverse(eps, big_x);
        assert!((ac.w(x).unwrap() - big_x).norm() <= 1e-10);
    }

    #[test]
    fn trace_region_flag() {
        let im = Implosion::new(&model(), EngineConfig::default()).unwrap();
        let tr = orbit_trace(&im, C64::zero(), 400, [c(-0.05, 0.0), c(6.25e-6, 0.0)], 30).unwrap();
        assert_eq!(tr.k_n, 36);
        assert!(tr.in_region_kn);
        assert_eq!(tr.points.len(), 371);
    }

    proptest::proptest! {
        #[test]
        fn outgoing_approx_is_incoming_shifted(xr in -0.3f64..0.3, xi in -0.3f64..0.3, y in -1e-3f64..1e-3, n in 50u64..5000) {
            let eps = epsilon_sequence(C64::zero(), C64::zero(), n);
            let ac = ApproxCoords::new(&model(), eps).unwrap();
            let z = [c(xr, xi), c(y, 0.0)];
            if let (Ok(i), Ok(o)) = (ac.fatou(z, Orientation::Incoming), ac.fatou(z, Orientation::Outgoing)) {
                proptest::prop_assert_eq!(o[0], i[0] - PI / eps);
                proptest::prop_assert_eq!(o[1], i[1]);
            }
        }

        #[test]
        fn region_membership_matches_definition(s in 0.0f64..1.0, im in -3f64..3.0, tm in 0.2f64..5.0, n in 100u64..20_000) {
            let f = model();
            let eps = epsilon_sequence(C64::zero(), C64::zero(), n);
            let ac = ApproxCoords::new(&f, eps).unwrap();
            let reg = EggbeaterRegion::new(n, 2.0, f.gamma);
            let big_x = c(s * PI, im * PI / n as f64) / eps;
            let z = inverse_approx_fatou(&ac, [big_x, c(tm, 0.0)]).unwrap();
            let sw = eps * ac.w(z[0]).unwrap();
            let t = ac.t(z).unwrap().norm();
            let lo = PI * reg.k_n as f64 / (10.0 * n as f64);
            let margin = 1e-9;
            let clear = (sw.re - lo).abs() > margin && (sw.re - (PI - lo)).abs() > margin
                && (sw.im.abs() - 2.0 * PI / n as f64).abs() > margin && (t - 0.5).abs() > margin && (t - 2.0).abs() > margin;
            if clear {
                let want = sw.re >= lo && sw.re <= PI - lo && sw.im.abs() <= 2.0 * PI / n as f64 && t > 0.5 && t < 2.0;
                proptest::prop_assert_eq!(region_contains(&reg, &ac, z).unwrap(), want);
            }
        }
    }
}
