//! Lavaurs maps `L_{σ,q} = Ψ° ∘ A_{σ,q} ∘ Φ^ι`.

use rayon::prelude::*;

use crate::cplx_core::{dist2, Point, C64};
use crate::error::{Error, Result};
use crate::fatou::FatouEngine;

/// `A_{σ,q}(X, Y) = (X + σ, e^{πq} Y)`.
pub fn phase_shift(sigma: C64, q: C64, xy: Point) -> Point {
    [xy[0] + sigma, (std::f64::consts::PI * q).exp() * xy[1]]
}

#[derive(Debug, Clone, Copy)]
pub struct LavaursMap<'a> {
    pub sigma: C64,
    pub q: C64,
    pub engine: &'a FatouEngine,
}

impl<'a> LavaursMap<'a> {
    pub fn new(engine: &'a FatouEngine, sigma: C64, q: C64) -> Self {
        LavaursMap { sigma, q, engine }
    }

    pub fn with_sigma(&self, sigma: C64) -> Self {
        LavaursMap { sigma, ..*self }
    }

    pub fn eval(&self, z: Point) -> Result<Point> {
        lavaurs_eval(self, z)
    }
}

pub fn lavaurs_eval(l: &LavaursMap, z: Point) -> Result<Point> {
    let xy = l.engine.incoming_fatou(z)?;
    l.engine.psi_o_extended(phase_shift(l.sigma, l.q, xy))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FunctionalReport {
    /// `sup ‖g∘L − L∘g‖`.
    pub commute: f64,
    /// `sup ‖g∘L_{σ,q} − L_{σ+1,q}‖`.
    pub shift: f64,
    pub evaluated: usize,
    pub failures: Vec<(usize, Error)>,
}

pub fn lavaurs_functional_check(l: &LavaursMap, samples: &[Point]) -> FunctionalReport {
    let g = |z: Point| l.engine.step(z);
    let next = l.with_sigma(l.sigma + 1.0);
    let rows: Vec<Result<(f64, f64)>> = samples
        .par_iter()
        .map(|&z| {
            let lz = l.eval(z)?;
            let glz = g(lz);
            let lgz = l.eval(g(z))?;
            let l1z = next.eval(z)?;
            Ok((dist2(&glz, &lgz), dist2(&glz, &l1z)))
        })
        .collect();
    let mut rep = FunctionalReport::default();
    for (i, r) in rows.into_iter().enumerate() {
        match r {
            Ok((a, b)) => {
                rep.commute = rep.commute.max(a);
                rep.shift = rep.shift.max(b);
                rep.evaluated += 1;
            }
            Err(e) => rep.failures.push((i, e)),
        }
    }
    rep
}
