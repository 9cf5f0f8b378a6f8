//! C ABI over the implab core. Handles are opaque; every call returns an
//! [`ImplabStatus`] and the message of the last failure on the calling
//! thread is available from [`implab_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use implab::cplx_core::{Point, C64};
use implab::family::GermFamily;
use implab::fatou::EngineConfig;
use implab::implosion::{convergence_error, Implosion};
use implab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImplabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    HypothesisViolation = 3,
    NumericalFailure = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImplabComplex {
    pub re: f64,
    pub im: f64,
}

/// A point of ℂ² as `(x, y)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImplabPoint {
    pub x: ImplabComplex,
    pub y: ImplabComplex,
}

/// Opaque germ family.
pub struct ImplabFamily {
    inner: GermFamily,
}

/// Opaque engine: Fatou coordinates, Lavaurs maps and the implosion harness.
pub struct ImplabEngine {
    inner: Implosion,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ImplabStatus {
    match e {
        Error::Invalid(_) | Error::NotCharacteristic(_) | Error::DegenerateSplitting(_) | Error::ResonanceObstruction { .. } => {
            ImplabStatus::HypothesisViolation
        }
        _ => ImplabStatus::NumericalFailure,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (ImplabStatus, String)>) -> ImplabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ImplabStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            ImplabStatus::Panic
        }
    }
}

fn core_err(e: Error) -> (ImplabStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (ImplabStatus, String) {
    (ImplabStatus::NullPointer, format!("{what} is null"))
}

fn to_c64(z: ImplabComplex) -> C64 {
    C64::new(z.re, z.im)
}

fn from_c64(z: C64) -> ImplabComplex {
    ImplabComplex { re: z.re, im: z.im }
}

fn to_point(p: ImplabPoint) -> Point {
    [to_c64(p.x), to_c64(p.y)]
}

fn from_point(p: Point) -> ImplabPoint {
    ImplabPoint { x: from_c64(p[0]), y: from_c64(p[1]) }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn implab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Parses a family from its JSON form and validates the standing hypotheses.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn implab_family_from_json(json: *const c_char, out: *mut *mut ImplabFamily) -> ImplabStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json).to_str().map_err(|e| (ImplabStatus::InvalidInput, e.to_string()))?;
        let f = GermFamily::from_json(text).map_err(|e| (ImplabStatus::InvalidInput, format!("{e:#}")))?;
        let report = implab::family::validate_family(&f);
        if !report.passed() {
            let failed: Vec<&str> = report.rows.iter().filter(|r| !r.pass).map(|r| r.name).collect();
            return Err((ImplabStatus::HypothesisViolation, failed.join(", ")));
        }
        *out = Box::into_raw(Box::new(ImplabFamily { inner: f }));
        Ok(())
    })
}

/// # Safety
/// `family` must come from [`implab_family_from_json`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn implab_family_free(family: *mut ImplabFamily) {
    if !family.is_null() {
        drop(Box::from_raw(family));
    }
}

/// Evaluates `g_ε(z)`.
///
/// # Safety
/// `family` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn implab_family_evaluate(
    family: *const ImplabFamily,
    eps: ImplabComplex,
    z: ImplabPoint,
    out: *mut ImplabPoint,
) -> ImplabStatus {
    guard(|| {
        let f = family.as_ref().ok_or_else(|| null("family"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = from_point(f.inner.evaluate(to_c64(eps), to_point(z)));
        Ok(())
    })
}

/// Builds the petal geometry and Fatou coordinate engine. `domain_radius`
/// bounds orbits; pass a non-positive value for the default.
///
/// # Safety
/// `family` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn implab_engine_new(
    family: *const ImplabFamily,
    domain_radius: f64,
    out: *mut *mut ImplabEngine,
) -> ImplabStatus {
    guard(|| {
        let f = family.as_ref().ok_or_else(|| null("family"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut config = EngineConfig::default();
        if domain_radius > 0.0 {
            config.domain = domain_radius;
        }
        let im = Implosion::new(&f.inner, config).map_err(core_err)?;
        *out = Box::into_raw(Box::new(ImplabEngine { inner: im }));
        Ok(())
    })
}

/// # Safety
/// `engine` must come from [`implab_engine_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn implab_engine_free(engine: *mut ImplabEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

unsafe fn point_map(
    engine: *const ImplabEngine,
    z: ImplabPoint,
    out: *mut ImplabPoint,
    f: impl FnOnce(&Implosion, Point) -> implab::Result<Point>,
) -> ImplabStatus {
    guard(|| {
        let e = engine.as_ref().ok_or_else(|| null("engine"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = from_point(f(&e.inner, to_point(z)).map_err(core_err)?);
        Ok(())
    })
}

/// Incoming Fatou coordinate `Φ^ι`, extended to the parabolic basin.
///
/// # Safety
/// `engine` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn implab_incoming_fatou(engine: *const ImplabEngine, z: ImplabPoint, out: *mut ImplabPoint) -> ImplabStatus {
    point_map(engine, z, out, |im, z| im.engine.incoming_fatou(z))
}

/// Outgoing Fatou coordinate `Φ°` on the outgoing petal.
///
/// # Safety
/// `engine` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn implab_outgoing_fatou(engine: *const ImplabEngine, z: ImplabPoint, out: *mut ImplabPoint) -> ImplabStatus {
    point_map(engine, z, out, |im, z| im.engine.outgoing_fatou(z))
}

/// Extended inverse outgoing coordinate `Ψ°`.
///
/// # Safety
/// `engine` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn implab_psi_outgoing(engine: *const ImplabEngine, w: ImplabPoint, out: *mut ImplabPoint) -> ImplabStatus {
    point_map(engine, w, out, |im, w| im.engine.psi_o_extended(w))
}

/// Lavaurs map `L_{σ,q}` with the family's own `q`.
///
/// # Safety
/// `engine` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn implab_lavaurs_eval(
    engine: *const ImplabEngine,
    sigma: ImplabComplex,
    z: ImplabPoint,
    out: *mut ImplabPoint,
) -> ImplabStatus {
    point_map(engine, z, out, |im, z| im.lavaurs(to_c64(sigma)).eval(z))
}

/// Sup-norm error `max ‖g^{n+shift}_{ε_n}(z) − L^{1+shift}(z)‖` over `count`
/// points. Points where either side fails are skipped; the number of such
/// points is written to `failures` when it is non-null.
///
/// # Safety
/// `points` must reference `count` points; `out_error` must be valid.
#[no_mangle]
pub unsafe extern "C" fn implab_convergence_error(
    engine: *const ImplabEngine,
    sigma: ImplabComplex,
    n: u64,
    shift: u64,
    points: *const ImplabPoint,
    count: usize,
    out_error: *mut f64,
    failures: *mut usize,
) -> ImplabStatus {
    guard(|| {
        let e = engine.as_ref().ok_or_else(|| null("engine"))?;
        if out_error.is_null() {
            return Err(null("out_error"));
        }
        if points.is_null() && count > 0 {
            return Err(null("points"));
        }
        if n == 0 {
            return Err((ImplabStatus::InvalidInput, "n must be positive".into()));
        }
        let k: Vec<Point> = if count == 0 { Vec::new() } else { std::slice::from_raw_parts(points, count).iter().map(|p| to_point(*p)).collect() };
        let r = convergence_error(&e.inner, to_c64(sigma), n, &k, shift);
        *out_error = r.error;
        if !failures.is_null() {
            *failures = r.failures.len();
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&Error::Invalid("x".into())), ImplabStatus::HypothesisViolation);
        assert_eq!(status_of(&Error::DomainEscape(3)), ImplabStatus::NumericalFailure);
    }

    #[test]
    fn panic_is_caught() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, ImplabStatus::Panic);
        let msg = unsafe { CStr::from_ptr(implab_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "internal panic");
    }
}
