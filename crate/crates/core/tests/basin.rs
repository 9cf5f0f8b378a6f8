use implab::cli::grid_points;
use implab::cplx_core::C64;
use implab::family::GermFamily;
use implab::fatou::{BasinOutcome, EngineConfig, FatouEngine};
use num_traits::Zero;

/// Parabolic basin of `x ↦ x + x²`: the orbit reaches the disk
/// `|x + 0.05| < 0.05`, which the map sends into itself.
fn one_d_inside(mut x: C64, budget: usize) -> Option<bool> {
    for _ in 0..budget {
        if (x + 0.05).norm() < 0.05 {
            return Some(true);
        }
        if x.norm() > 0.5 {
            return Some(false);
        }
        x += x * x;
    }
    None
}

#[test]
fn invariant_line_slice_matches_one_dimensional_basin() {
    let e = FatouEngine::new(&GermFamily::model(C64::zero()), EngineConfig::default()).unwrap();
    let pts = grid_points([-0.45, 0.15, -0.3, 0.3], 40, 40, C64::zero());
    let (mut agree, mut total) = (0, 0);
    for z in pts {
        let Some(want) = one_d_inside(z[0], 20_000) else { continue };
        let got = match e.basin_membership(z, 20_000) {
            BasinOutcome::Inside { .. } => true,
            BasinOutcome::Escaped { .. } => false,
            BasinOutcome::Unknown => continue,
        };
        total += 1;
        agree += usize::from(got == want);
    }
    assert!(total >= 1500, "{total}");
    assert!(agree as f64 >= 0.99 * total as f64, "{agree}/{total}");
}
