//! Deterministic low-discrepancy samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIMES: [u32; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % b) as f64 * inv;
        i /= b;
        inv /= base as f64;
    }
    out
}

/// `n` points of the unit cube `[0,1)^dim` from a Halton sequence with a
/// seeded Cranley–Patterson shift.
pub fn halton(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    (1..=n as u64)
        .map(|i| {
            (0..dim)
                .map(|d| {
                    let v = radical_inverse(i, PRIMES[d]) + shift[d];
                    v - v.floor()
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_is_deterministic_and_in_range() {
        let a = halton(50, 3, 7);
        assert_eq!(a, halton(50, 3, 7));
        assert_ne!(a, halton(50, 3, 8));
        assert!(a.iter().flatten().all(|v| (0.0..1.0).contains(v)));
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(5, 2), 0.625);
    }
}
