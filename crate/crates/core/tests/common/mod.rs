#![allow(dead_code)]

use hypoheat::{validate_system, LinearSystem, Model};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

pub fn uniform_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// `(A, B)` with entries `U[-1, 1]`, redrawn until the Kalman condition holds.
pub fn random_system(rng: &mut impl Rng, n: usize, k: usize) -> LinearSystem {
    loop {
        let a = uniform_matrix(rng, n, n);
        let b = uniform_matrix(rng, n, k);
        if let Ok(sys) = validate_system(a, b, None) {
            return sys;
        }
    }
}

/// [`random_system`] of random shape, redrawn until `sigma_min(B) >= 0.1`
/// and the small-time rescaled Gramian has condition number at most
/// `max_cond`. Some shapes (long single-input chains) never qualify for
/// small bounds, so the shape is redrawn too.
pub fn well_conditioned_system(rng: &mut impl Rng, max_n: usize, max_cond: f64) -> LinearSystem {
    loop {
        let (n, k) = random_shape(rng, max_n);
        for _ in 0..50 {
            let sys = random_system(rng, n, k);
            if sys.b().singular_values().min() < 0.1 {
                continue;
            }
            let sv = Model::new(sys.clone()).frame().rescaled_gramian_at(1e-8).singular_values();
            if sv.max() <= max_cond * sv.min() {
                return sys;
            }
        }
    }
}

/// Dimension `n` in `1..=max_n` and `k` in `1..=n`, both uniform.
pub fn random_shape(rng: &mut impl Rng, max_n: usize) -> (usize, usize) {
    let n = rng.random_range(1..=max_n);
    (n, rng.random_range(1..=n))
}

/// Random change of coordinates with condition number at most `max_cond`.
pub fn random_conjugation(rng: &mut impl Rng, n: usize, max_cond: f64) -> DMatrix<f64> {
    loop {
        let c = uniform_matrix(rng, n, n);
        let sv = c.singular_values();
        if sv.min() > 0.0 && sv.max() / sv.min() <= max_cond {
            return c;
        }
    }
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
